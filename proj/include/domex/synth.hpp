#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "domex/erm.hpp"
#include "domex/meta_sim.hpp"
#include "domex/orchestrator.hpp"
#include "domex/retry.hpp"

namespace domex {

struct VectorPayload {
  std::vector<double> vector;
  friend bool operator==(const VectorPayload&, const VectorPayload&) = default;
};

struct PathPayload {
  std::string path;  // relative to the manifest's directory
  friend bool operator==(const PathPayload&, const PathPayload&) = default;
};

using Payload = std::variant<VectorPayload, PathPayload>;

struct ManifestEntry {
  std::string id;
  std::string class_name;
  std::string domain;
  std::string prompt;
  std::string backend_id;
  std::uint64_t seed = 0;
  Payload payload;
  std::optional<double> filter_score;
  std::optional<bool> kept;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

std::string manifest_entry_id(const std::string& class_name, const std::string& domain,
                              const std::string& prompt, std::uint64_t seed,
                              const std::string& backend_id);

// Sets the filter fields once. Re-setting identical values is a no-op; any
// other change is a validation error.
void set_filter(ManifestEntry& entry, double score, bool kept);

struct ManifestHeader {
  std::string task_name;
  std::string created_at;
  std::string config_digest;
  friend bool operator==(const ManifestHeader&, const ManifestHeader&) = default;
};

/// Append-only list of entries with unique ids.
class Manifest {
 public:
  Manifest() = default;
  explicit Manifest(ManifestHeader header) : header_(std::move(header)) {}

  const ManifestHeader& header() const noexcept { return header_; }
  const std::vector<ManifestEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool contains(const std::string& id) const { return index_.contains(id); }
  const ManifestEntry& at(const std::string& id) const;

  void append(ManifestEntry entry);
  void set_filter(std::size_t i, double score, bool kept);

 private:
  ManifestHeader header_;
  std::vector<ManifestEntry> entries_;
  std::map<std::string, std::size_t> index_;
};

// ISO-8601 UTC timestamp from SOURCE_DATE_EPOCH, or the epoch when unset, so
// reruns serialize identically.
std::string reproducible_timestamp();

nlohmann::json to_json(const ManifestHeader& header);
nlohmann::json to_json(const ManifestEntry& entry);
ManifestEntry manifest_entry_from_json(const nlohmann::json& j);
std::string manifest_header_line(const ManifestHeader& header);
std::string manifest_entry_line(const ManifestEntry& entry);
std::string to_jsonl(const Manifest& manifest);
Manifest manifest_from_jsonl(const std::string& text);

// ---------------------------------------------------------------------------
// Text-to-image backends

struct ImageRequest {
  std::string prompt;
  std::uint64_t seed = 0;
  std::size_t count = 1;
  int width = 512;
  int height = 512;
  // Hints for the mock generator; not part of the wire request.
  std::string class_name;
  std::string domain;
};

using ImageBytes = std::vector<unsigned char>;
using GeneratedImage = std::variant<VectorPayload, ImageBytes>;

class ImageBackend {
 public:
  virtual ~ImageBackend() = default;
  // Replicate r of a request is generated with seed + r.
  virtual std::vector<GeneratedImage> generate(const ImageRequest& request) = 0;
  virtual std::string id() const = 0;
};

/// Feature-space stand-in for a diffusion model. Replicate r of a request for
/// (class, domain) is class_mean(world, class) + domain_embed(domain) +
/// sigma' * noise(seed + r), where domain_embed is a Gaussian vector with
/// per-coordinate scale tau' keyed by the domain name. Samples therefore follow
/// the proxy distribution `world` with one shift per domain name.
class MockImageBackend : public ImageBackend {
 public:
  MockImageBackend(MetaDistributionSpec world, std::vector<std::string> class_names);

  std::vector<GeneratedImage> generate(const ImageRequest& request) override;
  std::string id() const override { return "mock-t2i"; }

  std::vector<double> domain_embed(const std::string& domain) const;
  std::size_t class_index(const std::string& class_name) const;
  const MetaDistributionSpec& world() const noexcept { return world_; }

 private:
  MetaDistributionSpec world_;
  std::vector<std::string> class_names_;
};

struct HttpImageOptions {
  std::string endpoint;
  std::string token;
  std::string images_field = "images";  // array of base64 strings
  int timeout_seconds = 300;
};

/// POSTs {prompt, seed, count, width, height} and decodes base64 images.
class HttpImageBackend : public ImageBackend {
 public:
  explicit HttpImageBackend(HttpImageOptions options) : options_(std::move(options)) {}

  std::vector<GeneratedImage> generate(const ImageRequest& request) override;
  std::string id() const override { return "http-t2i"; }

  static nlohmann::json request_body(const ImageRequest& request);

 private:
  HttpImageOptions options_;
};

struct HttpEmbeddingOptions {
  std::string endpoint;
  std::string token;
  int timeout_seconds = 120;
};

/// POSTs {inputs: [...]} and accepts either a bare list of vectors or an
/// object with an "embeddings" list.
class HttpEmbeddingClient {
 public:
  explicit HttpEmbeddingClient(HttpEmbeddingOptions options) : options_(std::move(options)) {}

  std::vector<std::vector<double>> embed(const std::vector<std::string>& inputs);

 private:
  HttpEmbeddingOptions options_;
};

// ---------------------------------------------------------------------------
// Synthesis

struct SynthOptions {
  std::uint64_t stream = 0;
  int width = 512;
  int height = 512;
  RetryPolicy retry;
  Sleeper sleeper = real_sleep;
  std::size_t in_flight = 1;
  // Directory receiving images/<id>.png for byte payloads.
  std::string image_dir;
  // Single writer, called in manifest order for every new entry.
  std::function<void(const ManifestEntry&)> on_append;
};

// Base seed for a prompt; replicate r uses base + r.
std::uint64_t prompt_seed(std::uint64_t stream, const PromptItem& item);

/// Appends one entry per (prompt, replicate) that `manifest` does not already
/// hold, in (prompt index, replicate index) order. A prompt whose backend call
/// keeps failing raises StageError with the number of entries appended in this
/// call; everything before it stays in `manifest`.
void synthesize(const PromptSet& prompts, std::size_t images_per_prompt, ImageBackend& backend,
                const SynthOptions& options, Manifest& manifest);

// ---------------------------------------------------------------------------
// Filtering

using ClassPrototypes = std::map<std::string, std::vector<double>>;
using Embedder = std::function<std::vector<double>(const ManifestEntry&)>;

double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct RetentionRow {
  std::string class_name;
  std::string domain;
  std::size_t total = 0;
  std::size_t kept = 0;
  double rate() const { return total == 0 ? 0.0 : static_cast<double>(kept) / total; }
};

/// Scores every entry against its class prototype and sets kept = score >=
/// threshold. Path payloads need `embedder`.
std::vector<RetentionRow> filter_by_similarity(Manifest& manifest,
                                               const ClassPrototypes& prototypes,
                                               double threshold,
                                               const Embedder& embedder = {});

std::string retention_csv(std::span<const RetentionRow> rows);

/// Mean of `count` mock vectors per class generated from the class-only
/// template prompt.
ClassPrototypes template_prototypes(MockImageBackend& backend,
                                    const std::vector<std::string>& class_names,
                                    std::size_t count, std::uint64_t stream);

ClassPrototypes prototypes_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Assembly

enum class Protocol { augment, single_domain_augment, data_free };

const char* to_string(Protocol p) noexcept;
Protocol parse_protocol(const std::string& text);

/// augment: real groups plus one "synthetic" group; single-domain-augment: the
/// one real group plus "synthetic"; data-free: one group per synthetic domain
/// name in order of first appearance. Entries with kept == false are dropped.
GroupedDataset assemble_training_set(const GroupedDataset* real, const Manifest& manifest,
                                     Protocol protocol,
                                     const std::vector<std::string>& class_names);

}  // namespace domex
