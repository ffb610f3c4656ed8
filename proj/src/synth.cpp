#include "domex/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "domex/error.hpp"
#include "domex/hashing.hpp"
#include "domex/parallel.hpp"
#include "domex/report.hpp"
#include "domex/rng.hpp"

namespace domex {

std::string manifest_entry_id(const std::string& class_name, const std::string& domain,
                              const std::string& prompt, std::uint64_t seed,
                              const std::string& backend_id) {
  const std::string seed_text = std::to_string(seed);
  return content_hash({class_name, domain, prompt, seed_text, backend_id}).substr(0, 32);
}

void set_filter(ManifestEntry& entry, double score, bool kept) {
  if (entry.filter_score || entry.kept) {
    require(entry.filter_score == score && entry.kept == kept, ErrorKind::validation,
            "entry " + entry.id + " already carries different filter results");
    return;
  }
  entry.filter_score = score;
  entry.kept = kept;
}

const ManifestEntry& Manifest::at(const std::string& id) const {
  const auto it = index_.find(id);
  require(it != index_.end(), ErrorKind::validation, "no manifest entry with id " + id);
  return entries_[it->second];
}

void Manifest::append(ManifestEntry entry) {
  require(!index_.contains(entry.id), ErrorKind::validation,
          "duplicate manifest entry id " + entry.id);
  index_.emplace(entry.id, entries_.size());
  entries_.push_back(std::move(entry));
}

void Manifest::set_filter(std::size_t i, double score, bool kept) {
  domex::set_filter(entries_.at(i), score, kept);
}

std::string reproducible_timestamp() {
  std::time_t t = 0;
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH"); env && *env) {
    char* end = nullptr;
    const long long v = std::strtoll(env, &end, 10);
    require(end && *end == '\0' && v >= 0, ErrorKind::config,
            std::string("SOURCE_DATE_EPOCH is not a non-negative integer: ") + env);
    t = static_cast<std::time_t>(v);
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json to_json(const ManifestHeader& header) {
  return nlohmann::json{{"task_name", header.task_name},
                        {"created_at", header.created_at},
                        {"config_digest", header.config_digest}};
}

nlohmann::json to_json(const ManifestEntry& e) {
  nlohmann::json payload;
  if (const auto* v = std::get_if<VectorPayload>(&e.payload)) {
    payload = {{"vector", v->vector}};
  } else {
    payload = {{"path", std::get<PathPayload>(e.payload).path}};
  }
  return nlohmann::json{
      {"id", e.id},
      {"class", e.class_name},
      {"domain", e.domain},
      {"prompt", e.prompt},
      {"backend_id", e.backend_id},
      {"seed", e.seed},
      {"payload", payload},
      {"filter_score", e.filter_score ? nlohmann::json(*e.filter_score) : nlohmann::json()},
      {"kept", e.kept ? nlohmann::json(*e.kept) : nlohmann::json()}};
}

ManifestEntry manifest_entry_from_json(const nlohmann::json& j) {
  ManifestEntry e;
  j.at("id").get_to(e.id);
  j.at("class").get_to(e.class_name);
  j.at("domain").get_to(e.domain);
  j.at("prompt").get_to(e.prompt);
  j.at("backend_id").get_to(e.backend_id);
  j.at("seed").get_to(e.seed);
  const auto& payload = j.at("payload");
  const bool has_vector = payload.contains("vector");
  const bool has_path = payload.contains("path");
  require(has_vector != has_path, ErrorKind::validation,
          "entry " + e.id + ": payload must hold exactly one of vector or path");
  if (has_vector) {
    e.payload = VectorPayload{payload.at("vector").get<std::vector<double>>()};
  } else {
    e.payload = PathPayload{payload.at("path").get<std::string>()};
  }
  if (j.contains("filter_score") && !j.at("filter_score").is_null()) {
    e.filter_score = j.at("filter_score").get<double>();
  }
  if (j.contains("kept") && !j.at("kept").is_null()) e.kept = j.at("kept").get<bool>();
  return e;
}

std::string manifest_header_line(const ManifestHeader& header) {
  return to_json(header).dump() + "\n";
}

std::string manifest_entry_line(const ManifestEntry& entry) {
  return to_json(entry).dump() + "\n";
}

std::string to_jsonl(const Manifest& manifest) {
  std::string out = manifest_header_line(manifest.header());
  for (const auto& e : manifest.entries()) out += manifest_entry_line(e);
  return out;
}

Manifest manifest_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::optional<Manifest> manifest;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw ParseError("manifest line " + std::to_string(line_no) + " is not JSON", line);
    }
    try {
      if (!manifest) {
        manifest.emplace(ManifestHeader{j.at("task_name").get<std::string>(),
                                        j.at("created_at").get<std::string>(),
                                        j.at("config_digest").get<std::string>()});
      } else {
        manifest->append(manifest_entry_from_json(j));
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::validation,
           "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  require(manifest.has_value(), ErrorKind::validation, "manifest has no header line");
  return std::move(*manifest);
}

// ---------------------------------------------------------------------------

MockImageBackend::MockImageBackend(MetaDistributionSpec world,
                                   std::vector<std::string> class_names)
    : world_(std::move(world)), class_names_(std::move(class_names)) {
  world_.validate();
  require(class_names_.size() == world_.class_count, ErrorKind::validation,
          "mock image backend: " + std::to_string(class_names_.size()) +
              " class names for a world with " + std::to_string(world_.class_count) +
              " classes");
}

std::size_t MockImageBackend::class_index(const std::string& class_name) const {
  const auto it = std::find(class_names_.begin(), class_names_.end(), class_name);
  require(it != class_names_.end(), ErrorKind::validation,
          "mock image backend: unknown class '" + class_name + "'");
  return static_cast<std::size_t>(it - class_names_.begin());
}

std::vector<double> MockImageBackend::domain_embed(const std::string& domain) const {
  Generator g(Stream(world_.seed).child("domain-embed").child(domain));
  std::vector<double> v(world_.dim);
  for (auto& x : v) x = world_.domain_shift_scale * g.normal();
  return v;
}

std::vector<GeneratedImage> MockImageBackend::generate(const ImageRequest& request) {
  require(request.count >= 1, ErrorKind::empty_request, "image request count must be >= 1");
  const std::vector<double> mean = class_mean(world_, class_index(request.class_name));
  const std::vector<double> shift = domain_embed(request.domain);
  std::vector<GeneratedImage> out;
  out.reserve(request.count);
  for (std::size_t r = 0; r < request.count; ++r) {
    Generator g(Stream(request.seed + r).child("t2i"));
    VectorPayload p{std::vector<double>(world_.dim)};
    for (std::size_t d = 0; d < world_.dim; ++d) {
      p.vector[d] = mean[d] + shift[d] + world_.noise_scale * g.normal();
    }
    out.emplace_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::uint64_t prompt_seed(std::uint64_t stream, const PromptItem& item) {
  return Stream(stream).child(item.class_name).child(item.domain).child(item.prompt_text).key();
}

namespace {

void write_bytes(const std::filesystem::path& path, const ImageBytes& bytes) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::resource, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::resource, "failed writing " + path.string());
}

}  // namespace

void synthesize(const PromptSet& prompts, std::size_t images_per_prompt, ImageBackend& backend,
                const SynthOptions& options, Manifest& manifest) {
  require(images_per_prompt >= 1, ErrorKind::validation, "images_per_prompt must be >= 1");
  const std::string backend_id = backend.id();
  const std::size_t chunk = std::max<std::size_t>(1, options.in_flight);
  std::size_t appended = 0;

  for (std::size_t start = 0; start < prompts.items.size(); start += chunk) {
    const std::size_t end = std::min(prompts.items.size(), start + chunk);
    std::vector<std::vector<GeneratedImage>> results(end - start);
    std::vector<std::exception_ptr> errors(end - start);
    parallel_for(end - start, static_cast<unsigned>(chunk), [&](std::size_t k) {
      const PromptItem& item = prompts.items[start + k];
      const std::uint64_t seed = prompt_seed(options.stream, item);
      bool complete = true;
      for (std::size_t r = 0; r < images_per_prompt && complete; ++r) {
        complete = manifest.contains(
            manifest_entry_id(item.class_name, item.domain, item.prompt_text, seed + r, backend_id));
      }
      if (complete) return;
      ImageRequest request{item.prompt_text, seed,        images_per_prompt, options.width,
                           options.height,   item.class_name, item.domain};
      try {
        results[k] = with_retries(options.retry, options.sleeper,
                                  "synthesis of prompt " + std::to_string(start + k),
                                  [&] { return backend.generate(request); });
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });

    for (std::size_t k = 0; k < end - start; ++k) {
      if (errors[k]) {
        try {
          std::rethrow_exception(errors[k]);
        } catch (const Error& e) {
          throw StageError(std::string(e.what()) + " (" + std::to_string(appended) +
                               " entries written before the failure)",
                           appended);
        }
      }
      const PromptItem& item = prompts.items[start + k];
      const std::uint64_t seed = prompt_seed(options.stream, item);
      for (std::size_t r = 0; r < results[k].size(); ++r) {
        ManifestEntry entry;
        entry.id =
            manifest_entry_id(item.class_name, item.domain, item.prompt_text, seed + r, backend_id);
        if (manifest.contains(entry.id)) continue;
        entry.class_name = item.class_name;
        entry.domain = item.domain;
        entry.prompt = item.prompt_text;
        entry.backend_id = backend_id;
        entry.seed = seed + r;
        if (auto* v = std::get_if<VectorPayload>(&results[k][r])) {
          entry.payload = std::move(*v);
        } else {
          require(!options.image_dir.empty(), ErrorKind::config,
                  "image payloads need an output directory");
          const std::string rel = "images/" + entry.id + ".png";
          write_bytes(std::filesystem::path(options.image_dir) / rel,
                      std::get<ImageBytes>(results[k][r]));
          entry.payload = PathPayload{rel};
        }
        if (options.on_append) options.on_append(entry);
        manifest.append(std::move(entry));
        ++appended;
      }
    }
  }
}

// ---------------------------------------------------------------------------

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::validation,
          "cosine: dimension mismatch " + std::to_string(a.size()) + " vs " +
              std::to_string(b.size()));
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  require(aa > 0 && bb > 0, ErrorKind::validation, "cosine of a zero vector is undefined");
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

std::vector<RetentionRow> filter_by_similarity(Manifest& manifest,
                                               const ClassPrototypes& prototypes,
                                               double threshold, const Embedder& embedder) {
  std::vector<RetentionRow> rows;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const ManifestEntry& e = manifest.entries()[i];
    const auto proto = prototypes.find(e.class_name);
    require(proto != prototypes.end(), ErrorKind::validation,
            "no filter prototype for class '" + e.class_name + "'");
    std::vector<double> features;
    if (const auto* v = std::get_if<VectorPayload>(&e.payload)) {
      features = v->vector;
    } else {
      require(static_cast<bool>(embedder), ErrorKind::missing_prerequisite,
              "entry " + e.id + " has an image path; filtering it needs an embedding service");
      features = embedder(e);
    }
    const double score = cosine_similarity(features, proto->second);
    const bool kept = score >= threshold;
    manifest.set_filter(i, score, kept);

    auto row = std::find_if(rows.begin(), rows.end(), [&](const RetentionRow& r) {
      return r.class_name == e.class_name && r.domain == e.domain;
    });
    if (row == rows.end()) {
      rows.push_back({e.class_name, e.domain});
      row = rows.end() - 1;
    }
    ++row->total;
    if (kept) ++row->kept;
  }
  return rows;
}

std::string retention_csv(std::span<const RetentionRow> rows) {
  std::ostringstream out;
  out << "class,domain,total,kept,retention_rate\n";
  for (const auto& r : rows) {
    out << csv_escape(r.class_name) << ',' << csv_escape(r.domain) << ',' << r.total << ','
        << r.kept << ',' << format_double(r.rate()) << '\n';
  }
  return out.str();
}

ClassPrototypes template_prototypes(MockImageBackend& backend,
                                    const std::vector<std::string>& class_names,
                                    std::size_t count, std::uint64_t stream) {
  require(count >= 1, ErrorKind::validation, "prototype sample count must be >= 1");
  ClassPrototypes out;
  for (const auto& c : class_names) {
    ImageRequest request;
    request.prompt = render_class_template_prompt(c);
    request.seed = Stream(stream).child("prototype").child(c).key();
    request.count = count;
    request.class_name = c;
    std::vector<double> mean(backend.world().dim, 0.0);
    for (const auto& img : backend.generate(request)) {
      const auto& v = std::get<VectorPayload>(img).vector;
      for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += v[d] / static_cast<double>(count);
    }
    out.emplace(c, std::move(mean));
  }
  return out;
}

ClassPrototypes prototypes_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorKind::validation, "prototypes must be a JSON object");
  ClassPrototypes out;
  for (const auto& [name, vec] : j.items()) {
    try {
      out.emplace(name, vec.get<std::vector<double>>());
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::validation, "prototype for '" + name + "' is not a list of numbers");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

const char* to_string(Protocol p) noexcept {
  switch (p) {
    case Protocol::augment: return "augment";
    case Protocol::single_domain_augment: return "single-domain-augment";
    case Protocol::data_free: return "data-free";
  }
  return "?";
}

Protocol parse_protocol(const std::string& text) {
  if (text == "augment") return Protocol::augment;
  if (text == "single-domain-augment") return Protocol::single_domain_augment;
  if (text == "data-free") return Protocol::data_free;
  fail(ErrorKind::config, "unknown protocol '" + text + "'");
}

GroupedDataset assemble_training_set(const GroupedDataset* real, const Manifest& manifest,
                                     Protocol protocol,
                                     const std::vector<std::string>& class_names) {
  if (protocol == Protocol::data_free) {
    require(real == nullptr, ErrorKind::validation, "data-free protocol forbids real data");
  } else {
    require(real != nullptr && !real->empty(), ErrorKind::validation,
            std::string(to_string(protocol)) + " protocol requires real data");
    require(protocol != Protocol::single_domain_augment || real->size() == 1,
            ErrorKind::validation,
            "single-domain-augment requires exactly one real domain, got " +
                std::to_string(real->size()));
  }

  auto label_of = [&](const std::string& name) {
    const auto it = std::find(class_names.begin(), class_names.end(), name);
    require(it != class_names.end(), ErrorKind::validation,
            "manifest class '" + name + "' is not a task class");
    return static_cast<std::size_t>(it - class_names.begin());
  };

  GroupedDataset out;
  std::int64_t next_id = 0;
  if (real) {
    out = *real;
    for (const auto& g : out) {
      for (const auto& s : g.samples) next_id = std::max(next_id, s.domain_id + 1);
    }
  }
  const std::size_t synthetic_begin = out.size();

  for (const auto& e : manifest.entries()) {
    if (e.kept == false) continue;
    const auto* v = std::get_if<VectorPayload>(&e.payload);
    require(v != nullptr, ErrorKind::unsupported,
            "entry " + e.id + " has an image path; training needs feature vectors");
    const std::string group_name = protocol == Protocol::data_free ? e.domain : "synthetic";
    auto it = std::find_if(out.begin() + static_cast<std::ptrdiff_t>(synthetic_begin), out.end(),
                           [&](const DomainGroup& g) { return g.name == group_name; });
    if (it == out.end()) {
      out.push_back({group_name, {}});
      it = out.end() - 1;
    }
    const std::int64_t id =
        next_id + static_cast<std::int64_t>(it - out.begin()) - static_cast<std::int64_t>(synthetic_begin);
    it->samples.push_back({v->vector, label_of(e.class_name), id});
  }
  require(out.size() > synthetic_begin, ErrorKind::empty_request,
          "no kept synthetic entries to assemble");
  return out;
}

}  // namespace domex
