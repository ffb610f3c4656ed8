#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "domex/retry.hpp"

namespace domex {

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  std::optional<std::uint64_t> seed;
};

/// A chat-completion service. Implementations throw Error(ErrorKind::backend)
/// on transport or service failures; those are retried by the caller.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string complete(const ChatRequest& request) = 0;
  virtual std::string id() const = 0;
  virtual double default_temperature() const = 0;
};

struct MockChatOptions {
  std::uint64_t seed = 0;
  // Every k-th listed item repeats the previous one (0 disables).
  std::size_t duplicate_every = 0;
  // The backend only knows N names per class (0 means the whole vocabulary).
  std::size_t vocabulary_limit = 0;
  // The first `fail_first` calls throw a backend error.
  std::size_t fail_first = 0;
  bool numbered_list = false;
  bool refuse = false;
};

/// Hermetic backend. Reads the structured lines the orchestrator puts in the
/// user prompt ("Class:", "Classes:", "Domain:", "Count:", "Already listed:")
/// and answers from a committed vocabulary ordered by a seeded hash.
class MockChatBackend : public ChatBackend {
 public:
  explicit MockChatBackend(MockChatOptions options = {}) : options_(options) {}

  std::string complete(const ChatRequest& request) override;
  std::string id() const override { return "mock"; }
  double default_temperature() const override { return 0.0; }

  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  MockChatOptions options_;
  std::atomic<std::size_t> calls_{0};
};

struct HttpChatOptions {
  std::string endpoint;  // e.g. https://api.example.com/v1/chat/completions
  std::string model;
  std::string token;     // sent as a bearer token when non-empty
  std::string response_path = "/choices/0/message/content";  // JSON pointer
  int timeout_seconds = 120;
};

/// POSTs {model, messages:[{role, content}], temperature, seed?} and extracts
/// the reply text at `response_path`.
class HttpChatBackend : public ChatBackend {
 public:
  explicit HttpChatBackend(HttpChatOptions options) : options_(std::move(options)) {}

  std::string complete(const ChatRequest& request) override;
  std::string id() const override { return "http:" + options_.model; }
  double default_temperature() const override { return 0.7; }

  static nlohmann::json request_body(const std::string& model, const ChatRequest& request);

 private:
  HttpChatOptions options_;
};

struct ClassInfo {
  std::string name;
  std::string definition;
};

struct TaskSpec {
  std::string task_name;
  std::vector<ClassInfo> classes;
  std::size_t domains_requested = 8;
  std::size_t prompts_per_domain = 8;

  void validate() const;
  std::vector<std::string> class_names() const;
};

struct ChatExchange {
  std::string system_prompt;
  std::string user_prompt;
  std::string response_text;
  std::string backend_id;
  double temperature = 0.0;
  std::optional<std::uint64_t> request_seed;
};

enum class QueryStrategy { class_wise, dataset_wise };
enum class PromptMode { template_prompt, llm };

const char* to_string(QueryStrategy s) noexcept;
const char* to_string(PromptMode m) noexcept;
QueryStrategy parse_query_strategy(const std::string& text);
PromptMode parse_prompt_mode(const std::string& text);

struct DomainKnowledge {
  // Class name -> domain names, in task class order.
  std::vector<std::pair<std::string, std::vector<std::string>>> entries;
  QueryStrategy strategy = QueryStrategy::class_wise;
  std::vector<ChatExchange> provenance;

  const std::vector<std::string>& domains_for(const std::string& class_name) const;
};

struct PromptItem {
  std::string class_name;
  std::string domain;
  std::string prompt_text;
  PromptMode mode = PromptMode::template_prompt;
};

struct PromptSet {
  std::vector<PromptItem> items;
  std::vector<ChatExchange> provenance;
};

struct PromptSegments {
  std::string role;
  std::string task_description;  // "{n}" / "{k}" are replaced by the count
};

PromptSegments default_class_wise_segments();
PromptSegments default_dataset_wise_segments();
PromptSegments default_prompt_writer_segments();

struct OrchestratorOptions {
  std::optional<PromptSegments> class_wise_segments;
  std::optional<PromptSegments> dataset_wise_segments;
  std::optional<PromptSegments> prompt_writer_segments;
  std::optional<double> temperature;  // defaults to the backend's
  std::size_t max_requery = 3;        // refills per shortfall
  RetryPolicy retry;
  Sleeper sleeper = real_sleep;
  std::size_t in_flight = 1;
  // Write-ahead hook, called for every exchange before its reply is parsed.
  std::function<void(const ChatExchange&)> on_exchange;
  std::uint64_t stream = 0;
};

/// One exchange (plus refills) per class, each asking for n domains.
DomainKnowledge extrapolate_class_wise(const TaskSpec& task, ChatBackend& backend,
                                       const OrchestratorOptions& options);

/// One exchange listing every class; the shared domain list is replicated to
/// each class.
DomainKnowledge extrapolate_dataset_wise(const TaskSpec& task, ChatBackend& backend,
                                         const OrchestratorOptions& options);

// "An image of {class_name} in the domain of {domain_name}"
std::string render_template_prompt(const std::string& class_name,
                                   const std::string& domain_name);
// "An image of {class_name}", the single-domain control prompt.
std::string render_class_template_prompt(const std::string& class_name);

/// k distinct diffusion-style prompts for one (class, domain). Exchanges are
/// appended to `provenance`.
std::vector<PromptItem> generate_llm_prompts(const std::string& class_name,
                                             const std::string& domain, std::size_t k,
                                             ChatBackend& backend,
                                             const OrchestratorOptions& options,
                                             std::vector<ChatExchange>& provenance);

/// Template mode: one prompt per (class, domain). LLM mode: k per pair.
PromptSet build_prompt_set(const TaskSpec& task, const DomainKnowledge& knowledge,
                           PromptMode mode, ChatBackend* backend,
                           const OrchestratorOptions& options);

/// Accepts a JSON array of strings, else a numbered or bulleted list. Entries
/// are trimmed and deduplicated case-insensitively, keeping the first casing.
std::vector<std::string> parse_domain_response(const std::string& text);

// Fixture vocabularies used by the mock backend.
const std::vector<std::string>& mock_domain_vocabulary();

void to_json(nlohmann::json& j, const ChatExchange& e);
void from_json(const nlohmann::json& j, ChatExchange& e);
nlohmann::json to_json(const DomainKnowledge& k);
DomainKnowledge domain_knowledge_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PromptSet& p);
PromptSet prompt_set_from_json(const nlohmann::json& j);

}  // namespace domex
