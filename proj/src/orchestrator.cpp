#include "domex/orchestrator.hpp"

#include <algorithm>
#include <cctype>
#include <mutex>
#include <regex>
#include <set>
#include <sstream>

#include "domex/error.hpp"
#include "domex/parallel.hpp"
#include "domex/rng.hpp"

namespace domex {
namespace {

std::string trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(begin, end - begin + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string replace_all(std::string text, const std::string& from, const std::string& to) {
  for (std::size_t pos = text.find(from); pos != std::string::npos;
       pos = text.find(from, pos + to.size())) {
    text.replace(pos, from.size(), to);
  }
  return text;
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

// Strips list decoration that models commonly add around an item.
std::string clean_item(std::string item) {
  item = trim(item);
  while (item.size() >= 2 && ((item.front() == '"' && item.back() == '"') ||
                              (item.front() == '*' && item.back() == '*'))) {
    item = trim(item.substr(1, item.size() - 2));
  }
  while (!item.empty() && (item.back() == '.' || item.back() == ',' || item.back() == ';')) {
    item.pop_back();
  }
  return trim(item);
}

std::optional<std::vector<std::string>> json_string_array(const std::string& text) {
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_array()) return std::nullopt;
  std::vector<std::string> out;
  for (const auto& item : j) {
    if (!item.is_string()) return std::nullopt;
    out.push_back(item.get<std::string>());
  }
  return out;
}

std::string system_prompt(const PromptSegments& segments, std::size_t count) {
  const std::string n = std::to_string(count);
  std::string task = replace_all(segments.task_description, "{n}", n);
  task = replace_all(task, "{k}", n);
  return "[Role]\n" + segments.role + "\n\n[Task Description]\n" + task;
}

// Thread-safe forwarding of exchanges to the write-ahead hook.
class ExchangeSink {
 public:
  explicit ExchangeSink(const std::function<void(const ChatExchange&)>& hook) : hook_(hook) {}
  void operator()(const ChatExchange& e) {
    if (!hook_) return;
    std::lock_guard lock(mutex_);
    hook_(e);
  }

 private:
  const std::function<void(const ChatExchange&)>& hook_;
  std::mutex mutex_;
};

/// Queries until `count` unique items are collected or the refill budget is
/// spent. `header` carries the structured request lines.
std::vector<std::string> query_unique_list(ChatBackend& backend,
                                           const OrchestratorOptions& options,
                                           const PromptSegments& segments,
                                           const std::string& header, std::size_t count,
                                           Stream stream, const std::string& what,
                                           std::vector<ChatExchange>& provenance,
                                           ExchangeSink& sink) {
  std::vector<std::string> have;
  std::set<std::string> seen;
  const double temperature = options.temperature.value_or(backend.default_temperature());
  for (std::size_t attempt = 0; attempt <= options.max_requery && have.size() < count;
       ++attempt) {
    const std::size_t need = count - have.size();
    std::string user = header + "Count: " + std::to_string(need) + "\n";
    if (!have.empty()) user += "Already listed: " + join(have, "; ") + "\n";

    ChatRequest request;
    request.messages = {{"system", system_prompt(segments, need)}, {"user", user}};
    request.temperature = temperature;
    request.seed = stream.child(attempt).key();

    ChatExchange exchange;
    exchange.system_prompt = request.messages[0].content;
    exchange.user_prompt = user;
    exchange.backend_id = backend.id();
    exchange.temperature = temperature;
    exchange.request_seed = request.seed;
    exchange.response_text = with_retries(options.retry, options.sleeper, what,
                                          [&] { return backend.complete(request); });
    provenance.push_back(exchange);
    sink(exchange);

    for (auto& item : parse_domain_response(exchange.response_text)) {
      if (have.size() == count) break;
      if (seen.insert(lower(item)).second) have.push_back(std::move(item));
    }
  }
  if (have.size() < count) {
    fail(ErrorKind::backend, what + ": shortfall, collected " + std::to_string(have.size()) +
                                 " of " + std::to_string(count) + " unique items after " +
                                 std::to_string(options.max_requery) + " refill(s)");
  }
  return have;
}

struct ParsedUserPrompt {
  std::string class_key;
  std::string domain;
  std::size_t count = 0;
  std::set<std::string> already;  // lowercased
};

ParsedUserPrompt parse_user_prompt(const std::string& user) {
  ParsedUserPrompt out;
  std::istringstream in(user);
  std::string line;
  auto value_after = [](const std::string& l, std::string_view key) -> std::optional<std::string> {
    if (l.rfind(key, 0) != 0) return std::nullopt;
    return trim(std::string_view(l).substr(key.size()));
  };
  while (std::getline(in, line)) {
    if (auto v = value_after(line, "Class:")) out.class_key = *v;
    else if (auto v2 = value_after(line, "Classes:")) out.class_key = *v2;
    else if (auto v3 = value_after(line, "Domain:")) out.domain = *v3;
    else if (auto v4 = value_after(line, "Count:")) out.count = std::stoul(*v4);
    else if (auto v5 = value_after(line, "Already listed:")) {
      std::istringstream items(*v5);
      std::string item;
      while (std::getline(items, item, ';')) out.already.insert(lower(trim(item)));
    }
  }
  return out;
}

const std::vector<std::string>& prompt_leads() {
  static const std::vector<std::string> leads = {
      "A photo",          "A detailed illustration", "A wide-angle shot",
      "A close-up shot",  "A cinematic still",       "A high-resolution image",
      "A candid snapshot", "An artistic rendering"};
  return leads;
}

const std::vector<std::string>& prompt_styles() {
  static const std::vector<std::string> styles = {
      "soft lighting",   "golden hour",         "high detail",       "shallow depth of field",
      "overcast sky",    "vivid colors",        "muted palette",     "centered composition",
      "from a low angle", "seen from above",    "natural light",     "dramatic shadows",
      "wide composition", "sharp focus",        "pastel tones",      "rich textures"};
  return styles;
}

}  // namespace

// ---------------------------------------------------------------------------
// Backends

std::string MockChatBackend::complete(const ChatRequest& request) {
  const std::size_t call = calls_++;
  if (call < options_.fail_first) {
    fail(ErrorKind::backend, "mock backend: injected failure on call " + std::to_string(call));
  }
  if (options_.refuse) return "I cannot help with that.";

  std::string user;
  for (const auto& m : request.messages) {
    if (m.role == "user") user = m.content;
  }
  const ParsedUserPrompt parsed = parse_user_prompt(user);
  const std::uint64_t seed = request.seed.value_or(0) ^ options_.seed;

  std::vector<std::string> items;
  if (!parsed.domain.empty()) {
    const Stream base = Stream(seed).child(parsed.class_key).child(parsed.domain);
    const auto& leads = prompt_leads();
    const auto& styles = prompt_styles();
    for (std::size_t i = 0; items.size() < parsed.count && i < 64 * (parsed.count + 1); ++i) {
      Generator g(base.child(i));
      const auto& lead = leads[g.below(leads.size())];
      const std::size_t a = g.below(styles.size());
      std::size_t b = g.below(styles.size() - 1);
      if (b >= a) ++b;
      std::string prompt = lead + " of a " + parsed.class_key + " in " + parsed.domain +
                           ", " + styles[a] + ", " + styles[b];
      if (!parsed.already.contains(lower(prompt))) items.push_back(std::move(prompt));
    }
  } else {
    auto rank = [&](std::vector<std::string>& names, std::uint64_t s) {
      const std::uint64_t key = stable_hash64(parsed.class_key) ^ mix64(s);
      std::stable_sort(names.begin(), names.end(), [&](const auto& a, const auto& b) {
        return mix64(key ^ stable_hash64(a)) < mix64(key ^ stable_hash64(b));
      });
    };
    std::vector<std::string> ranked = mock_domain_vocabulary();
    // The limited vocabulary is fixed per class, whatever the request seed.
    if (options_.vocabulary_limit > 0 && ranked.size() > options_.vocabulary_limit) {
      rank(ranked, options_.seed);
      ranked.resize(options_.vocabulary_limit);
    }
    rank(ranked, seed);
    for (const auto& name : ranked) {
      if (items.size() == parsed.count) break;
      if (!parsed.already.contains(lower(name))) items.push_back(name);
    }
  }
  if (options_.duplicate_every > 0) {
    for (std::size_t i = 1; i < items.size(); ++i) {
      if ((i + 1) % options_.duplicate_every == 0) items[i] = items[i - 1];
    }
  }

  if (options_.numbered_list) {
    std::string out = "Here are the results:\n";
    for (std::size_t i = 0; i < items.size(); ++i) {
      out += std::to_string(i + 1) + ". " + items[i] + "\n";
    }
    return out;
  }
  return nlohmann::json(items).dump();
}

// ---------------------------------------------------------------------------
// Task and knowledge types

void TaskSpec::validate() const {
  require(!classes.empty(), ErrorKind::validation, "task: at least one class is required");
  std::set<std::string> names;
  for (const auto& c : classes) {
    require(!trim(c.name).empty(), ErrorKind::validation, "task: class names must be non-empty");
    require(names.insert(c.name).second, ErrorKind::validation,
            "task: duplicate class name '" + c.name + "'");
  }
  require(domains_requested >= 1, ErrorKind::validation, "task: domains_requested must be >= 1");
  require(prompts_per_domain >= 1, ErrorKind::validation,
          "task: prompts_per_domain must be >= 1");
}

std::vector<std::string> TaskSpec::class_names() const {
  std::vector<std::string> out;
  for (const auto& c : classes) out.push_back(c.name);
  return out;
}

const std::vector<std::string>& DomainKnowledge::domains_for(const std::string& name) const {
  for (const auto& [c, domains] : entries) {
    if (c == name) return domains;
  }
  fail(ErrorKind::validation, "no domains recorded for class '" + name + "'");
}

const char* to_string(QueryStrategy s) noexcept {
  return s == QueryStrategy::class_wise ? "class-wise" : "dataset-wise";
}

const char* to_string(PromptMode m) noexcept {
  return m == PromptMode::template_prompt ? "template" : "llm";
}

QueryStrategy parse_query_strategy(const std::string& text) {
  if (text == "class-wise") return QueryStrategy::class_wise;
  if (text == "dataset-wise") return QueryStrategy::dataset_wise;
  fail(ErrorKind::config, "unknown query strategy '" + text + "'");
}

PromptMode parse_prompt_mode(const std::string& text) {
  if (text == "template") return PromptMode::template_prompt;
  if (text == "llm") return PromptMode::llm;
  fail(ErrorKind::config, "unknown prompt mode '" + text + "'");
}

PromptSegments default_class_wise_segments() {
  return {"You are an expert in visual recognition who knows where and how objects appear "
          "in photographs, artwork and everyday scenes.",
          "You will be given one class of a classification task together with its "
          "definition. Think step by step about the settings, environments and visual "
          "styles in which this class realistically occurs. Then name the {n} most "
          "plausible and reasonable domains in which images of this class would exist. "
          "Do not repeat any name listed as already listed. Answer only with a JSON array "
          "of {n} short domain names."};
}

PromptSegments default_dataset_wise_segments() {
  return {"You are an expert in visual recognition who knows where and how objects appear "
          "in photographs, artwork and everyday scenes.",
          "You will be given every class of a classification task. Think step by step "
          "about settings, environments and visual styles shared by all of these classes. "
          "Then name the {n} most plausible and reasonable domains in which images of each "
          "of these classes could exist. Do not repeat any name listed as already listed. "
          "Answer only with a JSON array of {n} short domain names."};
}

PromptSegments default_prompt_writer_segments() {
  return {"You write prompts for text-to-image diffusion models.",
          "You will be given a class and a domain. Write {k} distinct, detailed prompts "
          "that make a diffusion model render the class inside that domain, varying "
          "composition, viewpoint and lighting. Every prompt must mention both the class "
          "and the domain. Answer only with a JSON array of {k} strings."};
}

// ---------------------------------------------------------------------------
// Extrapolation

DomainKnowledge extrapolate_class_wise(const TaskSpec& task, ChatBackend& backend,
                                       const OrchestratorOptions& options) {
  task.validate();
  const PromptSegments segments =
      options.class_wise_segments.value_or(default_class_wise_segments());
  ExchangeSink sink(options.on_exchange);
  const Stream root = Stream(options.stream).child("class-wise");

  std::vector<std::vector<std::string>> lists(task.classes.size());
  std::vector<std::vector<ChatExchange>> exchanges(task.classes.size());
  parallel_for(task.classes.size(), static_cast<unsigned>(options.in_flight),
               [&](std::size_t c) {
                 const ClassInfo& info = task.classes[c];
                 const std::string header = "Task: " + task.task_name + "\nClass: " +
                                            info.name + "\nDefinition: " + info.definition +
                                            "\n";
                 lists[c] = query_unique_list(
                     backend, options, segments, header, task.domains_requested,
                     root.child(info.name), "domain extrapolation for class '" + info.name + "'",
                     exchanges[c], sink);
               });

  DomainKnowledge out;
  out.strategy = QueryStrategy::class_wise;
  for (std::size_t c = 0; c < task.classes.size(); ++c) {
    out.entries.emplace_back(task.classes[c].name, std::move(lists[c]));
    for (auto& e : exchanges[c]) out.provenance.push_back(std::move(e));
  }
  return out;
}

DomainKnowledge extrapolate_dataset_wise(const TaskSpec& task, ChatBackend& backend,
                                         const OrchestratorOptions& options) {
  task.validate();
  const PromptSegments segments =
      options.dataset_wise_segments.value_or(default_dataset_wise_segments());
  ExchangeSink sink(options.on_exchange);

  std::string header = "Task: " + task.task_name + "\nClasses: " + join(task.class_names(), ", ") +
                       "\nDefinitions:\n";
  for (const auto& c : task.classes) header += "- " + c.name + ": " + c.definition + "\n";

  DomainKnowledge out;
  out.strategy = QueryStrategy::dataset_wise;
  const auto shared = query_unique_list(backend, options, segments, header,
                                        task.domains_requested,
                                        Stream(options.stream).child("dataset-wise"),
                                        "dataset-wise domain extrapolation", out.provenance,
                                        sink);
  for (const auto& c : task.classes) out.entries.emplace_back(c.name, shared);
  return out;
}

// ---------------------------------------------------------------------------
// Prompts

std::string render_template_prompt(const std::string& class_name,
                                   const std::string& domain_name) {
  require(!class_name.empty() && !domain_name.empty(), ErrorKind::validation,
          "template prompt needs non-empty class and domain names");
  return "An image of " + class_name + " in the domain of " + domain_name;
}

std::string render_class_template_prompt(const std::string& class_name) {
  require(!class_name.empty(), ErrorKind::validation, "template prompt needs a class name");
  return "An image of " + class_name;
}

std::vector<PromptItem> generate_llm_prompts(const std::string& class_name,
                                             const std::string& domain, std::size_t k,
                                             ChatBackend& backend,
                                             const OrchestratorOptions& options,
                                             std::vector<ChatExchange>& provenance) {
  require(k >= 1, ErrorKind::validation, "generate_llm_prompts: k must be >= 1");
  require(!class_name.empty() && !domain.empty(), ErrorKind::validation,
          "generate_llm_prompts: class and domain must be non-empty");
  const PromptSegments segments =
      options.prompt_writer_segments.value_or(default_prompt_writer_segments());
  ExchangeSink sink(options.on_exchange);
  const std::string header = "Class: " + class_name + "\nDomain: " + domain + "\n";
  const auto texts = query_unique_list(
      backend, options, segments, header, k,
      Stream(options.stream).child("prompts").child(class_name).child(domain),
      "prompt generation for ('" + class_name + "', '" + domain + "')", provenance, sink);
  std::vector<PromptItem> out;
  for (const auto& t : texts) out.push_back({class_name, domain, t, PromptMode::llm});
  return out;
}

PromptSet build_prompt_set(const TaskSpec& task, const DomainKnowledge& knowledge,
                           PromptMode mode, ChatBackend* backend,
                           const OrchestratorOptions& options) {
  task.validate();
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& c : task.classes) {
    for (const auto& d : knowledge.domains_for(c.name)) pairs.emplace_back(c.name, d);
  }

  PromptSet out;
  if (mode == PromptMode::template_prompt) {
    for (const auto& [c, d] : pairs) {
      out.items.push_back({c, d, render_template_prompt(c, d), PromptMode::template_prompt});
    }
    return out;
  }

  require(backend != nullptr, ErrorKind::validation, "llm prompt mode needs a chat backend");
  std::vector<std::vector<PromptItem>> items(pairs.size());
  std::vector<std::vector<ChatExchange>> exchanges(pairs.size());
  parallel_for(pairs.size(), static_cast<unsigned>(options.in_flight), [&](std::size_t i) {
    items[i] = generate_llm_prompts(pairs[i].first, pairs[i].second, task.prompts_per_domain,
                                    *backend, options, exchanges[i]);
  });
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    for (auto& item : items[i]) out.items.push_back(std::move(item));
    for (auto& e : exchanges[i]) out.provenance.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parsing

std::vector<std::string> parse_domain_response(const std::string& text) {
  std::optional<std::vector<std::string>> raw = json_string_array(trim(text));
  if (!raw) {
    const auto open = text.find('[');
    const auto close = text.rfind(']');
    if (open != std::string::npos && close != std::string::npos && close > open) {
      raw = json_string_array(text.substr(open, close - open + 1));
    }
  }
  if (!raw) {
    static const std::regex item_line(R"(^\s*(?:\d+\s*[.)]|[-*]|•)\s+(.+?)\s*$)");
    std::vector<std::string> items;
    std::istringstream in(text);
    std::string line;
    std::smatch match;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (std::regex_match(line, match, item_line)) items.push_back(match[1].str());
    }
    if (!items.empty()) raw = std::move(items);
  }
  if (!raw) throw ParseError("reply contains neither a JSON array nor a list", text);

  std::vector<std::string> out;
  std::set<std::string> seen;
  for (auto& item : *raw) {
    std::string cleaned = clean_item(item);
    if (cleaned.empty()) continue;
    if (seen.insert(lower(cleaned)).second) out.push_back(std::move(cleaned));
  }
  return out;
}

const std::vector<std::string>& mock_domain_vocabulary() {
  static const std::vector<std::string> vocab = {
      "cityscapes",        "underwater",          "snowfield",          "cartoon",
      "fairytale",         "desert",              "rainforest",         "oil painting",
      "watercolor",        "pencil sketch",       "night street",       "foggy harbor",
      "mountain trail",    "beach at sunset",     "farmyard",           "living room",
      "kitchen",           "backyard garden",     "city park",          "subway station",
      "rooftop",           "autumn forest",       "grassland",          "savanna",
      "arctic tundra",     "volcanic landscape",  "cave interior",      "medieval castle",
      "space station",     "futuristic city",     "steampunk workshop", "pixel art",
      "low-poly render",   "claymation",          "stained glass",      "mosaic",
      "woodblock print",   "comic book",          "anime",              "graffiti wall",
      "neon-lit alley",    "rainy window",        "thermal camera",     "infrared photo",
      "blueprint drawing", "embroidery",          "origami",            "sand sculpture",
      "ice sculpture",     "wood carving",        "bronze statue",      "children's drawing",
      "chalkboard",        "vintage photograph",  "sepia film",         "instant photo",
      "security camera",   "drone footage",       "macro photography",  "museum exhibit",
      "toy store",         "snow globe",          "aquarium",           "veterinary clinic",
      "pet show",          "circus tent",         "carnival",           "library",
      "classroom",         "hospital",            "airport lounge",     "train carriage",
      "sailboat deck",     "lighthouse",          "vineyard",           "tea plantation",
      "rice terraces",     "bamboo grove",        "cherry blossom park", "lavender field",
      "sunflower field",   "coral reef",          "mangrove swamp",     "riverbank",
      "waterfall",         "glacier",             "sand dunes",         "canyon",
      "prairie",           "suburban street",     "village market",     "harbor dock",
      "construction site", "abandoned factory",   "greenhouse",         "night sky"};
  return vocab;
}

// ---------------------------------------------------------------------------
// JSON

void to_json(nlohmann::json& j, const ChatExchange& e) {
  j = nlohmann::json{{"system_prompt", e.system_prompt},
                     {"user_prompt", e.user_prompt},
                     {"response_text", e.response_text},
                     {"backend_id", e.backend_id},
                     {"temperature", e.temperature},
                     {"request_seed", e.request_seed ? nlohmann::json(*e.request_seed)
                                                     : nlohmann::json(nullptr)}};
}

void from_json(const nlohmann::json& j, ChatExchange& e) {
  j.at("system_prompt").get_to(e.system_prompt);
  j.at("user_prompt").get_to(e.user_prompt);
  j.at("response_text").get_to(e.response_text);
  j.at("backend_id").get_to(e.backend_id);
  j.at("temperature").get_to(e.temperature);
  if (j.contains("request_seed") && !j.at("request_seed").is_null()) {
    e.request_seed = j.at("request_seed").get<std::uint64_t>();
  }
}

nlohmann::json to_json(const DomainKnowledge& k) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [c, domains] : k.entries) {
    entries.push_back({{"class", c}, {"domains", domains}});
  }
  return nlohmann::json{
      {"strategy", to_string(k.strategy)}, {"entries", entries}, {"provenance", k.provenance}};
}

DomainKnowledge domain_knowledge_from_json(const nlohmann::json& j) {
  DomainKnowledge k;
  k.strategy = parse_query_strategy(j.at("strategy").get<std::string>());
  for (const auto& e : j.at("entries")) {
    k.entries.emplace_back(e.at("class").get<std::string>(),
                           e.at("domains").get<std::vector<std::string>>());
  }
  k.provenance = j.at("provenance").get<std::vector<ChatExchange>>();
  return k;
}

nlohmann::json to_json(const PromptSet& p) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& item : p.items) {
    items.push_back({{"class", item.class_name},
                     {"domain", item.domain},
                     {"prompt_text", item.prompt_text},
                     {"mode", to_string(item.mode)}});
  }
  return nlohmann::json{{"items", items}, {"provenance", p.provenance}};
}

PromptSet prompt_set_from_json(const nlohmann::json& j) {
  PromptSet p;
  for (const auto& item : j.at("items")) {
    p.items.push_back({item.at("class").get<std::string>(), item.at("domain").get<std::string>(),
                       item.at("prompt_text").get<std::string>(),
                       parse_prompt_mode(item.at("mode").get<std::string>())});
  }
  p.provenance = j.at("provenance").get<std::vector<ChatExchange>>();
  return p;
}

}  // namespace domex
