#include "httplib.h"

#include "http_json.hpp"

#include "domex/error.hpp"
#include "domex/hashing.hpp"
#include "domex/orchestrator.hpp"
#include "domex/synth.hpp"

namespace domex {
namespace detail {

nlohmann::json post_json(const std::string& endpoint, const std::string& token,
                         const nlohmann::json& body, int timeout_seconds) {
  const auto scheme_end = endpoint.find("://");
  require(scheme_end != std::string::npos, ErrorKind::config,
          "endpoint must include a scheme: '" + endpoint + "'");
  const auto path_begin = endpoint.find('/', scheme_end + 3);
  const std::string base = endpoint.substr(0, path_begin);
  const std::string path = path_begin == std::string::npos ? "/" : endpoint.substr(path_begin);

  httplib::Client client(base);
  require(client.is_valid(), ErrorKind::config, "unsupported endpoint '" + endpoint + "'");
  client.set_connection_timeout(timeout_seconds, 0);
  client.set_read_timeout(timeout_seconds, 0);
  client.set_write_timeout(timeout_seconds, 0);
  httplib::Headers headers;
  if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);

  auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) {
    fail(ErrorKind::backend,
         "POST " + endpoint + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    fail(ErrorKind::backend, "POST " + endpoint + " returned HTTP " +
                                 std::to_string(res->status) + ": " + res->body.substr(0, 200));
  }
  auto reply = nlohmann::json::parse(res->body, nullptr, false);
  if (reply.is_discarded()) throw ParseError("reply from " + endpoint + " is not JSON", res->body);
  return reply;
}

}  // namespace detail

nlohmann::json HttpChatBackend::request_body(const std::string& model, const ChatRequest& request) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", m.role}, {"content", m.content}});
  }
  nlohmann::json body{{"model", model}, {"messages", messages}, {"temperature", request.temperature}};
  if (request.seed) body["seed"] = *request.seed;
  return body;
}

std::string HttpChatBackend::complete(const ChatRequest& request) {
  const auto reply = detail::post_json(options_.endpoint, options_.token,
                                       request_body(options_.model, request),
                                       options_.timeout_seconds);
  const nlohmann::json::json_pointer pointer(options_.response_path);
  if (!reply.contains(pointer) || !reply.at(pointer).is_string()) {
    throw ParseError("chat reply has no text at " + options_.response_path, reply.dump());
  }
  return reply.at(pointer).get<std::string>();
}

nlohmann::json HttpImageBackend::request_body(const ImageRequest& request) {
  return nlohmann::json{{"prompt", request.prompt},
                        {"seed", request.seed},
                        {"count", request.count},
                        {"width", request.width},
                        {"height", request.height}};
}

std::vector<GeneratedImage> HttpImageBackend::generate(const ImageRequest& request) {
  const auto reply = detail::post_json(options_.endpoint, options_.token, request_body(request),
                                       options_.timeout_seconds);
  if (!reply.contains(options_.images_field) || !reply.at(options_.images_field).is_array()) {
    throw ParseError("image reply has no '" + options_.images_field + "' array", reply.dump());
  }
  const auto& images = reply.at(options_.images_field);
  if (images.size() != request.count) {
    fail(ErrorKind::backend, "image service returned " + std::to_string(images.size()) +
                                 " images, expected " + std::to_string(request.count));
  }
  std::vector<GeneratedImage> out;
  for (const auto& item : images) {
    if (!item.is_string()) throw ParseError("image entry is not a base64 string", reply.dump());
    out.emplace_back(base64_decode(item.get<std::string>()));
  }
  return out;
}

std::vector<std::vector<double>> HttpEmbeddingClient::embed(
    const std::vector<std::string>& inputs) {
  const auto reply = detail::post_json(options_.endpoint, options_.token,
                                       nlohmann::json{{"inputs", inputs}},
                                       options_.timeout_seconds);
  const nlohmann::json& list =
      reply.is_object() && reply.contains("embeddings") ? reply.at("embeddings") : reply;
  std::vector<std::vector<double>> out;
  try {
    out = list.get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError("embedding reply is not a list of vectors", reply.dump());
  }
  if (out.size() != inputs.size()) {
    fail(ErrorKind::backend, "embedding service returned " + std::to_string(out.size()) +
                                 " vectors for " + std::to_string(inputs.size()) + " inputs");
  }
  return out;
}

}  // namespace domex
