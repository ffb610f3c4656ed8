#include <gtest/gtest.h>

#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "domex/error.hpp"
#include "domex/orchestrator.hpp"
#include "domex/synth.hpp"

namespace {

using namespace domex;
using nlohmann::json;

// Local HTTP server on an ephemeral port, stopped on destruction.
class LocalServer {
 public:
  LocalServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Server& server() { return server_; }
  std::string url(const std::string& path) const {
    return "http://127.0.0.1:" + std::to_string(port_) + path;
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

TEST(HttpChat, SendsBearerTokenAndReadsReply) {
  LocalServer local;
  json seen;
  std::string auth;
  local.server().Post("/v1/chat", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    auth = req.get_header_value("Authorization");
    res.set_content(R"({"choices":[{"message":{"content":"[\"desert\"]"}}]})",
                    "application/json");
  });
  HttpChatBackend backend({local.url("/v1/chat"), "m1", "secret"});
  ChatRequest r;
  r.messages = {{"user", "hi"}};
  r.seed = 3;
  EXPECT_EQ(backend.complete(r), R"(["desert"])");
  EXPECT_EQ(auth, "Bearer secret");
  EXPECT_EQ(seen.at("model"), "m1");
  EXPECT_EQ(seen.at("seed"), 3);
  EXPECT_EQ(backend.id(), "http:m1");
}

TEST(HttpChat, ServerErrorsAreRetryableBackendErrors) {
  LocalServer local;
  local.server().Post("/chat", [](const httplib::Request&, httplib::Response& res) {
    res.status = 503;
    res.set_content("busy", "text/plain");
  });
  HttpChatBackend backend({local.url("/chat"), "m", ""});
  try {
    backend.complete({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::backend);
    EXPECT_NE(std::string(e.what()).find("503"), std::string::npos);
  }
}

TEST(HttpChat, MissingTextIsParseError) {
  LocalServer local;
  local.server().Post("/chat", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"choices":[]})", "application/json");
  });
  HttpChatBackend backend({local.url("/chat"), "m", ""});
  EXPECT_THROW(backend.complete({}), ParseError);
}

TEST(HttpChat, NonJsonReplyIsParseError) {
  LocalServer local;
  local.server().Post("/chat", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("<html>", "text/html");
  });
  HttpChatBackend backend({local.url("/chat"), "m", ""});
  try {
    backend.complete({});
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.raw_text(), "<html>");
  }
}

TEST(HttpChat, UnreachableEndpointIsBackendError) {
  std::string url;
  {
    LocalServer local;
    url = local.url("/chat");
  }
  HttpChatBackend backend({url, "m", "", "/choices/0/message/content", 2});
  try {
    backend.complete({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::backend);
  }
}

TEST(HttpChat, EndpointWithoutSchemeIsConfigError) {
  HttpChatBackend backend({"localhost/chat", "m", ""});
  try {
    backend.complete({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}

TEST(HttpChat, DrivesClassWiseExtrapolation) {
  LocalServer local;
  local.server().Post("/chat", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"choices":[{"message":{"content":"1. Desert\n2. Canyon"}}]})",
                    "application/json");
  });
  HttpChatBackend backend({local.url("/chat"), "m", ""});
  TaskSpec t{"pets", {{"dog", "canine"}}, 2, 1};
  OrchestratorOptions o;
  o.sleeper = [](std::chrono::milliseconds) {};
  const auto k = extrapolate_class_wise(t, backend, o);
  EXPECT_EQ(k.domains_for("dog"), (std::vector<std::string>{"Desert", "Canyon"}));
  EXPECT_EQ(k.provenance[0].temperature, 0.7);
}

TEST(HttpImage, DecodesBase64Payloads) {
  LocalServer local;
  json seen;
  local.server().Post("/t2i", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    json images = json::array();
    for (int i = 0; i < seen.at("count").get<int>(); ++i) images.push_back("aGVsbG8=");
    res.set_content(json{{"images", images}}.dump(), "application/json");
  });
  HttpImageBackend backend({local.url("/t2i"), "tok"});
  ImageRequest r{"An image of dog", 9, 2, 256, 128, "dog", "desert"};
  const auto out = backend.generate(r);
  ASSERT_EQ(out.size(), 2u);
  const auto& bytes = std::get<ImageBytes>(out[1]);
  EXPECT_EQ(std::string(bytes.begin(), bytes.end()), "hello");
  EXPECT_EQ(seen, (json{{"prompt", "An image of dog"}, {"seed", 9}, {"count", 2},
                        {"width", 256}, {"height", 128}}));
}

TEST(HttpImage, WrongImageCountIsBackendError) {
  LocalServer local;
  local.server().Post("/t2i", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"images":["aGVsbG8="]})", "application/json");
  });
  HttpImageBackend backend({local.url("/t2i"), ""});
  ImageRequest r;
  r.count = 3;
  try {
    backend.generate(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::backend);
  }
}

TEST(HttpEmbedding, AcceptsBothReplyShapes) {
  LocalServer local;
  local.server().Post("/bare", [](const httplib::Request& req, httplib::Response& res) {
    EXPECT_EQ(json::parse(req.body).at("inputs"), (json{"a.png", "b.png"}));
    res.set_content("[[1,0],[0,1]]", "application/json");
  });
  local.server().Post("/wrapped", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"embeddings":[[0.5,0.5],[1,2]]})", "application/json");
  });
  HttpEmbeddingClient bare({local.url("/bare"), ""});
  EXPECT_EQ(bare.embed({"a.png", "b.png"}),
            (std::vector<std::vector<double>>{{1.0, 0.0}, {0.0, 1.0}}));
  HttpEmbeddingClient wrapped({local.url("/wrapped"), ""});
  EXPECT_EQ(wrapped.embed({"x", "y"})[1], (std::vector<double>{1.0, 2.0}));
  EXPECT_THROW(wrapped.embed({"only one"}), Error);
}

}  // namespace
