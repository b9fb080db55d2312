#include "scenefuse/bridge.hpp"

#include <cmath>
#include <cstdlib>

#include "httplib.h"
#include "json.hpp"
#include "scenefuse/error.hpp"

namespace scenefuse {

namespace {

httplib::Client make_client(const std::string& url, double timeout_s) {
  httplib::Client client(url);
  if (!client.is_valid()) throw Error(ErrorCode::kBridge, "invalid bridge url " + url);
  const auto sec = static_cast<time_t>(timeout_s);
  const auto usec = static_cast<time_t>((timeout_s - static_cast<double>(sec)) * 1e6);
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);
  return client;
}

nlohmann::json parse_body(const httplib::Result& res, const std::string& what) {
  if (!res) throw Error(ErrorCode::kBridge, what + ": " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw Error(ErrorCode::kBridge, what + ": HTTP " + std::to_string(res->status) + " " + res->body);
  }
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBridge, what + ": malformed JSON: " + e.what());
  }
}

}  // namespace

BridgeProvider::BridgeProvider(const std::string& url, double timeout_s) : url_(url), timeout_s_(timeout_s) {
  auto client = make_client(url_, timeout_s_);
  const auto info = parse_body(client.Get("/v1/info"), "GET /v1/info");
  try {
    model_ = info.at("model").get<std::string>();
    dim_ = info.at("dim").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBridge, std::string("bad /v1/info response: ") + e.what());
  }
  if (dim_ < 1) throw Error(ErrorCode::kBridge, "bridge reports a non-positive dimension");
}

Embedding BridgeProvider::post(const std::string& path, const std::string& body) const {
  auto client = make_client(url_, timeout_s_);
  const auto j = parse_body(client.Post(path, body, "application/json"), "POST " + path);
  VecX v;
  try {
    const auto values = j.at("embedding").get<std::vector<double>>();
    if (j.at("dim").get<int>() != dim_ || static_cast<int>(values.size()) != dim_) {
      throw Error(ErrorCode::kBridge, path + " returned a dimension different from /v1/info");
    }
    v = Eigen::Map<const VecX>(values.data(), static_cast<Eigen::Index>(values.size()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBridge, path + ": bad response: " + e.what());
  }
  if (!v.allFinite() || std::abs(v.norm() - 1.0) > 1e-5) {
    throw Error(ErrorCode::kBridge, path + " returned a vector that is not unit norm");
  }
  return {v, true};
}

Embedding BridgeProvider::embed_text(const std::string& text) const {
  return post("/v1/embed_text", nlohmann::json{{"text", text}}.dump());
}

Embedding BridgeProvider::embed_image(const RgbImage& image) const {
  return post("/v1/embed_image", nlohmann::json{{"ppm_base64", httplib::detail::base64_encode(encode_ppm(image))}}.dump());
}

std::string resolve_bridge_url(const std::string& provider_spec) {
  const std::string prefix = "bridge:";
  if (provider_spec.rfind(prefix, 0) != 0) throw Error(ErrorCode::kConfig, "not a bridge provider: " + provider_spec);
  std::string url = provider_spec.substr(prefix.size());
  if (url.empty()) {
    const char* env = std::getenv("SCENEFUSE_BRIDGE_URL");
    if (env == nullptr || *env == '\0') {
      throw Error(ErrorCode::kConfig, "bridge provider needs a URL or SCENEFUSE_BRIDGE_URL");
    }
    url = env;
  }
  return url;
}

}  // namespace scenefuse
