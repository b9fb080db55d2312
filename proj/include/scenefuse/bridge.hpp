#pragma once

#include <string>

#include "scenefuse/embeddings.hpp"

namespace scenefuse {

// Client for an embedding service speaking
//   GET  /v1/info        -> {"model", "dim"}
//   POST /v1/embed_text  {"text"}       -> {"dim", "embedding", "normalized"}
//   POST /v1/embed_image {"ppm_base64"} -> same shape
// Transport and contract failures throw kBridge.
class BridgeProvider : public EmbeddingProvider {
 public:
  // `url` is scheme://host:port, for example http://127.0.0.1:8701.
  explicit BridgeProvider(const std::string& url, double timeout_s = 30.0);

  int dim() const override { return dim_; }
  Embedding embed_text(const std::string& text) const override;
  Embedding embed_image(const RgbImage& image) const override;
  const std::string& model() const { return model_; }

 private:
  Embedding post(const std::string& path, const std::string& body) const;

  std::string url_;
  double timeout_s_;
  std::string model_;
  int dim_ = 0;
};

// Resolves "bridge:URL"; an empty URL falls back to SCENEFUSE_BRIDGE_URL.
std::string resolve_bridge_url(const std::string& provider_spec);

}  // namespace scenefuse
