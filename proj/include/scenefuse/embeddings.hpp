#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scenefuse/geometry.hpp"
#include "scenefuse/image.hpp"

namespace scenefuse {

using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

inline constexpr int kDefaultEmbedDim = 32;
inline constexpr int kDefaultHiddenDim = 32;
inline constexpr int kPointFeatureDim = 9;

struct Embedding {
  VecX values;
  bool normalized = false;

  int dim() const { return static_cast<int>(values.size()); }
};

// Throws kDegenerateNorm when the norm is below 1e-12.
Embedding normalize(const VecX& v);
double cosine(const VecX& a, const VecX& b);
double cosine(const Embedding& a, const Embedding& b);

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual int dim() const = 0;
  virtual Embedding embed_text(const std::string& text) const = 0;
  virtual Embedding embed_image(const RgbImage& image) const = 0;
};

struct ToyProviderParams {
  int dim = kDefaultEmbedDim;
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;
};

// Each vocabulary class owns one column of a seeded random rotation. Text is
// tokenized on non-letters; the known class tokens are summed and normalized,
// and text without any class token hashes to a fixed unit vector. Images are
// classified pixel by pixel against the class colors by chromaticity and the
// dominant class is embedded, plus seeded noise derived from the pixel bytes.
class ToyProvider : public EmbeddingProvider {
 public:
  ToyProvider(std::vector<std::string> vocab, std::vector<Vec3> colors, const ToyProviderParams& params = {});

  int dim() const override { return params_.dim; }
  Embedding embed_text(const std::string& text) const override;
  Embedding embed_image(const RgbImage& image) const override;

  // -1 when the image has no lit pixel.
  int dominant_class(const RgbImage& image) const;
  const VecX& basis(int cls) const { return basis_[static_cast<std::size_t>(cls)]; }
  const std::vector<std::string>& vocab() const { return vocab_; }

 private:
  std::vector<std::string> vocab_;
  std::vector<Vec3> chroma_;
  ToyProviderParams params_;
  std::vector<VecX> basis_;
};

Embedding hash_embedding(const std::string& text, int dim, std::uint64_t seed);

// Two-layer tanh point encoder, mean-pooled over a region. w1 is d_in x h,
// w2 is h x d.
struct EncoderParams {
  MatX w1;
  VecX b1;
  MatX w2;
  VecX b2;

  static EncoderParams zeros(int hidden = kDefaultHiddenDim, int dim = kDefaultEmbedDim);
  static EncoderParams init(std::uint64_t seed, int hidden = kDefaultHiddenDim, int dim = kDefaultEmbedDim);

  int hidden() const { return static_cast<int>(b1.size()); }
  int dim() const { return static_cast<int>(b2.size()); }
  std::size_t size() const;
  void validate() const;
  void set_zero();

  VecX flatten() const;
  void assign(const VecX& flat);
};

// Rows are points: xyz minus the region centroid, rgb, unit normal.
MatX point_features(const PointCloud& cloud, std::span<const Vec3> normals, std::span<const int> ids);

struct RegionEncoding {
  Embedding output;
  Embedding hidden;  // normalized pooled tanh layer; zero and unflagged when degenerate

  VecX pooled_hidden;
  VecX pooled_output;
  MatX a;   // mean over points of x (1 - tanh^2), d_in x h
  VecX s;   // mean over points of (1 - tanh^2)
};

// Throws kDegenerateInput on an empty region and kDegenerateNorm when the
// pooled output is zero.
RegionEncoding encode_points(const EncoderParams& params, const MatX& features);
RegionEncoding encode_points(const EncoderParams& params, const PointCloud& cloud, std::span<const Vec3> normals,
                             std::span<const int> ids);

// Adds the parameter gradient of a loss whose gradient with respect to the
// normalized output (and optionally the normalized hidden feature) is given.
void backprop_region(const EncoderParams& params, const RegionEncoding& enc, const VecX& grad_output,
                     const VecX* grad_hidden, EncoderParams& grads);

struct Tensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;  // row-major
};

std::string encode_tnsr(std::span<const Tensor> tensors);
std::vector<Tensor> decode_tnsr(const std::string& bytes);

std::vector<Tensor> encoder_tensors(const EncoderParams& params);
EncoderParams encoder_from_tensors(std::span<const Tensor> tensors);
const Tensor* find_tensor(std::span<const Tensor> tensors, const std::string& name);
Tensor matrix_tensor(const std::string& name, const MatX& m);
MatX tensor_matrix(const Tensor& t);

void write_tnsr(const std::filesystem::path& path, std::span<const Tensor> tensors);
std::vector<Tensor> read_tnsr(const std::filesystem::path& path);

// Rounds every parameter through f32 so in-memory values equal a saved file.
void round_to_float(EncoderParams& params);

}  // namespace scenefuse
