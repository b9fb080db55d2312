#include "scenefuse/embeddings.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <random>

#include "binary_io.hpp"
#include "hashing.hpp"
#include "scenefuse/error.hpp"

namespace scenefuse {

Embedding normalize(const VecX& v) {
  const double n = v.norm();
  if (!(n >= 1e-12)) throw Error(ErrorCode::kDegenerateNorm, "cannot normalize a zero vector");
  return {v / n, true};
}

double cosine(const VecX& a, const VecX& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kShapeMismatch, "cosine of vectors with different dimensions");
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw Error(ErrorCode::kDegenerateInput, "cosine with a zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double cosine(const Embedding& a, const Embedding& b) { return cosine(a.values, b.values); }

Embedding hash_embedding(const std::string& text, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(mix64(fnv1a(text) ^ mix64(seed)));
  std::normal_distribution<double> normal(0.0, 1.0);
  VecX v(dim);
  for (int i = 0; i < dim; ++i) v[i] = normal(rng);
  return normalize(v);
}

namespace {

Vec3 chroma_of(const Vec3& c) { return c / c.sum(); }

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isalpha(static_cast<unsigned char>(ch))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

ToyProvider::ToyProvider(std::vector<std::string> vocab, std::vector<Vec3> colors, const ToyProviderParams& params)
    : vocab_(std::move(vocab)), params_(params) {
  if (params_.dim < 1) throw Error(ErrorCode::kBadParam, "embedding dimension must be positive");
  if (vocab_.size() > static_cast<std::size_t>(params_.dim)) {
    throw Error(ErrorCode::kCapacity, "vocabulary larger than the embedding dimension");
  }
  if (colors.size() != vocab_.size()) throw Error(ErrorCode::kShapeMismatch, "one color per vocabulary class");
  if (params_.noise_sigma < 0.0) throw Error(ErrorCode::kBadParam, "noise_sigma must be non-negative");
  for (const Vec3& c : colors) {
    if (!(c.sum() > 0.0)) throw Error(ErrorCode::kBadParam, "class colors must be lit");
    chroma_.push_back(chroma_of(c));
  }
  std::mt19937_64 rng(mix64(params_.seed));
  std::normal_distribution<double> normal(0.0, 1.0);
  MatX g(params_.dim, params_.dim);
  for (int j = 0; j < params_.dim; ++j) {
    for (int i = 0; i < params_.dim; ++i) g(i, j) = normal(rng);
  }
  const MatX q = Eigen::HouseholderQR<MatX>(g).householderQ();
  for (std::size_t c = 0; c < vocab_.size(); ++c) basis_.push_back(q.col(static_cast<int>(c)));
}

Embedding ToyProvider::embed_text(const std::string& text) const {
  VecX sum = VecX::Zero(params_.dim);
  bool known = false;
  for (const std::string& token : tokenize(text)) {
    for (std::size_t c = 0; c < vocab_.size(); ++c) {
      if (token == vocab_[c]) {
        sum += basis_[c];
        known = true;
      }
    }
  }
  if (!known) return hash_embedding(text, params_.dim, params_.seed);
  return normalize(sum);
}

int ToyProvider::dominant_class(const RgbImage& image) const {
  std::vector<long> votes(vocab_.size(), 0);
  bool any = false;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const Vec3 c = image.at(x, y);
      if (c.sum() < 1e-3) continue;
      const Vec3 q = chroma_of(c);
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < chroma_.size(); ++k) {
        const double d = (q - chroma_[k]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      ++votes[best];
      any = true;
    }
  }
  if (!any) return -1;
  return static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

Embedding ToyProvider::embed_image(const RgbImage& image) const {
  const int cls = dominant_class(image);
  if (cls < 0) throw Error(ErrorCode::kDegenerateInput, "image has no lit pixel");
  VecX v = basis_[static_cast<std::size_t>(cls)];
  if (params_.noise_sigma > 0.0) {
    const std::string_view bytes(reinterpret_cast<const char*>(image.data.data()), image.data.size() * sizeof(float));
    std::mt19937_64 rng(mix64(fnv1a(bytes) ^ mix64(params_.seed + 1)));
    std::normal_distribution<double> normal(0.0, params_.noise_sigma);
    for (int i = 0; i < params_.dim; ++i) v[i] += normal(rng);
  }
  return normalize(v);
}

EncoderParams EncoderParams::zeros(int hidden, int dim) {
  if (hidden < 1 || dim < 1) throw Error(ErrorCode::kBadParam, "encoder sizes must be positive");
  return {MatX::Zero(kPointFeatureDim, hidden), VecX::Zero(hidden), MatX::Zero(hidden, dim), VecX::Zero(dim)};
}

EncoderParams EncoderParams::init(std::uint64_t seed, int hidden, int dim) {
  EncoderParams p = zeros(hidden, dim);
  std::mt19937_64 rng(mix64(seed ^ 0x656e636f646572ull));
  auto fill = [&](MatX& m) {
    const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (int i = 0; i < m.rows(); ++i) {
      for (int j = 0; j < m.cols(); ++j) m(i, j) = u(rng);
    }
  };
  fill(p.w1);
  fill(p.w2);
  return p;
}

std::size_t EncoderParams::size() const {
  return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size());
}

void EncoderParams::validate() const {
  if (w1.rows() != kPointFeatureDim || w1.cols() != b1.size() || w2.rows() != b1.size() || w2.cols() != b2.size()) {
    throw Error(ErrorCode::kShapeMismatch, "inconsistent encoder parameter shapes");
  }
  if (!w1.allFinite() || !b1.allFinite() || !w2.allFinite() || !b2.allFinite()) {
    throw Error(ErrorCode::kDegenerateInput, "non-finite encoder parameters");
  }
}

void EncoderParams::set_zero() {
  w1.setZero();
  b1.setZero();
  w2.setZero();
  b2.setZero();
}

VecX EncoderParams::flatten() const {
  VecX out(static_cast<Eigen::Index>(size()));
  Eigen::Index o = 0;
  for (const auto* m : {&w1, &w2}) {
    out.segment(o, m->size()) = Eigen::Map<const VecX>(m->data(), m->size());
    o += m->size();
  }
  for (const auto* v : {&b1, &b2}) {
    out.segment(o, v->size()) = *v;
    o += v->size();
  }
  return out;
}

void EncoderParams::assign(const VecX& flat) {
  if (flat.size() != static_cast<Eigen::Index>(size())) throw Error(ErrorCode::kShapeMismatch, "flat parameter size");
  Eigen::Index o = 0;
  for (auto* m : {&w1, &w2}) {
    Eigen::Map<VecX>(m->data(), m->size()) = flat.segment(o, m->size());
    o += m->size();
  }
  for (auto* v : {&b1, &b2}) {
    *v = flat.segment(o, v->size());
    o += v->size();
  }
}

MatX point_features(const PointCloud& cloud, std::span<const Vec3> normals, std::span<const int> ids) {
  if (ids.empty()) throw Error(ErrorCode::kDegenerateInput, "empty region");
  if (normals.size() != cloud.size()) throw Error(ErrorCode::kShapeMismatch, "one normal per point");
  Vec3 centroid = Vec3::Zero();
  for (int i : ids) centroid += cloud.positions.at(static_cast<std::size_t>(i));
  centroid /= static_cast<double>(ids.size());
  MatX x(static_cast<Eigen::Index>(ids.size()), kPointFeatureDim);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const auto i = static_cast<std::size_t>(ids[r]);
    const auto row = static_cast<Eigen::Index>(r);
    x.block<1, 3>(row, 0) = (cloud.positions[i] - centroid).transpose();
    x.block<1, 3>(row, 3) = cloud.colors[i].transpose();
    x.block<1, 3>(row, 6) = normals[i].transpose();
  }
  return x;
}

RegionEncoding encode_points(const EncoderParams& params, const MatX& features) {
  if (features.rows() == 0) throw Error(ErrorCode::kDegenerateInput, "empty region");
  if (features.cols() != params.w1.rows()) throw Error(ErrorCode::kShapeMismatch, "feature width");
  const double inv_n = 1.0 / static_cast<double>(features.rows());
  MatX h = features * params.w1;
  h.rowwise() += params.b1.transpose();
  h = h.array().tanh().matrix();
  const MatX deriv = (1.0 - h.array().square()).matrix();

  RegionEncoding enc;
  enc.pooled_hidden = (h.colwise().sum() * inv_n).transpose();
  enc.pooled_output = params.w2.transpose() * enc.pooled_hidden + params.b2;
  enc.a = (features.transpose() * deriv) * inv_n;
  enc.s = (deriv.colwise().sum() * inv_n).transpose();
  enc.output = normalize(enc.pooled_output);
  if (enc.pooled_hidden.norm() >= 1e-12) {
    enc.hidden = normalize(enc.pooled_hidden);
  } else {
    enc.hidden = {VecX::Zero(enc.pooled_hidden.size()), false};
  }
  return enc;
}

RegionEncoding encode_points(const EncoderParams& params, const PointCloud& cloud, std::span<const Vec3> normals,
                             std::span<const int> ids) {
  return encode_points(params, point_features(cloud, normals, ids));
}

namespace {

// Gradient through v -> v / |v| at the pre-normalization vector.
VecX through_normalize(const VecX& raw, const VecX& unit, const VecX& g) {
  return (g - unit * unit.dot(g)) / raw.norm();
}

}  // namespace

void backprop_region(const EncoderParams& params, const RegionEncoding& enc, const VecX& grad_output,
                     const VecX* grad_hidden, EncoderParams& grads) {
  if (grad_output.size() != params.dim()) throw Error(ErrorCode::kShapeMismatch, "output gradient size");
  const VecX gm = through_normalize(enc.pooled_output, enc.output.values, grad_output);
  grads.w2.noalias() += enc.pooled_hidden * gm.transpose();
  grads.b2 += gm;
  VecX gh = params.w2 * gm;
  if (grad_hidden != nullptr) {
    if (grad_hidden->size() != params.hidden()) throw Error(ErrorCode::kShapeMismatch, "hidden gradient size");
    if (!enc.hidden.normalized) throw Error(ErrorCode::kDegenerateNorm, "hidden feature is zero");
    gh += through_normalize(enc.pooled_hidden, enc.hidden.values, *grad_hidden);
  }
  grads.w1.noalias() += enc.a * gh.asDiagonal();
  grads.b1 += enc.s.cwiseProduct(gh);
}

std::string encode_tnsr(std::span<const Tensor> tensors) {
  std::string out = "TNSR";
  io::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor& t : tensors) {
    if (t.name.empty() || t.name.size() > 255) throw Error(ErrorCode::kBadParam, "tensor name length");
    if (t.dims.size() > 255) throw Error(ErrorCode::kBadParam, "tensor rank");
    std::size_t count = 1;
    for (auto d : t.dims) count *= d;
    if (count != t.data.size()) throw Error(ErrorCode::kShapeMismatch, "tensor " + t.name + " data size");
    io::put_u8(out, static_cast<std::uint8_t>(t.name.size()));
    out += t.name;
    io::put_u8(out, static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) io::put_u32(out, d);
    for (float v : t.data) io::put_f32(out, v);
  }
  return out;
}

std::vector<Tensor> decode_tnsr(const std::string& bytes) {
  io::Reader r(bytes);
  r.expect_magic("TNSR");
  const std::uint32_t n = r.u32();
  std::vector<Tensor> out;
  for (std::uint32_t k = 0; k < n; ++k) {
    Tensor t;
    t.name = std::string(r.take(r.u8()));
    const int rank = r.u8();
    std::size_t count = 1;
    for (int i = 0; i < rank; ++i) {
      t.dims.push_back(r.u32());
      count *= t.dims.back();
    }
    if (count > bytes.size()) throw Error(ErrorCode::kFormat, "tensor larger than the file");
    t.data.resize(count);
    for (auto& v : t.data) v = r.f32();
    out.push_back(std::move(t));
  }
  if (!r.done()) throw Error(ErrorCode::kFormat, "trailing bytes after the last tensor");
  return out;
}

Tensor matrix_tensor(const std::string& name, const MatX& m) {
  Tensor t{name, {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, {}};
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) t.data.push_back(static_cast<float>(m(i, j)));
  }
  return t;
}

MatX tensor_matrix(const Tensor& t) {
  if (t.dims.empty() || t.dims.size() > 2) throw Error(ErrorCode::kFormat, "tensor " + t.name + " is not a matrix");
  const int rows = static_cast<int>(t.dims[0]);
  const int cols = t.dims.size() == 2 ? static_cast<int>(t.dims[1]) : 1;
  MatX m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = t.data[static_cast<std::size_t>(i) * cols + j];
  }
  return m;
}

const Tensor* find_tensor(std::span<const Tensor> tensors, const std::string& name) {
  for (const Tensor& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::vector<Tensor> encoder_tensors(const EncoderParams& params) {
  std::vector<Tensor> out{matrix_tensor("w1", params.w1), matrix_tensor("b1", params.b1),
                          matrix_tensor("w2", params.w2), matrix_tensor("b2", params.b2)};
  out[1].dims.resize(1);
  out[3].dims.resize(1);
  return out;
}

EncoderParams encoder_from_tensors(std::span<const Tensor> tensors) {
  auto need = [&](const char* name) {
    const Tensor* t = find_tensor(tensors, name);
    if (t == nullptr) throw Error(ErrorCode::kFormat, std::string("missing tensor ") + name);
    return tensor_matrix(*t);
  };
  EncoderParams p;
  p.w1 = need("w1");
  p.b1 = need("b1").col(0);
  p.w2 = need("w2");
  p.b2 = need("b2").col(0);
  p.validate();
  return p;
}

void write_tnsr(const std::filesystem::path& path, std::span<const Tensor> tensors) {
  io::write_file(path, encode_tnsr(tensors));
}

std::vector<Tensor> read_tnsr(const std::filesystem::path& path) { return decode_tnsr(io::read_file(path)); }

void round_to_float(EncoderParams& params) {
  VecX flat = params.flatten();
  for (auto& v : flat) v = static_cast<double>(static_cast<float>(v));
  params.assign(flat);
}

}  // namespace scenefuse
