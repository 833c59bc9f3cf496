#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pesco/corpus.hpp"
#include "pesco/errors.hpp"
#include "pesco/linalg.hpp"
#include "pesco/rng.hpp"

namespace pesco {

// Trainable reference encoder: mean-pooled token embeddings, a linear
// projection, then L2 normalization. Gradients are hand-derived below.
struct ReferenceEncoderParams {
  Matrix embeddings;  // V x D token embedding table, row 0 = unknown token
  Matrix projection;  // D x D

  std::size_t vocab_size() const { return embeddings.rows(); }
  std::size_t embedding_dim() const { return embeddings.cols(); }
};

struct GradientSet {
  Matrix d_embeddings;  // V x D
  Matrix d_projection;  // D x D

  bool all_finite() const { return d_embeddings.all_finite() && d_projection.all_finite(); }
};

inline GradientSet zero_gradients(const ReferenceEncoderParams& params) {
  return GradientSet{Matrix(params.embeddings.rows(), params.embeddings.cols()),
                     Matrix(params.projection.rows(), params.projection.cols())};
}

// Embedding entries i.i.d. uniform in [-0.5/D, 0.5/D]; projection starts at
// identity plus uniform noise in [-0.01, 0.01]. Draw order is row-major
// embeddings, then row-major projection.
inline ReferenceEncoderParams init_reference_encoder(std::size_t vocab_size,
                                                     std::size_t embedding_dim, Rng& rng) {
  ReferenceEncoderParams params;
  params.embeddings = Matrix(vocab_size, embedding_dim);
  const double half = 0.5 / static_cast<double>(embedding_dim);
  for (double& v : params.embeddings.data()) v = rng.next_in(-half, half);

  params.projection = Matrix(embedding_dim, embedding_dim);
  for (std::size_t r = 0; r < embedding_dim; ++r)
    for (std::size_t c = 0; c < embedding_dim; ++c)
      params.projection(r, c) = (r == c ? 1.0 : 0.0) + rng.next_in(-0.01, 0.01);
  return params;
}

namespace detail {

// Mean of the referenced embedding rows. Tokens are accumulated in sorted
// order so the result is exactly invariant under token permutation.
inline std::vector<double> mean_pool(const ReferenceEncoderParams& params,
                                     std::span<const int> tokens) {
  if (tokens.empty()) throw DataError("encode requires a non-empty token list");
  std::vector<int> order(tokens.begin(), tokens.end());
  std::sort(order.begin(), order.end());

  const std::size_t dim = params.embedding_dim();
  std::vector<double> mean(dim, 0.0);
  for (int t : order) {
    if (t < 0 || static_cast<std::size_t>(t) >= params.vocab_size())
      throw DataError("token index out of range: " + std::to_string(t));
    const double* row = params.embeddings.row(static_cast<std::size_t>(t));
    for (std::size_t i = 0; i < dim; ++i) mean[i] += row[i];
  }
  const double inv = 1.0 / static_cast<double>(tokens.size());
  for (double& v : mean) v *= inv;
  return mean;
}

inline std::vector<double> project(const Matrix& projection, const std::vector<double>& input) {
  const std::size_t dim = projection.rows();
  std::vector<double> out(dim, 0.0);
  for (std::size_t r = 0; r < dim; ++r) {
    const double* row = projection.row(r);
    double sum = 0.0;
    for (std::size_t c = 0; c < dim; ++c) sum += row[c] * input[c];
    out[r] = sum;
  }
  return out;
}

constexpr double kDegenerateNorm = 1e-12;

}  // namespace detail

inline EmbeddingVector encode(const ReferenceEncoderParams& params, std::span<const int> tokens) {
  const auto mean = detail::mean_pool(params, tokens);
  auto projected = detail::project(params.projection, mean);
  const double norm = l2_norm(projected);
  if (norm < detail::kDegenerateNorm)
    throw DegenerateEmbeddingError("encoder output collapsed to the zero vector");
  for (double& v : projected) v /= norm;
  return EmbeddingVector{std::move(projected)};
}

// Exact gradients of a scalar loss through normalization, projection and
// mean pooling. grad_out is d(loss)/d(normalized output); contributions are
// accumulated into `sink` so one batch can share a single gradient buffer.
inline void encoder_backward_accumulate(const ReferenceEncoderParams& params,
                                        std::span<const int> tokens,
                                        std::span<const double> grad_out, GradientSet& sink) {
  const std::size_t dim = params.embedding_dim();
  if (grad_out.size() != dim)
    throw DimensionMismatchError("grad_out dimension " + std::to_string(grad_out.size()) +
                                 " does not match embedding dim " + std::to_string(dim));

  const auto mean = detail::mean_pool(params, tokens);
  const auto projected = detail::project(params.projection, mean);
  const double norm = l2_norm(projected);
  if (norm < detail::kDegenerateNorm)
    throw DegenerateEmbeddingError("encoder output collapsed to the zero vector");

  std::vector<double> unit(dim);
  for (std::size_t i = 0; i < dim; ++i) unit[i] = projected[i] / norm;

  // d(loss)/d(projected) = (I - y y^T) g / ||u||
  double radial = 0.0;
  for (std::size_t i = 0; i < dim; ++i) radial += grad_out[i] * unit[i];
  std::vector<double> d_projected(dim);
  for (std::size_t i = 0; i < dim; ++i) d_projected[i] = (grad_out[i] - radial * unit[i]) / norm;

  // d(loss)/dW = d_projected * mean^T
  for (std::size_t r = 0; r < dim; ++r) {
    double* out_row = sink.d_projection.row(r);
    for (std::size_t c = 0; c < dim; ++c) out_row[c] += d_projected[r] * mean[c];
  }

  // d(loss)/d(mean) = W^T d_projected
  std::vector<double> d_mean(dim, 0.0);
  for (std::size_t r = 0; r < dim; ++r) {
    const double* row = params.projection.row(r);
    for (std::size_t c = 0; c < dim; ++c) d_mean[c] += row[c] * d_projected[r];
  }

  // Each token row receives count/n of d_mean; counting first keeps the
  // result independent of token order.
  std::vector<int> order(tokens.begin(), tokens.end());
  std::sort(order.begin(), order.end());
  const double inv = 1.0 / static_cast<double>(tokens.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && order[j] == order[i]) ++j;
    const double scale = static_cast<double>(j - i) * inv;
    double* row = sink.d_embeddings.row(static_cast<std::size_t>(order[i]));
    for (std::size_t c = 0; c < dim; ++c) row[c] += scale * d_mean[c];
    i = j;
  }
}

inline GradientSet encoder_backward(const ReferenceEncoderParams& params,
                                    std::span<const int> tokens,
                                    std::span<const double> grad_out) {
  GradientSet grads = zero_gradients(params);
  encoder_backward_accumulate(params, tokens, grad_out, grads);
  return grads;
}

// AdamW state: decoupled weight decay, bias-corrected moments.
struct OptimizerState {
  Matrix m_embeddings, v_embeddings;
  Matrix m_projection, v_projection;
  long step = 0;
  double learning_rate = 0.05;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;

  static OptimizerState create(const ReferenceEncoderParams& params, double learning_rate,
                               double epsilon = 1e-8, double weight_decay = 0.0) {
    OptimizerState state;
    state.m_embeddings = Matrix(params.embeddings.rows(), params.embeddings.cols());
    state.v_embeddings = Matrix(params.embeddings.rows(), params.embeddings.cols());
    state.m_projection = Matrix(params.projection.rows(), params.projection.cols());
    state.v_projection = Matrix(params.projection.rows(), params.projection.cols());
    state.learning_rate = learning_rate;
    state.epsilon = epsilon;
    state.weight_decay = weight_decay;
    return state;
  }
};

namespace detail {

inline void adamw_update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v,
                         const OptimizerState& state, double bias1, double bias2) {
  auto& p = param.data();
  const auto& g = grad.data();
  auto& md = m.data();
  auto& vd = v.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    md[i] = state.beta1 * md[i] + (1.0 - state.beta1) * g[i];
    vd[i] = state.beta2 * vd[i] + (1.0 - state.beta2) * g[i] * g[i];
    const double m_hat = md[i] / bias1;
    const double v_hat = vd[i] / bias2;
    p[i] -= state.learning_rate * (m_hat / (std::sqrt(v_hat) + state.epsilon) +
                                   state.weight_decay * p[i]);
  }
}

}  // namespace detail

inline void optimizer_step(ReferenceEncoderParams& params, const GradientSet& grads,
                           OptimizerState& state) {
  if (!grads.d_embeddings.same_shape(params.embeddings) ||
      !grads.d_projection.same_shape(params.projection))
    throw DimensionMismatchError("gradient shapes do not match parameters");
  if (!grads.all_finite())
    throw NonFiniteGradientError("non-finite entries in parameter gradients");
  if (state.learning_rate < 0.0) throw ConfigError("learning rate must not be negative");

  state.step += 1;
  const double bias1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  detail::adamw_update(params.embeddings, grads.d_embeddings, state.m_embeddings,
                       state.v_embeddings, state, bias1, bias2);
  detail::adamw_update(params.projection, grads.d_projection, state.m_projection,
                       state.v_projection, state, bias1, bias2);
}

// Uniform interface over the trainable reference encoder and any remote
// pretrained encoder; prediction-side code only sees this.
class TextEncoder {
public:
  virtual ~TextEncoder() = default;

  virtual EmbeddingVector encode_text(const std::string& text) const = 0;

  virtual std::vector<EmbeddingVector> encode_texts(const std::vector<std::string>& texts) const {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& text : texts) out.push_back(encode_text(text));
    return out;
  }
};

class ReferenceTextEncoder final : public TextEncoder {
public:
  ReferenceTextEncoder(const ReferenceEncoderParams& params, const Vocabulary& vocab)
      : params_(&params), vocab_(&vocab) {}

  EmbeddingVector encode_text(const std::string& text) const override {
    return encode(*params_, tokenize(text, *vocab_));
  }

  const ReferenceEncoderParams& params() const { return *params_; }
  const Vocabulary& vocab() const { return *vocab_; }

private:
  const ReferenceEncoderParams* params_;
  const Vocabulary* vocab_;
};

}  // namespace pesco
