#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pesco/corpus.hpp"
#include "pesco/encoder.hpp"
#include "pesco/errors.hpp"
#include "pesco/linalg.hpp"
#include "pesco/rng.hpp"

namespace pesco {

enum class LossMode { plct, lct, pcl, lct_plus_pcl };

inline const char* to_string(LossMode mode) {
  switch (mode) {
    case LossMode::plct: return "plct";
    case LossMode::lct: return "lct";
    case LossMode::pcl: return "pcl";
    case LossMode::lct_plus_pcl: return "lct_plus_pcl";
  }
  return "?";
}

// One (augmented document, key sentence, pseudo-label) triple.
struct TrainingExample {
  std::string doc_id;
  std::vector<int> x_hat_tokens;  // document with its key sentence removed
  std::vector<int> key_tokens;
  int pseudo_label = 0;
  bool augmentation_fallback = false;  // x_hat is the full document
};

// The unit over which the contrastive losses are computed: B examples plus
// one rendered prompt per class. Prompts for ALL classes are present
// regardless of which pseudo-labels appear in the batch.
struct TrainingBatch {
  std::vector<TrainingExample> examples;        // B
  std::vector<std::vector<int>> prompt_tokens;  // L
  double temperature = 0.07;
  std::size_t template_index = 0;

  std::size_t size() const { return examples.size(); }
  std::size_t num_classes() const { return prompt_tokens.size(); }
};

struct BatchSample {
  const Document* doc;
  int pseudo_label;
  std::size_t key_index;
};

// Assemble a training batch. One template is drawn uniformly per batch and
// renders every class prompt. With augmentation on, x_hat drops exactly the
// key sentence; single-sentence documents (and the defensive case of an
// empty remainder) fall back to the full document and are flagged.
inline TrainingBatch build_batch(std::span<const BatchSample> samples,
                                 const LabelPromptSet& labels, const Vocabulary& vocab,
                                 bool augment, Rng& template_rng, double temperature) {
  if (samples.empty()) throw ShapeError("build_batch requires at least one sample");

  TrainingBatch batch;
  batch.temperature = temperature;
  batch.template_index =
      static_cast<std::size_t>(template_rng.next_below(labels.num_templates()));

  batch.examples.reserve(samples.size());
  for (const auto& sample : samples) {
    const Document& doc = *sample.doc;
    if (sample.key_index >= doc.sentences.size())
      throw ShapeError("key index " + std::to_string(sample.key_index) +
                       " out of range for document " + doc.id);
    if (sample.pseudo_label < 0 ||
        static_cast<std::size_t>(sample.pseudo_label) >= labels.num_classes())
      throw LabelRangeError("pseudo-label out of range for document " + doc.id);

    TrainingExample ex;
    ex.doc_id = doc.id;
    ex.pseudo_label = sample.pseudo_label;
    ex.key_tokens = doc.sentences[sample.key_index].tokens;

    if (!augment || doc.sentences.size() == 1) {
      ex.x_hat_tokens = document_tokens(doc);
      ex.augmentation_fallback = augment;  // flagged only when augmentation asked for removal
    } else {
      for (std::size_t n = 0; n < doc.sentences.size(); ++n) {
        if (n == sample.key_index) continue;
        const auto& toks = doc.sentences[n].tokens;
        ex.x_hat_tokens.insert(ex.x_hat_tokens.end(), toks.begin(), toks.end());
      }
      if (ex.x_hat_tokens.empty()) {
        ex.x_hat_tokens = document_tokens(doc);
        ex.augmentation_fallback = true;
      }
    }
    batch.examples.push_back(std::move(ex));
  }

  batch.prompt_tokens.reserve(labels.num_classes());
  for (std::size_t j = 0; j < labels.num_classes(); ++j)
    batch.prompt_tokens.push_back(tokenize(labels.rendered[j][batch.template_index], vocab));
  return batch;
}

// Loss value plus d(loss)/d(embedding) for every participating text.
// A gradient block is empty when that side does not participate in the
// selected loss (keys for PCL, prompts for LCT).
struct LossOutput {
  double loss = 0.0;
  std::vector<std::vector<double>> x_hat_gradients;   // B x D
  std::vector<std::vector<double>> key_gradients;     // B x D, or empty
  std::vector<std::vector<double>> prompt_gradients;  // L x D, or empty
};

struct SimilarityLoss {
  double loss = 0.0;
  Matrix d_similarities;
};

namespace detail {

// Shared softmax cross-entropy core: for each row, positives index into the
// candidate columns, the denominator runs over the whole row, and logits are
// similarities / temperature. Log-space with max subtraction.
inline SimilarityLoss contrastive_rows(const Matrix& sims,
                                       const std::vector<std::vector<std::size_t>>& positives,
                                       double temperature) {
  if (temperature <= 0.0) throw ConfigError("temperature must be positive");
  const std::size_t rows = sims.rows(), cols = sims.cols();
  SimilarityLoss out;
  out.d_similarities = Matrix(rows, cols);

  std::vector<double> logits(cols);
  for (std::size_t i = 0; i < rows; ++i) {
    double max_logit = sims(i, 0) / temperature;
    for (std::size_t j = 0; j < cols; ++j) {
      logits[j] = sims(i, j) / temperature;
      max_logit = std::max(max_logit, logits[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) total += std::exp(logits[j] - max_logit);
    const double lse = max_logit + std::log(total);

    const auto& pos = positives[i];
    const double inv_pos = 1.0 / static_cast<double>(pos.size());
    for (std::size_t a : pos) out.loss += -(logits[a] - lse) * inv_pos;

    for (std::size_t j = 0; j < cols; ++j)
      out.d_similarities(i, j) = std::exp(logits[j] - lse) / temperature;
    for (std::size_t a : pos) out.d_similarities(i, a) -= inv_pos / temperature;
  }
  return out;
}

inline std::vector<std::vector<std::size_t>> same_label_sets(std::span<const int> labels) {
  std::vector<std::vector<std::size_t>> sets(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = 0; j < labels.size(); ++j)
      if (labels[j] == labels[i]) sets[i].push_back(j);
  return sets;
}

}  // namespace detail

// LCT over a B x B key similarity matrix. K(i) is every key sharing the
// query's pseudo-label, the query's own key included; the denominator ranges
// over all B keys and nothing else.
inline SimilarityLoss lct_from_similarities(const Matrix& sims, std::span<const int> labels,
                                            double temperature) {
  if (sims.rows() != labels.size() || sims.cols() != labels.size())
    throw ShapeError("LCT similarity matrix must be B x B");
  return detail::contrastive_rows(sims, detail::same_label_sets(labels), temperature);
}

// PCL over a B x L prompt similarity matrix: one positive per row, the
// pseudo-label's prompt, against all class prompts.
inline SimilarityLoss pcl_from_similarities(const Matrix& sims, std::span<const int> labels,
                                            double temperature) {
  if (sims.rows() != labels.size())
    throw ShapeError("PCL similarity matrix must have one row per example");
  std::vector<std::vector<std::size_t>> positives(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= sims.cols())
      throw LabelRangeError("pseudo-label out of range in PCL");
    positives[i] = {static_cast<std::size_t>(labels[i])};
  }
  return detail::contrastive_rows(sims, positives, temperature);
}

// PLCT over a B x (B+L) matrix whose columns are the B keys followed by the
// L prompts. A(i) = K(i) plus the pseudo-label prompt; M is every column.
inline SimilarityLoss plct_from_similarities(const Matrix& sims, std::span<const int> labels,
                                             std::size_t num_classes, double temperature) {
  if (sims.rows() != labels.size() || sims.cols() != labels.size() + num_classes)
    throw ShapeError("PLCT similarity matrix must be B x (B+L)");
  auto positives = detail::same_label_sets(labels);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
      throw LabelRangeError("pseudo-label out of range in PLCT");
    positives[i].push_back(labels.size() + static_cast<std::size_t>(labels[i]));
  }
  return detail::contrastive_rows(sims, positives, temperature);
}

namespace detail {

struct BatchEmbeddings {
  std::vector<EmbeddingVector> x_hat;
  std::vector<EmbeddingVector> keys;
  std::vector<EmbeddingVector> prompts;
};

inline BatchEmbeddings encode_batch(const TrainingBatch& batch,
                                    const ReferenceEncoderParams& params, bool need_keys,
                                    bool need_prompts) {
  BatchEmbeddings out;
  out.x_hat.reserve(batch.size());
  for (const auto& ex : batch.examples) out.x_hat.push_back(encode(params, ex.x_hat_tokens));
  if (need_keys) {
    out.keys.reserve(batch.size());
    for (const auto& ex : batch.examples) out.keys.push_back(encode(params, ex.key_tokens));
  }
  if (need_prompts) {
    out.prompts.reserve(batch.num_classes());
    for (const auto& toks : batch.prompt_tokens) out.prompts.push_back(encode(params, toks));
  }
  return out;
}

inline std::vector<int> batch_labels(const TrainingBatch& batch) {
  std::vector<int> labels;
  labels.reserve(batch.size());
  for (const auto& ex : batch.examples) labels.push_back(ex.pseudo_label);
  return labels;
}

// dQ_i += sum_j dS_ij * C_j ; dC_j += sum_i dS_ij * Q_i  (sim = dot).
inline void chain_similarity_gradients(const Matrix& d_sims,
                                       const std::vector<EmbeddingVector>& queries,
                                       const std::vector<EmbeddingVector>& candidates,
                                       std::size_t candidate_offset,
                                       std::vector<std::vector<double>>& d_queries,
                                       std::vector<std::vector<double>>& d_candidates) {
  const std::size_t dim = queries.empty() ? 0 : queries[0].dim();
  for (std::size_t i = 0; i < queries.size(); ++i) {
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      const double g = d_sims(i, candidate_offset + j);
      if (g == 0.0) continue;
      for (std::size_t k = 0; k < dim; ++k) {
        d_queries[i][k] += g * candidates[j].values[k];
        d_candidates[j][k] += g * queries[i].values[k];
      }
    }
  }
}

inline std::vector<std::vector<double>> zero_rows(std::size_t rows, std::size_t dim) {
  return std::vector<std::vector<double>>(rows, std::vector<double>(dim, 0.0));
}

}  // namespace detail

inline LossOutput lct_loss(const TrainingBatch& batch, const ReferenceEncoderParams& params) {
  if (batch.size() == 0) throw ShapeError("lct_loss requires a non-empty batch");
  const auto emb = detail::encode_batch(batch, params, /*need_keys=*/true, /*need_prompts=*/false);
  const auto labels = detail::batch_labels(batch);
  const std::size_t b = batch.size(), dim = params.embedding_dim();

  Matrix sims(b, b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) sims(i, j) = dot(emb.x_hat[i], emb.keys[j]);

  const auto core = lct_from_similarities(sims, labels, batch.temperature);

  LossOutput out;
  out.loss = core.loss;
  out.x_hat_gradients = detail::zero_rows(b, dim);
  out.key_gradients = detail::zero_rows(b, dim);
  detail::chain_similarity_gradients(core.d_similarities, emb.x_hat, emb.keys, 0,
                                     out.x_hat_gradients, out.key_gradients);
  return out;
}

inline LossOutput pcl_loss(const TrainingBatch& batch, const ReferenceEncoderParams& params) {
  if (batch.size() == 0) throw ShapeError("pcl_loss requires a non-empty batch");
  const auto emb = detail::encode_batch(batch, params, /*need_keys=*/false, /*need_prompts=*/true);
  const auto labels = detail::batch_labels(batch);
  const std::size_t b = batch.size(), l = batch.num_classes(), dim = params.embedding_dim();

  Matrix sims(b, l);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t c = 0; c < l; ++c) sims(i, c) = dot(emb.x_hat[i], emb.prompts[c]);

  const auto core = pcl_from_similarities(sims, labels, batch.temperature);

  LossOutput out;
  out.loss = core.loss;
  out.x_hat_gradients = detail::zero_rows(b, dim);
  out.prompt_gradients = detail::zero_rows(l, dim);
  detail::chain_similarity_gradients(core.d_similarities, emb.x_hat, emb.prompts, 0,
                                     out.x_hat_gradients, out.prompt_gradients);
  return out;
}

inline LossOutput plct_loss(const TrainingBatch& batch, const ReferenceEncoderParams& params) {
  if (batch.size() == 0) throw ShapeError("plct_loss requires a non-empty batch");
  const auto emb = detail::encode_batch(batch, params, /*need_keys=*/true, /*need_prompts=*/true);
  const auto labels = detail::batch_labels(batch);
  const std::size_t b = batch.size(), l = batch.num_classes(), dim = params.embedding_dim();

  Matrix sims(b, b + l);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) sims(i, j) = dot(emb.x_hat[i], emb.keys[j]);
    for (std::size_t c = 0; c < l; ++c) sims(i, b + c) = dot(emb.x_hat[i], emb.prompts[c]);
  }

  const auto core = plct_from_similarities(sims, labels, l, batch.temperature);

  LossOutput out;
  out.loss = core.loss;
  out.x_hat_gradients = detail::zero_rows(b, dim);
  out.key_gradients = detail::zero_rows(b, dim);
  out.prompt_gradients = detail::zero_rows(l, dim);
  detail::chain_similarity_gradients(core.d_similarities, emb.x_hat, emb.keys, 0,
                                     out.x_hat_gradients, out.key_gradients);
  detail::chain_similarity_gradients(core.d_similarities, emb.x_hat, emb.prompts, b,
                                     out.x_hat_gradients, out.prompt_gradients);
  return out;
}

inline LossOutput combined_loss(const TrainingBatch& batch, const ReferenceEncoderParams& params,
                                LossMode mode) {
  switch (mode) {
    case LossMode::plct: return plct_loss(batch, params);
    case LossMode::lct: return lct_loss(batch, params);
    case LossMode::pcl: return pcl_loss(batch, params);
    case LossMode::lct_plus_pcl: {
      LossOutput lct = lct_loss(batch, params);
      LossOutput pcl = pcl_loss(batch, params);
      LossOutput out;
      out.loss = lct.loss + pcl.loss;
      out.x_hat_gradients = std::move(lct.x_hat_gradients);
      for (std::size_t i = 0; i < out.x_hat_gradients.size(); ++i)
        for (std::size_t k = 0; k < out.x_hat_gradients[i].size(); ++k)
          out.x_hat_gradients[i][k] += pcl.x_hat_gradients[i][k];
      out.key_gradients = std::move(lct.key_gradients);
      out.prompt_gradients = std::move(pcl.prompt_gradients);
      return out;
    }
  }
  throw ConfigError("unknown loss mode");
}

struct LossAndGradients {
  double loss = 0.0;
  GradientSet gradients;
};

// Full d(loss)/d(parameters): forward through the chosen loss, then chain
// every participating embedding gradient back through the encoder. Gradients
// flow through both sides of every similarity (shared encoder).
inline LossAndGradients loss_parameter_gradients(const TrainingBatch& batch,
                                                 const ReferenceEncoderParams& params,
                                                 LossMode mode) {
  const LossOutput out = combined_loss(batch, params, mode);
  LossAndGradients result;
  result.loss = out.loss;
  result.gradients = zero_gradients(params);
  for (std::size_t i = 0; i < batch.size(); ++i)
    encoder_backward_accumulate(params, batch.examples[i].x_hat_tokens, out.x_hat_gradients[i],
                                result.gradients);
  if (!out.key_gradients.empty())
    for (std::size_t i = 0; i < batch.size(); ++i)
      encoder_backward_accumulate(params, batch.examples[i].key_tokens, out.key_gradients[i],
                                  result.gradients);
  if (!out.prompt_gradients.empty())
    for (std::size_t c = 0; c < batch.num_classes(); ++c)
      encoder_backward_accumulate(params, batch.prompt_tokens[c], out.prompt_gradients[c],
                                  result.gradients);
  return result;
}

}  // namespace pesco
