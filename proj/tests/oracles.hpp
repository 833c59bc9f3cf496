#pragma once

// Independent reference implementations used as test oracles. Everything in
// here is deliberately written the straightforward way (naive exponentials,
// plain loops, no shared code with the library paths it checks).

#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pesco/corpus.hpp"
#include "pesco/encoder.hpp"
#include "pesco/io.hpp"
#include "pesco/losses.hpp"
#include "pesco/rng.hpp"

namespace oracle {

// Straight-line encode: mean of rows in given token order, matmul, normalize.
inline std::vector<double> reference_encode(const pesco::ReferenceEncoderParams& params,
                                            std::span<const int> tokens) {
  const std::size_t dim = params.embedding_dim();
  std::vector<double> mean(dim, 0.0);
  for (int t : tokens)
    for (std::size_t i = 0; i < dim; ++i)
      mean[i] += params.embeddings(static_cast<std::size_t>(t), i);
  for (std::size_t i = 0; i < dim; ++i) mean[i] /= static_cast<double>(tokens.size());

  std::vector<double> projected(dim, 0.0);
  for (std::size_t r = 0; r < dim; ++r)
    for (std::size_t c = 0; c < dim; ++c) projected[r] += params.projection(r, c) * mean[c];

  double norm = 0.0;
  for (double v : projected) norm += v * v;
  norm = std::sqrt(norm);
  for (double& v : projected) v /= norm;
  return projected;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Direct evaluation of the LCT loss: for each query i, average over the keys
// sharing its pseudo-label (its own key included) of -log softmax over all
// B keys.
inline double lct_direct(const std::vector<std::vector<double>>& x_hat,
                         const std::vector<std::vector<double>>& keys,
                         const std::vector<int>& labels, double gamma) {
  const std::size_t b = x_hat.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < b; ++j) denom += std::exp(dot(x_hat[i], keys[j]) / gamma);
    std::vector<std::size_t> positives;
    for (std::size_t j = 0; j < b; ++j)
      if (labels[j] == labels[i]) positives.push_back(j);
    double inner = 0.0;
    for (std::size_t a : positives)
      inner += std::log(std::exp(dot(x_hat[i], keys[a]) / gamma) / denom);
    loss += -inner / static_cast<double>(positives.size());
  }
  return loss;
}

// Direct evaluation of the PCL loss: -log softmax of the pseudo-label prompt
// over all class prompts.
inline double pcl_direct(const std::vector<std::vector<double>>& x_hat,
                         const std::vector<std::vector<double>>& prompts,
                         const std::vector<int>& labels, double gamma) {
  double loss = 0.0;
  for (std::size_t i = 0; i < x_hat.size(); ++i) {
    double denom = 0.0;
    for (const auto& p : prompts) denom += std::exp(dot(x_hat[i], p) / gamma);
    const double numer =
        std::exp(dot(x_hat[i], prompts[static_cast<std::size_t>(labels[i])]) / gamma);
    loss += -std::log(numer / denom);
  }
  return loss;
}

// Direct evaluation of the PLCT loss: positives are the same-label keys plus
// the pseudo-label prompt; the denominator runs over all keys and prompts.
inline double plct_direct(const std::vector<std::vector<double>>& x_hat,
                          const std::vector<std::vector<double>>& keys,
                          const std::vector<std::vector<double>>& prompts,
                          const std::vector<int>& labels, double gamma) {
  const std::size_t b = x_hat.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double denom = 0.0;
    for (const auto& k : keys) denom += std::exp(dot(x_hat[i], k) / gamma);
    for (const auto& p : prompts) denom += std::exp(dot(x_hat[i], p) / gamma);

    std::vector<double> positive_sims;
    for (std::size_t j = 0; j < b; ++j)
      if (labels[j] == labels[i]) positive_sims.push_back(dot(x_hat[i], keys[j]));
    positive_sims.push_back(dot(x_hat[i], prompts[static_cast<std::size_t>(labels[i])]));

    double inner = 0.0;
    for (double s : positive_sims) inner += std::log(std::exp(s / gamma) / denom);
    loss += -inner / static_cast<double>(positive_sims.size());
  }
  return loss;
}

// Direct evaluation of a batch loss from tokens: embeddings via the
// straight-line encode above, then the formulas above.
inline double batch_loss_direct(const pesco::TrainingBatch& batch,
                                const pesco::ReferenceEncoderParams& params,
                                pesco::LossMode mode) {
  std::vector<std::vector<double>> x_hat, keys, prompts;
  std::vector<int> labels;
  for (const auto& ex : batch.examples) {
    x_hat.push_back(reference_encode(params, ex.x_hat_tokens));
    keys.push_back(reference_encode(params, ex.key_tokens));
    labels.push_back(ex.pseudo_label);
  }
  for (const auto& toks : batch.prompt_tokens) prompts.push_back(reference_encode(params, toks));

  switch (mode) {
    case pesco::LossMode::lct: return lct_direct(x_hat, keys, labels, batch.temperature);
    case pesco::LossMode::pcl: return pcl_direct(x_hat, prompts, labels, batch.temperature);
    case pesco::LossMode::plct:
      return plct_direct(x_hat, keys, prompts, labels, batch.temperature);
    case pesco::LossMode::lct_plus_pcl:
      return lct_direct(x_hat, keys, labels, batch.temperature) +
             pcl_direct(x_hat, prompts, labels, batch.temperature);
  }
  return 0.0;
}

// Central finite differences of the batch loss against the analytic
// parameter gradients. Entries with |analytic| <= floor are only required
// not to hide a large numeric gradient.
//
// Relative error uses the usual guarded denominator max(|a|, |n|, guard) of
// gradient-check harnesses. Central differences at h = 1e-4 carry an
// absolute truncation error around h^2 * f'''/6 ~ 1e-8 (verified to shrink
// as h^2), so a bare ratio is unattainable for entries much smaller than
// 1e-4 even when the analytic gradient is exact; the guard turns the bound
// into a 1e-7 absolute check for such entries while keeping large entries
// purely relative.
struct GradientCheck {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double max_rel_err = 0.0;
};

inline GradientCheck check_loss_gradients(const pesco::TrainingBatch& batch,
                                          pesco::ReferenceEncoderParams params,
                                          pesco::LossMode mode, double h = 1e-4,
                                          double tol = 1e-4, double floor = 1e-8,
                                          double guard = 1e-3) {
  const pesco::LossAndGradients analytic = pesco::loss_parameter_gradients(batch, params, mode);

  GradientCheck stats;
  auto probe = [&](pesco::Matrix& param, const pesco::Matrix& grad) {
    for (std::size_t i = 0; i < param.data().size(); ++i) {
      const double saved = param.data()[i];
      param.data()[i] = saved + h;
      const double up = pesco::combined_loss(batch, params, mode).loss;
      param.data()[i] = saved - h;
      const double down = pesco::combined_loss(batch, params, mode).loss;
      param.data()[i] = saved;

      const double numeric = (up - down) / (2.0 * h);
      const double a = grad.data()[i];
      if (std::abs(a) > floor) {
        ++stats.checked;
        const double rel =
            std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), guard});
        stats.max_rel_err = std::max(stats.max_rel_err, rel);
        if (rel > tol) ++stats.failures;
      } else if (std::abs(numeric) > 1e-6) {
        ++stats.failures;  // analytic path silently dropped a real gradient
      }
    }
  };
  probe(params.embeddings, analytic.gradients.d_embeddings);
  probe(params.projection, analytic.gradients.d_projection);
  return stats;
}

// Reference scan for sentence segmentation: spans end right after a
// terminator followed by whitespace, spans shorter than 3 characters merge
// into the previous span, output spans are trimmed.
inline std::vector<std::string> split_sentences_reference(const std::string& raw) {
  auto trim = [](const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
  };
  const std::string text = trim(raw);

  std::vector<std::string> pieces;
  std::string current;
  for (std::size_t i = 0; i < text.size(); ++i) {
    current.push_back(text[i]);
    const bool boundary = (text[i] == '.' || text[i] == '!' || text[i] == '?') &&
                          i + 1 < text.size() &&
                          std::isspace(static_cast<unsigned char>(text[i + 1]));
    if (boundary) {
      pieces.push_back(current);
      current.clear();
    }
  }
  if (!current.empty()) pieces.push_back(current);

  std::vector<std::string> merged;
  for (auto& piece : pieces) {
    if (!merged.empty() && piece.size() < 3)
      merged.back() += piece;
    else
      merged.push_back(piece);
  }

  std::vector<std::string> out;
  for (auto& piece : merged) {
    auto t = trim(piece);
    if (!t.empty()) out.push_back(t);
  }
  if (out.empty()) out.push_back(text);
  return out;
}

// Counting oracle over the synthetic corpus: classify by how many of a
// document's words belong to each class vocabulary.
inline double bag_of_words_accuracy(const pesco::SyntheticDataset& dataset,
                                    std::size_t classes) {
  std::size_t correct = 0;
  for (const auto& doc : dataset.documents) {
    std::vector<std::size_t> counts(classes, 0);
    for (const auto& word : pesco::split_words(doc.raw)) {
      for (std::size_t c = 0; c < classes; ++c) {
        const std::string prefix = "c" + std::to_string(c) + "w";
        if (word.rfind(prefix, 0) == 0) {
          ++counts[c];
          break;
        }
      }
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (counts[c] > counts[best]) best = c;
    if (doc.gold_label && static_cast<int>(best) == *doc.gold_label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.documents.size());
}

// Shared random-instance helpers for the oracle-equivalence suites.
inline pesco::ReferenceEncoderParams random_params(pesco::Rng& rng, std::size_t vocab_size,
                                                   std::size_t dim) {
  pesco::ReferenceEncoderParams params;
  params.embeddings = pesco::Matrix(vocab_size, dim);
  for (double& v : params.embeddings.data()) v = rng.next_in(-0.5, 0.5);
  params.projection = pesco::Matrix(dim, dim);
  for (std::size_t r = 0; r < dim; ++r)
    for (std::size_t c = 0; c < dim; ++c)
      params.projection(r, c) = (r == c ? 1.0 : 0.0) + rng.next_in(-0.1, 0.1);
  return params;
}

inline std::vector<int> random_tokens(pesco::Rng& rng, std::size_t vocab_size,
                                      std::size_t max_len = 5) {
  const std::size_t len = 1 + static_cast<std::size_t>(rng.next_below(max_len));
  std::vector<int> tokens(len);
  for (auto& t : tokens) t = static_cast<int>(rng.next_below(vocab_size));
  return tokens;
}

inline pesco::TrainingBatch random_batch(pesco::Rng& rng, std::size_t batch_size,
                                         std::size_t classes, std::size_t vocab_size,
                                         double gamma) {
  pesco::TrainingBatch batch;
  batch.temperature = gamma;
  for (std::size_t i = 0; i < batch_size; ++i) {
    pesco::TrainingExample ex;
    ex.doc_id = std::to_string(i);
    ex.x_hat_tokens = random_tokens(rng, vocab_size);
    ex.key_tokens = random_tokens(rng, vocab_size);
    ex.pseudo_label = static_cast<int>(rng.next_below(classes));
    batch.examples.push_back(std::move(ex));
  }
  for (std::size_t c = 0; c < classes; ++c)
    batch.prompt_tokens.push_back(random_tokens(rng, vocab_size));
  return batch;
}

}  // namespace oracle
