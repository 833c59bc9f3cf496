#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "pesco/corpus.hpp"
#include "pesco/encoder.hpp"
#include "pesco/errors.hpp"
#include "pesco/linalg.hpp"
#include "pesco/rng.hpp"

namespace pesco {

using ScoreVector = std::vector<double>;
using ConfidenceDistribution = std::vector<double>;

// Pre-encoded label prompts, one embedding per (class, template).
struct PromptEmbeddings {
  std::vector<std::vector<EmbeddingVector>> by_class;  // L x T

  std::size_t num_classes() const { return by_class.size(); }
};

inline PromptEmbeddings encode_label_prompts(const LabelPromptSet& labels,
                                             const TextEncoder& encoder) {
  std::vector<std::string> flat;
  flat.reserve(labels.num_classes() * labels.num_templates());
  for (const auto& row : labels.rendered)
    for (const auto& prompt : row) flat.push_back(prompt);

  auto embeddings = encoder.encode_texts(flat);
  PromptEmbeddings out;
  out.by_class.resize(labels.num_classes());
  std::size_t k = 0;
  for (std::size_t j = 0; j < labels.num_classes(); ++j) {
    out.by_class[j].reserve(labels.num_templates());
    for (std::size_t t = 0; t < labels.num_templates(); ++t)
      out.by_class[j].push_back(std::move(embeddings[k++]));
  }
  return out;
}

// Mean cosine similarity against the T prompt renderings of one class.
// The cosines are summed in sorted order so the value is exactly invariant
// under template permutation.
inline double score(const EmbeddingVector& doc_embedding,
                    std::span<const EmbeddingVector> prompt_embeddings) {
  if (prompt_embeddings.empty()) throw DataError("score requires at least one prompt embedding");
  std::vector<double> cosines;
  cosines.reserve(prompt_embeddings.size());
  for (const auto& prompt : prompt_embeddings) cosines.push_back(cosine(doc_embedding, prompt));
  std::sort(cosines.begin(), cosines.end());
  double sum = 0.0;
  for (double c : cosines) sum += c;
  return sum / static_cast<double>(cosines.size());
}

// Argmax with ties broken toward the smallest index.
inline int argmax_index(const std::vector<double>& values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return static_cast<int>(best);
}

struct Prediction {
  int label;
  ScoreVector scores;
};

inline Prediction predict(const EmbeddingVector& doc_embedding, const PromptEmbeddings& prompts) {
  ScoreVector scores;
  scores.reserve(prompts.num_classes());
  for (const auto& row : prompts.by_class) scores.push_back(score(doc_embedding, row));
  return Prediction{argmax_index(scores), std::move(scores)};
}

// Zero-shot prediction for one document. The document is encoded clean
// (never augmented); pseudo-labeling and evaluation both go through here.
inline Prediction predict(const Document& doc, const LabelPromptSet& labels,
                          const TextEncoder& encoder) {
  const auto prompts = encode_label_prompts(labels, encoder);
  return predict(encoder.encode_text(doc.raw), prompts);
}

// Softmax over scores / temperature, computed in log space. Preserves the
// argmax for every positive temperature.
inline ConfidenceDistribution confidence_distribution(const ScoreVector& scores,
                                                      double temperature) {
  if (temperature <= 0.0) throw ConfigError("temperature must be positive");
  if (scores.empty()) throw ShapeError("confidence_distribution requires at least one score");
  double max_logit = scores[0] / temperature;
  for (double s : scores) max_logit = std::max(max_logit, s / temperature);
  ConfidenceDistribution probs(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    probs[i] = std::exp(scores[i] / temperature - max_logit);
    total += probs[i];
  }
  for (double& p : probs) p /= total;
  return probs;
}

enum class KeySelection { salient, random };

// Index of the document's key sentence: the sentence scoring highest
// against the pseudo-label's prompts (salient) or a uniform draw (random).
inline std::size_t select_key_sentence(const Document& doc,
                                       std::span<const EmbeddingVector> pseudo_prompt_embeddings,
                                       const TextEncoder& encoder, KeySelection mode, Rng& rng) {
  if (doc.sentences.empty()) throw EmptyDocumentError("document has no sentences");
  if (doc.sentences.size() == 1) return 0;
  if (mode == KeySelection::random)
    return static_cast<std::size_t>(rng.next_below(doc.sentences.size()));

  std::size_t best = 0;
  double best_score = 0.0;
  for (std::size_t n = 0; n < doc.sentences.size(); ++n) {
    const double s =
        score(encoder.encode_text(doc.sentences[n].text), pseudo_prompt_embeddings);
    if (n == 0 || s > best_score) {
      best = n;
      best_score = s;
    }
  }
  return best;
}

}  // namespace pesco
