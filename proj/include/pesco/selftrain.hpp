#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pesco/corpus.hpp"
#include "pesco/encoder.hpp"
#include "pesco/errors.hpp"
#include "pesco/losses.hpp"
#include "pesco/matching.hpp"
#include "pesco/rng.hpp"

namespace pesco {

struct SelfTrainConfig {
  LossMode loss_mode = LossMode::plct;
  KeySelection key_mode = KeySelection::salient;
  bool augment = true;
  double temperature = 0.07;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  std::size_t epochs = 1;
  double growth = 2.0;              // per-round multiplier on the sample count
  std::size_t initial_samples = 128;  // T0
  std::size_t sample_cap = 1024;      // T' threshold, absolute count
  std::size_t max_rounds = 8;
  std::uint64_t seed = 1;
  std::size_t embedding_dim = 32;  // used when no initial encoder is supplied

  void validate(std::size_t corpus_size) const {
    if (growth <= 1.0) throw ConfigError("growth factor d must be > 1");
    if (initial_samples == 0) throw ConfigError("t0 must be positive");
    if (initial_samples > sample_cap) throw ConfigError("t0 must not exceed t_cap");
    if (sample_cap > corpus_size) throw ConfigError("t_cap must not exceed the corpus size");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (temperature <= 0.0) throw ConfigError("gamma must be positive");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (max_rounds == 0) throw ConfigError("max_rounds must be positive");
    if (embedding_dim < 2) throw ConfigError("embedding_dim must be at least 2");
  }
};

// T_t = min(T0 * d^(t-1), cap) for 1-based round t.
inline std::size_t sample_schedule(std::size_t initial, double growth, std::size_t cap,
                                   std::size_t round) {
  const double value =
      static_cast<double>(initial) * std::pow(growth, static_cast<double>(round - 1));
  if (!(value < static_cast<double>(cap))) return cap;
  return static_cast<std::size_t>(std::llround(value));
}

struct PoolEntry {
  std::size_t doc_index;
  double confidence;
};

// Per-class candidate lists from Algorithm step 1; every successfully
// encoded document lands in exactly one class list (its argmax).
struct PseudoLabelPool {
  std::vector<std::vector<PoolEntry>> per_class;
  std::vector<std::size_t> excluded;  // documents that failed to encode
  std::size_t round_index = 0;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& c : per_class) n += c.size();
    return n;
  }
};

// Teacher step: predict on CLEAN documents, pool by predicted class with the
// softmax confidence of the predicted entry. Documents whose embedding
// degenerates are excluded and counted; other errors propagate.
inline PseudoLabelPool generate_pseudo_labels(std::span<const Document> corpus,
                                              const LabelPromptSet& labels,
                                              const TextEncoder& encoder, double temperature) {
  if (corpus.empty()) throw EmptyPoolError("cannot pseudo-label an empty corpus");
  const auto prompts = encode_label_prompts(labels, encoder);

  PseudoLabelPool pool;
  pool.per_class.resize(labels.num_classes());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    EmbeddingVector doc_embedding;
    try {
      doc_embedding = encoder.encode_text(corpus[i].raw);
    } catch (const DegenerateEmbeddingError&) {
      pool.excluded.push_back(i);
      continue;
    }
    const auto prediction = predict(doc_embedding, prompts);
    const auto confidence = confidence_distribution(prediction.scores, temperature);
    pool.per_class[static_cast<std::size_t>(prediction.label)].push_back(
        PoolEntry{i, confidence[static_cast<std::size_t>(prediction.label)]});
  }
  return pool;
}

struct SampledPair {
  std::size_t doc_index;
  int pseudo_label;
};

namespace detail {

// One confidence-weighted draw from `weights`; total must be positive.
inline std::size_t weighted_pick(const std::vector<double>& weights, double total, Rng& rng) {
  const double r = rng.next_double() * total;
  double cumulative = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    cumulative += weights[i];
    if (r < cumulative) return i;
  }
  return weights.size() - 1;  // r landed on the rounding edge
}

}  // namespace detail

// Algorithm step 2 sampling: the requested count is split evenly over the
// classes that have candidates (remainder to the lowest class indices, so
// non-forfeiting counts never differ by more than one). Within a class,
// draws are confidence-weighted without replacement while stock lasts, then
// with replacement to fill the quota. The result is shuffled.
inline std::vector<SampledPair> sample_training_pairs(const PseudoLabelPool& pool,
                                                      std::size_t count, Rng& rng) {
  const std::size_t num_classes = pool.per_class.size();
  if (count < num_classes)
    throw ConfigError("sample count " + std::to_string(count) + " is below the class count " +
                      std::to_string(num_classes));

  std::vector<std::size_t> populated;
  for (std::size_t c = 0; c < num_classes; ++c)
    if (!pool.per_class[c].empty()) populated.push_back(c);
  if (populated.empty()) throw EmptyPoolError("every class list is empty");

  std::vector<SampledPair> pairs;
  pairs.reserve(count);
  const std::size_t base = count / populated.size();
  const std::size_t remainder = count % populated.size();
  for (std::size_t s = 0; s < populated.size(); ++s) {
    const std::size_t c = populated[s];
    const auto& entries = pool.per_class[c];
    std::size_t quota = base + (s < remainder ? 1 : 0);

    if (quota >= entries.size()) {
      // Entire stock once, then confidence-weighted upsampling.
      for (const auto& e : entries)
        pairs.push_back(SampledPair{e.doc_index, static_cast<int>(c)});
      std::size_t deficit = quota - entries.size();
      if (deficit > 0) {
        std::vector<double> weights;
        weights.reserve(entries.size());
        double total = 0.0;
        for (const auto& e : entries) {
          weights.push_back(e.confidence);
          total += e.confidence;
        }
        for (std::size_t k = 0; k < deficit; ++k) {
          const std::size_t pick = detail::weighted_pick(weights, total, rng);
          pairs.push_back(SampledPair{entries[pick].doc_index, static_cast<int>(c)});
        }
      }
    } else {
      // Weighted draws without replacement.
      std::vector<double> weights;
      std::vector<std::size_t> alive;
      weights.reserve(entries.size());
      alive.reserve(entries.size());
      double total = 0.0;
      for (std::size_t i = 0; i < entries.size(); ++i) {
        weights.push_back(entries[i].confidence);
        alive.push_back(i);
        total += entries[i].confidence;
      }
      for (std::size_t k = 0; k < quota; ++k) {
        const std::size_t pick = detail::weighted_pick(weights, total, rng);
        pairs.push_back(SampledPair{entries[alive[pick]].doc_index, static_cast<int>(c)});
        total -= weights[pick];
        weights.erase(weights.begin() + static_cast<std::ptrdiff_t>(pick));
        alive.erase(alive.begin() + static_cast<std::ptrdiff_t>(pick));
      }
    }
  }

  rng.shuffle(pairs);
  return pairs;
}

struct TrainRoundResult {
  double mean_loss = 0.0;
  std::vector<double> per_epoch_mean_loss;
  std::size_t batches = 0;
};

// Student step: pick each pair's key sentence against its pseudo-label
// prompts (with the round-start parameters), then minimize the configured
// loss for `epochs` passes, reshuffling batch composition every epoch. A
// non-finite gradient restores the pre-round parameters and optimizer state
// before the error escapes.
inline TrainRoundResult train_round(std::span<const SampledPair> pairs,
                                    std::span<const Document> corpus,
                                    const LabelPromptSet& labels, const Vocabulary& vocab,
                                    ReferenceEncoderParams& params, OptimizerState& optimizer,
                                    const SelfTrainConfig& config, Rng& rng) {
  if (pairs.empty()) throw EmptyPoolError("train_round requires at least one pair");

  const ReferenceEncoderParams params_backup = params;
  const OptimizerState optimizer_backup = optimizer;

  const ReferenceTextEncoder encoder(params, vocab);
  const auto prompt_embeddings = encode_label_prompts(labels, encoder);

  std::vector<std::size_t> key_indices;
  key_indices.reserve(pairs.size());
  for (const auto& pair : pairs) {
    const auto& prompts = prompt_embeddings.by_class[static_cast<std::size_t>(pair.pseudo_label)];
    key_indices.push_back(
        select_key_sentence(corpus[pair.doc_index], prompts, encoder, config.key_mode, rng));
  }

  TrainRoundResult result;
  double loss_sum = 0.0;
  try {
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
      rng.shuffle(order);
      double epoch_sum = 0.0;
      std::size_t epoch_batches = 0;
      for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
        const std::size_t end = std::min(begin + config.batch_size, order.size());
        std::vector<BatchSample> samples;
        samples.reserve(end - begin);
        for (std::size_t k = begin; k < end; ++k) {
          const auto& pair = pairs[order[k]];
          samples.push_back(BatchSample{&corpus[pair.doc_index], pair.pseudo_label,
                                        key_indices[order[k]]});
        }
        const TrainingBatch batch =
            build_batch(samples, labels, vocab, config.augment, rng, config.temperature);
        const LossAndGradients step = loss_parameter_gradients(batch, params, config.loss_mode);
        if (!std::isfinite(step.loss))
          throw NonFiniteGradientError("loss became non-finite");
        optimizer_step(params, step.gradients, optimizer);

        loss_sum += step.loss;
        epoch_sum += step.loss;
        ++result.batches;
        ++epoch_batches;
      }
      result.per_epoch_mean_loss.push_back(epoch_sum / static_cast<double>(epoch_batches));
    }
  } catch (const NonFiniteGradientError&) {
    params = params_backup;
    optimizer = optimizer_backup;
    throw;
  }

  result.mean_loss = loss_sum / static_cast<double>(result.batches);
  return result;
}

struct RoundReport {
  std::size_t round = 0;  // 1-based
  std::size_t sample_count = 0;
  std::vector<std::size_t> per_class_sampled;
  double mean_loss = 0.0;
  std::optional<double> accuracy;  // diagnostic only, from gold labels
  std::size_t excluded_documents = 0;
  double wall_seconds = 0.0;  // not part of the serialized record
};

// Serialized record; deliberately excludes wall-clock time so identical
// seeded runs emit byte-identical streams.
inline std::string format_round_report(const RoundReport& report) {
  std::ostringstream out;
  out << "round=" << report.round << " T=" << report.sample_count << " sampled=";
  for (std::size_t c = 0; c < report.per_class_sampled.size(); ++c) {
    if (c > 0) out << ',';
    out << report.per_class_sampled[c];
  }
  out << " excluded=" << report.excluded_documents;
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, " mean_loss=%.6f", report.mean_loss);
  out << buffer;
  if (report.accuracy) {
    std::snprintf(buffer, sizeof buffer, " accuracy=%.6f", *report.accuracy);
    out << buffer;
  }
  return out.str();
}

// Accuracy over the documents carrying gold labels; nullopt when none do.
// Documents that fail to encode are skipped, mirroring pseudo-labeling.
inline std::optional<double> diagnostic_accuracy(std::span<const Document> corpus,
                                                 const LabelPromptSet& labels,
                                                 const TextEncoder& encoder) {
  const auto prompts = encode_label_prompts(labels, encoder);
  std::size_t total = 0, correct = 0;
  for (const auto& doc : corpus) {
    if (!doc.gold_label) continue;
    EmbeddingVector embedding;
    try {
      embedding = encoder.encode_text(doc.raw);
    } catch (const DegenerateEmbeddingError&) {
      continue;
    }
    ++total;
    if (predict(embedding, prompts).label == *doc.gold_label) ++correct;
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(total);
}

struct SelfTrainResult {
  ReferenceEncoderParams params;
  std::optional<double> initial_accuracy;
  std::vector<RoundReport> reports;
  bool aborted = false;
  std::string abort_reason;
};

// The full teacher/student loop. Round t trains on T_t sampled pairs; the
// loop ends after the sample count has sat at the cap for one extra round,
// or at max_rounds. The encoder from the last completed round is returned.
// Fully deterministic for a fixed config (and initial encoder, if given).
inline SelfTrainResult self_train(std::span<const Document> corpus, const LabelPromptSet& labels,
                                  const Vocabulary& vocab, const SelfTrainConfig& config,
                                  std::optional<ReferenceEncoderParams> initial = std::nullopt) {
  config.validate(corpus.size());

  Rng rng(config.seed);
  SelfTrainResult result;
  result.params = initial ? std::move(*initial)
                          : init_reference_encoder(static_cast<std::size_t>(vocab.size()),
                                                   config.embedding_dim, rng);
  OptimizerState optimizer = OptimizerState::create(result.params, config.learning_rate,
                                                    config.epsilon, config.weight_decay);

  result.initial_accuracy =
      diagnostic_accuracy(corpus, labels, ReferenceTextEncoder(result.params, vocab));

  std::size_t rounds_at_cap = 0;
  for (std::size_t round = 1;; ++round) {
    const auto started = std::chrono::steady_clock::now();
    const std::size_t samples_wanted =
        sample_schedule(config.initial_samples, config.growth, config.sample_cap, round);

    PseudoLabelPool pool =
        generate_pseudo_labels(corpus, labels, ReferenceTextEncoder(result.params, vocab),
                               config.temperature);
    pool.round_index = round;

    const auto pairs = sample_training_pairs(pool, samples_wanted, rng);

    RoundReport report;
    report.round = round;
    report.sample_count = samples_wanted;
    report.per_class_sampled.assign(labels.num_classes(), 0);
    for (const auto& pair : pairs)
      ++report.per_class_sampled[static_cast<std::size_t>(pair.pseudo_label)];
    report.excluded_documents = pool.excluded.size();

    try {
      const TrainRoundResult round_result =
          train_round(pairs, corpus, labels, vocab, result.params, optimizer, config, rng);
      report.mean_loss = round_result.mean_loss;
    } catch (const NonFiniteGradientError& err) {
      result.aborted = true;
      result.abort_reason = err.what();
      result.reports.push_back(std::move(report));
      return result;
    }

    report.accuracy =
        diagnostic_accuracy(corpus, labels, ReferenceTextEncoder(result.params, vocab));
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.reports.push_back(std::move(report));

    if (samples_wanted == config.sample_cap) ++rounds_at_cap;
    if (rounds_at_cap >= 2 || round >= config.max_rounds) break;
  }
  return result;
}

}  // namespace pesco
