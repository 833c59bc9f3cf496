#include <doctest.h>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "pesco/matching.hpp"

using namespace pesco;

namespace {

EmbeddingVector unit(std::vector<double> v) {
  const double n = l2_norm(v);
  for (double& x : v) x /= n;
  return EmbeddingVector{std::move(v)};
}

// Test encoder with hand-assigned embeddings per exact text.
class FakeEncoder final : public TextEncoder {
public:
  void set(const std::string& text, std::vector<double> values) {
    table_[text] = unit(std::move(values));
  }
  EmbeddingVector encode_text(const std::string& text) const override {
    auto it = table_.find(text);
    REQUIRE(it != table_.end());
    return it->second;
  }

private:
  std::map<std::string, EmbeddingVector> table_;
};

Document doc_with_sentences(std::vector<std::string> texts) {
  Document doc;
  doc.id = "d";
  for (auto& t : texts) {
    Sentence s;
    s.text = t;
    s.tokens = {0};
    doc.raw += (doc.raw.empty() ? "" : " ") + t;
    doc.sentences.push_back(std::move(s));
  }
  return doc;
}

}  // namespace

TEST_CASE("score of identical unit vectors is 1") {
  const auto v = unit({0.3, 0.4, 0.5});
  std::vector<EmbeddingVector> prompts{v};
  CHECK(score(v, prompts) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("score averages template cosines") {
  const auto doc = unit({1.0, 0.0});
  std::vector<EmbeddingVector> prompts{unit({0.2, std::sqrt(1.0 - 0.04)}), unit({0.6, 0.8})};
  CHECK(score(doc, prompts) == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("score of orthogonal vectors is 0") {
  const auto doc = unit({1.0, 0.0});
  std::vector<EmbeddingVector> prompts{unit({0.0, 1.0})};
  CHECK(score(doc, prompts) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("score rejects dimension mismatches") {
  const auto doc = unit({1.0, 0.0});
  std::vector<EmbeddingVector> prompts{unit({1.0, 0.0, 0.0})};
  CHECK_THROWS_AS(score(doc, prompts), DimensionMismatchError);
}

TEST_CASE("score is exactly invariant under template permutation") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t T = 2 + rng.next_below(4);
    std::vector<EmbeddingVector> prompts;
    for (std::size_t t = 0; t < T; ++t)
      prompts.push_back(unit({rng.next_in(-1, 1), rng.next_in(-1, 1), rng.next_in(-1, 1)}));
    const auto doc = unit({rng.next_in(-1, 1), rng.next_in(-1, 1), rng.next_in(-1, 1)});
    const double base = score(doc, prompts);
    rng.shuffle(prompts);
    CHECK(score(doc, prompts) == base);  // bitwise
  }
}

TEST_CASE("argmax breaks ties toward the smallest index") {
  CHECK(argmax_index({0.3, 0.3, 0.1}) == 0);
  CHECK(argmax_index({0.1, 0.5, 0.5}) == 1);
  CHECK(argmax_index({0.2}) == 0);
}

TEST_CASE("predict picks the class with the closest prompt") {
  PromptEmbeddings prompts;
  prompts.by_class = {{unit({1.0, 0.0})}, {unit({0.0, 1.0})}};
  const auto prediction = predict(unit({0.6, 0.8}), prompts);
  CHECK(prediction.label == 1);
  CHECK(prediction.scores[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(prediction.scores[1] == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("predict with a single class always returns class 0") {
  PromptEmbeddings prompts;
  prompts.by_class = {{unit({0.0, -1.0})}};
  CHECK(predict(unit({0.0, 1.0}), prompts).label == 0);  // score is -1, still class 0
}

TEST_CASE("predict label always equals the argmax of its scores") {
  Rng rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t L = 1 + rng.next_below(5), T = 1 + rng.next_below(3);
    PromptEmbeddings prompts;
    prompts.by_class.resize(L);
    for (auto& row : prompts.by_class)
      for (std::size_t t = 0; t < T; ++t)
        row.push_back(unit({rng.next_in(-1, 1), rng.next_in(-1, 1), rng.next_in(-1, 1)}));
    const auto p = predict(unit({rng.next_in(-1, 1), rng.next_in(-1, 1), rng.next_in(-1, 1)}),
                           prompts);
    CHECK(p.label == argmax_index(p.scores));
  }
}

TEST_CASE("confidence distribution of equal scores is uniform") {
  const auto probs = confidence_distribution({0.5, 0.5, 0.5, 0.5}, 0.07);
  for (double p : probs) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("confidence distribution matches the scalar softmax reference") {
  const auto probs = confidence_distribution({1.0, 0.0}, 1.0);
  const double e = std::exp(1.0);
  CHECK(probs[0] == doctest::Approx(e / (e + 1.0)).epsilon(1e-12));
  CHECK(probs[1] == doctest::Approx(1.0 / (e + 1.0)).epsilon(1e-12));
  CHECK(probs[0] == doctest::Approx(0.7311).epsilon(1e-4));
}

TEST_CASE("high temperature flattens the distribution toward uniform") {
  const auto probs = confidence_distribution({0.9, -0.3, 0.1, 0.4}, 1e6);
  for (double p : probs) CHECK(std::abs(p - 0.25) < 1e-3);
}

TEST_CASE("confidence distribution preserves the argmax and sums to one") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t L = 1 + rng.next_below(6);
    ScoreVector scores(L);
    for (auto& s : scores) s = rng.next_in(-1.0, 1.0);
    const double temperature = std::exp(rng.next_in(-3.0, 3.0));
    const auto probs = confidence_distribution(scores, temperature);
    CHECK(argmax_index(probs) == argmax_index(scores));
    double total = 0.0;
    for (double p : probs) {
      CHECK(p >= 0.0);
      total += p;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK_THROWS_AS(confidence_distribution({0.1}, 0.0), ConfigError);
}

TEST_CASE("select_key_sentence returns 0 for single-sentence documents") {
  const auto doc = doc_with_sentences({"only sentence."});
  FakeEncoder encoder;
  Rng rng(1);
  std::vector<EmbeddingVector> prompts{unit({1.0, 0.0})};
  CHECK(select_key_sentence(doc, prompts, encoder, KeySelection::salient, rng) == 0);
  CHECK(select_key_sentence(doc, prompts, encoder, KeySelection::random, rng) == 0);
}

TEST_CASE("salient mode picks the sentence closest to the prompt") {
  const auto doc = doc_with_sentences({"s0.", "s1.", "s2."});
  FakeEncoder encoder;
  encoder.set("s0.", {1.0, 0.0, 0.0});
  encoder.set("s1.", {0.0, 1.0, 0.0});
  encoder.set("s2.", {0.0, 0.0, 1.0});
  std::vector<EmbeddingVector> prompts{unit({0.0, 1.0, 0.0})};  // equals sentence 1
  Rng rng(1);
  CHECK(select_key_sentence(doc, prompts, encoder, KeySelection::salient, rng) == 1);
}

TEST_CASE("salient mode with prescribed scores is an argmax with low tie-break") {
  const auto doc = doc_with_sentences({"a.", "b.", "c."});
  FakeEncoder encoder;
  // cosines against (1,0): 0.1, 0.7, 0.3
  encoder.set("a.", {0.1, std::sqrt(1 - 0.01)});
  encoder.set("b.", {0.7, std::sqrt(1 - 0.49)});
  encoder.set("c.", {0.3, std::sqrt(1 - 0.09)});
  std::vector<EmbeddingVector> prompts{unit({1.0, 0.0})};
  Rng rng(1);
  CHECK(select_key_sentence(doc, prompts, encoder, KeySelection::salient, rng) == 1);
}

TEST_CASE("salient selection dominates every other sentence score") {
  Rng rng(37);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.next_below(4);
    std::vector<std::string> texts;
    FakeEncoder encoder;
    for (std::size_t i = 0; i < n; ++i) {
      texts.push_back("s" + std::to_string(i) + ".");
      encoder.set(texts.back(), {rng.next_in(-1, 1), rng.next_in(-1, 1), rng.next_in(-1, 1)});
    }
    const auto doc = doc_with_sentences(texts);
    std::vector<EmbeddingVector> prompts{
        unit({rng.next_in(-1, 1), rng.next_in(-1, 1), rng.next_in(-1, 1)})};
    const auto chosen = select_key_sentence(doc, prompts, encoder, KeySelection::salient, rng);
    const double chosen_score = score(encoder.encode_text(texts[chosen]), prompts);
    for (const auto& text : texts)
      CHECK(chosen_score >= score(encoder.encode_text(text), prompts));
  }
}

TEST_CASE("random mode draws uniformly over the sentences") {
  const auto doc = doc_with_sentences({"a.", "b.", "c."});
  FakeEncoder encoder;
  std::vector<EmbeddingVector> prompts{unit({1.0, 0.0})};
  Rng rng(5);
  std::vector<int> seen(3, 0);
  for (int i = 0; i < 300; ++i)
    ++seen[select_key_sentence(doc, prompts, encoder, KeySelection::random, rng)];
  for (int count : seen) CHECK(count > 50);
}

TEST_CASE("encode_label_prompts keeps class and template order") {
  const auto set = LabelPromptSet::build({"alpha", "beta"}, {"[desc] one", "[desc] two"});
  FakeEncoder encoder;
  encoder.set("alpha one", {1, 0, 0});
  encoder.set("alpha two", {0, 1, 0});
  encoder.set("beta one", {0, 0, 1});
  encoder.set("beta two", {1, 1, 0});
  const auto prompts = encode_label_prompts(set, encoder);
  REQUIRE(prompts.num_classes() == 2);
  REQUIRE(prompts.by_class[0].size() == 2);
  CHECK(prompts.by_class[0][0].values == encoder.encode_text("alpha one").values);
  CHECK(prompts.by_class[1][1].values == encoder.encode_text("beta two").values);
}
