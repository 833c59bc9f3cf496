#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pesco/errors.hpp"

namespace pesco {

struct Sentence {
  std::string text;
  std::vector<int> tokens;
};

struct Document {
  std::string id;
  std::string raw;
  std::vector<Sentence> sentences;
  std::optional<int> gold_label;

  std::size_t num_sentences() const { return sentences.size(); }
};

namespace detail {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
inline bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
inline char to_lower(char c) {
  return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

inline bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

}  // namespace detail

// Sentence segmentation. Boundaries sit right after '.', '!' or '?' when
// the next character is whitespace; the whitespace stays with the following
// span. Spans shorter than 3 characters are merged into the previous span
// (the first span has nothing to merge into and always stands). Output
// segments are trimmed. No boundary at all yields the whole (trimmed) text.
inline std::vector<std::string> split_sentences(const std::string& raw) {
  const std::string text = detail::trim(raw);
  if (text.empty()) throw EmptyDocumentError("document is empty after trimming");

  std::vector<std::size_t> starts{0};
  for (std::size_t i = 0; i + 1 < text.size(); ++i)
    if (detail::is_terminator(text[i]) && detail::is_space(text[i + 1])) starts.push_back(i + 1);

  // Contiguous spans between split points, short spans coalesced backward.
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // [begin, end)
  for (std::size_t s = 0; s < starts.size(); ++s) {
    const std::size_t begin = starts[s];
    const std::size_t end = (s + 1 < starts.size()) ? starts[s + 1] : text.size();
    if (!spans.empty() && end - begin < 3)
      spans.back().second = end;
    else
      spans.emplace_back(begin, end);
  }

  std::vector<std::string> out;
  out.reserve(spans.size());
  for (const auto& [begin, end] : spans) {
    std::string seg = detail::trim(std::string_view(text).substr(begin, end - begin));
    if (!seg.empty()) out.push_back(std::move(seg));
  }
  if (out.empty()) out.push_back(text);
  return out;
}

// Lowercased maximal alphanumeric runs; everything else separates.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char c : text) {
    if (detail::is_alnum(c)) {
      current.push_back(detail::to_lower(c));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

// Token-to-index map. Index 0 is reserved for unknown tokens; known tokens
// occupy 1..V-1 ordered by corpus frequency (ties broken lexicographically).
class Vocabulary {
public:
  static constexpr int kUnknown = 0;
  static constexpr const char* kUnknownWord = "<unk>";

  Vocabulary() : words_{kUnknownWord} {}

  // Deterministic construction from raw corpus texts.
  static Vocabulary build(const std::vector<std::string>& texts) {
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& text : texts)
      for (auto& w : split_words(text)) ++counts[w];

    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });

    Vocabulary vocab;
    vocab.words_.reserve(ranked.size() + 1);
    for (auto& [word, count] : ranked) {
      vocab.index_.emplace(word, static_cast<int>(vocab.words_.size()));
      vocab.words_.push_back(word);
    }
    return vocab;
  }

  // Reconstruction from a checkpoint: words in index order, slot 0 reserved.
  static Vocabulary from_words(std::vector<std::string> words) {
    if (words.empty()) throw CorruptCheckpointError("vocabulary has no entries");
    Vocabulary vocab;
    vocab.words_ = std::move(words);
    vocab.index_.clear();
    for (std::size_t i = 1; i < vocab.words_.size(); ++i) {
      auto [it, inserted] = vocab.index_.emplace(vocab.words_[i], static_cast<int>(i));
      if (!inserted) throw CorruptCheckpointError("duplicate vocabulary entry: " + vocab.words_[i]);
    }
    return vocab;
  }

  int lookup(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnknown : it->second;
  }

  int size() const { return static_cast<int>(words_.size()); }
  const std::string& word(int index) const { return words_[static_cast<std::size_t>(index)]; }
  const std::vector<std::string>& words() const { return words_; }

  bool operator==(const Vocabulary& other) const { return words_ == other.words_; }

private:
  std::unordered_map<std::string, int> index_;
  std::vector<std::string> words_;
};

// Lowercase, split on whitespace/punctuation, map through the vocabulary.
// All-punctuation input yields a single unknown token so the result is
// never empty.
inline std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab) {
  std::vector<int> tokens;
  for (const auto& word : split_words(text)) tokens.push_back(vocab.lookup(word));
  if (tokens.empty()) tokens.push_back(Vocabulary::kUnknown);
  return tokens;
}

// Substitute the single "[desc]" slot of a template.
inline std::string render_prompt(const std::string& tmpl, const std::string& description) {
  static constexpr std::string_view kSlot = "[desc]";
  const std::size_t first = tmpl.find(kSlot);
  if (first == std::string::npos)
    throw MalformedTemplateError("template has no [desc] slot: " + tmpl);
  if (tmpl.find(kSlot, first + kSlot.size()) != std::string::npos)
    throw MalformedTemplateError("template has multiple [desc] slots: " + tmpl);
  std::string out = tmpl;
  out.replace(first, kSlot.size(), description);
  return out;
}

// L label descriptions rendered through T templates.
struct LabelPromptSet {
  std::vector<std::string> descriptions;            // L
  std::vector<std::string> templates;               // T
  std::vector<std::vector<std::string>> rendered;   // L x T

  std::size_t num_classes() const { return descriptions.size(); }
  std::size_t num_templates() const { return templates.size(); }

  static LabelPromptSet build(std::vector<std::string> descriptions,
                              std::vector<std::string> templates) {
    if (descriptions.empty()) throw ConfigError("label prompt set needs at least one description");
    if (templates.empty()) throw ConfigError("label prompt set needs at least one template");
    LabelPromptSet set;
    set.rendered.reserve(descriptions.size());
    for (const auto& desc : descriptions) {
      std::vector<std::string> row;
      row.reserve(templates.size());
      for (const auto& tmpl : templates) row.push_back(render_prompt(tmpl, desc));
      set.rendered.push_back(std::move(row));
    }
    set.descriptions = std::move(descriptions);
    set.templates = std::move(templates);
    return set;
  }
};

// Split, tokenize and assemble a document.
inline Document make_document(std::string id, std::string raw, const Vocabulary& vocab,
                              std::optional<int> gold_label = std::nullopt) {
  Document doc;
  doc.id = std::move(id);
  doc.gold_label = gold_label;
  doc.sentences.reserve(4);
  for (auto& text : split_sentences(raw)) {
    Sentence s;
    s.tokens = tokenize(text, vocab);
    s.text = std::move(text);
    doc.sentences.push_back(std::move(s));
  }
  doc.raw = std::move(raw);
  return doc;
}

// All sentence tokens in order; equals tokenize(raw) because segmentation
// only cuts at separator characters.
inline std::vector<int> document_tokens(const Document& doc) {
  std::vector<int> tokens;
  for (const auto& s : doc.sentences) tokens.insert(tokens.end(), s.tokens.begin(), s.tokens.end());
  return tokens;
}

}  // namespace pesco
