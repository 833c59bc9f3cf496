#pragma once

#include <bit>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pesco/corpus.hpp"
#include "pesco/encoder.hpp"
#include "pesco/errors.hpp"
#include "pesco/rng.hpp"
#include "pesco/selftrain.hpp"

namespace pesco {

enum class DatasetFormat { csv, jsonl };

struct DatasetSpec {
  DatasetFormat format = DatasetFormat::csv;
  std::string path;
  std::string labels_path;
  std::string templates_path;
  std::string text_key = "text";
  std::string label_key = "label";
  std::string id_key = "id";
};

namespace detail {

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

// Quoted CSV fields, '""' escaping a quote inside a quoted field. Rows do
// not span lines.
inline std::vector<std::string> parse_csv_row(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string field;
  std::size_t i = 0;
  const std::size_t n = line.size();
  while (true) {
    field.clear();
    if (i < n && line[i] == '"') {
      ++i;
      bool closed = false;
      while (i < n) {
        if (line[i] == '"') {
          if (i + 1 < n && line[i + 1] == '"') {
            field.push_back('"');
            i += 2;
          } else {
            ++i;
            closed = true;
            break;
          }
        } else {
          field.push_back(line[i++]);
        }
      }
      if (!closed) throw ParseError("unterminated quoted field", line_no);
      if (i < n && line[i] != ',')
        throw ParseError("unexpected character after closing quote", line_no);
    } else {
      while (i < n && line[i] != ',') field.push_back(line[i++]);
    }
    fields.push_back(field);
    if (i >= n) break;
    ++i;  // skip comma
  }
  return fields;
}

inline int parse_label_field(const std::string& text, std::size_t line_no) {
  const std::string trimmed = trim(text);
  if (trimmed.empty()) throw ParseError("empty label field", line_no);
  char* end = nullptr;
  const long value = std::strtol(trimmed.c_str(), &end, 10);
  if (end != trimmed.c_str() + trimmed.size())
    throw ParseError("label is not an integer: " + trimmed, line_no);
  return static_cast<int>(value);
}

struct RawRecord {
  std::string id;
  std::string text;
  std::optional<int> label;
};

}  // namespace detail

// Parse dataset records without tokenizing. CSV rows carry a 1-based label
// in the first field and one or more text fields joined with ". "; JSONL
// records carry the configured text/label/id keys (label and id optional).
inline std::vector<detail::RawRecord> load_raw_records(const DatasetSpec& spec) {
  const auto lines = detail::read_lines(spec.path);
  std::vector<detail::RawRecord> records;
  records.reserve(lines.size());

  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::string& line = lines[li];
    if (detail::trim(line).empty()) continue;
    const std::size_t line_no = li + 1;
    detail::RawRecord record;

    if (spec.format == DatasetFormat::csv) {
      const auto fields = detail::parse_csv_row(line, line_no);
      if (fields.size() < 2) throw ParseError("row needs a label field and a text field", line_no);
      record.label = detail::parse_label_field(fields[0], line_no) - 1;  // 1-based on disk
      std::string text;
      for (std::size_t f = 1; f < fields.size(); ++f) {
        if (f > 1) text += ". ";
        text += fields[f];
      }
      record.text = std::move(text);
      record.id = std::to_string(records.size());
    } else {
      const nlohmann::json parsed = nlohmann::json::parse(line, nullptr, false);
      if (parsed.is_discarded() || !parsed.is_object())
        throw ParseError("record is not a JSON object", line_no);
      if (!parsed.contains(spec.text_key) || !parsed[spec.text_key].is_string())
        throw ParseError("missing string field \"" + spec.text_key + "\"", line_no);
      record.text = parsed[spec.text_key].get<std::string>();
      if (parsed.contains(spec.label_key)) {
        if (!parsed[spec.label_key].is_number_integer())
          throw ParseError("field \"" + spec.label_key + "\" is not an integer", line_no);
        record.label = parsed[spec.label_key].get<int>();
      }
      if (parsed.contains(spec.id_key)) {
        const auto& id = parsed[spec.id_key];
        record.id = id.is_string() ? id.get<std::string>() : id.dump();
      } else {
        record.id = std::to_string(records.size());
      }
    }
    records.push_back(std::move(record));
  }
  return records;
}

inline std::vector<std::string> load_description_lines(const std::string& path) {
  std::vector<std::string> out;
  for (const auto& line : detail::read_lines(path)) {
    const std::string trimmed = detail::trim(line);
    if (!trimmed.empty()) out.push_back(trimmed);
  }
  return out;
}

inline LabelPromptSet load_label_prompts(const DatasetSpec& spec) {
  if (spec.labels_path.empty()) throw ConfigError("labels_path is not set");
  if (spec.templates_path.empty()) throw ConfigError("templates_path is not set");
  return LabelPromptSet::build(load_description_lines(spec.labels_path),
                               load_description_lines(spec.templates_path));
}

namespace detail {

inline std::vector<Document> documents_from_records(const std::vector<RawRecord>& records,
                                                    const Vocabulary& vocab,
                                                    std::optional<std::size_t> num_classes) {
  std::vector<Document> documents;
  documents.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& record = records[i];
    if (record.label && num_classes &&
        (*record.label < 0 || static_cast<std::size_t>(*record.label) >= *num_classes))
      throw LabelRangeError("record " + record.id + ": label " + std::to_string(*record.label) +
                            " outside [0, " + std::to_string(*num_classes) + ")");
    try {
      documents.push_back(make_document(record.id, record.text, vocab, record.label));
    } catch (const EmptyDocumentError&) {
      throw ParseError("record " + record.id + " has empty text", i + 1);
    }
  }
  return documents;
}

}  // namespace detail

struct LoadedDataset {
  std::vector<Document> documents;
  LabelPromptSet labels;
  Vocabulary vocab;
};

// Load documents and label prompts, building the vocabulary from the corpus.
inline LoadedDataset load_dataset(const DatasetSpec& spec) {
  auto labels = load_label_prompts(spec);
  const auto records = load_raw_records(spec);
  std::vector<std::string> texts;
  texts.reserve(records.size());
  for (const auto& r : records) texts.push_back(r.text);
  Vocabulary vocab = Vocabulary::build(texts);
  auto documents = detail::documents_from_records(records, vocab, labels.num_classes());
  return LoadedDataset{std::move(documents), std::move(labels), std::move(vocab)};
}

// Load documents tokenized against an existing vocabulary (e.g. from a
// checkpoint), so inference never depends on rebuilding it.
inline std::vector<Document> load_documents(const DatasetSpec& spec, const Vocabulary& vocab,
                                            std::optional<std::size_t> num_classes = std::nullopt) {
  return detail::documents_from_records(load_raw_records(spec), vocab, num_classes);
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t docs_per_class = 500;
  std::size_t vocab_per_class = 50;
  std::size_t shared_vocab = 40;
  std::size_t sentences_per_doc = 5;
  std::size_t min_sentence_tokens = 6;
  std::size_t max_sentence_tokens = 10;
  double noise_rate = 0.2;
  std::uint64_t seed = 1;

  void validate() const {
    if (classes == 0) throw ConfigError("classes must be positive");
    if (docs_per_class == 0) throw ConfigError("docs_per_class must be positive");
    if (vocab_per_class < 3) throw ConfigError("vocab_per_class must be at least 3");
    if (sentences_per_doc < 2) throw ConfigError("sentences_per_doc must be at least 2");
    if (noise_rate < 0.0 || noise_rate >= 0.5) throw ConfigError("noise_rate must be in [0, 0.5)");
    if (noise_rate > 0.0 && shared_vocab == 0)
      throw ConfigError("noise_rate > 0 requires a shared vocabulary");
    if (min_sentence_tokens == 0 || min_sentence_tokens > max_sentence_tokens)
      throw ConfigError("sentence token bounds are inconsistent");
  }
};

struct SyntheticDataset {
  std::vector<Document> documents;
  std::vector<std::string> descriptions;
  Vocabulary vocab;
};

// Deterministic topical corpus: each class owns a disjoint vocabulary and
// each token comes from the class vocabulary with probability 1-noise_rate,
// otherwise from the shared pool. Class descriptions are the first two
// topical words, so label prompts share real tokens with their class.
inline SyntheticDataset generate_synthetic_corpus(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  std::vector<std::vector<std::string>> class_words(spec.classes);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    class_words[c].reserve(spec.vocab_per_class);
    for (std::size_t k = 0; k < spec.vocab_per_class; ++k)
      class_words[c].push_back("c" + std::to_string(c) + "w" + std::to_string(k));
  }
  std::vector<std::string> shared_words;
  shared_words.reserve(spec.shared_vocab);
  for (std::size_t k = 0; k < spec.shared_vocab; ++k)
    shared_words.push_back("sw" + std::to_string(k));

  SyntheticDataset out;
  out.descriptions.reserve(spec.classes);
  for (std::size_t c = 0; c < spec.classes; ++c)
    out.descriptions.push_back(class_words[c][0] + " " + class_words[c][1]);

  std::vector<std::string> raws;
  std::vector<int> golds;
  raws.reserve(spec.classes * spec.docs_per_class);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t d = 0; d < spec.docs_per_class; ++d) {
      std::string raw;
      for (std::size_t s = 0; s < spec.sentences_per_doc; ++s) {
        const std::size_t span = spec.max_sentence_tokens - spec.min_sentence_tokens + 1;
        const std::size_t count =
            spec.min_sentence_tokens + static_cast<std::size_t>(rng.next_below(span));
        if (s > 0) raw += ' ';
        for (std::size_t k = 0; k < count; ++k) {
          const bool from_shared = rng.next_double() < spec.noise_rate;
          const auto& pool = from_shared ? shared_words : class_words[c];
          if (k > 0) raw += ' ';
          raw += pool[static_cast<std::size_t>(rng.next_below(pool.size()))];
        }
        raw += '.';
      }
      raws.push_back(std::move(raw));
      golds.push_back(static_cast<int>(c));
    }
  }

  out.vocab = Vocabulary::build(raws);
  out.documents.reserve(raws.size());
  for (std::size_t i = 0; i < raws.size(); ++i)
    out.documents.push_back(
        make_document(std::to_string(i), std::move(raws[i]), out.vocab, golds[i]));
  return out;
}

// CSV rows as consumed by load_dataset: "label1based","full text".
inline void save_dataset_csv(const std::string& path, std::span<const Document> documents) {
  std::ofstream outfile(path, std::ios::binary);
  if (!outfile) throw DataError("cannot write file: " + path);
  for (const auto& doc : documents) {
    std::string escaped;
    escaped.reserve(doc.raw.size());
    for (char c : doc.raw) {
      if (c == '"') escaped += "\"\"";
      else escaped.push_back(c);
    }
    outfile << '"' << (doc.gold_label ? *doc.gold_label + 1 : 0) << "\",\"" << escaped << "\"\n";
  }
}

inline void save_lines(const std::string& path, std::span<const std::string> lines) {
  std::ofstream outfile(path, std::ios::binary);
  if (!outfile) throw DataError("cannot write file: " + path);
  for (const auto& line : lines) outfile << line << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
//
// Binary little-endian layout:
//   magic "PESC" | version u32 = 1 | V u32 | D u32 |
//   E as V*D float32 row-major | W as D*D float32 row-major |
//   V vocabulary entries, each u32 length + UTF-8 bytes, in index order.

namespace detail {

constexpr char kCheckpointMagic[4] = {'P', 'E', 'S', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_u32(std::ostream& out, std::uint32_t value) {
  const char bytes[4] = {static_cast<char>(value & 0xff), static_cast<char>((value >> 8) & 0xff),
                         static_cast<char>((value >> 16) & 0xff),
                         static_cast<char>((value >> 24) & 0xff)};
  out.write(bytes, 4);
}

inline void write_f32(std::ostream& out, float value) {
  write_u32(out, std::bit_cast<std::uint32_t>(value));
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  if (!in) throw CorruptCheckpointError("checkpoint truncated");
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) |
         (static_cast<std::uint32_t>(bytes[3]) << 24);
}

inline float read_f32(std::istream& in) { return std::bit_cast<float>(read_u32(in)); }

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ReferenceEncoderParams& params,
                            const Vocabulary& vocab) {
  if (static_cast<std::size_t>(vocab.size()) != params.vocab_size())
    throw ShapeError("vocabulary size does not match the embedding table");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);

  out.write(detail::kCheckpointMagic, 4);
  detail::write_u32(out, detail::kCheckpointVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(params.vocab_size()));
  detail::write_u32(out, static_cast<std::uint32_t>(params.embedding_dim()));
  for (double v : params.embeddings.data()) detail::write_f32(out, static_cast<float>(v));
  for (double v : params.projection.data()) detail::write_f32(out, static_cast<float>(v));
  for (const auto& word : vocab.words()) {
    detail::write_u32(out, static_cast<std::uint32_t>(word.size()));
    out.write(word.data(), static_cast<std::streamsize>(word.size()));
  }
  if (!out) throw DataError("failed while writing checkpoint: " + path);
}

inline std::pair<ReferenceEncoderParams, Vocabulary> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);

  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
    throw IncompatibleCheckpointError("bad checkpoint magic");
  const std::uint32_t version = detail::read_u32(in);
  if (version != detail::kCheckpointVersion)
    throw IncompatibleCheckpointError("unsupported checkpoint version " + std::to_string(version));

  const std::uint32_t vocab_size = detail::read_u32(in);
  const std::uint32_t dim = detail::read_u32(in);
  if (vocab_size == 0 || dim < 2) throw CorruptCheckpointError("implausible header dimensions");

  ReferenceEncoderParams params;
  params.embeddings = Matrix(vocab_size, dim);
  for (double& v : params.embeddings.data()) v = static_cast<double>(detail::read_f32(in));
  params.projection = Matrix(dim, dim);
  for (double& v : params.projection.data()) v = static_cast<double>(detail::read_f32(in));

  std::vector<std::string> words;
  words.reserve(vocab_size);
  for (std::uint32_t i = 0; i < vocab_size; ++i) {
    const std::uint32_t length = detail::read_u32(in);
    std::string word(length, '\0');
    in.read(word.data(), static_cast<std::streamsize>(length));
    if (!in) throw CorruptCheckpointError("checkpoint truncated inside vocabulary");
    words.push_back(std::move(word));
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw CorruptCheckpointError("trailing bytes after checkpoint payload");
  return {std::move(params), Vocabulary::from_words(std::move(words))};
}

// ---------------------------------------------------------------------------
// Configuration files: `key = value` lines, '#' comments, unknown keys fatal.
// ---------------------------------------------------------------------------

struct RunConfig {
  SelfTrainConfig train;
  DatasetSpec dataset;
  SyntheticSpec synth;
};

namespace detail {

inline std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  if (value.empty()) throw ConfigTypeError("key " + key + ": expected an unsigned integer");
  char* end = nullptr;
  const unsigned long long parsed = std::strtoull(value.c_str(), &end, 10);
  if (end != value.c_str() + value.size())
    throw ConfigTypeError("key " + key + ": expected an unsigned integer, got \"" + value + "\"");
  return parsed;
}

inline double parse_double(const std::string& key, const std::string& value) {
  if (value.empty()) throw ConfigTypeError("key " + key + ": expected a number");
  char* end = nullptr;
  const double parsed = std::strtod(value.c_str(), &end);
  if (end != value.c_str() + value.size())
    throw ConfigTypeError("key " + key + ": expected a number, got \"" + value + "\"");
  return parsed;
}

inline bool parse_on_off(const std::string& key, const std::string& value) {
  if (value == "on") return true;
  if (value == "off") return false;
  throw ConfigTypeError("key " + key + ": expected on or off, got \"" + value + "\"");
}

}  // namespace detail

inline RunConfig load_config(const std::string& path) {
  RunConfig config;
  const auto lines = detail::read_lines(path);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    std::string line = lines[li];
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;

    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(li + 1) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));

    auto& train = config.train;
    auto& dataset = config.dataset;
    auto& synth = config.synth;
    if (key == "loss_mode") {
      if (value == "plct") train.loss_mode = LossMode::plct;
      else if (value == "lct") train.loss_mode = LossMode::lct;
      else if (value == "pcl") train.loss_mode = LossMode::pcl;
      else if (value == "lct_plus_pcl") train.loss_mode = LossMode::lct_plus_pcl;
      else throw ConfigTypeError("key loss_mode: unknown mode \"" + value + "\"");
    } else if (key == "key_mode") {
      if (value == "salient") train.key_mode = KeySelection::salient;
      else if (value == "random") train.key_mode = KeySelection::random;
      else throw ConfigTypeError("key key_mode: unknown mode \"" + value + "\"");
    } else if (key == "augment") {
      train.augment = detail::parse_on_off(key, value);
    } else if (key == "gamma") {
      train.temperature = detail::parse_double(key, value);
    } else if (key == "batch_size") {
      train.batch_size = detail::parse_u64(key, value);
    } else if (key == "learning_rate") {
      train.learning_rate = detail::parse_double(key, value);
    } else if (key == "weight_decay") {
      train.weight_decay = detail::parse_double(key, value);
    } else if (key == "epsilon") {
      train.epsilon = detail::parse_double(key, value);
    } else if (key == "epochs") {
      train.epochs = detail::parse_u64(key, value);
    } else if (key == "d") {
      train.growth = detail::parse_double(key, value);
    } else if (key == "t0") {
      train.initial_samples = detail::parse_u64(key, value);
    } else if (key == "t_cap") {
      train.sample_cap = detail::parse_u64(key, value);
    } else if (key == "max_rounds") {
      train.max_rounds = detail::parse_u64(key, value);
    } else if (key == "seed") {
      train.seed = detail::parse_u64(key, value);
      synth.seed = train.seed;
    } else if (key == "embedding_dim") {
      train.embedding_dim = detail::parse_u64(key, value);
    } else if (key == "format") {
      if (value == "csv") dataset.format = DatasetFormat::csv;
      else if (value == "jsonl") dataset.format = DatasetFormat::jsonl;
      else throw ConfigTypeError("key format: expected csv or jsonl, got \"" + value + "\"");
    } else if (key == "data_path") {
      dataset.path = value;
    } else if (key == "labels_path") {
      dataset.labels_path = value;
    } else if (key == "templates_path") {
      dataset.templates_path = value;
    } else if (key == "text_key") {
      dataset.text_key = value;
    } else if (key == "label_key") {
      dataset.label_key = value;
    } else if (key == "id_key") {
      dataset.id_key = value;
    } else if (key == "classes") {
      synth.classes = detail::parse_u64(key, value);
    } else if (key == "docs_per_class") {
      synth.docs_per_class = detail::parse_u64(key, value);
    } else if (key == "vocab_per_class") {
      synth.vocab_per_class = detail::parse_u64(key, value);
    } else if (key == "shared_vocab") {
      synth.shared_vocab = detail::parse_u64(key, value);
    } else if (key == "sentences_per_doc") {
      synth.sentences_per_doc = detail::parse_u64(key, value);
    } else if (key == "min_sentence_tokens") {
      synth.min_sentence_tokens = detail::parse_u64(key, value);
    } else if (key == "max_sentence_tokens") {
      synth.max_sentence_tokens = detail::parse_u64(key, value);
    } else if (key == "noise_rate") {
      synth.noise_rate = detail::parse_double(key, value);
    } else {
      throw UnknownKeyError("unknown configuration key: " + key);
    }
  }
  return config;
}

}  // namespace pesco
