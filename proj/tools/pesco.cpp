// pesco: zero-shot text classification by prompt matching, with an optional
// contrastive self-training loop over pseudo-labels.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pesco/pesco.hpp"
#include "pesco/remote.hpp"

namespace fs = std::filesystem;

namespace {

struct PredictArgs {
  std::string config_path;
  std::string checkpoint_path;
  std::string remote_endpoint;
  std::string input_path;
  std::string out_path;
};

struct SelftrainArgs {
  std::string config_path;
  std::string out_dir;
};

struct EvalArgs {
  std::string pred_path;
  std::string gold_path;
  std::string format = "csv";
  std::string labels_path;
};

struct GenSynthArgs {
  std::string config_path;
  std::string out_dir;
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw pesco::DataError("cannot write file: " + path);
  out << content;
}

std::string format_prediction_line(const std::string& id, int label, double confidence) {
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "\t%d\t%.6f", label, confidence);
  return id + buffer;
}

int run_predict(const PredictArgs& args) {
  if (args.checkpoint_path.empty() == args.remote_endpoint.empty()) {
    std::cerr << "predict needs exactly one of --checkpoint or --remote\n";
    return 1;
  }
  auto config = pesco::load_config(args.config_path);
  if (!args.input_path.empty()) config.dataset.path = args.input_path;
  const auto labels = pesco::load_label_prompts(config.dataset);
  const auto records = pesco::load_raw_records(config.dataset);
  if (records.empty()) throw pesco::DataError("input dataset is empty");

  std::unique_ptr<pesco::TextEncoder> encoder;
  pesco::ReferenceEncoderParams params;
  pesco::Vocabulary vocab;
  if (!args.checkpoint_path.empty()) {
    auto loaded = pesco::load_checkpoint(args.checkpoint_path);
    params = std::move(loaded.first);
    vocab = std::move(loaded.second);
    encoder = std::make_unique<pesco::ReferenceTextEncoder>(params, vocab);
  } else {
    encoder = std::make_unique<pesco::RemoteTextEncoder>(args.remote_endpoint);
  }

  const auto prompts = pesco::encode_label_prompts(labels, *encoder);
  std::vector<std::string> texts;
  texts.reserve(records.size());
  for (const auto& r : records) texts.push_back(r.text);
  const auto embeddings = encoder->encode_texts(texts);

  std::string out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto prediction = pesco::predict(embeddings[i], prompts);
    const auto confidence =
        pesco::confidence_distribution(prediction.scores, config.train.temperature);
    out += format_prediction_line(records[i].id, prediction.label,
                                  confidence[static_cast<std::size_t>(prediction.label)]);
    out += '\n';
  }
  write_file(args.out_path, out);
  std::cerr << "wrote " << records.size() << " predictions to " << args.out_path << "\n";
  return 0;
}

int run_selftrain(const SelftrainArgs& args) {
  const auto config = pesco::load_config(args.config_path);
  const auto dataset = pesco::load_dataset(config.dataset);
  fs::create_directories(args.out_dir);

  const auto result =
      pesco::self_train(dataset.documents, dataset.labels, dataset.vocab, config.train);

  std::string log;
  if (result.initial_accuracy) {
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "initial_accuracy=%.6f", *result.initial_accuracy);
    log += buffer;
    log += '\n';
  }
  for (const auto& report : result.reports) {
    const auto line = pesco::format_round_report(report);
    log += line;
    log += '\n';
    std::cout << line << "\n";
    std::cerr << "round " << report.round << " took " << report.wall_seconds << "s\n";
  }
  write_file((fs::path(args.out_dir) / "rounds.log").string(), log);

  pesco::save_checkpoint((fs::path(args.out_dir) / "checkpoint.pesc").string(), result.params,
                         dataset.vocab);

  if (result.aborted) {
    std::cerr << "aborted: " << result.abort_reason << "\n";
    return 3;
  }

  bool any_gold = false;
  for (const auto& doc : dataset.documents) any_gold = any_gold || doc.gold_label.has_value();
  if (any_gold) {
    const pesco::ReferenceTextEncoder encoder(result.params, dataset.vocab);
    const auto prompts = pesco::encode_label_prompts(dataset.labels, encoder);
    std::vector<int> preds, golds;
    for (const auto& doc : dataset.documents) {
      if (!doc.gold_label) continue;
      preds.push_back(pesco::predict(encoder.encode_text(doc.raw), prompts).label);
      golds.push_back(*doc.gold_label);
    }
    const auto eval = pesco::evaluate(preds, golds, dataset.labels.num_classes());
    const auto text = pesco::format_eval_result(eval);
    write_file((fs::path(args.out_dir) / "eval.txt").string(), text);
    std::cout << text;
  }
  return 0;
}

int run_eval(const EvalArgs& args) {
  std::ifstream pred_file(args.pred_path);
  if (!pred_file) throw pesco::DataError("cannot open predictions: " + args.pred_path);
  std::vector<int> preds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(pred_file, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    if (tab1 == std::string::npos)
      throw pesco::ParseError("prediction line has no tab separator", line_no);
    auto rest = line.substr(tab1 + 1);
    const auto tab2 = rest.find('\t');
    if (tab2 != std::string::npos) rest.erase(tab2);
    preds.push_back(pesco::detail::parse_label_field(rest, line_no));
  }

  pesco::DatasetSpec spec;
  spec.path = args.gold_path;
  spec.format = args.format == "jsonl" ? pesco::DatasetFormat::jsonl : pesco::DatasetFormat::csv;
  const auto records = pesco::load_raw_records(spec);
  std::vector<int> golds;
  for (const auto& record : records) {
    if (!record.label)
      throw pesco::DataError("record " + record.id + " has no gold label");
    golds.push_back(*record.label);
  }

  std::size_t num_classes = 0;
  if (!args.labels_path.empty()) {
    num_classes = pesco::load_description_lines(args.labels_path).size();
  } else {
    for (int v : preds) num_classes = std::max<std::size_t>(num_classes, v + 1);
    for (int v : golds) num_classes = std::max<std::size_t>(num_classes, v + 1);
  }
  std::cout << pesco::format_eval_result(pesco::evaluate(preds, golds, num_classes));
  return 0;
}

int run_gen_synth(const GenSynthArgs& args) {
  const auto config = pesco::load_config(args.config_path);
  const auto data = pesco::generate_synthetic_corpus(config.synth);
  fs::create_directories(args.out_dir);
  pesco::save_dataset_csv((fs::path(args.out_dir) / "data.csv").string(), data.documents);
  pesco::save_lines((fs::path(args.out_dir) / "labels.txt").string(), data.descriptions);
  const std::vector<std::string> templates{"it is about [desc].", "category [desc]."};
  pesco::save_lines((fs::path(args.out_dir) / "templates.txt").string(), templates);
  std::cout << "wrote " << data.documents.size() << " documents, "
            << data.descriptions.size() << " labels to " << args.out_dir << "\n";
  return 0;
}

int run_inspect(const std::string& checkpoint_path) {
  const auto [params, vocab] = pesco::load_checkpoint(checkpoint_path);
  std::cout << "version=1\n"
            << "V=" << params.vocab_size() << "\n"
            << "D=" << params.embedding_dim() << "\n"
            << "vocab_entries=" << vocab.size() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"zero-shot text classification via prompt matching and self-training"};
  app.require_subcommand(1);

  PredictArgs predict_args;
  auto* predict = app.add_subcommand("predict", "zero-shot predictions for a dataset");
  predict->add_option("--config", predict_args.config_path, "run configuration")->required();
  predict->add_option("--checkpoint", predict_args.checkpoint_path, "encoder checkpoint");
  predict->add_option("--remote", predict_args.remote_endpoint, "remote encoder host:port");
  predict->add_option("--input", predict_args.input_path, "dataset path override");
  predict->add_option("--out", predict_args.out_path, "output predictions file")->required();

  SelftrainArgs selftrain_args;
  auto* selftrain = app.add_subcommand("selftrain", "run the self-training loop");
  selftrain->add_option("--config", selftrain_args.config_path, "run configuration")->required();
  selftrain->add_option("--out-dir", selftrain_args.out_dir, "output directory")->required();

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "score predictions against gold labels");
  eval->add_option("--pred", eval_args.pred_path, "predictions file")->required();
  eval->add_option("--gold", eval_args.gold_path, "gold dataset")->required();
  eval->add_option("--format", eval_args.format, "gold dataset format (csv|jsonl)");
  eval->add_option("--labels", eval_args.labels_path, "label descriptions file");

  GenSynthArgs gen_args;
  auto* gen = app.add_subcommand("gen-synth", "write a synthetic dataset");
  gen->add_option("--config", gen_args.config_path, "run configuration")->required();
  gen->add_option("--out-dir", gen_args.out_dir, "output directory")->required();

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "print checkpoint header fields");
  inspect->add_option("--checkpoint", inspect_path, "encoder checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  try {
    if (predict->parsed()) return run_predict(predict_args);
    if (selftrain->parsed()) return run_selftrain(selftrain_args);
    if (eval->parsed()) return run_eval(eval_args);
    if (gen->parsed()) return run_gen_synth(gen_args);
    if (inspect->parsed()) return run_inspect(inspect_path);
  } catch (const pesco::NumericError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const pesco::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
