// wmocr: train models, build corpora, run attacks and defenses, evaluate.
//
// Directory layouts:
//   corpus dir   corpus.jsonl, NNNN.pgm, NNNN.f64
//   attack dir   run.json, corpus/, adversarial/<run>/NNNN.{pgm,f64,mask.pgm,json},
//                report.csv (defense "none")
//   defend dir   same as an attack dir; run.json records the defense applied

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "wmocr/harness.hpp"
#include "wmocr/train.hpp"
#include "wmocr/weights_io.hpp"

namespace fs = std::filesystem;
using namespace wmocr;

namespace {

KeyValues load_config(const std::string& path) {
  return path.empty() ? KeyValues{} : KeyValues::load(path);
}

void warn_unused(const KeyValues& kv, const std::string& path) {
  for (const auto& k : kv.unused_keys()) {
    std::fprintf(stderr, "warning: %s: unknown key '%s' ignored\n", path.c_str(), k.c_str());
  }
}

CorpusSpec corpus_spec_from(const KeyValues& kv) {
  CorpusSpec s;
  s.seed = kv.get_u64("seed", s.seed);
  s.count = static_cast<std::size_t>(kv.get_int("count", static_cast<long long>(s.count)));
  s.pair_threshold = kv.get_double("pair_threshold", s.pair_threshold);
  s.templates = kv.get_list("templates", s.templates);
  s.deletion_fraction = kv.get_double("deletion_fraction", s.deletion_fraction);
  s.insertion_fraction = kv.get_double("insertion_fraction", s.insertion_fraction);
  return s;
}

// Everything a later stage needs to reinterpret an attack directory.
struct RunInfo {
  fs::path weights;
  std::string defense = "none";
  std::uint64_t seed = 1;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
};

void write_run_info(const fs::path& dir, const RunInfo& info) {
  nlohmann::ordered_json j = {{"weights", info.weights.string()},
                              {"defense", info.defense},
                              {"seed", info.seed},
                              {"config", info.config}};
  write_text(dir / "run.json", j.dump(2) + "\n");
}

RunInfo read_run_info(const fs::path& dir) {
  const auto j = nlohmann::json::parse(read_text(dir / "run.json"));
  RunInfo info;
  info.weights = j.at("weights").get<std::string>();
  info.defense = j.at("defense").get<std::string>();
  info.seed = j.at("seed").get<std::uint64_t>();
  info.config = j.at("config");
  return info;
}

struct AttackDir {
  RunInfo info;
  ModelWeights weights;
  std::vector<CorpusItem> corpus;
  std::vector<VariantRun> runs;
};

AttackDir open_attack_dir(const fs::path& dir) {
  AttackDir d;
  d.info = read_run_info(dir);
  d.weights = load_weights(d.info.weights);
  d.corpus = read_corpus(dir / "corpus");
  d.runs = read_adversarial(dir, d.corpus);
  return d;
}

// Rows for the images as stored, labelled with the directory's defense.
std::vector<ReportRow> stored_rows(const AttackDir& d) {
  std::vector<ReportRow> rows;
  for (const auto& run : d.runs) {
    std::vector<std::string> preds;
    std::vector<const Image*> imgs;
    for (const auto& rec : run.records) {
      preds.push_back(rec.prediction);
      imgs.push_back(&rec.adversarial);
    }
    rows.push_back(summarize(run.name, d.info.defense, d.corpus, run.records, preds, imgs));
  }
  return rows;
}

void print_rows(const std::vector<ReportRow>& rows) { std::cout << report_csv(rows); }

int cmd_train(const std::string& config, const std::string& out) {
  const KeyValues kv = load_config(config);
  const TrainSpec spec = TrainSpec::from_kv(kv);
  warn_unused(kv, config);
  const auto t0 = std::chrono::steady_clock::now();
  const ModelWeights w = train(spec, [&](const EpochLog& e) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("epoch %d  lr %.5f  loss %.4f  val %.4f  %.0fs\n", e.epoch, e.learning_rate,
                e.mean_loss, e.val_accuracy, s);
    std::fflush(stdout);
  });
  save_weights(out, w);
  std::printf("wrote %s (val accuracy %.4f after %d epochs)\n", out.c_str(), w.val_accuracy,
              w.epochs);
  return w.val_accuracy >= spec.params.target_accuracy ? 0 : 3;
}

int cmd_dataset(const std::string& config, const std::string& out) {
  const KeyValues kv = load_config(config);
  const TrainSpec spec = TrainSpec::from_kv(kv);
  warn_unused(kv, config);
  const Dataset ds = spec.dataset();
  write_dataset(ds, FontAtlas(), out);
  std::printf("wrote %zu lines to %s\n", ds.items.size(), out.c_str());
  return 0;
}

int cmd_corpus(const std::string& weights, const std::string& config, const std::string& out) {
  const KeyValues kv = load_config(config);
  const CorpusSpec spec = corpus_spec_from(kv);
  // filter=false keeps lines the model misreads (useful for smoke tests).
  const bool filter = kv.get_bool("filter", true);
  warn_unused(kv, config);
  const ModelWeights w = load_weights(weights);
  const auto corpus = build_corpus(spec, w.charset, FontAtlas(), filter ? &w : nullptr);
  write_corpus(out, corpus);
  std::printf("wrote %zu items to %s\n", corpus.size(), out.c_str());
  return 0;
}

int cmd_attack(const std::string& weights, const std::vector<std::string>& variants,
               const std::string& config, const std::string& corpus_dir, const std::string& out,
               bool timing) {
  KeyValues kv = load_config(config);
  const AttackConfig cfg = AttackConfig::from_kv(kv);
  const std::uint64_t seed = kv.get_u64("seed", 1);
  warn_unused(kv, config);
  const ModelWeights w = load_weights(weights);
  const auto corpus = read_corpus(corpus_dir);
  if (corpus.empty()) throw std::runtime_error("corpus " + corpus_dir + " is empty");

  std::vector<VariantRun> runs;
  for (const auto& v : variants) runs.push_back(evaluate_variant(w, corpus, v, cfg));

  RunInfo info;
  info.weights = fs::absolute(weights);
  info.seed = seed;
  for (const auto& [k, v] : kv.values()) info.config[k] = v;
  fs::create_directories(out);
  write_run_info(out, info);
  write_corpus(fs::path(out) / "corpus", corpus);
  write_adversarial(out, runs, corpus);
  std::vector<ReportRow> rows;
  for (const auto& run : runs) rows.push_back(summarize_run(run, corpus));
  write_report(out, rows, timing);
  print_rows(rows);
  return 0;
}

int cmd_defend(const std::string& in, const std::string& defense, const std::string& out) {
  AttackDir d = open_attack_dir(in);
  if (d.info.defense != "none") {
    throw std::invalid_argument(in + " already has defense " + d.info.defense + " applied");
  }
  const Defense def = parse_defense(defense);
  std::vector<VariantRun> kept;
  for (auto& run : d.runs) {
    if (!defense_applies(def, run)) {
      std::fprintf(stderr, "skipping %s: %s needs a restricted mask\n", run.name.c_str(),
                   def.label.c_str());
      continue;
    }
    for (auto& rec : run.records) {
      rec.adversarial = apply_defense(def, rec.adversarial, rec.mask, d.info.seed ^ rec.item);
      rec.prediction = recognize(d.weights, rec.adversarial);
      rec.quality = quality(d.corpus[rec.item].image, rec.adversarial);
    }
    kept.push_back(std::move(run));
  }
  d.runs = std::move(kept);
  d.info.defense = def.label;
  fs::create_directories(out);
  write_run_info(out, d.info);
  write_corpus(fs::path(out) / "corpus", d.corpus);
  write_adversarial(out, d.runs, d.corpus);
  const auto rows = stored_rows(d);
  write_report(out, rows);
  print_rows(rows);
  return 0;
}

int cmd_eval(const std::string& in, const std::string& transfer, const std::string& report,
             bool timing) {
  const AttackDir d = open_attack_dir(in);
  const auto rows = stored_rows(d);
  write_report(report, rows, timing);
  print_rows(rows);
  if (!transfer.empty()) {
    const ModelWeights t = load_weights(transfer);
    std::vector<ReportRow> trows;
    for (const auto& run : d.runs) trows.push_back(evaluate_transfer(d.weights, t, d.corpus, run));
    write_report(fs::path(report) / "transfer", trows, timing);
    print_rows(trows);
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<std::vector<ReportRow>> parts;
  for (const auto& p : inputs) {
    const fs::path path = fs::is_directory(p) ? fs::path(p) / "report.csv" : fs::path(p);
    parts.push_back(parse_report_csv(read_text(path)));
  }
  const auto merged = merge_reports(parts);
  if (out.empty()) {
    print_rows(merged);
  } else {
    write_text(out, report_csv(merged));
  }
  return 0;
}

int cmd_run(const std::string& config, const std::string& out) {
  const KeyValues kv = load_config(config);
  ExperimentSpec spec = ExperimentSpec::from_kv(kv);
  warn_unused(kv, config);
  if (!out.empty()) spec.out_dir = out;
  const ModelWeights source = load_weights(spec.source_weights);
  std::optional<ModelWeights> transfer;
  if (!spec.transfer_weights.empty()) transfer = load_weights(spec.transfer_weights);
  const auto res = run_experiment(spec, source, transfer ? &*transfer : nullptr);
  print_rows(res.rows);
  if (transfer) print_rows(res.transfer_rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Watermark-disguised adversarial attacks on a micro OCR model"};
  app.require_subcommand(1);

  std::string config, out, weights, corpus, in, defense, transfer, report_dir;
  std::vector<std::string> variants, merge;
  bool timing = false;

  auto* train_cmd = app.add_subcommand("train", "Train a recognizer from a key=value config");
  train_cmd->add_option("--config", config, "training config")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out, "weights file to write")->required();

  auto* dataset_cmd = app.add_subcommand("dataset", "Write the training dataset as PGM + manifest");
  dataset_cmd->add_option("--config", config, "training config")->check(CLI::ExistingFile);
  dataset_cmd->add_option("--out", out, "output directory")->required();

  auto* corpus_cmd = app.add_subcommand("corpus", "Build an attack corpus the model reads correctly");
  corpus_cmd->add_option("--weights", weights, "model weights")->required()->check(CLI::ExistingFile);
  corpus_cmd->add_option("--config", config, "corpus config")->check(CLI::ExistingFile);
  corpus_cmd->add_option("--out", out, "output directory")->required();

  auto* attack_cmd = app.add_subcommand("attack", "Attack every corpus item with one or more variants");
  attack_cmd->add_option("--weights", weights, "model weights")->required()->check(CLI::ExistingFile);
  attack_cmd->add_option("--variant", variants, "FGSM, BIM, MIM, WM, WM_INIT, WM_NEG, WM_EDGE or WM0")
      ->required()
      ->delimiter(',');
  attack_cmd->add_option("--config", config, "attack config")->check(CLI::ExistingFile);
  attack_cmd->add_option("--corpus", corpus, "corpus directory")->required()->check(CLI::ExistingDirectory);
  attack_cmd->add_option("--out", out, "output directory")->required();
  attack_cmd->add_flag("--timing", timing, "write measured wall times into report.csv");

  auto* defend_cmd = app.add_subcommand("defend", "Apply a preprocessing defense to attack outputs");
  defend_cmd->add_option("--in", in, "attack directory")->required()->check(CLI::ExistingDirectory);
  defend_cmd->add_option("--defense", defense, "e.g. MedianBlur@3x3, SaltPepper@2%, Inpaint@2")->required();
  defend_cmd->add_option("--out", out, "output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "Score an attack or defense directory");
  eval_cmd->add_option("--in", in, "attack or defense directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--transfer", transfer, "second model for transfer rows")->check(CLI::ExistingFile);
  eval_cmd->add_option("--report", report_dir, "report directory")->required();
  eval_cmd->add_flag("--timing", timing, "write measured wall times into report.csv");

  auto* report_cmd = app.add_subcommand("report", "Merge report CSVs");
  report_cmd->add_option("--merge", merge, "report.csv files or report directories")
      ->required()
      ->expected(1, -1);
  report_cmd->add_option("--out", out, "merged CSV (stdout when omitted)");

  auto* run_cmd = app.add_subcommand("run", "Full experiment: corpus, attacks, defenses, transfer");
  run_cmd->add_option("--config", config, "experiment config")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--out", out, "output directory (overrides the config's out key)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(config, out);
    if (*dataset_cmd) return cmd_dataset(config, out);
    if (*corpus_cmd) return cmd_corpus(weights, config, out);
    if (*attack_cmd) return cmd_attack(weights, variants, config, corpus, out, timing);
    if (*defend_cmd) return cmd_defend(in, defense, out);
    if (*eval_cmd) return cmd_eval(in, transfer, report_dir, timing);
    if (*report_cmd) return cmd_report(merge, out);
    if (*run_cmd) return cmd_run(config, out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
