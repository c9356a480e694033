#include "cslid/cli.hpp"

#include <filesystem>
#include <fstream>

#include "CLI11.hpp"

#include "cslid/corpus.hpp"
#include "cslid/features.hpp"
#include "cslid/model.hpp"
#include "cslid/trainer.hpp"

namespace cslid {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw Error("failed writing '" + path.string() + "'");
}

// Writes to `path`, or to `out` when the path is empty or "-".
void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_text(path, text);
  }
}

struct GenOpts {
  GeneratorConfig cfg;
  std::string out;
};

struct TrainOpts {
  TrainConfig cfg;
  std::string strategy = "separate-ft";
  std::string encoder = "recurrent";
  int hidden = 32;
  int depth = 2;
  bool no_augment = false;
  std::string corpus;
  std::string out;
  std::string log;
};

struct EvalOpts {
  std::string model;
  std::string corpus;
  std::string split = "test";
  std::string json;
  int workers = 1;
};

struct ProbeOpts {
  ProbeConfig cfg;
  std::string head = "fc";
  int hidden = 32;
  std::string corpus;
  std::string out;
};

struct ExportOpts {
  std::string model;
  std::string corpus;
  std::string utt;
  int top_k = 3;
  std::string out;
};

struct LayerOpts {
  std::string model;
  std::string corpus;
  std::string branch = "ctc";
  std::string split = "train";
  std::string out;
};

void add_gen(CLI::App& app, GenOpts& o) {
  auto& c = o.cfg;
  app.add_option("--out", o.out, "Output corpus directory")->required();
  app.add_option("--utts", c.utterances, "Number of utterances")->capture_default_str();
  app.add_option("--cs-prob", c.cs_probability, "Probability that an utterance code-switches")->capture_default_str();
  app.add_option("--mono-a-share", c.mono_a_share, "Share of monolingual utterances in LangA")->capture_default_str();
  app.add_option("--words-min", c.words_min, "Minimum words per utterance")->capture_default_str();
  app.add_option("--words-max", c.words_max, "Maximum words per utterance")->capture_default_str();
  app.add_option("--vocab-a", c.vocab_a, "LangA vocabulary size")->capture_default_str();
  app.add_option("--vocab-b", c.vocab_b, "LangB vocabulary size")->capture_default_str();
  app.add_option("--layers", c.layer_count, "Number of feature layers")->capture_default_str();
  app.add_option("--dim", c.feature_dim, "Feature dimension per layer")->capture_default_str();
  app.add_option("--rate", c.frame_rate_hz, "Frame rate in Hz")->capture_default_str();
  app.add_option("--signal-layer", c.signal_layer,
                 "Only this layer carries the token signal (-1: all layers)")
      ->capture_default_str();
  app.add_option("--frame-noise", c.frame_noise, "Per-frame noise scale")->capture_default_str();
  app.add_option("--layer-noise", c.layer_noise, "Extra noise on shallow layers")->capture_default_str();
  app.add_option("--seed", c.seed, "Random seed")->capture_default_str();
}

void add_train(CLI::App& app, TrainOpts& o) {
  auto& c = o.cfg;
  app.add_option("--strategy", o.strategy, "baseline | baseline-lid | ctc | separate | joint | separate-ft")
      ->capture_default_str();
  app.add_option("--lambda", c.lambda, "Weight of the LID cross-entropy in the joint loss")->capture_default_str();
  app.add_option("--corpus", o.corpus, "Corpus directory or manifest")->required();
  app.add_option("--out", o.out, "Checkpoint path")->required();
  app.add_option("--log", o.log, "Training log path (default: checkpoint path with .log.jsonl)");
  app.add_option("--epochs", c.epochs, "Epochs per training phase")->capture_default_str();
  app.add_option("--ft-epochs", c.ft_epochs, "Joint fine-tuning epochs")->capture_default_str();
  app.add_option("--lr", c.learning_rate, "Adam learning rate")->capture_default_str();
  app.add_option("--ft-lr-scale", c.ft_lr_scale, "Learning-rate factor for fine-tuning")->capture_default_str();
  app.add_option("--batch", c.batch_size, "Utterances per batch")->capture_default_str();
  app.add_option("--encoder", o.encoder, "CTC encoder: recurrent | feedforward")->capture_default_str();
  app.add_option("--hidden", o.hidden, "Encoder hidden size")->capture_default_str();
  app.add_option("--depth", o.depth, "CTC encoder depth")->capture_default_str();
  app.add_option("--feature-layer", c.feature_layer, "Input layer of the single-layer baselines")
      ->capture_default_str();
  app.add_flag("--no-spec-augment", o.no_augment, "Disable SpecAugment masking");
  app.add_option("--seed", c.seed, "Random seed")->capture_default_str();
  app.add_option("--workers", c.workers, "Parallel workers")->capture_default_str();
  app.add_flag("--timing", c.record_wall_time, "Record wall-clock time per epoch in the log");
}

void add_eval(CLI::App& app, EvalOpts& o) {
  app.add_option("--model", o.model, "Checkpoint path")->required();
  app.add_option("--corpus", o.corpus, "Corpus directory or manifest")->required();
  app.add_option("--split", o.split, "train | val | test")->capture_default_str();
  app.add_option("--json", o.json, "Also write a JSON report here");
  app.add_option("--workers", o.workers, "Parallel workers")->capture_default_str();
}

void add_probe(CLI::App& app, ProbeOpts& o) {
  auto& c = o.cfg;
  app.add_option("--corpus", o.corpus, "Corpus directory or manifest")->required();
  app.add_option("--head", o.head, "fc | recurrent")->capture_default_str();
  app.add_option("--hidden", o.hidden, "Recurrent head hidden size")->capture_default_str();
  app.add_option("--epochs", c.epochs, "Training epochs")->capture_default_str();
  app.add_option("--lr", c.learning_rate, "Adam learning rate")->capture_default_str();
  app.add_option("--batch", c.batch_size, "Utterances per batch")->capture_default_str();
  app.add_option("--seed", c.seed, "Random seed")->capture_default_str();
  app.add_option("--workers", c.workers, "Parallel workers")->capture_default_str();
  app.add_option("--out", o.out, "CSV path (default: stdout)");
}

void add_export(CLI::App& app, ExportOpts& o) {
  app.add_option("--model", o.model, "Checkpoint path")->required();
  app.add_option("--corpus", o.corpus, "Corpus directory or manifest")->required();
  app.add_option("--utt", o.utt, "Utterance id")->required();
  app.add_option("--top-k", o.top_k, "Token posteriors per frame")->capture_default_str();
  app.add_option("--out", o.out, "CSV path (default: stdout)");
}

void add_layers(CLI::App& app, LayerOpts& o) {
  app.add_option("--model", o.model, "Checkpoint path")->required();
  app.add_option("--corpus", o.corpus, "Corpus directory or manifest")->required();
  app.add_option("--branch", o.branch, "ctc | lid")->capture_default_str();
  app.add_option("--split", o.split, "Split used for the mean layer norms")->capture_default_str();
  app.add_option("--out", o.out, "CSV path (default: stdout)");
}

int do_gen(const GenOpts& o, std::ostream& out) {
  const Corpus corpus = generate_synthetic_corpus(o.cfg);
  const fs::path manifest = save_corpus(corpus, o.out);
  out << "wrote " << corpus.utterances.size() << " utterances to " << manifest.string() << "\n";
  return 0;
}

int do_train(TrainOpts o, std::ostream& out, std::ostream& err) {
  auto& c = o.cfg;
  c.strategy = parse_strategy(o.strategy);
  c.spec_augment = !o.no_augment;
  c.ctc_encoder.kind = parse_encoder_kind(o.encoder);
  c.ctc_encoder.hidden_dim = o.hidden;
  c.ctc_encoder.depth = o.depth;
  c.lid_encoder.hidden_dim = o.hidden;
  CSLID_CHECK(o.hidden >= 1 && o.depth >= 1, "hidden size and depth must be >= 1");
  CSLID_CHECK(c.workers >= 1, "workers must be >= 1");
  const Corpus corpus = load_corpus(o.corpus);
  fs::path log_path = o.log;
  if (log_path.empty()) log_path = fs::path(o.out).replace_extension(".log.jsonl");

  try {
    TrainResult result = train(c, corpus);
    result.model.save(o.out);
    write_text(log_path, training_log_jsonl(result.log));
    int skipped = 0;
    for (const auto& e : result.log) skipped += e.skipped;
    if (skipped > 0) err << "warning: skipped " << skipped << " infeasible utterance passes\n";
    out << "wrote " << o.out << " and " << log_path.string() << "\n";
    return 0;
  } catch (const TrainingDiverged& e) {
    e.last_good().save(o.out);
    err << "error: " << e.what() << "; last good checkpoint saved to " << o.out << "\n";
    return 2;
  }
}

int do_eval(const EvalOpts& o, std::ostream& out) {
  CSLID_CHECK(o.workers >= 1, "workers must be >= 1");
  const JointModel model = JointModel::load(o.model);
  const Corpus corpus = load_corpus(o.corpus);
  const Split split = parse_split(o.split);
  const Evaluation eval = evaluate(model, corpus, split, o.workers);
  out << format_ter_table({{o.split, eval.report}});
  if (eval.lid) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "lid frame accuracy %.1f\n", 100.0 * eval.lid->accuracy());
    out << buf;
  }
  if (!o.json.empty()) write_text(o.json, evaluation_json(eval, o.split, std::string(to_string(model.config().strategy))));
  return 0;
}

int do_probe(ProbeOpts o, std::ostream& out) {
  o.cfg.head = parse_lid_head(o.head);
  o.cfg.recurrent.hidden_dim = o.hidden;
  CSLID_CHECK(o.hidden >= 1, "hidden size must be >= 1");
  CSLID_CHECK(o.cfg.workers >= 1, "workers must be >= 1");
  CSLID_CHECK(o.cfg.learning_rate > 0.0, "learning rate must be positive");
  const Corpus corpus = load_corpus(o.corpus);
  const ProbeResult result = probe_lid(o.cfg, corpus);
  emit(o.out, probe_report_csv(result.rows), out);
  return 0;
}

int do_export(const ExportOpts& o, std::ostream& out) {
  const JointModel model = JointModel::load(o.model);
  const Corpus corpus = load_corpus(o.corpus);
  emit(o.out, export_posteriors(model, corpus, o.utt, o.top_k), out);
  return 0;
}

int do_layers(const LayerOpts& o, std::ostream& out, std::ostream& err) {
  const JointModel model = JointModel::load(o.model);
  const Corpus corpus = load_corpus(o.corpus);
  CSLID_CHECK(o.branch == "ctc" || o.branch == "lid", "branch must be 'ctc' or 'lid'");
  const auto w = o.branch == "ctc" ? model.ctc_layer_weights() : model.lid_layer_weights();
  if (!w) throw ValidationError("the " + o.branch + " branch of this model does not use a weighted layer stack");
  const auto utts = corpus.split(parse_split(o.split));
  CSLID_CHECK(!utts.empty(), "split '" + o.split + "' is empty");
  emit(o.out, layer_importance_csv(report_layer_importance(*w, utts, model.norm_stats())), out);
  err << "note: scores are rescaled to sum to 1\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Code-switching speech recognition with frame-wise language identification"};
  app.name("cslid");
  app.require_subcommand(1);

  GenOpts gen;
  TrainOpts tr;
  EvalOpts ev;
  ProbeOpts pr;
  ExportOpts ex;
  LayerOpts ly;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "Generate a synthetic code-switching corpus");
  auto* train_cmd = app.add_subcommand("train", "Train a model with one strategy");
  auto* eval_cmd = app.add_subcommand("eval", "Token error rates per language on one split");
  auto* probe_cmd = app.add_subcommand("probe-lid", "Frame-wise LID probe on the weighted layer stack");
  auto* export_cmd = app.add_subcommand("export-posteriors", "Per-frame token and LID posteriors as CSV");
  auto* layers_cmd = app.add_subcommand("layer-weights", "Layer importance scores as CSV");
  add_gen(*gen_cmd, gen);
  add_train(*train_cmd, tr);
  add_eval(*eval_cmd, ev);
  add_probe(*probe_cmd, pr);
  add_export(*export_cmd, ex);
  add_layers(*layers_cmd, ly);

  std::vector<std::string> argv_store;
  argv_store.reserve(args.size() + 1);
  argv_store.push_back("cslid");
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen_cmd) return do_gen(gen, out);
    if (*train_cmd) return do_train(tr, out, err);
    if (*eval_cmd) return do_eval(ev, out);
    if (*probe_cmd) return do_probe(pr, out);
    if (*export_cmd) return do_export(ex, out);
    if (*layers_cmd) return do_layers(ly, out, err);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace cslid
