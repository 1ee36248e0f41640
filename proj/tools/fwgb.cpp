// fwgb: command-line driver for the confusing-charge classifier pipeline.

#include <cctype>
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fwgb/common.hpp"
#include "fwgb/corpus.hpp"
#include "fwgb/eval.hpp"
#include "fwgb/kgraph.hpp"
#include "fwgb/model.hpp"
#include "fwgb/synthetic.hpp"
#include "fwgb/train.hpp"
#include "fwgb/wordbag.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace fwgb;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::uint64_t default_seed() {
  if (const char* env = std::getenv("FWGB_SEED")) {
    try {
      std::size_t used = 0;
      auto v = std::stoull(env, &used);
      if (used == std::string_view(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw DataError(std::string("FWGB_SEED is not an unsigned integer: '") + env + "'");
  }
  return 7;
}

std::string utc_timestamp() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// ---------------------------------------------------------------------------
// Run manifests and the hash chain

ordered_json read_manifest(const fs::path& dir) {
  auto path = dir / "manifest.json";
  if (!fs::exists(path)) return ordered_json::object();
  try {
    return ordered_json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": unreadable manifest: " + e.what());
  }
}

// Fails when `file` is listed as an output in its directory's manifest under a
// different hash than it has now.
void verify_chain(const fs::path& file, const std::string& hash) {
  auto dir = file.parent_path().empty() ? fs::path(".") : file.parent_path();
  auto manifest = read_manifest(dir);
  if (!manifest.contains("stages")) return;
  const auto name = file.filename().string();
  for (const auto& [stage, entry] : manifest["stages"].items()) {
    if (!entry.contains("outputs") || !entry["outputs"].contains(name)) continue;
    const auto recorded = entry["outputs"][name].get<std::string>();
    if (recorded != hash) {
      throw DataError("hash-chain mismatch: " + file.string() + " has sha256 " + hash.substr(0, 16) +
                      "... but stage '" + stage + "' recorded " + recorded.substr(0, 16) + "...");
    }
  }
}

class Stage {
 public:
  Stage(fs::path dir, std::string key, std::string subcommand)
      : dir_(std::move(dir)), key_(std::move(key)), started_(std::chrono::steady_clock::now()) {
    entry_["subcommand"] = std::move(subcommand);
    entry_["version"] = kVersion;
    entry_["status"] = "running";
    entry_["timestamp"] = utc_timestamp();
    entry_["config"] = ordered_json::object();
    entry_["inputs"] = ordered_json::object();
    entry_["outputs"] = ordered_json::object();
  }

  ordered_json& config() { return entry_["config"]; }
  const fs::path& dir() const { return dir_; }

  // Hashes and chain-checks an input file; returns its contents.
  std::string input(const fs::path& path) {
    auto bytes = read_file(path);
    auto hash = sha256_hex(bytes);
    verify_chain(path, hash);
    entry_["inputs"][path.string()] = hash;
    return bytes;
  }

  void begin() {
    fs::create_directories(dir_);
    write();
  }

  void output(const std::string& name, std::string_view contents) {
    auto path = dir_ / name;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file_atomic(path, contents);
    entry_["outputs"][name] = sha256_hex(contents);
  }

  // For files written by library code.
  void record_output(const std::string& name) { entry_["outputs"][name] = file_sha256(dir_ / name); }

  void finish() {
    entry_["status"] = "complete";
    entry_["timing"] = {{"wall_seconds",
                         std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count()}};
    write();
  }

 private:
  void write() {
    auto manifest = read_manifest(dir_);
    manifest["tool"] = "fwgb";
    manifest["version"] = kVersion;
    manifest["stages"][key_] = entry_;
    write_file_atomic(dir_ / "manifest.json", manifest.dump(2) + "\n");
  }

  fs::path dir_;
  std::string key_;
  ordered_json entry_;
  std::chrono::steady_clock::time_point started_;
};

std::vector<corpus::LabeledDocument> read_docs(Stage& stage, const fs::path& path) {
  return corpus::parse_dataset(stage.input(path), path.string());
}

// `--data` accepts a split directory or a single JSON-lines file.
fs::path data_file(const fs::path& data, const std::string& default_name) {
  return fs::is_directory(data) ? data / default_name : data;
}

corpus::Splits read_splits(Stage& stage, const fs::path& dir, bool need_test) {
  if (!fs::is_directory(dir)) throw DataError(dir.string() + ": expected a split directory");
  corpus::Splits s;
  s.train = read_docs(stage, dir / "train.jsonl");
  s.valid = read_docs(stage, dir / "valid.jsonl");
  if (need_test) s.balanced_test = read_docs(stage, dir / "test.jsonl");
  return s;
}

wordbag::WordBag read_bag(Stage& stage, const fs::path& path) {
  try {
    return wordbag::word_bag_from_json(nlohmann::json::parse(stage.input(path)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

kgraph::ChargeGraph read_graph(Stage* stage, const fs::path& path) {
  std::string bytes = stage ? stage->input(path) : read_file(path);
  try {
    return kgraph::load_graph_json(nlohmann::json::parse(bytes));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

model::Checkpoint read_checkpoint(Stage& stage, const fs::path& path) {
  try {
    return model::checkpoint_from_json(nlohmann::json::parse(stage.input(path)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Training flags shared by train, ablate and sweep-lambda

struct TrainFlags {
  std::string preset = "desk";
  std::string config_file;
  train::TrainConfig v;
  std::string optimizer = "adam";
  std::string mode = "full";
  std::string init_emb;
  std::map<std::string, CLI::Option*> opts;

  void add(CLI::App* app, bool with_mode) {
    app->add_option("--preset", preset, "Model scale: desk (32/32, lr 1e-2) or paper (300/128, lr 1e-3)")
        ->check(CLI::IsMember({"desk", "paper"}))
        ->capture_default_str();
    app->add_option("--config", config_file, "JSON training config; flags override its keys")
        ;
    opts["epochs"] = app->add_option("--epochs", v.epochs, "Maximum epochs");
    opts["batch_size"] = app->add_option("--batch-size", v.batch_size, "Mini-batch size");
    opts["learning_rate"] = app->add_option("--lr", v.learning_rate, "Learning rate");
    opts["optimizer"] = app->add_option("--optimizer", optimizer, "adam or sgd");
    opts["clip_norm"] = app->add_option("--clip-norm", v.clip_norm, "Global gradient-norm clip");
    opts["lambda"] = app->add_option("--lambda", v.lambda, "Supervision-loss weight");
    opts["seed"] = app->add_option("--seed", v.seed, "Random seed (fallback: FWGB_SEED, then 7)");
    opts["patience"] = app->add_option("--patience", v.patience, "Early-stopping patience in epochs");
    if (with_mode) opts["mode"] = app->add_option("--mode", mode, "full, no_supervision, single_attention, no_kg");
    opts["threads"] = app->add_option("--threads", v.threads, "Worker threads per batch (1 is bit-reproducible)");
    opts["embed_dim"] = app->add_option("--embed-dim", v.embed_dim, "Token embedding size");
    opts["hidden_dim"] = app->add_option("--hidden-dim", v.hidden_dim, "LSTM hidden size per direction");
    opts["attention_dim"] = app->add_option("--attention-dim", v.attention_dim, "Attention size (0: 2 x hidden)");
    opts["max_len"] = app->add_option("--max-len", v.max_len, "Token limit per document");
    opts["min_freq"] = app->add_option("--min-freq", v.min_freq, "Minimum training frequency for the vocabulary");
    app->add_option("--init-emb", init_emb, "Word vectors (text format) to initialise the embedding table")
        ;
  }

  bool given(const std::string& key) const {
    auto it = opts.find(key);
    return it != opts.end() && it->second->count() > 0;
  }

  train::TrainConfig resolve(Stage& stage) const {
    train::TrainConfig c;
    c.seed = default_seed();
    if (preset == "desk") c = synthetic::desk_config(c.seed);
    if (!config_file.empty()) {
      try {
        c = train::apply_json(c, nlohmann::json::parse(stage.input(config_file)));
      } catch (const nlohmann::json::parse_error& e) {
        throw DataError(config_file + ": " + e.what());
      }
    }
    if (given("epochs")) c.epochs = v.epochs;
    if (given("batch_size")) c.batch_size = v.batch_size;
    if (given("learning_rate")) c.learning_rate = v.learning_rate;
    if (given("optimizer")) c.optimizer = train::parse_optimizer(optimizer);
    if (given("clip_norm")) c.clip_norm = v.clip_norm;
    if (given("lambda")) c.lambda = v.lambda;
    if (given("seed")) c.seed = v.seed;
    if (given("patience")) c.patience = v.patience;
    if (given("mode")) c.mode = model::parse_mode(mode);
    if (given("threads")) c.threads = v.threads;
    if (given("embed_dim")) c.embed_dim = v.embed_dim;
    if (given("hidden_dim")) c.hidden_dim = v.hidden_dim;
    if (given("attention_dim")) c.attention_dim = v.attention_dim;
    if (given("max_len")) c.max_len = v.max_len;
    if (given("min_freq")) c.min_freq = v.min_freq;
    c.validate();
    return c;
  }

  std::optional<wordbag::VectorTable> embeddings(Stage& stage) const {
    if (init_emb.empty()) return std::nullopt;
    return wordbag::parse_embeddings(stage.input(init_emb), init_emb);
  }
};

ordered_json config_echo(const TrainFlags& f, const train::TrainConfig& c) {
  auto j = train::to_json(c);
  j["preset"] = f.preset;
  if (!f.config_file.empty()) j["config_file"] = f.config_file;
  if (!f.init_emb.empty()) j["init_emb"] = f.init_emb;
  return j;
}

// ---------------------------------------------------------------------------
// Subcommands

struct SynthCmd {
  corpus::SyntheticSpec spec;
  std::size_t train_per_class = 50;
  std::size_t test_per_class = 10;
  std::size_t valid_per_class = 6;
  std::size_t emb_dim = 32;
  std::optional<std::uint64_t> seed;
  std::string out;

  void add(CLI::App* app) {
    app->add_option("--classes", spec.classes, "Number of classes")->capture_default_str();
    app->add_option("--docs-per-class", train_per_class, "Training documents per class")->capture_default_str();
    app->add_option("--test-per-class", test_per_class, "Balanced test documents per class")->capture_default_str();
    app->add_option("--valid-per-class", valid_per_class, "Validation documents per class")->capture_default_str();
    app->add_option("--shared-vocab", spec.shared_vocab, "Filler vocabulary size")->capture_default_str();
    app->add_option("--markers-per-class", spec.markers_per_class, "Marker words per class")->capture_default_str();
    app->add_option("--min-length", spec.min_length, "Minimum filler tokens per document")->capture_default_str();
    app->add_option("--max-length", spec.max_length, "Maximum filler tokens per document")->capture_default_str();
    app->add_option("--max-markers", spec.max_markers_per_doc, "Maximum markers per document")->capture_default_str();
    app->add_option("--marker-prob", spec.injection_probability, "Probability a document gets markers")
        ->capture_default_str();
    app->add_option("--emb-dim", emb_dim, "Dimension of the emitted word vectors")->capture_default_str();
    app->add_option("--seed", seed, "Random seed (fallback: FWGB_SEED, then 7)");
    app->add_option("--out", out, "Output directory")->required();
  }

  int run() {
    const auto s = seed ? *seed : default_seed();
    spec.seed = s;
    Stage stage(out, "synth", "synth");
    auto& cfg = stage.config();
    cfg["classes"] = spec.classes;
    cfg["train_per_class"] = train_per_class;
    cfg["test_per_class"] = test_per_class;
    cfg["valid_per_class"] = valid_per_class;
    cfg["shared_vocab"] = spec.shared_vocab;
    cfg["markers_per_class"] = spec.markers_per_class;
    cfg["min_length"] = spec.min_length;
    cfg["max_length"] = spec.max_length;
    cfg["max_markers_per_doc"] = spec.max_markers_per_doc;
    cfg["marker_probability"] = spec.injection_probability;
    cfg["emb_dim"] = emb_dim;
    cfg["seed"] = s;
    stage.begin();

    auto e = synthetic::desk_experiment(spec, {train_per_class, test_per_class, valid_per_class, emb_dim});
    const auto& corpus = e.corpus;
    const auto& splits = e.splits;
    stage.output("corpus.jsonl", corpus::dump_dataset(corpus.docs));
    stage.output("train.jsonl", corpus::dump_dataset(splits.train));
    stage.output("valid.jsonl", corpus::dump_dataset(splits.valid));
    stage.output("test.jsonl", corpus::dump_dataset(splits.balanced_test));
    stage.output("split_manifest.json", corpus::split_manifest(splits).dump(2) + "\n");
    stage.output("markers.json", corpus::markers_json(corpus).dump(2) + "\n");
    stage.output("graph.json", kgraph::to_json(e.graph).dump(2) + "\n");
    stage.output("emb.txt", wordbag::dump_embeddings(e.embeddings));
    stage.finish();
    std::cout << "wrote " << corpus.docs.size() << " documents (" << splits.train.size() << " train, "
              << splits.valid.size() << " valid, " << splits.balanced_test.size() << " test) to " << out << "\n";
    return kExitOk;
  }
};

struct SplitCmd {
  std::string data;
  std::size_t test_per_class = 10;
  double valid_ratio = 0.1;
  std::optional<std::uint64_t> seed;
  std::string out;

  void add(CLI::App* app) {
    app->add_option("--data", data, "Labelled corpus (JSON lines)")->required();
    app->add_option("--test-per-class", test_per_class, "Balanced test documents per class")->capture_default_str();
    app->add_option("--valid-ratio", valid_ratio, "Share of the remainder held out for validation")
        ->capture_default_str();
    app->add_option("--seed", seed, "Random seed (fallback: FWGB_SEED, then 7)");
    app->add_option("--out", out, "Output directory")->required();
  }

  int run() {
    const auto s = seed ? *seed : default_seed();
    Stage stage(out, "split", "split");
    stage.config() = {{"test_per_class", test_per_class}, {"valid_ratio", valid_ratio}, {"seed", s}};
    auto docs = read_docs(stage, data);
    stage.begin();
    auto splits = corpus::split_dataset(docs, test_per_class, valid_ratio, s);
    stage.output("train.jsonl", corpus::dump_dataset(splits.train));
    stage.output("valid.jsonl", corpus::dump_dataset(splits.valid));
    stage.output("test.jsonl", corpus::dump_dataset(splits.balanced_test));
    stage.output("split_manifest.json", corpus::split_manifest(splits).dump(2) + "\n");
    stage.finish();
    return kExitOk;
  }
};

struct BuildWordBagCmd {
  std::string data, graph, emb, out;
  double eta = wordbag::kDefaultEta;
  std::size_t top_k = wordbag::kDefaultTopK;

  void add(CLI::App* app) {
    app->add_option("--data", data, "Training split (JSON lines) or a split directory")->required();
    app->add_option("--graph", graph, "Knowledge graph (JSON)")->required();
    app->add_option("--emb", emb, "Word vectors (text format)")->required();
    app->add_option("--eta", eta, "Similarity threshold")->capture_default_str();
    app->add_option("--top-k", top_k, "Candidates per charge")->capture_default_str();
    app->add_option("--out", out, "Output word-bag file")->required();
  }

  int run() {
    fs::path out_path(out);
    auto dir = out_path.parent_path().empty() ? fs::path(".") : out_path.parent_path();
    Stage stage(dir, "build-wordbag", "build-wordbag");
    stage.config() = {{"eta", eta}, {"top_k", top_k}, {"out", out_path.filename().string()}};
    auto docs = read_docs(stage, data_file(data, "train.jsonl"));
    auto g = read_graph(&stage, graph);
    auto table = wordbag::parse_embeddings(stage.input(emb), emb);
    stage.begin();
    auto bag = wordbag::build_word_bag(docs, g, table, eta, top_k);
    stage.output(out_path.filename().string(), wordbag::dump_word_bag(bag));
    stage.finish();
    for (const auto& w : bag.warnings) std::cerr << "warning: " << w << "\n";
    for (const auto& [label, words] : bag.bags) std::cout << label << ": " << words.size() << " keywords\n";
    return kExitOk;
  }
};

struct ValidateGraphCmd {
  std::string graph;

  void add(CLI::App* app) {
    app->add_option("--graph", graph, "Knowledge graph (JSON)")->required();
  }

  int run() {
    kgraph::ChargeGraph g;
    try {
      g = kgraph::parse_graph(nlohmann::json::parse(read_file(graph)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(graph + ": " + e.what());
    }
    auto problems = kgraph::validate_graph(g);
    if (!problems.empty()) {
      for (const auto& p : problems) std::cerr << graph << ": " << p << "\n";
      return kExitData;
    }
    for (const auto& charge : g.charges()) {
      auto es = kgraph::collect_elements(g, charge);
      std::cout << charge << ":";
      for (const auto& e : es.elements) std::cout << " [" << e << "]";
      std::cout << "\n";
    }
    std::cout << "graph ok (" << g.nodes.size() << " nodes, " << g.edges.size() << " edges)\n";
    return kExitOk;
  }
};

struct TrainCmd {
  std::string data, bag, out;
  TrainFlags flags;

  void add(CLI::App* app) {
    app->add_option("--data", data, "Split directory with train.jsonl and valid.jsonl")->required();
    app->add_option("--bag", bag, "Word-bag file")->required();
    app->add_option("--out", out, "Output directory")->required();
    flags.add(app, true);
  }

  int run() {
    Stage stage(out, "train", "train");
    auto cfg = flags.resolve(stage);
    stage.config() = config_echo(flags, cfg);
    auto splits = read_splits(stage, data, false);
    auto wb = read_bag(stage, bag);
    auto emb = flags.embeddings(stage);
    stage.begin();
    cfg.checkpoint_path = fs::path(out) / "checkpoint.json";
    auto result = train::train(splits, wb, cfg, emb ? &*emb : nullptr);
    model::save_checkpoint(*cfg.checkpoint_path, result.checkpoint);
    stage.record_output("checkpoint.json");
    stage.output("train_log.jsonl", train::train_log_jsonl(result.log));
    stage.finish();
    const auto& best = result.log.epochs.at(result.log.best_epoch - 1);
    std::cout << "best epoch " << result.log.best_epoch << " of " << result.log.epochs.size()
              << ", valid Ma-F " << eval::fixed3(best.valid_macro_f1) << "\n";
    return kExitOk;
  }
};

struct EvalCmd {
  std::string checkpoint, data, out, tag = "balanced";

  void add(CLI::App* app) {
    app->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    app->add_option("--data", data, "Test documents (JSON lines) or a split directory")->required();
    app->add_option("--tag", tag, "balanced (test.jsonl) or imbalanced (valid.jsonl)")
        ->check(CLI::IsMember({"balanced", "imbalanced"}))
        ->capture_default_str();
    app->add_option("--out", out, "Output directory")->required();
  }

  int run() {
    Stage stage(out, "eval:" + tag, "eval");
    stage.config() = {{"tag", tag}};
    auto ck = read_checkpoint(stage, checkpoint);
    auto docs = read_docs(stage, data_file(data, tag == "balanced" ? "test.jsonl" : "valid.jsonl"));
    stage.begin();
    std::vector<eval::DocumentPrediction> preds;
    auto report = eval::evaluate(ck, train::encode_for(ck, docs), tag, &preds);
    stage.output(tag + "_report.json", eval::to_json(report).dump(2) + "\n");
    stage.output(tag + "_report.md", eval::report_markdown(report));
    stage.output(tag + "_confusion.csv", eval::confusion_csv(report.confusion));
    stage.output(tag + "_predictions.jsonl", eval::predictions_jsonl(preds));
    stage.finish();
    std::cout << "Ma-P " << eval::fixed3(report.macro_precision) << "  Ma-R " << eval::fixed3(report.macro_recall)
              << "  Ma-F " << eval::fixed3(report.macro_f1) << "  Acc " << eval::fixed3(report.accuracy) << "\n";
    return kExitOk;
  }
};

struct AblateCmd {
  std::string data, bag, out = "ablation";
  TrainFlags flags;

  void add(CLI::App* app) {
    app->add_option("--data", data, "Split directory with train, valid and test files")->required();
    app->add_option("--bag", bag, "Word-bag file from the knowledge graph")->required();
    app->add_option("--out", out, "Output directory")->capture_default_str();
    flags.add(app, false);
  }

  int run() {
    Stage stage(out, "ablate", "ablate");
    auto cfg = flags.resolve(stage);
    stage.config() = config_echo(flags, cfg);
    auto splits = read_splits(stage, data, true);
    auto wb = read_bag(stage, bag);
    auto emb = flags.embeddings(stage);
    stage.begin();
    auto result = train::run_ablations(splits, wb, cfg, emb ? &*emb : nullptr);
    stage.output("ablation.md", train::ablation_markdown(result));
    stage.output("ablation.csv", train::ablation_csv(result));
    for (const auto& row : result.rows) {
      const auto m = model::to_string(row.mode);
      stage.output(m + "_balanced_report.json", eval::to_json(row.balanced).dump(2) + "\n");
      stage.output(m + "_imbalanced_report.json", eval::to_json(row.imbalanced).dump(2) + "\n");
      stage.output(m + "_train_log.jsonl", train::train_log_jsonl(row.log));
    }
    stage.finish();
    std::cout << train::ablation_markdown(result);
    return kExitOk;
  }
};

struct SweepCmd {
  std::string data, bag, out = "sweep", lambdas = "0,0.35,0.7,1.4";
  TrainFlags flags;

  void add(CLI::App* app) {
    app->add_option("--data", data, "Split directory with train, valid and test files")->required();
    app->add_option("--bag", bag, "Word-bag file")->required();
    app->add_option("--lambdas", lambdas, "Comma-separated supervision weights")->capture_default_str();
    app->add_option("--out", out, "Output directory")->capture_default_str();
    flags.add(app, false);
  }

  int run() {
    std::vector<double> values;
    std::stringstream ss(lambdas);
    for (std::string item; std::getline(ss, item, ',');) {
      try {
        values.push_back(parse_double(item));
      } catch (const std::exception&) {
        throw DataError("--lambdas: '" + item + "' is not a number");
      }
    }
    Stage stage(out, "sweep-lambda", "sweep-lambda");
    auto cfg = flags.resolve(stage);
    auto echo = config_echo(flags, cfg);
    echo.erase("lambda");
    echo["lambdas"] = values;
    stage.config() = echo;
    auto splits = read_splits(stage, data, true);
    auto wb = read_bag(stage, bag);
    auto emb = flags.embeddings(stage);
    stage.begin();
    auto rows = train::lambda_sweep(splits, wb, cfg, values, emb ? &*emb : nullptr);
    auto shape = train::sweep_shape(rows);
    ordered_json j;
    j["rows"] = ordered_json::array();
    for (const auto& r : rows) {
      j["rows"].push_back({{"lambda", r.lambda}, {"macro_f1", r.macro_f1}, {"accuracy", r.accuracy},
                           {"best_epoch", r.best_epoch}});
    }
    j["rises_then_flat_or_declines"] = shape.rises_then_flat_or_declines;
    if (shape.peak_lambda) j["peak_lambda"] = *shape.peak_lambda;
    stage.output("sweep.csv", train::sweep_csv(rows));
    stage.output("sweep.json", j.dump(2) + "\n");
    stage.finish();
    std::cout << train::sweep_csv(rows) << "shape: "
              << (shape.rises_then_flat_or_declines ? "rises then flat or declines" : "not unimodal") << "\n";
    return kExitOk;
  }
};

// Document ids become file names; anything outside [A-Za-z0-9._-] maps to '_'.
std::string file_stem(const std::string& id) {
  std::string out;
  for (char c : id) out += std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_' ? c : '_';
  if (out.empty() || out.front() == '.') out.insert(out.begin(), '_');
  return out;
}

struct ExplainCmd {
  std::string checkpoint, data, out;
  std::vector<std::string> ids;
  bool all_columns = false;

  void add(CLI::App* app) {
    app->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    app->add_option("--data", data, "Documents (JSON lines) or a split directory (uses test.jsonl)")->required();
    app->add_option("--id", ids, "Document id to explain (repeatable; default: all)");
    app->add_flag("--all-columns", all_columns, "Render every label's attention column");
    app->add_option("--out", out, "Output directory")->required();
  }

  int run() {
    Stage stage(out, "explain", "explain");
    stage.config() = {{"ids", ids}, {"all_columns", all_columns}};
    auto ck = read_checkpoint(stage, checkpoint);
    auto docs = read_docs(stage, data_file(data, "test.jsonl"));
    if (!ids.empty()) {
      std::set<std::string> wanted(ids.begin(), ids.end());
      std::vector<corpus::LabeledDocument> kept;
      for (auto& d : docs) {
        if (wanted.erase(d.id)) kept.push_back(std::move(d));
      }
      if (!wanted.empty()) throw DataError("unknown document id '" + *wanted.begin() + "'");
      docs = std::move(kept);
    }
    stage.begin();
    std::string summary;
    for (const auto& doc : train::encode_for(ck, docs)) {
      auto trace = eval::explain(doc, ck);
      stage.output(file_stem(doc.id) + ".html", eval::trace_html(trace, all_columns));
      stage.output(file_stem(doc.id) + ".csv", eval::trace_csv(trace));
      auto gold_col = trace.column(trace.head_index(trace.gold));
      auto peak = static_cast<std::size_t>(std::max_element(gold_col.begin(), gold_col.end()) - gold_col.begin());
      ordered_json j;
      j["id"] = trace.id;
      j["gold"] = trace.gold;
      j["predicted"] = trace.predicted;
      j["gold_column_peak_token"] = trace.tokens[peak];
      j["gold_column_peak_weight"] = gold_col[peak];
      summary += j.dump() + "\n";
    }
    stage.output("explanations.jsonl", summary);
    stage.finish();
    std::cout << "explained " << docs.size() << " documents into " << out << "\n";
    return kExitOk;
  }
};

// Suggests the closest known long option for every unknown one on the command line.
void suggest_flags(const CLI::App& app, int argc, char** argv) {
  const CLI::App* active = &app;
  for (const auto* sub : app.get_subcommands()) active = sub;
  std::vector<std::string> known;
  for (const auto* opt : active->get_options()) {
    for (const auto& name : opt->get_lnames()) known.push_back("--" + name);
  }
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg.rfind("--", 0) != 0) continue;
    arg = arg.substr(0, arg.find('='));
    if (std::find(known.begin(), known.end(), arg) != known.end()) continue;
    std::string best;
    std::size_t best_d = 4;
    for (const auto& k : known) {
      auto d = edit_distance(arg, k);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    if (!best.empty()) std::cerr << "unknown option '" << arg << "'; did you mean '" << best << "'?\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fwgb: knowledge-guided word-bag attention classifier for confusable charges"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  SynthCmd synth;
  SplitCmd split;
  BuildWordBagCmd build_bag;
  ValidateGraphCmd validate;
  TrainCmd train_cmd;
  EvalCmd eval_cmd;
  AblateCmd ablate;
  SweepCmd sweep;
  ExplainCmd explain;

  std::vector<std::pair<CLI::App*, std::function<int()>>> commands;
  auto reg = [&](const char* name, const char* help, auto& cmd) {
    auto* sub = app.add_subcommand(name, help);
    cmd.add(sub);
    commands.emplace_back(sub, [&cmd] { return cmd.run(); });
  };
  reg("synth", "Generate a synthetic confusable corpus with markers, graph and vectors", synth);
  reg("split", "Split a labelled corpus into train, valid and balanced test sets", split);
  reg("build-wordbag", "Select per-charge keywords guided by the knowledge graph", build_bag);
  reg("validate-graph", "Check a knowledge graph and print each charge's element path", validate);
  reg("train", "Train a classifier", train_cmd);
  reg("eval", "Score a checkpoint on a test set", eval_cmd);
  reg("ablate", "Train and score the four ablation variants", ablate);
  reg("sweep-lambda", "Train one model per supervision weight", sweep);
  reg("explain", "Export attention heatmaps for documents", explain);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    suggest_flags(app, argc, argv);
    std::cerr << "run with --help for usage\n";
    return kExitUsage;
  }

  for (auto& [sub, run] : commands) {
    if (!sub->parsed()) continue;
    try {
      return run();
    } catch (const NumericError& e) {
      std::cerr << sub->get_name() << ": numeric failure: " << e.what() << "\n";
      return kExitNumeric;
    } catch (const DataError& e) {
      std::cerr << sub->get_name() << ": " << e.what() << "\n";
      return kExitData;
    } catch (const fs::filesystem_error& e) {
      std::cerr << sub->get_name() << ": " << e.what() << "\n";
      return kExitData;
    } catch (const std::out_of_range& e) {
      std::cerr << sub->get_name() << ": " << e.what() << "\n";
      return kExitData;
    } catch (const std::invalid_argument& e) {
      std::cerr << sub->get_name() << ": " << e.what() << "\n";
      return kExitData;
    }
  }
  return kExitUsage;
}
