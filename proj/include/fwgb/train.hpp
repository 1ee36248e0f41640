#pragma once

// Mini-batch training with Adam, early stopping on validation macro-F1, the
// lambda sweep and the four-way ablation runner.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fwgb/common.hpp"
#include "fwgb/corpus.hpp"
#include "fwgb/eval.hpp"
#include "fwgb/kgraph.hpp"
#include "fwgb/model.hpp"
#include "fwgb/wordbag.hpp"

namespace fwgb::train {

enum class Optimizer { adam, sgd };

inline std::string to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd"; }
inline Optimizer parse_optimizer(std::string_view s) {
  if (s == "adam") return Optimizer::adam;
  if (s == "sgd") return Optimizer::sgd;
  throw DataError("unknown optimizer '" + std::string(s) + "' (adam, sgd)");
}

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  Optimizer optimizer = Optimizer::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 5.0;
  double lambda = model::kDefaultLambda;
  std::uint64_t seed = 7;
  std::size_t patience = 5;
  model::Mode mode = model::Mode::full;
  std::size_t threads = 1;

  std::size_t embed_dim = wordbag::kDefaultEmbeddingDim;
  std::size_t hidden_dim = 128;
  std::size_t attention_dim = 0;
  std::size_t max_len = corpus::kDefaultMaxLen;
  int min_freq = corpus::kDefaultMinFreq;

  // Written atomically whenever validation macro-F1 improves.
  std::optional<std::filesystem::path> checkpoint_path;

  void validate() const {
    if (epochs < 1) throw DataError("epochs must be >= 1");
    if (batch_size < 1) throw DataError("batch size must be >= 1");
    if (!(learning_rate > 0.0)) throw DataError("learning rate must be > 0");
    if (!(lambda >= 0.0)) throw DataError("lambda must be >= 0");
    if (threads < 1) throw DataError("threads must be >= 1");
    if (!(clip_norm > 0.0)) throw DataError("clip norm must be > 0");
  }
};

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["optimizer"] = to_string(c.optimizer);
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["clip_norm"] = c.clip_norm;
  j["lambda"] = c.lambda;
  j["seed"] = c.seed;
  j["patience"] = c.patience;
  j["mode"] = model::to_string(c.mode);
  j["threads"] = c.threads;
  j["embed_dim"] = c.embed_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["attention_dim"] = c.attention_dim ? c.attention_dim : 2 * c.hidden_dim;
  j["max_len"] = c.max_len;
  j["min_freq"] = c.min_freq;
  return j;
}

// Overlays keys present in `j` onto `base`.
inline TrainConfig apply_json(TrainConfig c, const nlohmann::json& j) {
  try {
    if (j.contains("epochs")) c.epochs = j["epochs"].get<std::size_t>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("optimizer")) c.optimizer = parse_optimizer(j["optimizer"].get<std::string>());
    if (j.contains("adam_beta1")) c.adam_beta1 = j["adam_beta1"].get<double>();
    if (j.contains("adam_beta2")) c.adam_beta2 = j["adam_beta2"].get<double>();
    if (j.contains("adam_eps")) c.adam_eps = j["adam_eps"].get<double>();
    if (j.contains("clip_norm")) c.clip_norm = j["clip_norm"].get<double>();
    if (j.contains("lambda")) c.lambda = j["lambda"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("patience")) c.patience = j["patience"].get<std::size_t>();
    if (j.contains("mode")) c.mode = model::parse_mode(j["mode"].get<std::string>());
    if (j.contains("threads")) c.threads = j["threads"].get<std::size_t>();
    if (j.contains("embed_dim")) c.embed_dim = j["embed_dim"].get<std::size_t>();
    if (j.contains("hidden_dim")) c.hidden_dim = j["hidden_dim"].get<std::size_t>();
    if (j.contains("attention_dim")) c.attention_dim = j["attention_dim"].get<std::size_t>();
    if (j.contains("max_len")) c.max_len = j["max_len"].get<std::size_t>();
    if (j.contains("min_freq")) c.min_freq = j["min_freq"].get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid training config: ") + e.what());
  }
  return c;
}

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  double classification = 0.0;
  double supervision = 0.0;
  double total = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double classification = 0.0;
  double supervision = 0.0;
  double total = 0.0;
  double valid_macro_f1 = 0.0;
  double valid_accuracy = 0.0;
  double valid_loss = 0.0;  // mean classification loss
  double wall_seconds = 0.0;

  bool same_trajectory(const EpochRecord& o) const {
    return epoch == o.epoch && classification == o.classification && supervision == o.supervision &&
           total == o.total && valid_macro_f1 == o.valid_macro_f1 && valid_accuracy == o.valid_accuracy &&
           valid_loss == o.valid_loss;
  }
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
  std::size_t best_epoch = 0;
  double lambda = 0.0;  // weight actually applied to the supervision loss

  // Equal up to wall-clock time.
  bool same_trajectory(const TrainLog& o) const {
    if (epochs.size() != o.epochs.size() || best_epoch != o.best_epoch) return false;
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      if (!epochs[i].same_trajectory(o.epochs[i])) return false;
    }
    return true;
  }
};

// One JSON object per epoch; wall time is left out so logs of identical runs
// are byte-identical.
inline std::string train_log_jsonl(const TrainLog& log) {
  std::string out;
  for (const auto& e : log.epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["loss_classification"] = e.classification;
    j["loss_supervision"] = e.supervision;
    j["loss_total"] = e.total;
    j["valid_macro_f1"] = e.valid_macro_f1;
    j["valid_accuracy"] = e.valid_accuracy;
    j["valid_loss"] = e.valid_loss;
    j["best"] = e.epoch == log.best_epoch;
    out += j.dump() + "\n";
  }
  return out;
}

struct TrainResult {
  model::Checkpoint checkpoint;  // best-validation parameters
  TrainLog log;
};

struct PreparedData {
  corpus::LabelSet labels;
  corpus::Vocabulary vocab;
  std::vector<corpus::EncodedDocument> train;
  std::vector<corpus::EncodedDocument> valid;
  std::vector<wordbag::TargetAttention> train_targets;
};

inline PreparedData prepare(const corpus::Splits& splits, const wordbag::WordBag& bag, const TrainConfig& cfg) {
  PreparedData d;
  d.labels = corpus::collect_labels(splits.train);
  if (d.labels != bag.labels()) throw DataError("word bag labels do not match the training labels");
  d.vocab = corpus::build_vocabulary(splits.train, cfg.min_freq);
  d.train = corpus::encode_all(splits.train, d.vocab, d.labels, cfg.max_len);
  d.valid = corpus::encode_all(splits.valid, d.vocab, d.labels, cfg.max_len);
  if (d.valid.empty()) throw DataError("validation split is empty");
  for (const auto& doc : d.train) {
    if (doc.ids.empty()) throw DataError("training document '" + doc.id + "' has no tokens");
    d.train_targets.push_back(wordbag::target_attention(doc, bag));
  }
  return d;
}

namespace detail {

struct Adam {
  std::vector<double> m, v;
  std::size_t t = 0;
};

inline void flatten_grads(const model::FwgbParameters& p, std::vector<double>& out) {
  out.clear();
  for (const auto& t : p.named()) out.insert(out.end(), t.tensor.grad().begin(), t.tensor.grad().end());
}

struct ExampleResult {
  std::vector<double> grad;
  double classification = 0.0;
  double supervision = 0.0;
  double total = 0.0;
};

}  // namespace detail

// Per-example gradients are computed on private parameter copies and summed in
// example order, so results are identical for every thread count.
inline TrainResult train(const corpus::Splits& splits, const wordbag::WordBag& bag, const TrainConfig& cfg,
                         const wordbag::EmbeddingProvider* init_embeddings = nullptr) {
  cfg.validate();
  auto data = prepare(splits, bag, cfg);

  model::FwgbConfig mc;
  mc.mode = cfg.mode;
  mc.lambda = cfg.lambda;
  mc.labels = data.labels.size();
  mc.vocab_size = data.vocab.size();
  mc.embed_dim = cfg.embed_dim;
  mc.hidden_dim = cfg.hidden_dim;
  mc.attention_dim = cfg.attention_dim;
  mc.max_len = cfg.max_len;
  mc.bag_hash = sha256_hex(wordbag::dump_word_bag(bag)).substr(0, 16);
  mc.validate();

  auto params = model::FwgbParameters::init(mc, cfg.seed);
  if (init_embeddings) model::init_embeddings_from(params, data.vocab, *init_embeddings);

  const std::size_t workers = std::min(cfg.threads, cfg.batch_size);
  std::vector<model::FwgbParameters> replicas;
  for (std::size_t w = 0; w < workers; ++w) replicas.push_back(params.clone());

  const std::size_t n_params = params.parameter_count();
  detail::Adam adam{std::vector<double>(n_params, 0.0), std::vector<double>(n_params, 0.0), 0};
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x5DEECE66DULL);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.log.lambda = mc.effective_lambda();
  model::Checkpoint best{mc, data.labels, data.vocab, params.clone()};
  double best_f1 = -1.0;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  auto run_example = [&](model::FwgbParameters& replica, std::size_t idx, detail::ExampleResult& out) {
    replica.zero_grad();
    auto terms = model::compute_loss(data.train[idx], data.train_targets[idx], replica, mc);
    out.classification = terms.classification.item();
    out.supervision = terms.supervision.item();
    out.total = terms.total.item();
    if (std::isfinite(out.total)) nn::backward(terms.total);
    detail::flatten_grads(replica, out.grad);
  };

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto started = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batch_no = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      for (auto& r : replicas) r.copy_values_from(params);
      std::vector<detail::ExampleResult> results(count);
      auto work = [&](std::size_t w) {
        for (std::size_t k = w; k < count; k += workers) run_example(replicas[w], order[start + k], results[k]);
      };
      if (workers == 1) {
        work(0);
      } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
      }

      StepRecord step{epoch, batch_no, 0.0, 0.0, 0.0};
      std::vector<double> grad(n_params, 0.0);
      for (std::size_t k = 0; k < count; ++k) {
        const auto& r = results[k];
        if (!std::isfinite(r.total)) {
          throw NumericError("non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_no) + " (document '" + data.train[order[start + k]].id + "')");
        }
        step.classification += r.classification;
        step.supervision += r.supervision;
        step.total += r.total;
        for (std::size_t i = 0; i < n_params; ++i) grad[i] += r.grad[i];
      }
      for (std::size_t i = 0; i < n_params; ++i) {
        grad[i] /= static_cast<double>(count);
        if (!std::isfinite(grad[i])) {
          throw NumericError("non-finite gradient in epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_no));
        }
      }
      rec.classification += step.classification;
      rec.supervision += step.supervision;
      rec.total += step.total;
      step.classification /= static_cast<double>(count);
      step.supervision /= static_cast<double>(count);
      step.total /= static_cast<double>(count);
      result.log.steps.push_back(step);

      double norm = 0.0;
      for (double g : grad) norm += g * g;
      norm = std::sqrt(norm);
      if (norm > cfg.clip_norm) {
        for (auto& g : grad) g *= cfg.clip_norm / norm;
      }

      std::size_t offset = 0;
      ++adam.t;
      const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam.t));
      const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam.t));
      for (auto& t : params.named()) {
        auto values = t.tensor.mutable_value();
        for (std::size_t i = 0; i < values.size(); ++i, ++offset) {
          double g = grad[offset];
          if (cfg.optimizer == Optimizer::sgd) {
            values[i] -= cfg.learning_rate * g;
            continue;
          }
          adam.m[offset] = cfg.adam_beta1 * adam.m[offset] + (1.0 - cfg.adam_beta1) * g;
          adam.v[offset] = cfg.adam_beta2 * adam.v[offset] + (1.0 - cfg.adam_beta2) * g * g;
          double m_hat = adam.m[offset] / bc1;
          double v_hat = adam.v[offset] / bc2;
          values[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
        }
      }
    }

    const auto n = static_cast<double>(order.size());
    rec.classification /= n;
    rec.supervision /= n;
    rec.total /= n;

    model::Checkpoint current{mc, data.labels, data.vocab, params};
    std::vector<eval::DocumentPrediction> valid_preds;
    auto report = eval::evaluate(current, data.valid, "valid", &valid_preds);
    rec.valid_macro_f1 = report.macro_f1;
    rec.valid_accuracy = report.accuracy;
    for (std::size_t i = 0; i < valid_preds.size(); ++i) {
      rec.valid_loss -= std::log(std::max(valid_preds[i].probabilities[data.valid[i].label], model::kProbabilityFloor));
    }
    rec.valid_loss /= static_cast<double>(valid_preds.size());
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.epochs.push_back(rec);

    // Patience counts epochs without a macro-F1 gain; among epochs tied on
    // macro-F1 the lower validation loss wins.
    const bool gain = rec.valid_macro_f1 > best_f1;
    if (gain || (rec.valid_macro_f1 == best_f1 && rec.valid_loss < best_loss)) {
      best_f1 = rec.valid_macro_f1;
      best_loss = rec.valid_loss;
      best.params.copy_values_from(params);
      result.log.best_epoch = epoch;
      if (cfg.checkpoint_path) model::save_checkpoint(*cfg.checkpoint_path, best);
    }
    if (gain) {
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  result.checkpoint = std::move(best);
  return result;
}

inline std::vector<corpus::EncodedDocument> encode_for(const model::Checkpoint& ck,
                                                      const std::vector<corpus::LabeledDocument>& docs) {
  return corpus::encode_all(docs, ck.vocab, ck.labels, ck.config.max_len);
}

// ---------------------------------------------------------------------------
// Lambda sweep

struct SweepRow {
  double lambda = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  std::size_t best_epoch = 0;
};

struct SweepShape {
  bool rises_then_flat_or_declines = false;  // unimodal along increasing lambda
  std::optional<double> peak_lambda;
};

// One model per lambda, everything else (seed included) shared. Scores are on
// the balanced test split.
inline std::vector<SweepRow> lambda_sweep(const corpus::Splits& splits, const wordbag::WordBag& bag, TrainConfig cfg,
                                          const std::vector<double>& lambdas,
                                          const wordbag::EmbeddingProvider* init_embeddings = nullptr) {
  if (lambdas.empty()) throw DataError("lambda sweep needs at least one value");
  std::vector<SweepRow> rows;
  cfg.checkpoint_path.reset();
  for (double lambda : lambdas) {
    cfg.lambda = lambda;
    auto result = train(splits, bag, cfg, init_embeddings);
    auto report = eval::evaluate(result.checkpoint, encode_for(result.checkpoint, splits.balanced_test), "balanced");
    rows.push_back({lambda, report.macro_f1, report.accuracy, result.log.best_epoch});
  }
  return rows;
}

inline SweepShape sweep_shape(std::vector<SweepRow> rows) {
  SweepShape s;
  if (rows.empty()) return s;
  std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) { return a.lambda < b.lambda; });
  std::size_t peak = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].macro_f1 > rows[peak].macro_f1) peak = i;
  }
  s.peak_lambda = rows[peak].lambda;
  bool ok = true;
  for (std::size_t i = 1; i <= peak; ++i) ok = ok && rows[i].macro_f1 >= rows[i - 1].macro_f1;
  for (std::size_t i = peak + 1; i < rows.size(); ++i) ok = ok && rows[i].macro_f1 <= rows[i - 1].macro_f1;
  s.rises_then_flat_or_declines = ok;
  return s;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "lambda,macro_f1,accuracy,best_epoch\n";
  for (const auto& r : rows) {
    out += format_double(r.lambda) + "," + format_double(r.macro_f1) + "," + format_double(r.accuracy) + "," +
           std::to_string(r.best_epoch) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablations

struct AblationRow {
  model::Mode mode = model::Mode::full;
  std::string name;
  std::string config_hash;
  eval::EvalReport balanced;
  eval::EvalReport imbalanced;  // scored on the validation split
  TrainLog log;
};

struct AblationResult {
  std::vector<AblationRow> rows;  // full, no_supervision, single_attention, no_kg
  std::vector<std::string> flags;  // expected orderings that did not hold
};

inline std::string ablation_name(model::Mode m) {
  switch (m) {
    case model::Mode::full: return "FWGB (LSTM)";
    case model::Mode::no_supervision: return "w/o SV";
    case model::Mode::single_attention: return "w/o Multi-Attn";
    case model::Mode::no_kg: return "w/o KG";
  }
  return "?";
}

// Trains the four variants on identical data and seed. The w/o-KG variant
// uses a frequency bag whose per-charge sizes match `bag`.
inline AblationResult run_ablations(const corpus::Splits& splits, const wordbag::WordBag& bag, TrainConfig cfg,
                                    const wordbag::EmbeddingProvider* init_embeddings = nullptr) {
  auto freq_bag = wordbag::frequency_word_bag_like(splits.train, bag);
  AblationResult out;
  cfg.checkpoint_path.reset();
  for (auto mode : {model::Mode::full, model::Mode::no_supervision, model::Mode::single_attention, model::Mode::no_kg}) {
    cfg.mode = mode;
    const auto& use_bag = mode == model::Mode::no_kg ? freq_bag : bag;
    auto result = train(splits, use_bag, cfg, init_embeddings);
    AblationRow row;
    row.mode = mode;
    row.name = ablation_name(mode);
    row.config_hash = model::config_hash(result.checkpoint.config);
    row.balanced = eval::evaluate(result.checkpoint, encode_for(result.checkpoint, splits.balanced_test), "balanced");
    row.imbalanced = eval::evaluate(result.checkpoint, encode_for(result.checkpoint, splits.valid), "imbalanced");
    row.log = std::move(result.log);
    out.rows.push_back(std::move(row));
  }
  const auto& full = out.rows[0];
  for (std::size_t i = 1; i < out.rows.size(); ++i) {
    if (full.balanced.macro_f1 < out.rows[i].balanced.macro_f1) {
      out.flags.push_back("full Ma-F " + eval::fixed3(full.balanced.macro_f1) + " < " + out.rows[i].name + " Ma-F " +
                          eval::fixed3(out.rows[i].balanced.macro_f1));
    }
  }
  return out;
}

inline AblationResult run_ablations(const corpus::Splits& splits, const kgraph::ChargeGraph& graph,
                                    const wordbag::EmbeddingProvider& emb, double eta, std::size_t top_k,
                                    const TrainConfig& cfg) {
  return run_ablations(splits, wordbag::build_word_bag(splits.train, graph, emb, eta, top_k), cfg);
}

inline std::string ablation_markdown(const AblationResult& r) {
  std::ostringstream out;
  out << "| Method | Ma-P | Ma-R | Ma-F | Acc | Ma-F* | Config |\n|---|---|---|---|---|---|---|\n";
  for (const auto& row : r.rows) {
    out << "| " << row.name << " | " << eval::fixed3(row.balanced.macro_precision) << " | "
        << eval::fixed3(row.balanced.macro_recall) << " | " << eval::fixed3(row.balanced.macro_f1) << " | "
        << eval::fixed3(row.balanced.accuracy) << " | " << eval::fixed3(row.imbalanced.macro_f1) << " | "
        << row.config_hash << " |\n";
  }
  if (!r.flags.empty()) {
    out << "\nOrdering flags:\n\n";
    for (const auto& f : r.flags) out << "- " << f << "\n";
  }
  return out.str();
}

inline std::string ablation_csv(const AblationResult& r) {
  std::string out = "method,mode,ma_p,ma_r,ma_f,acc,ma_f_imbalanced,config_hash\n";
  for (const auto& row : r.rows) {
    out += "\"" + row.name + "\"," + model::to_string(row.mode) + "," + format_double(row.balanced.macro_precision) +
           "," + format_double(row.balanced.macro_recall) + "," + format_double(row.balanced.macro_f1) + "," +
           format_double(row.balanced.accuracy) + "," + format_double(row.imbalanced.macro_f1) + "," +
           row.config_hash + "\n";
  }
  return out;
}

}  // namespace fwgb::train
