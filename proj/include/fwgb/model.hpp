#pragma once

// The charge classifier: embeddings -> bi-LSTM -> per-label attention ->
// pooled representation -> softmax over charges, plus the attention
// supervision and classification losses.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fwgb/common.hpp"
#include "fwgb/corpus.hpp"
#include "fwgb/nn/grad_check.hpp"
#include "fwgb/nn/layers.hpp"
#include "fwgb/nn/tensor.hpp"
#include "fwgb/wordbag.hpp"

namespace fwgb::model {

using nn::Tensor;

inline constexpr double kDefaultLambda = 0.7;
inline constexpr double kAttentionClamp = 1e-7;
inline constexpr double kProbabilityFloor = 1e-12;

enum class Mode { full, no_supervision, single_attention, no_kg };

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::full: return "full";
    case Mode::no_supervision: return "no_supervision";
    case Mode::single_attention: return "single_attention";
    case Mode::no_kg: return "no_kg";
  }
  return "?";
}

inline Mode parse_mode(std::string_view s) {
  if (s == "full") return Mode::full;
  if (s == "no_supervision") return Mode::no_supervision;
  if (s == "single_attention") return Mode::single_attention;
  if (s == "no_kg") return Mode::no_kg;
  throw DataError("unknown mode '" + std::string(s) + "' (full, no_supervision, single_attention, no_kg)");
}

struct FwgbConfig {
  Mode mode = Mode::full;
  double lambda = kDefaultLambda;
  std::size_t labels = 0;
  std::size_t vocab_size = 0;
  std::size_t embed_dim = wordbag::kDefaultEmbeddingDim;
  std::size_t hidden_dim = 128;
  std::size_t attention_dim = 0;  // 0 means 2 * hidden_dim
  std::size_t max_len = corpus::kDefaultMaxLen;
  std::string bag_hash;

  std::size_t heads() const { return mode == Mode::single_attention ? 1 : labels; }
  std::size_t attn_dim() const { return attention_dim ? attention_dim : 2 * hidden_dim; }
  // Weight applied to the supervision loss.
  double effective_lambda() const { return mode == Mode::no_supervision ? 0.0 : lambda; }

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw DataError("lambda must be >= 0");
    if (labels == 0) throw DataError("model needs at least one label");
    if (vocab_size < 2) throw DataError("vocabulary must include the reserved ids");
    if (embed_dim == 0 || hidden_dim == 0 || max_len == 0) throw DataError("model dimensions must be positive");
  }
};

inline nlohmann::ordered_json to_json(const FwgbConfig& c) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(c.mode);
  j["lambda"] = c.lambda;
  j["labels"] = c.labels;
  j["vocab_size"] = c.vocab_size;
  j["embed_dim"] = c.embed_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["attention_dim"] = c.attn_dim();
  j["max_len"] = c.max_len;
  j["bag_hash"] = c.bag_hash;
  return j;
}

inline FwgbConfig config_from_json(const nlohmann::json& j) {
  try {
    FwgbConfig c;
    c.mode = parse_mode(j.at("mode").get<std::string>());
    c.lambda = j.at("lambda").get<double>();
    c.labels = j.at("labels").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.attention_dim = j.at("attention_dim").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.bag_hash = j.value("bag_hash", "");
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid model config: ") + e.what());
  }
}

inline std::string config_hash(const FwgbConfig& c) { return sha256_hex(to_json(c).dump()).substr(0, 16); }

// ---------------------------------------------------------------------------
// Parameters

struct FwgbParameters {
  Tensor embedding;  // vocab x d_e
  nn::LstmParams lstm;
  nn::AttentionParams attention;
  Tensor classifier_w;  // labels x 2d_h
  Tensor classifier_b;  // 1 x labels

  std::vector<nn::NamedTensor> named() const {
    return {{"embedding", embedding},
            {"lstm.forward.w_x", lstm.forward.w_x},
            {"lstm.forward.w_h", lstm.forward.w_h},
            {"lstm.forward.b", lstm.forward.b},
            {"lstm.backward.w_x", lstm.backward.w_x},
            {"lstm.backward.w_h", lstm.backward.w_h},
            {"lstm.backward.b", lstm.backward.b},
            {"attention.w", attention.w},
            {"attention.b", attention.b},
            {"attention.u", attention.u},
            {"classifier.w", classifier_w},
            {"classifier.b", classifier_b}};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : named()) n += t.tensor.size();
    return n;
  }

  // Independent leaves with copied values.
  FwgbParameters clone() const {
    FwgbParameters p;
    p.embedding = embedding.clone_parameter();
    p.lstm.input_dim = lstm.input_dim;
    p.lstm.hidden_dim = lstm.hidden_dim;
    for (auto [dst, src] : {std::pair{&p.lstm.forward, &lstm.forward}, {&p.lstm.backward, &lstm.backward}}) {
      dst->w_x = src->w_x.clone_parameter();
      dst->w_h = src->w_h.clone_parameter();
      dst->b = src->b.clone_parameter();
    }
    p.attention = {attention.w.clone_parameter(), attention.b.clone_parameter(), attention.u.clone_parameter()};
    p.classifier_w = classifier_w.clone_parameter();
    p.classifier_b = classifier_b.clone_parameter();
    return p;
  }

  void copy_values_from(const FwgbParameters& other) {
    auto dst = named();
    auto src = other.named();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      auto v = src[i].tensor.value();
      std::copy(v.begin(), v.end(), dst[i].tensor.mutable_value().begin());
    }
  }

  void zero_grad() {
    for (auto& t : named()) t.tensor.zero_grad();
  }

  static FwgbParameters init(const FwgbConfig& c, std::uint64_t seed) {
    c.validate();
    std::mt19937_64 rng(seed);
    FwgbParameters p;
    p.embedding = nn::uniform_parameter(c.vocab_size, c.embed_dim, 0.1, rng);
    p.lstm = nn::init_lstm(c.embed_dim, c.hidden_dim, rng);
    p.attention = nn::init_attention(2 * c.hidden_dim, c.attn_dim(), c.heads(), rng);
    double bound = std::sqrt(6.0 / static_cast<double>(2 * c.hidden_dim + c.labels));
    p.classifier_w = nn::uniform_parameter(c.labels, 2 * c.hidden_dim, bound, rng);
    p.classifier_b = nn::zero_parameter(1, c.labels);
    return p;
  }
};

// Copies vectors for every vocabulary word the provider knows. Returns the
// number of rows initialised.
inline std::size_t init_embeddings_from(FwgbParameters& p, const corpus::Vocabulary& vocab,
                                        const wordbag::EmbeddingProvider& emb) {
  if (emb.dim() != p.embedding.cols()) {
    throw DataError("embedding file has dimension " + std::to_string(emb.dim()) + ", model expects " +
                    std::to_string(p.embedding.cols()));
  }
  std::size_t n = 0;
  auto values = p.embedding.mutable_value();
  for (std::size_t id = 2; id < vocab.size(); ++id) {
    if (auto v = emb.lookup(vocab.token(static_cast<std::int32_t>(id)))) {
      std::copy(v->begin(), v->end(), values.begin() + static_cast<std::ptrdiff_t>(id * emb.dim()));
      ++n;
    }
  }
  return n;
}

// ---------------------------------------------------------------------------
// Pooling and prediction

// s = sum_i a_i h_i for an L x 1 weight column.
inline Tensor pool_single(const Tensor& h, const Tensor& a) {
  if (a.cols() != 1 || a.rows() != h.rows()) throw std::invalid_argument("pool_single: weights must be L x 1");
  return nn::matmul_tn(a, h);
}

// s = sum_i sum_n alpha_{i,n} h_i.
inline Tensor pool_multi(const Tensor& h, const Tensor& alpha) {
  if (alpha.rows() != h.rows()) throw std::invalid_argument("pool_multi: attention rows must match hidden states");
  return nn::matmul_tn(nn::row_sums(alpha), h);
}

// softmax(W_c s + b_c) as a 1 x labels row.
inline Tensor predict(const Tensor& s, const Tensor& w_c, const Tensor& b_c) {
  if (s.rows() != 1 || w_c.cols() != s.cols() || b_c.cols() != w_c.rows()) {
    throw std::invalid_argument("predict: dimension mismatch");
  }
  return nn::softmax_rows(nn::add(nn::matmul_nt(s, w_c), b_c));
}

// ---------------------------------------------------------------------------
// Losses

// Summed binary cross-entropy between attention weights and 0/1 targets.
inline Tensor supervision_loss_single(const Tensor& a, std::span<const double> target) {
  if (a.size() != target.size()) throw std::invalid_argument("supervision loss: shape mismatch");
  return nn::binary_cross_entropy_sum(a, target, kAttentionClamp);
}

// Attention column of the gold label; the only column the supervision loss sees.
inline Tensor mask_to_label(const Tensor& alpha, std::size_t label) {
  if (label >= alpha.cols()) throw std::out_of_range("mask_to_label: label index out of range");
  return nn::column(alpha, label);
}

inline Tensor supervision_loss_multi(const Tensor& alpha, const wordbag::TargetAttention& target, std::size_t label) {
  if (target.rows != alpha.rows() || target.cols != alpha.cols()) {
    throw std::invalid_argument("supervision loss: target shape mismatch");
  }
  auto wanted = target.column(label);
  return supervision_loss_single(mask_to_label(alpha, label), wanted);
}

inline Tensor classification_loss(const Tensor& y, std::size_t gold) {
  if (gold >= y.size()) throw std::out_of_range("classification_loss: gold label out of range");
  return nn::negative_log(y, gold, kProbabilityFloor);
}

inline double total_loss(double classification, double supervision, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  return classification + lambda * supervision;
}

inline Tensor total_loss(const Tensor& classification, const Tensor& supervision, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  return nn::add(classification, nn::scale(supervision, lambda));
}

// ---------------------------------------------------------------------------
// Forward pass

struct Prediction {
  Tensor probabilities;  // 1 x labels
  Tensor pooled;         // 1 x 2d_h
  Tensor attention;      // L x heads

  std::vector<double> distribution() const { return {probabilities.value().begin(), probabilities.value().end()}; }
  std::size_t predicted() const {
    auto v = probabilities.value();
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  }
};

// Everything after the encoder. Any producer of L x 2d_h hidden states can be
// plugged in through this entry point.
inline Prediction forward_hidden(const Tensor& hidden, const FwgbParameters& p, const FwgbConfig& c) {
  Prediction out;
  out.attention = nn::multi_attention(hidden, p.attention);
  out.pooled = c.heads() == 1 ? pool_single(hidden, out.attention) : pool_multi(hidden, out.attention);
  out.probabilities = predict(out.pooled, p.classifier_w, p.classifier_b);
  return out;
}

inline Tensor encode_hidden(const corpus::EncodedDocument& doc, const FwgbParameters& p) {
  if (doc.ids.empty()) throw DataError("document '" + doc.id + "' has no tokens");
  return nn::bilstm(nn::embed(doc.ids, p.embedding), p.lstm);
}

inline Prediction forward(const corpus::EncodedDocument& doc, const FwgbParameters& p, const FwgbConfig& c) {
  return forward_hidden(encode_hidden(doc, p), p, c);
}

struct LossTerms {
  Prediction prediction;
  Tensor classification;
  Tensor supervision;
  Tensor total;
};

// Single-head models are supervised towards every bag word (union over
// charges); multi-head models only on the gold label's column.
inline LossTerms compute_loss(const corpus::EncodedDocument& doc, const wordbag::TargetAttention& target,
                              const FwgbParameters& p, const FwgbConfig& c) {
  LossTerms t;
  t.prediction = forward(doc, p, c);
  t.classification = classification_loss(t.prediction.probabilities, doc.label);
  if (c.heads() == 1) {
    auto wanted = target.any();
    t.supervision = supervision_loss_single(t.prediction.attention, wanted);
  } else {
    t.supervision = supervision_loss_multi(t.prediction.attention, target, doc.label);
  }
  t.total = total_loss(t.classification, t.supervision, c.effective_lambda());
  return t;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  FwgbConfig config;
  corpus::LabelSet labels;
  corpus::Vocabulary vocab;
  FwgbParameters params;
};

inline nlohmann::ordered_json checkpoint_json(const Checkpoint& ck) {
  nlohmann::ordered_json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["config"] = to_json(ck.config);
  j["labels"] = ck.labels;
  j["vocabulary"] = ck.vocab.entries();
  j["tensors"] = nlohmann::ordered_json::array();
  for (const auto& t : ck.params.named()) {
    nlohmann::ordered_json jt;
    jt["name"] = t.name;
    jt["shape"] = {t.tensor.rows(), t.tensor.cols()};
    jt["data"] = std::vector<double>(t.tensor.value().begin(), t.tensor.value().end());
    j["tensors"].push_back(std::move(jt));
  }
  return j;
}

inline std::string dump_checkpoint(const Checkpoint& ck) { return checkpoint_json(ck).dump() + "\n"; }

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file_atomic(path, dump_checkpoint(ck));
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw DataError("unsupported checkpoint format version " + j.at("format_version").dump());
    }
    Checkpoint ck;
    ck.config = config_from_json(j.at("config"));
    ck.labels = j.at("labels").get<corpus::LabelSet>();
    ck.vocab = corpus::Vocabulary(j.at("vocabulary").get<std::vector<std::string>>());
    if (ck.labels.size() != ck.config.labels || ck.vocab.size() != ck.config.vocab_size) {
      throw DataError("checkpoint labels/vocabulary disagree with its config");
    }
    ck.params = FwgbParameters::init(ck.config, 0);
    auto named = ck.params.named();
    const auto& tensors = j.at("tensors");
    if (tensors.size() != named.size()) throw DataError("checkpoint has the wrong number of tensors");
    for (std::size_t i = 0; i < named.size(); ++i) {
      const auto& jt = tensors.at(i);
      if (jt.at("name").get<std::string>() != named[i].name) {
        throw DataError("checkpoint tensor " + std::to_string(i) + " should be '" + named[i].name + "'");
      }
      auto shape = jt.at("shape").get<std::vector<std::size_t>>();
      auto data = jt.at("data").get<std::vector<double>>();
      if (shape.size() != 2 || shape[0] != named[i].tensor.rows() || shape[1] != named[i].tensor.cols() ||
          data.size() != named[i].tensor.size()) {
        throw DataError("checkpoint tensor '" + named[i].name + "' has the wrong shape");
      }
      std::copy(data.begin(), data.end(), named[i].tensor.mutable_value().begin());
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid checkpoint: ") + e.what());
  }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return checkpoint_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": malformed JSON (" + e.what() + ")");
  }
}

}  // namespace fwgb::model
