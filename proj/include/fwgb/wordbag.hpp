#pragma once

// Per-charge keyword sets. Candidates come from a contrastive document
// frequency statistic; a candidate is kept for a charge when its mean cosine
// similarity to the charge's constituent elements exceeds a threshold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "fwgb/common.hpp"
#include "fwgb/corpus.hpp"
#include "fwgb/kgraph.hpp"

namespace fwgb::wordbag {

inline constexpr std::size_t kDefaultTopK = 50;
inline constexpr double kDefaultEta = 0.3;
inline constexpr std::size_t kDefaultEmbeddingDim = 300;

// Word -> fixed-dimension vector. Implementations must be safe for
// concurrent lookups.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  // nullopt when the word has no vector.
  virtual std::optional<std::vector<double>> lookup(std::string_view word) const = 0;
};

// Explicit table of vectors, e.g. loaded from a word-vector text file.
class VectorTable final : public EmbeddingProvider {
 public:
  explicit VectorTable(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw DataError("embedding dimension must be positive");
  }

  void set(std::string word, std::vector<double> v) {
    if (v.size() != dim_) throw DataError("vector for '" + word + "' has wrong dimension");
    if (!table_.contains(word)) order_.push_back(word);
    table_[std::move(word)] = std::move(v);
  }

  std::size_t dim() const override { return dim_; }
  std::size_t size() const { return table_.size(); }
  const std::vector<std::string>& words() const { return order_; }

  std::optional<std::vector<double>> lookup(std::string_view word) const override {
    auto it = table_.find(std::string(word));
    if (it == table_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::size_t dim_;
  std::unordered_map<std::string, std::vector<double>> table_;
  std::vector<std::string> order_;
};

// Every word gets a standard-normal vector seeded from its bytes.
class HashEmbeddings final : public EmbeddingProvider {
 public:
  HashEmbeddings(std::size_t dim, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {}

  std::size_t dim() const override { return dim_; }
  std::optional<std::vector<double>> lookup(std::string_view word) const override {
    std::mt19937_64 rng(fnv1a64(word) ^ (seed_ * 0x9E3779B97F4A7C15ULL));
    std::normal_distribution<double> normal;
    std::vector<double> v(dim_);
    for (auto& x : v) x = normal(rng);
    return v;
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

// Text format: header "<count> <dim>", then "word v1 ... vd" per line.
inline VectorTable parse_embeddings(std::string_view contents, std::string_view source = "<memory>") {
  std::istringstream in{std::string(contents)};
  std::string line;
  if (!std::getline(in, line)) throw DataError(std::string(source) + ": empty embedding file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::istringstream header(line);
  std::size_t count = 0, dim = 0;
  if (!(header >> count >> dim) || dim == 0) {
    throw DataError(std::string(source) + ":1: header must be \"<count> <dim>\"");
  }
  VectorTable table(dim);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string word;
    row >> word;
    std::vector<double> v;
    std::string cell;
    while (row >> cell) {
      try {
        v.push_back(parse_double(cell));
      } catch (const DataError&) {
        throw DataError(std::string(source) + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (v.size() != dim) {
      throw DataError(std::string(source) + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                      " values, got " + std::to_string(v.size()));
    }
    table.set(std::move(word), std::move(v));
  }
  if (table.size() != count) {
    throw DataError(std::string(source) + ": header announces " + std::to_string(count) + " vectors, found " +
                    std::to_string(table.size()));
  }
  return table;
}

inline VectorTable load_embeddings(const std::filesystem::path& path) {
  return parse_embeddings(read_file(path), path.string());
}

inline std::string dump_embeddings(const VectorTable& table) {
  std::string out = std::to_string(table.size()) + " " + std::to_string(table.dim()) + "\n";
  for (const auto& w : table.words()) {
    out += w;
    const auto v = table.lookup(w);
    for (double x : *v) {
      out += ' ';
      out += format_double(x);
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Similarity

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DataError("cosine of vectors with different dimensions");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine similarity of a zero-norm vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

inline std::vector<double> word_vector(std::string_view word, const EmbeddingProvider& emb) {
  auto v = emb.lookup(word);
  if (!v) throw DataError("word '" + std::string(word) + "' has no embedding");
  return *v;
}

// Mean of the token vectors of a phrase; out-of-vocabulary tokens are skipped.
inline std::vector<double> phrase_vector(std::string_view phrase, const EmbeddingProvider& emb,
                                         const corpus::Tokenizer& tokenizer = corpus::default_tokenizer()) {
  std::vector<double> sum(emb.dim(), 0.0);
  std::size_t n = 0;
  for (const auto& tok : tokenizer(phrase)) {
    if (auto v = emb.lookup(tok)) {
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += (*v)[i];
      ++n;
    }
  }
  if (n == 0) throw DataError("element phrase '" + std::string(phrase) + "' has no embeddable token");
  for (auto& x : sum) x /= static_cast<double>(n);
  return sum;
}

inline std::vector<std::vector<double>> element_vectors(const kgraph::ElementSet& elements,
                                                        const EmbeddingProvider& emb) {
  if (elements.elements.empty()) throw DataError("charge '" + elements.charge + "' has no elements");
  std::vector<std::vector<double>> out;
  for (const auto& e : elements.elements) out.push_back(phrase_vector(e, emb));
  return out;
}

inline double average_similarity(const std::vector<double>& word, const std::vector<std::vector<double>>& elements) {
  double total = 0.0;
  for (const auto& r : elements) total += cosine(word, r);
  return total / static_cast<double>(elements.size());
}

// Mean cosine similarity between the word and each element of the set.
inline double average_element_similarity(std::string_view word, const kgraph::ElementSet& elements,
                                         const EmbeddingProvider& emb) {
  return average_similarity(word_vector(word, emb), element_vectors(elements, emb));
}

// ---------------------------------------------------------------------------
// Candidates

struct ScoredWord {
  std::string word;
  double score = 0.0;
};

struct CandidateSet {
  std::string charge;
  std::vector<ScoredWord> words;  // descending score, ties lexicographic
};

// Per-word document frequencies broken down by label.
class DocumentFrequencies {
 public:
  DocumentFrequencies(const std::vector<corpus::LabeledDocument>& docs,
                      const corpus::Tokenizer& tokenizer = corpus::default_tokenizer()) {
    for (const auto& d : docs) {
      ++docs_per_label_[d.label];
      std::set<std::string> unique;
      for (auto& t : tokenizer(d.text)) unique.insert(std::move(t));
      for (const auto& t : unique) ++df_[t][d.label];
    }
    total_docs_ = docs.size();
  }

  std::size_t docs_with_label(const std::string& label) const {
    auto it = docs_per_label_.find(label);
    return it == docs_per_label_.end() ? 0 : it->second;
  }
  std::size_t total_docs() const { return total_docs_; }

  std::size_t df(const std::string& word, const std::string& label) const {
    auto it = df_.find(word);
    if (it == df_.end()) return 0;
    auto jt = it->second.find(label);
    return jt == it->second.end() ? 0 : jt->second;
  }
  std::size_t df(const std::string& word) const {
    auto it = df_.find(word);
    if (it == df_.end()) return 0;
    std::size_t n = 0;
    for (const auto& [label, c] : it->second) n += c;
    return n;
  }

  // Words in lexicographic order.
  const std::map<std::string, std::map<std::string, std::size_t>>& table() const { return df_; }

 private:
  std::map<std::string, std::map<std::string, std::size_t>> df_;
  std::map<std::string, std::size_t> docs_per_label_;
  std::size_t total_docs_ = 0;
};

// log[(df_in + 1) / (n_in - df_in + 1)] - log[(df_out + 1) / (n_out - df_out + 1)]
inline double smoothed_log_odds(std::size_t df_in, std::size_t n_in, std::size_t df_out, std::size_t n_out) {
  auto odds = [](std::size_t df, std::size_t n) {
    return std::log((static_cast<double>(df) + 1.0) / (static_cast<double>(n - df) + 1.0));
  };
  return odds(df_in, n_in) - odds(df_out, n_out);
}

namespace detail {

inline std::vector<ScoredWord> rank_top(std::vector<ScoredWord> words, std::size_t top_k) {
  std::stable_sort(words.begin(), words.end(), [](const ScoredWord& a, const ScoredWord& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.word < b.word;
  });
  if (words.size() > top_k) words.resize(top_k);
  return words;
}

}  // namespace detail

inline CandidateSet candidate_keywords(const DocumentFrequencies& freq, const std::string& charge, std::size_t top_k,
                                       const EmbeddingProvider* emb = nullptr) {
  if (top_k == 0) throw DataError("top_k must be at least 1");
  auto n_in = freq.docs_with_label(charge);
  if (n_in == 0) throw DataError("charge '" + charge + "' has no training documents");
  auto n_out = freq.total_docs() - n_in;
  std::vector<ScoredWord> scored;
  for (const auto& [word, per_label] : freq.table()) {
    if (emb && !emb->lookup(word)) continue;
    auto df_in = freq.df(word, charge);
    auto df_out = freq.df(word) - df_in;
    scored.push_back({word, smoothed_log_odds(df_in, n_in, df_out, n_out)});
  }
  return {charge, detail::rank_top(std::move(scored), top_k)};
}

inline CandidateSet candidate_keywords(const std::vector<corpus::LabeledDocument>& train_docs,
                                       const std::string& charge, std::size_t top_k,
                                       const EmbeddingProvider* emb = nullptr) {
  return candidate_keywords(DocumentFrequencies(train_docs), charge, top_k, emb);
}

// Keywords in candidate order.
using KeywordSet = std::vector<std::string>;

// Keeps candidates whose mean element similarity is strictly above eta.
inline KeywordSet select_keywords(const CandidateSet& candidates, const kgraph::ElementSet& elements,
                                  const EmbeddingProvider& emb, double eta) {
  auto element_vecs = element_vectors(elements, emb);
  KeywordSet out;
  for (const auto& c : candidates.words) {
    if (average_similarity(word_vector(c.word, emb), element_vecs) > eta) out.push_back(c.word);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Word bag

struct WordBag {
  std::map<std::string, KeywordSet> bags;  // label -> keywords; labels sorted
  std::optional<double> eta;               // absent for frequency-only bags
  std::size_t top_k = kDefaultTopK;
  std::string statistic = "smoothed-log-odds-df";
  std::string graph_hash;
  std::vector<std::string> warnings;

  corpus::LabelSet labels() const {
    corpus::LabelSet out;
    for (const auto& [label, words] : bags) out.push_back(label);
    return out;
  }

  // Distinct words across all charges.
  std::size_t total_words() const {
    std::set<std::string> all;
    for (const auto& [label, words] : bags) all.insert(words.begin(), words.end());
    return all.size();
  }

  bool operator==(const WordBag&) const = default;
};

inline nlohmann::ordered_json to_json(const WordBag& bag) {
  nlohmann::ordered_json j;
  j["eta"] = bag.eta ? nlohmann::ordered_json(*bag.eta) : nlohmann::ordered_json(nullptr);
  j["top_k"] = bag.top_k;
  j["statistic"] = bag.statistic;
  j["graph_hash"] = bag.graph_hash;
  j["bags"] = nlohmann::ordered_json::object();
  for (const auto& [label, words] : bag.bags) j["bags"][label] = words;
  j["warnings"] = bag.warnings;
  return j;
}

inline WordBag word_bag_from_json(const nlohmann::json& j) {
  try {
    WordBag bag;
    if (!j.at("eta").is_null()) bag.eta = j.at("eta").get<double>();
    bag.top_k = j.at("top_k").get<std::size_t>();
    bag.statistic = j.at("statistic").get<std::string>();
    bag.graph_hash = j.at("graph_hash").get<std::string>();
    for (const auto& [label, words] : j.at("bags").items()) bag.bags[label] = words.get<KeywordSet>();
    if (j.contains("warnings")) bag.warnings = j.at("warnings").get<std::vector<std::string>>();
    if (bag.bags.empty()) throw DataError("word bag has no charges");
    return bag;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid word bag: ") + e.what());
  }
}

inline std::string dump_word_bag(const WordBag& bag) { return to_json(bag).dump(2) + "\n"; }

inline void save_word_bag(const std::filesystem::path& path, const WordBag& bag) {
  write_file_atomic(path, dump_word_bag(bag));
}

inline WordBag load_word_bag(const std::filesystem::path& path) {
  try {
    return word_bag_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": malformed JSON (" + e.what() + ")");
  }
}

// Candidates per charge, filtered against the charge's graph elements.
inline WordBag build_word_bag(const std::vector<corpus::LabeledDocument>& train_docs, const kgraph::ChargeGraph& graph,
                              const EmbeddingProvider& emb, double eta = kDefaultEta,
                              std::size_t top_k = kDefaultTopK) {
  if (!(eta >= -1.0 && eta <= 1.0)) throw DataError("eta must lie in [-1, 1]");
  DocumentFrequencies freq(train_docs);
  WordBag bag;
  bag.eta = eta;
  bag.top_k = top_k;
  bag.graph_hash = kgraph::graph_hash(graph);
  for (const auto& label : corpus::collect_labels(train_docs)) {
    auto candidates = candidate_keywords(freq, label, top_k, &emb);
    auto elements = kgraph::collect_elements(graph, label);
    auto keywords = select_keywords(candidates, elements, emb, eta);
    if (keywords.empty()) bag.warnings.push_back("charge '" + label + "' has an empty keyword set");
    bag.bags[label] = std::move(keywords);
  }
  return bag;
}

// Most document-frequent words of each charge, no graph filter; sizes[label]
// words per charge.
inline WordBag frequency_word_bag(const std::vector<corpus::LabeledDocument>& train_docs,
                                  const std::map<std::string, std::size_t>& sizes) {
  DocumentFrequencies freq(train_docs);
  WordBag bag;
  bag.statistic = "document-frequency";
  bag.top_k = 0;
  for (const auto& label : corpus::collect_labels(train_docs)) {
    auto it = sizes.find(label);
    if (it == sizes.end()) throw DataError("no bag size given for charge '" + label + "'");
    bag.top_k = std::max(bag.top_k, it->second);
    std::vector<ScoredWord> scored;
    for (const auto& [word, per_label] : freq.table()) {
      auto df = freq.df(word, label);
      if (df > 0) scored.push_back({word, static_cast<double>(df)});
    }
    KeywordSet words;
    for (auto& s : detail::rank_top(std::move(scored), it->second)) words.push_back(std::move(s.word));
    if (words.empty()) bag.warnings.push_back("charge '" + label + "' has an empty keyword set");
    bag.bags[label] = std::move(words);
  }
  return bag;
}

// Frequency bag whose per-charge sizes match `reference`.
inline WordBag frequency_word_bag_like(const std::vector<corpus::LabeledDocument>& train_docs,
                                       const WordBag& reference) {
  std::map<std::string, std::size_t> sizes;
  for (const auto& [label, words] : reference.bags) sizes[label] = words.size();
  auto bag = frequency_word_bag(train_docs, sizes);
  bag.graph_hash = "";
  return bag;
}

// ---------------------------------------------------------------------------
// Target attention

// Row-major L x N 0/1 matrix; entry (i, n) is 1 iff token i is in bag n.
struct TargetAttention {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  double at(std::size_t i, std::size_t n) const { return data[i * cols + n]; }
  std::vector<double> column(std::size_t n) const {
    std::vector<double> out(rows);
    for (std::size_t i = 0; i < rows; ++i) out[i] = at(i, n);
    return out;
  }
  // 1 where the token is in any bag.
  std::vector<double> any() const {
    std::vector<double> out(rows, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t n = 0; n < cols; ++n) out[i] = std::max(out[i], at(i, n));
    }
    return out;
  }
};

// Columns follow the bag's (sorted) label order.
inline TargetAttention target_attention(const corpus::EncodedDocument& doc, const WordBag& bag) {
  std::vector<std::unordered_set<std::string>> sets;
  for (const auto& [label, words] : bag.bags) sets.emplace_back(words.begin(), words.end());
  TargetAttention t{doc.tokens.size(), sets.size(), std::vector<double>(doc.tokens.size() * sets.size(), 0.0)};
  for (std::size_t i = 0; i < t.rows; ++i) {
    for (std::size_t n = 0; n < t.cols; ++n) {
      if (sets[n].contains(doc.tokens[i])) t.data[i * t.cols + n] = 1.0;
    }
  }
  return t;
}

}  // namespace fwgb::wordbag
