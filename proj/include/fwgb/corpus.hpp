#pragma once

// Dataset ingestion, tokenization, vocabulary, encoding, splits and the
// synthetic confusable-corpus generator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "fwgb/common.hpp"

namespace fwgb::corpus {

struct LabeledDocument {
  std::string id;
  std::string text;
  std::string label;

  bool operator==(const LabeledDocument&) const = default;
};

// Sorted, de-duplicated charge labels; index = label id.
using LabelSet = std::vector<std::string>;

inline LabelSet collect_labels(const std::vector<LabeledDocument>& docs) {
  std::set<std::string> unique;
  for (const auto& d : docs) unique.insert(d.label);
  return {unique.begin(), unique.end()};
}

inline std::size_t label_index(const LabelSet& labels, std::string_view label) {
  auto it = std::lower_bound(labels.begin(), labels.end(), label);
  if (it == labels.end() || *it != label) throw DataError("unknown label '" + std::string(label) + "'");
  return static_cast<std::size_t>(it - labels.begin());
}

// ---------------------------------------------------------------------------
// JSON-lines I/O

inline std::vector<LabeledDocument> parse_dataset(std::string_view contents, std::string_view source = "<memory>") {
  std::vector<LabeledDocument> docs;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= contents.size()) {
    auto nl = contents.find('\n', pos);
    auto line = contents.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? contents.size() + 1 : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    auto where = [&] { return std::string(source) + ":" + std::to_string(line_no) + ": "; };
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where() + "malformed JSON (" + e.what() + ")");
    }
    if (!rec.is_object()) throw DataError(where() + "record is not an object");
    LabeledDocument doc;
    for (auto [field, dest] : {std::pair{"id", &doc.id}, {"text", &doc.text}, {"label", &doc.label}}) {
      auto it = rec.find(field);
      if (it == rec.end()) throw DataError(where() + "missing field \"" + field + "\"");
      if (!it->is_string()) throw DataError(where() + "field \"" + field + "\" is not a string");
      *dest = it->get<std::string>();
    }
    if (doc.text.empty()) throw DataError(where() + "empty text");
    if (doc.label.empty()) throw DataError(where() + "empty label");
    if (!seen.insert(doc.id).second) throw DataError(where() + "duplicate id '" + doc.id + "'");
    docs.push_back(std::move(doc));
  }
  if (docs.empty()) throw DataError(std::string(source) + ": dataset is empty");
  return docs;
}

inline std::vector<LabeledDocument> load_dataset(const std::filesystem::path& path) {
  return parse_dataset(read_file(path), path.string());
}

inline std::string dump_dataset(const std::vector<LabeledDocument>& docs) {
  std::string out;
  for (const auto& d : docs) {
    nlohmann::ordered_json rec;
    rec["id"] = d.id;
    rec["text"] = d.text;
    rec["label"] = d.label;
    out += rec.dump();
    out += '\n';
  }
  return out;
}

inline void save_dataset(const std::filesystem::path& path, const std::vector<LabeledDocument>& docs) {
  write_file_atomic(path, dump_dataset(docs));
}

// ---------------------------------------------------------------------------
// Tokenization

namespace detail {

// Decodes one UTF-8 sequence starting at text[i]; invalid bytes decode to
// U+FFFD and consume a single byte.
inline char32_t decode_utf8(std::string_view text, std::size_t& i) {
  auto b0 = static_cast<unsigned char>(text[i]);
  auto cont = [&](std::size_t k) -> int {
    if (i + k >= text.size()) return -1;
    auto b = static_cast<unsigned char>(text[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int n = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    n = 1;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    n = 2;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    n = 3;
    cp = b0 & 0x07;
  } else {
    ++i;
    return 0xFFFD;
  }
  for (int k = 1; k <= n; ++k) {
    int c = cont(static_cast<std::size_t>(k));
    if (c < 0) {
      ++i;
      return 0xFFFD;
    }
    cp = (cp << 6) | static_cast<char32_t>(c);
  }
  i += static_cast<std::size_t>(n) + 1;
  return cp;
}

inline bool is_cjk(char32_t c) {
  return (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF) || (c >= 0x20000 && c <= 0x2FA1F) ||
         (c >= 0xF900 && c <= 0xFAFF) || (c >= 0x3040 && c <= 0x30FF) || (c >= 0xAC00 && c <= 0xD7AF);
}

// Letters and digits of the alphabetic scripts we segment by runs.
inline bool is_word_char(char32_t c) {
  if (c < 0x80) return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
  if (c >= 0xC0 && c <= 0x24F) return c != 0xD7 && c != 0xF7;  // Latin-1 letters, Latin Extended-A/B
  if (c >= 0x370 && c <= 0x3FF) return c != 0x37E && c != 0x387;  // Greek
  if (c >= 0x400 && c <= 0x52F) return true;                      // Cyrillic
  if (c >= 0xFF10 && c <= 0xFF19) return true;                    // fullwidth digits
  if ((c >= 0xFF21 && c <= 0xFF3A) || (c >= 0xFF41 && c <= 0xFF5A)) return true;
  return false;
}

}  // namespace detail

using Tokenizer = std::function<std::vector<std::string>(std::string_view)>;

// Word-character runs form one token, each CJK codepoint is a token of its
// own, everything else separates tokens and is dropped.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t start = i;
    char32_t cp = detail::decode_utf8(text, i);
    auto bytes = text.substr(start, i - start);
    if (detail::is_cjk(cp)) {
      if (!current.empty()) {
        tokens.push_back(std::move(current));
        current.clear();
      }
      tokens.emplace_back(bytes);
    } else if (detail::is_word_char(cp)) {
      current.append(bytes);
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

inline const Tokenizer& default_tokenizer() {
  static const Tokenizer tok = [](std::string_view t) { return tokenize(t); };
  return tok;
}

// ---------------------------------------------------------------------------
// Vocabulary

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;
inline constexpr int kDefaultMinFreq = 2;

class Vocabulary {
 public:
  Vocabulary() : tokens_{"<pad>", "<unk>"} {}

  // `tokens` excludes the two reserved entries.
  explicit Vocabulary(const std::vector<std::string>& tokens) : Vocabulary() {
    for (const auto& t : tokens) {
      if (!index_.emplace(t, static_cast<std::int32_t>(tokens_.size())).second) {
        throw DataError("duplicate vocabulary token '" + t + "'");
      }
      tokens_.push_back(t);
    }
  }

  std::int32_t id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnkId : it->second;
  }
  bool contains(std::string_view token) const { return index_.contains(std::string(token)); }
  const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }

  // Non-reserved tokens in id order.
  std::vector<std::string> entries() const { return {tokens_.begin() + 2, tokens_.end()}; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

// Ids ordered by frequency (descending), ties broken lexicographically.
inline Vocabulary build_vocabulary(const std::vector<LabeledDocument>& train_docs, int min_freq = kDefaultMinFreq,
                                   const Tokenizer& tokenizer = default_tokenizer()) {
  if (train_docs.empty()) throw DataError("cannot build a vocabulary from an empty training set");
  std::map<std::string, long> counts;
  for (const auto& d : train_docs) {
    for (auto& t : tokenizer(d.text)) ++counts[std::move(t)];
  }
  std::vector<std::pair<std::string, long>> kept;
  for (auto& [tok, n] : counts) {
    if (n >= min_freq) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [tok, n] : kept) tokens.push_back(tok);
  return Vocabulary(tokens);
}

// ---------------------------------------------------------------------------
// Encoding

inline constexpr std::size_t kDefaultMaxLen = 512;

struct EncodedDocument {
  std::string id;
  std::vector<std::int32_t> ids;
  std::vector<std::string> tokens;  // aligned with ids; original surface forms
  std::size_t label = 0;

  std::size_t size() const { return ids.size(); }
  bool operator==(const EncodedDocument&) const = default;
};

inline EncodedDocument encode(const LabeledDocument& doc, const Vocabulary& vocab, const LabelSet& labels,
                              std::size_t max_len = kDefaultMaxLen, const Tokenizer& tokenizer = default_tokenizer()) {
  EncodedDocument out;
  out.id = doc.id;
  out.label = label_index(labels, doc.label);
  out.tokens = tokenizer(doc.text);
  if (out.tokens.size() > max_len) out.tokens.resize(max_len);
  out.ids.reserve(out.tokens.size());
  for (const auto& t : out.tokens) out.ids.push_back(vocab.id(t));
  return out;
}

inline std::vector<EncodedDocument> encode_all(const std::vector<LabeledDocument>& docs, const Vocabulary& vocab,
                                               const LabelSet& labels, std::size_t max_len = kDefaultMaxLen) {
  std::vector<EncodedDocument> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(encode(d, vocab, labels, max_len));
  return out;
}

// ---------------------------------------------------------------------------
// Splits

struct Splits {
  std::vector<LabeledDocument> train;
  std::vector<LabeledDocument> valid;
  std::vector<LabeledDocument> balanced_test;
  std::size_t per_class_test = 0;
  double valid_ratio = 0.1;
  std::uint64_t seed = 0;

  // The validation split doubles as the imbalanced test set.
  const std::vector<LabeledDocument>& imbalanced_test() const { return valid; }
};

// Per class (in label order) the documents are shuffled, the first
// `per_class_test` go to the balanced test set and the remainder is divided
// train/valid at (1 - valid_ratio) : valid_ratio.
inline Splits split_dataset(const std::vector<LabeledDocument>& docs, std::size_t per_class_test, double valid_ratio,
                            std::uint64_t seed) {
  if (!(valid_ratio >= 0.0 && valid_ratio < 1.0)) throw DataError("valid_ratio must be in [0, 1)");
  std::map<std::string, std::vector<const LabeledDocument*>> by_label;
  for (const auto& d : docs) by_label[d.label].push_back(&d);

  Splits s;
  s.per_class_test = per_class_test;
  s.valid_ratio = valid_ratio;
  s.seed = seed;
  std::mt19937_64 rng(seed);
  for (auto& [label, members] : by_label) {
    if (members.size() <= per_class_test) {
      throw DataError("class '" + label + "' has " + std::to_string(members.size()) +
                      " documents, need more than " + std::to_string(per_class_test));
    }
    std::shuffle(members.begin(), members.end(), rng);
    auto rest = members.size() - per_class_test;
    auto n_valid = static_cast<std::size_t>(std::llround(static_cast<double>(rest) * valid_ratio));
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (i < per_class_test) {
        s.balanced_test.push_back(*members[i]);
      } else if (i < per_class_test + n_valid) {
        s.valid.push_back(*members[i]);
      } else {
        s.train.push_back(*members[i]);
      }
    }
  }
  return s;
}

inline nlohmann::ordered_json split_manifest(const Splits& s) {
  auto ids = [](const std::vector<LabeledDocument>& v) {
    std::vector<std::string> out;
    for (const auto& d : v) out.push_back(d.id);
    return out;
  };
  nlohmann::ordered_json j;
  j["seed"] = s.seed;
  j["per_class_test"] = s.per_class_test;
  j["valid_ratio"] = s.valid_ratio;
  j["train"] = ids(s.train);
  j["valid"] = ids(s.valid);
  j["balanced_test"] = ids(s.balanced_test);
  j["imbalanced_test"] = "valid";
  return j;
}

// ---------------------------------------------------------------------------
// Synthetic confusable corpus

struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t shared_vocab = 200;
  std::size_t markers_per_class = 5;
  std::size_t docs_per_class = 66;
  std::size_t min_length = 20;
  std::size_t max_length = 40;
  double injection_probability = 1.0;
  std::size_t max_markers_per_doc = 2;
  std::uint64_t seed = 7;

  void validate() const {
    if (classes < 2) throw DataError("synthetic corpus needs at least 2 classes");
    if (!(injection_probability > 0.0 && injection_probability <= 1.0)) {
      throw DataError("injection probability must be in (0, 1]");
    }
    if (shared_vocab == 0 || markers_per_class == 0 || docs_per_class == 0) {
      throw DataError("synthetic sizes must be positive");
    }
    if (min_length == 0 || min_length > max_length) throw DataError("invalid document length range");
    if (max_markers_per_doc == 0) throw DataError("max_markers_per_doc must be positive");
  }
};

struct SyntheticCorpus {
  std::vector<LabeledDocument> docs;
  std::vector<std::string> labels;                           // class names in order
  std::vector<std::string> filler;                           // shared vocabulary
  std::map<std::string, std::vector<std::string>> markers;   // class -> unique marker words
};

namespace detail {

// Pronounceable pseudo-words made of consonant-vowel syllables.
class WordForge {
 public:
  explicit WordForge(std::mt19937_64& rng) : rng_(rng) {}

  std::string fresh(std::size_t syllables) {
    static constexpr std::string_view kOnset = "bdfgklmnprstvz";
    static constexpr std::string_view kVowel = "aeiou";
    for (;;) {
      std::string w;
      for (std::size_t s = 0; s < syllables; ++s) {
        w += kOnset[pick(kOnset.size())];
        w += kVowel[pick(kVowel.size())];
      }
      if (used_.insert(w).second) return w;
    }
  }

 private:
  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  std::mt19937_64& rng_;
  std::unordered_set<std::string> used_;
};

}  // namespace detail

// Filler tokens are drawn Zipf-like from the shared vocabulary so the most
// frequent words are common to every class; with the configured probability a
// document additionally receives 1..max_markers_per_doc of its class's markers
// at random positions.
inline SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  detail::WordForge forge(rng);
  SyntheticCorpus out;

  for (std::size_t c = 0; c < spec.classes; ++c) {
    std::string name = "charge";
    name += static_cast<char>('A' + static_cast<int>(c % 26));
    if (c >= 26) name += std::to_string(c / 26);
    out.labels.push_back(name);
  }
  for (std::size_t w = 0; w < spec.shared_vocab; ++w) out.filler.push_back(forge.fresh(2));
  for (const auto& label : out.labels) {
    auto& m = out.markers[label];
    for (std::size_t k = 0; k < spec.markers_per_class; ++k) m.push_back(forge.fresh(3));
  }

  std::vector<double> zipf(spec.shared_vocab);
  for (std::size_t r = 0; r < zipf.size(); ++r) zipf[r] = 1.0 / static_cast<double>(r + 1);
  std::discrete_distribution<std::size_t> filler_dist(zipf.begin(), zipf.end());
  std::uniform_int_distribution<std::size_t> length_dist(spec.min_length, spec.max_length);
  std::uniform_int_distribution<std::size_t> marker_count(1, spec.max_markers_per_doc);
  std::uniform_int_distribution<std::size_t> marker_pick(0, spec.markers_per_class - 1);
  std::bernoulli_distribution inject(spec.injection_probability);

  std::size_t serial = 0;
  for (const auto& label : out.labels) {
    const auto& own = out.markers[label];
    for (std::size_t d = 0; d < spec.docs_per_class; ++d) {
      std::vector<std::string> words;
      auto len = length_dist(rng);
      for (std::size_t i = 0; i < len; ++i) words.push_back(out.filler[filler_dist(rng)]);
      if (inject(rng)) {
        auto k = marker_count(rng);
        for (std::size_t j = 0; j < k; ++j) {
          auto pos = std::uniform_int_distribution<std::size_t>(0, words.size())(rng);
          words.insert(words.begin() + static_cast<std::ptrdiff_t>(pos), own[marker_pick(rng)]);
        }
      }
      std::string text;
      for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) text += ' ';
        text += words[i];
      }
      char id[32];
      std::snprintf(id, sizeof id, "syn-%05zu", serial++);
      out.docs.push_back({id, std::move(text), label});
    }
  }
  return out;
}

inline nlohmann::ordered_json markers_json(const SyntheticCorpus& c) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [label, words] : c.markers) j[label] = words;
  return j;
}

}  // namespace fwgb::corpus
