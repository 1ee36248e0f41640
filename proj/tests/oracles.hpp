#pragma once

// Brute-force reference implementations shared by unit tests and the
// acceptance binary. They count and loop directly instead of reusing library
// helpers.

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "fwgb/eval.hpp"
#include "fwgb/wordbag.hpp"

namespace fwgb::test {

struct OracleMetrics {
  std::vector<double> precision, recall, f1;
  double macro_p = 0.0, macro_r = 0.0, macro_f = 0.0, accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [predicted][gold]
};

inline OracleMetrics brute_metrics(const std::vector<std::string>& preds, const std::vector<std::string>& golds,
                                   const std::vector<std::string>& labels) {
  OracleMetrics m;
  const std::size_t n = labels.size();
  m.confusion.assign(n, std::vector<std::size_t>(n, 0));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == labels[r] && golds[i] == labels[c]) ++m.confusion[r][c];
      }
    }
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == golds[i];
  for (const auto& label : labels) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      bool p = preds[i] == label, g = golds[i] == label;
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
    double prec = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    double rec = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    double f = prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    m.precision.push_back(prec);
    m.recall.push_back(rec);
    m.f1.push_back(f);
    m.macro_p += prec;
    m.macro_r += rec;
    m.macro_f += f;
  }
  m.macro_p /= static_cast<double>(n);
  m.macro_r /= static_cast<double>(n);
  m.macro_f /= static_cast<double>(n);
  m.accuracy = static_cast<double>(hits) / static_cast<double>(preds.size());
  return m;
}

// Exact agreement of the library report with the oracle.
inline bool metrics_agree(const eval::EvalReport& r, const OracleMetrics& m) {
  if (r.confusion.counts != m.confusion) return false;
  if (r.macro_precision != m.macro_p || r.macro_recall != m.macro_r || r.macro_f1 != m.macro_f ||
      r.accuracy != m.accuracy) {
    return false;
  }
  for (std::size_t k = 0; k < m.f1.size(); ++k) {
    const auto& c = r.per_class[k];
    if (c.precision != m.precision[k] || c.recall != m.recall[k] || c.f1 != m.f1[k]) return false;
  }
  return true;
}

struct MetricFixture {
  std::vector<std::string> labels, preds, golds;
};

// Up to 20 predictions over up to 4 classes.
inline MetricFixture random_metric_fixture(std::mt19937_64& rng) {
  MetricFixture f;
  std::size_t classes = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
  std::size_t count = std::uniform_int_distribution<std::size_t>(1, 20)(rng);
  for (std::size_t k = 0; k < classes; ++k) f.labels.push_back(std::string(1, static_cast<char>('A' + k)));
  std::uniform_int_distribution<std::size_t> pick(0, classes - 1);
  for (std::size_t i = 0; i < count; ++i) {
    f.preds.push_back(f.labels[pick(rng)]);
    f.golds.push_back(f.labels[pick(rng)]);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Keyword selection

struct KeywordInstance {
  wordbag::VectorTable table{3};
  wordbag::CandidateSet candidates;
  kgraph::ElementSet elements;
  std::map<std::string, std::vector<double>> vectors;
};

// At most 10 candidates and 4 single-word elements with small integer vectors.
inline KeywordInstance random_keyword_instance(std::mt19937_64& rng) {
  KeywordInstance k;
  std::uniform_int_distribution<int> coord(-3, 3);
  auto vec = [&] {
    std::vector<double> v;
    do {
      v = {double(coord(rng)), double(coord(rng)), double(coord(rng))};
    } while (v[0] == 0 && v[1] == 0 && v[2] == 0);
    return v;
  };
  std::size_t n_words = std::uniform_int_distribution<std::size_t>(1, 10)(rng);
  std::size_t n_elems = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
  k.candidates.charge = "X";
  k.elements.charge = "X";
  for (std::size_t i = 0; i < n_words; ++i) {
    std::string w = "cand" + std::to_string(i);
    k.vectors[w] = vec();
    k.candidates.words.push_back({w, static_cast<double>(n_words - i)});
  }
  for (std::size_t i = 0; i < n_elems; ++i) {
    std::string e = "elem" + std::to_string(i);
    k.vectors[e] = vec();
    k.elements.elements.push_back(e);
  }
  for (const auto& [w, v] : k.vectors) k.table.set(w, v);
  return k;
}

inline std::vector<std::string> brute_select(const KeywordInstance& k, double eta) {
  std::vector<std::string> out;
  for (const auto& c : k.candidates.words) {
    const auto& w = k.vectors.at(c.word);
    double total = 0.0;
    for (const auto& e : k.elements.elements) {
      const auto& r = k.vectors.at(e);
      double dot = w[0] * r[0] + w[1] * r[1] + w[2] * r[2];
      double nw = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
      double nr = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
      total += std::min(1.0, std::max(-1.0, dot / (nw * nr)));
    }
    if (total / static_cast<double>(k.elements.elements.size()) > eta) out.push_back(c.word);
  }
  return out;
}

}  // namespace fwgb::test
