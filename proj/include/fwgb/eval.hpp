#pragma once

// Macro precision/recall/F1, accuracy, confusion matrices and attention
// explanations (raw CSV plus a standalone HTML heatmap).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fwgb/common.hpp"
#include "fwgb/corpus.hpp"
#include "fwgb/model.hpp"

namespace fwgb::eval {

struct ClassMetrics {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;  // gold count
};

// Rows are predicted labels, columns gold labels.
struct ConfusionMatrix {
  corpus::LabelSet labels;
  std::vector<std::vector<std::size_t>> counts;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& r : counts)
      for (auto c : r) n += c;
    return n;
  }
  std::size_t diagonal() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) n += counts[i][i];
    return n;
  }
  std::size_t column_sum(std::size_t gold) const {
    std::size_t n = 0;
    for (const auto& r : counts) n += r[gold];
    return n;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

struct EvalReport {
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  std::string tag;  // balanced | imbalanced
  std::string config_hash;
  std::size_t documents = 0;
};

inline ConfusionMatrix confusion_matrix(const std::vector<std::string>& preds, const std::vector<std::string>& golds,
                                        const corpus::LabelSet& labels) {
  if (preds.size() != golds.size()) throw DataError("predictions and gold labels differ in length");
  ConfusionMatrix m{labels, std::vector<std::vector<std::size_t>>(labels.size(), std::vector<std::size_t>(labels.size(), 0))};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ++m.counts[corpus::label_index(labels, preds[i])][corpus::label_index(labels, golds[i])];
  }
  return m;
}

// Unweighted means over the full declared label set. A zero denominator gives
// 0 for that precision/recall, and F1 is 0 when P + R = 0. Ma-F is the mean
// of the per-class F1 values.
inline EvalReport macro_metrics(const std::vector<std::string>& preds, const std::vector<std::string>& golds,
                                const corpus::LabelSet& labels) {
  if (preds.empty()) throw DataError("cannot score an empty prediction list");
  EvalReport r;
  r.confusion = confusion_matrix(preds, golds, labels);
  r.documents = preds.size();
  const auto& m = r.confusion.counts;
  const std::size_t n = labels.size();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t tp = m[k][k];
    std::size_t predicted = 0, gold = 0;
    for (std::size_t j = 0; j < n; ++j) {
      predicted += m[k][j];
      gold += m[j][k];
    }
    ClassMetrics c;
    c.label = labels[k];
    c.support = gold;
    c.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    c.recall = gold ? static_cast<double>(tp) / static_cast<double>(gold) : 0.0;
    c.f1 = (c.precision + c.recall) > 0.0 ? 2.0 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
    r.macro_precision += c.precision;
    r.macro_recall += c.recall;
    r.macro_f1 += c.f1;
    r.per_class.push_back(c);
  }
  r.macro_precision /= static_cast<double>(n);
  r.macro_recall /= static_cast<double>(n);
  r.macro_f1 /= static_cast<double>(n);
  r.accuracy = static_cast<double>(r.confusion.diagonal()) / static_cast<double>(preds.size());
  return r;
}

// ---------------------------------------------------------------------------
// Serialisation

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["tag"] = r.tag;
  j["config_hash"] = r.config_hash;
  j["documents"] = r.documents;
  j["macro_precision"] = r.macro_precision;
  j["macro_recall"] = r.macro_recall;
  j["macro_f1"] = r.macro_f1;
  j["accuracy"] = r.accuracy;
  j["per_class"] = nlohmann::ordered_json::array();
  for (const auto& c : r.per_class) {
    j["per_class"].push_back(
        {{"label", c.label}, {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}});
  }
  j["confusion"] = {{"orientation", "rows=predicted, columns=gold"},
                    {"labels", r.confusion.labels},
                    {"counts", r.confusion.counts}};
  return j;
}

inline std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

inline std::string confusion_csv(const ConfusionMatrix& m) {
  std::string out = "predicted\\gold";
  for (const auto& l : m.labels) out += "," + l;
  out += "\n";
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    out += m.labels[i];
    for (auto c : m.counts[i]) out += "," + std::to_string(c);
    out += "\n";
  }
  return out;
}

inline std::string report_markdown(const EvalReport& r) {
  std::ostringstream out;
  out << "| Tag | Ma-P | Ma-R | Ma-F | Acc | Docs |\n|---|---|---|---|---|---|\n";
  out << "| " << r.tag << " | " << fixed3(r.macro_precision) << " | " << fixed3(r.macro_recall) << " | "
      << fixed3(r.macro_f1) << " | " << fixed3(r.accuracy) << " | " << r.documents << " |\n\n";
  out << "| Label | P | R | F1 | Support |\n|---|---|---|---|---|\n";
  for (const auto& c : r.per_class) {
    out << "| " << c.label << " | " << fixed3(c.precision) << " | " << fixed3(c.recall) << " | " << fixed3(c.f1)
        << " | " << c.support << " |\n";
  }
  out << "\nConfusion matrix (rows = predicted, columns = gold):\n\n| |";
  for (const auto& l : r.confusion.labels) out << " " << l << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < r.confusion.labels.size(); ++i) out << "---|";
  out << "\n";
  for (std::size_t i = 0; i < r.confusion.labels.size(); ++i) {
    out << "| " << r.confusion.labels[i] << " |";
    for (auto c : r.confusion.counts[i]) out << " " << c << " |";
    out << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Model evaluation

struct DocumentPrediction {
  std::string id;
  std::string gold;
  std::string predicted;
  std::vector<double> probabilities;
};

inline std::vector<DocumentPrediction> predict_all(const model::Checkpoint& ck,
                                                   const std::vector<corpus::EncodedDocument>& docs) {
  std::vector<DocumentPrediction> out;
  out.reserve(docs.size());
  for (const auto& d : docs) {
    auto p = model::forward(d, ck.params, ck.config);
    out.push_back({d.id, ck.labels[d.label], ck.labels[p.predicted()], p.distribution()});
  }
  return out;
}

inline EvalReport evaluate(const model::Checkpoint& ck, const std::vector<corpus::EncodedDocument>& docs,
                           const std::string& tag, std::vector<DocumentPrediction>* dump = nullptr) {
  auto preds = predict_all(ck, docs);
  std::vector<std::string> p, g;
  for (const auto& d : preds) {
    p.push_back(d.predicted);
    g.push_back(d.gold);
  }
  auto report = macro_metrics(p, g, ck.labels);
  report.tag = tag;
  report.config_hash = model::config_hash(ck.config);
  if (dump) *dump = std::move(preds);
  return report;
}

inline std::string predictions_jsonl(const std::vector<DocumentPrediction>& preds) {
  std::string out;
  for (const auto& d : preds) {
    nlohmann::ordered_json j;
    j["id"] = d.id;
    j["gold"] = d.gold;
    j["predicted"] = d.predicted;
    j["probabilities"] = d.probabilities;
    out += j.dump() + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attention explanations

struct AttentionTrace {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<std::string> heads;        // label per column ("attention" for a single head)
  std::vector<std::vector<double>> weights;  // weights[i][n], L x heads
  std::string gold;
  std::string predicted;

  std::vector<double> column(std::size_t n) const {
    std::vector<double> out;
    for (const auto& r : weights) out.push_back(r[n]);
    return out;
  }
  std::size_t head_index(const std::string& label) const {
    if (heads.size() == 1) return 0;
    auto it = std::find(heads.begin(), heads.end(), label);
    if (it == heads.end()) throw DataError("no attention head for '" + label + "'");
    return static_cast<std::size_t>(it - heads.begin());
  }
};

// Runs inference only; parameters are read, never written.
inline AttentionTrace explain(const corpus::EncodedDocument& doc, const model::Checkpoint& ck) {
  auto p = model::forward(doc, ck.params, ck.config);
  AttentionTrace t;
  t.id = doc.id;
  t.tokens = doc.tokens;
  t.gold = ck.labels[doc.label];
  t.predicted = ck.labels[p.predicted()];
  if (ck.config.heads() == 1) {
    t.heads = {"attention"};
  } else {
    t.heads = ck.labels;
  }
  const auto& a = p.attention;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::vector<double> r;
    for (std::size_t n = 0; n < a.cols(); ++n) r.push_back(a.at(i, n));
    t.weights.push_back(std::move(r));
  }
  return t;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// position,token,<head...> with shortest round-trip decimals.
inline std::string trace_csv(const AttentionTrace& t) {
  std::string out = "position,token";
  for (const auto& h : t.heads) out += "," + csv_escape(h);
  out += "\n";
  for (std::size_t i = 0; i < t.tokens.size(); ++i) {
    out += std::to_string(i) + "," + csv_escape(t.tokens[i]);
    for (double w : t.weights[i]) out += "," + format_double(w);
    out += "\n";
  }
  return out;
}

// Reads back the weight matrix written by trace_csv.
inline std::vector<std::vector<double>> parse_trace_csv(const std::string& csv) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          cell += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        cells.push_back(std::move(cell));
        cell.clear();
      } else {
        cell += c;
      }
    }
    cells.push_back(std::move(cell));
    std::vector<double> r;
    for (std::size_t k = 2; k < cells.size(); ++k) r.push_back(parse_double(cells[k]));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::string html_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Background intensity of each token is its weight min-max scaled within the
// column; a constant column renders every token at the same intensity.
inline std::vector<double> shading(const std::vector<double>& w) {
  if (w.empty()) return {};
  auto [lo, hi] = std::minmax_element(w.begin(), w.end());
  std::vector<double> out(w.size(), 0.5);
  if (*hi - *lo <= 0.0) return out;
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = (w[i] - *lo) / (*hi - *lo);
  return out;
}

// Predicted label's column, or every column when all_columns is set.
inline std::string trace_html(const AttentionTrace& t, bool all_columns = false) {
  std::ostringstream out;
  out << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>attention " << html_escape(t.id)
      << "</title></head>\n<body style=\"font-family:sans-serif;max-width:60em;margin:2em auto\">\n";
  out << "<h2>" << html_escape(t.id) << "</h2>\n<p>gold: <b>" << html_escape(t.gold) << "</b> &middot; predicted: <b>"
      << html_escape(t.predicted) << "</b></p>\n";
  std::vector<std::size_t> cols;
  if (all_columns) {
    for (std::size_t n = 0; n < t.heads.size(); ++n) cols.push_back(n);
  } else {
    cols.push_back(t.head_index(t.predicted));
  }
  for (auto n : cols) {
    auto w = t.column(n);
    auto shade = shading(w);
    out << "<h3>head: " << html_escape(t.heads[n]) << "</h3>\n<p style=\"line-height:2\">";
    for (std::size_t i = 0; i < t.tokens.size(); ++i) {
      char style[96];
      std::snprintf(style, sizeof style, "background:rgba(220,40,40,%.3f);padding:2px 3px;border-radius:3px", shade[i]);
      out << "<span style=\"" << style << "\" title=\"" << format_double(w[i]) << "\">" << html_escape(t.tokens[i])
          << "</span> ";
    }
    out << "</p>\n";
  }
  out << "</body></html>\n";
  return out.str();
}

}  // namespace fwgb::eval
