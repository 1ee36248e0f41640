#include <random>

#include <gtest/gtest.h>

#include "fwgb/eval.hpp"
#include "fwgb/synthetic.hpp"
#include "fwgb/train.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace fwgb;
using namespace fwgb::eval;

namespace {

const corpus::LabelSet kAB{"A", "B"};

// Untrained checkpoint over the desk corpus vocabulary.
model::Checkpoint small_checkpoint(const synthetic::DeskExperiment& e, model::Mode mode = model::Mode::full) {
  model::Checkpoint ck;
  ck.labels = corpus::collect_labels(e.splits.train);
  ck.vocab = corpus::build_vocabulary(e.splits.train);
  ck.config.mode = mode;
  ck.config.labels = ck.labels.size();
  ck.config.vocab_size = ck.vocab.size();
  ck.config.embed_dim = 6;
  ck.config.hidden_dim = 5;
  ck.params = model::FwgbParameters::init(ck.config, 3);
  return ck;
}

const synthetic::DeskExperiment& desk() {
  static const auto e = synthetic::desk_experiment(7);
  return e;
}

}  // namespace

TEST(Metrics, WorkedExample) {
  auto r = macro_metrics({"A", "A", "B"}, {"A", "B", "B"}, kAB);
  EXPECT_DOUBLE_EQ(r.macro_precision, 0.75);
  EXPECT_DOUBLE_EQ(r.macro_recall, 0.75);
  EXPECT_DOUBLE_EQ(r.macro_f1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.accuracy, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.per_class[0].precision, 0.5);
  EXPECT_DOUBLE_EQ(r.per_class[0].recall, 1.0);
  EXPECT_DOUBLE_EQ(r.per_class[1].precision, 1.0);
  EXPECT_DOUBLE_EQ(r.per_class[1].recall, 0.5);
}

TEST(Metrics, PerfectPredictionsScoreOne) {
  std::vector<std::string> g{"A", "B", "C", "B"};
  auto r = macro_metrics(g, g, {"A", "B", "C"});
  EXPECT_EQ(r.macro_precision, 1.0);
  EXPECT_EQ(r.macro_recall, 1.0);
  EXPECT_EQ(r.macro_f1, 1.0);
  EXPECT_EQ(r.accuracy, 1.0);
}

TEST(Metrics, AbsentClassCountsAsZeroInTheMacroMean) {
  auto r = macro_metrics({"A", "B"}, {"A", "B"}, {"A", "B", "C"});
  EXPECT_EQ(r.per_class[2].precision, 0.0);
  EXPECT_EQ(r.per_class[2].recall, 0.0);
  EXPECT_EQ(r.per_class[2].f1, 0.0);
  EXPECT_DOUBLE_EQ(r.macro_f1, 2.0 / 3.0);
  EXPECT_EQ(r.accuracy, 1.0);
}

TEST(Metrics, ErrorsOnBadInput) {
  EXPECT_THROW(macro_metrics({"A"}, {"Z"}, kAB), DataError);
  EXPECT_THROW(macro_metrics({"A", "B"}, {"A"}, kAB), DataError);
  EXPECT_THROW(macro_metrics({}, {}, kAB), DataError);
}

TEST(Metrics, MatchBruteForceOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    auto f = test::random_metric_fixture(rng);
    auto r = macro_metrics(f.preds, f.golds, f.labels);
    EXPECT_TRUE(test::metrics_agree(r, test::brute_metrics(f.preds, f.golds, f.labels))) << "trial " << trial;
    // Invariants: counts sum to N, diagonal share is Acc, values in [0, 1].
    EXPECT_EQ(r.confusion.total(), f.preds.size());
    EXPECT_EQ(static_cast<double>(r.confusion.diagonal()) / static_cast<double>(r.confusion.total()), r.accuracy);
    double mean_f1 = 0.0;
    for (const auto& c : r.per_class) {
      for (double v : {c.precision, c.recall, c.f1}) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
      mean_f1 += c.f1;
    }
    EXPECT_EQ(mean_f1 / static_cast<double>(f.labels.size()), r.macro_f1);
  }
}

TEST(Confusion, HandTalliedSixPredictions) {
  // (pred, gold): (A,A) (A,A) (A,B) (B,B) (B,A) (B,B)
  auto m = confusion_matrix({"A", "A", "A", "B", "B", "B"}, {"A", "A", "B", "B", "A", "B"}, kAB);
  EXPECT_EQ(m.counts, (std::vector<std::vector<std::size_t>>{{2, 1}, {1, 2}}));
  m = confusion_matrix({"B", "B", "B", "B", "A", "A"}, {"A", "A", "A", "B", "B", "B"}, kAB);
  // rows = predicted: A predicted twice for gold B; B predicted for 3 A and 1 B
  EXPECT_EQ(m.counts, (std::vector<std::vector<std::size_t>>{{0, 2}, {3, 1}}));
  EXPECT_EQ(m.column_sum(0), 3u);
}

TEST(Confusion, BalancedPerfectTestIsDiagonalOfThousands) {
  corpus::LabelSet labels{"Fraud", "Robbery", "Snatch", "Theft"};
  std::vector<std::string> g;
  for (const auto& l : labels) g.insert(g.end(), 1000, l);
  auto m = confusion_matrix(g, g, labels);
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_EQ(m.column_sum(r), 1000u);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(m.counts[r][c], r == c ? 1000u : 0u);
  }
}

TEST(Confusion, CsvAndMarkdownLayout) {
  auto r = macro_metrics({"A", "A", "B"}, {"A", "B", "B"}, kAB);
  r.tag = "balanced";
  EXPECT_EQ(confusion_csv(r.confusion), "predicted\\gold,A,B\nA,1,1\nB,0,1\n");
  auto md = report_markdown(r);
  EXPECT_NE(md.find("| balanced | 0.750 | 0.750 | 0.667 | 0.667 | 3 |"), std::string::npos) << md;
  auto j = to_json(r);
  EXPECT_EQ(j["confusion"]["counts"], nlohmann::json::parse("[[1,1],[0,1]]"));
}

TEST(Explain, TraceWeightsNormalisedAndCsvRoundTrips) {
  for (auto mode : {model::Mode::full, model::Mode::single_attention}) {
    auto ck = small_checkpoint(desk(), mode);
    auto docs = train::encode_for(ck, desk().splits.balanced_test);
    for (std::size_t d = 0; d < 5; ++d) {
      auto t = explain(docs[d], ck);
      ASSERT_EQ(t.heads.size(), mode == model::Mode::full ? 4u : 1u);
      for (std::size_t n = 0; n < t.heads.size(); ++n) {
        double s = 0.0;
        for (double w : t.column(n)) s += w;
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
      EXPECT_EQ(parse_trace_csv(trace_csv(t)), t.weights);
    }
  }
}

TEST(Explain, CsvEscapesAwkwardTokens) {
  AttentionTrace t{"x", {"a,b", "say \"hi\"", "plain"}, {"attention"}, {{0.2}, {0.3}, {0.5}}, "A", "A"};
  auto csv = trace_csv(t);
  EXPECT_NE(csv.find("\"a,b\""), std::string::npos);
  EXPECT_EQ(parse_trace_csv(csv), t.weights);
}

TEST(Explain, UniformAttentionGivesUniformShading) {
  auto ck = small_checkpoint(desk());
  for (auto& x : ck.params.attention.u.mutable_value()) x = 0.0;
  auto doc = train::encode_for(ck, desk().splits.balanced_test).front();
  auto t = explain(doc, ck);
  const double inv = 1.0 / static_cast<double>(doc.size());
  for (const auto& row : parse_trace_csv(trace_csv(t))) {
    for (double w : row) EXPECT_DOUBLE_EQ(w, inv);
  }
  auto shade = shading(t.column(0));
  for (double s : shade) EXPECT_EQ(s, shade.front());
  auto html = trace_html(t);
  EXPECT_NE(html.find("rgba(220,40,40,0.500)"), std::string::npos);
  EXPECT_EQ(html.find("rgba(220,40,40,1.000)"), std::string::npos);
}

TEST(Explain, HtmlShowsPredictedColumnOrAll) {
  auto ck = small_checkpoint(desk());
  auto doc = train::encode_for(ck, desk().splits.balanced_test).front();
  auto t = explain(doc, ck);
  auto one = trace_html(t);
  auto all = trace_html(t, true);
  EXPECT_NE(one.find("head: " + t.predicted), std::string::npos);
  std::size_t heads = 0;
  for (std::size_t p = all.find("<h3>head: "); p != std::string::npos; p = all.find("<h3>head: ", p + 1)) ++heads;
  EXPECT_EQ(heads, 4u);
  EXPECT_EQ(one.find("http"), std::string::npos);  // standalone
  EXPECT_NE(html_escape("<b>&\"").find("&lt;b&gt;&amp;&quot;"), std::string::npos);
}

TEST(Explain, ShadingIsMinMaxScaled) {
  EXPECT_EQ(shading({0.125, 0.625, 0.375}), (std::vector<double>{0.0, 1.0, 0.5}));
}

TEST(Explain, DoesNotAlterModelState) {
  auto ck = small_checkpoint(desk());
  auto docs = train::encode_for(ck, desk().splits.balanced_test);
  auto before_bytes = model::dump_checkpoint(ck);
  auto before = to_json(evaluate(ck, docs, "balanced")).dump();
  for (const auto& d : docs) explain(d, ck);
  EXPECT_EQ(to_json(evaluate(ck, docs, "balanced")).dump(), before);
  EXPECT_EQ(model::dump_checkpoint(ck), before_bytes);
}

TEST(Evaluate, PredictionsJsonlHasOneLinePerDocument) {
  auto ck = small_checkpoint(desk());
  auto docs = train::encode_for(ck, desk().splits.balanced_test);
  std::vector<DocumentPrediction> preds;
  auto r = evaluate(ck, docs, "balanced", &preds);
  EXPECT_EQ(r.documents, 40u);
  EXPECT_EQ(r.confusion.total(), 40u);
  auto text = predictions_jsonl(preds);
  EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), 40u);
  auto first = nlohmann::json::parse(text.substr(0, text.find('\n')));
  EXPECT_EQ(first["id"], docs[0].id);
  EXPECT_EQ(first["probabilities"].size(), 4u);
}

TEST(Explain, TrainedModelAttendsToOwnClassMarkers) {
  auto result = train::train(desk().splits, desk().bag, synthetic::desk_config(7));
  const auto& ck = result.checkpoint;
  auto docs = train::encode_for(ck, desk().splits.balanced_test);
  std::size_t correct = 0, on_marker = 0;
  for (const auto& d : docs) {
    auto t = explain(d, ck);
    if (t.predicted != t.gold) continue;
    ++correct;
    auto col = t.column(t.head_index(t.gold));
    auto peak = static_cast<std::size_t>(std::max_element(col.begin(), col.end()) - col.begin());
    const auto& markers = desk().corpus.markers.at(t.gold);
    on_marker += std::find(markers.begin(), markers.end(), t.tokens[peak]) != markers.end();
  }
  ASSERT_GT(correct, 0u);
  EXPECT_GE(static_cast<double>(on_marker) / static_cast<double>(correct), 0.8);
}
