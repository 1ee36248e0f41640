#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "fwgb/synthetic.hpp"
#include "fwgb/wordbag.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace fwgb;
using namespace fwgb::wordbag;

namespace {

kgraph::ElementSet elements(std::vector<std::string> e) { return {"X", std::move(e)}; }

CandidateSet candidates(std::vector<std::string> words) {
  CandidateSet c{"X", {}};
  double s = static_cast<double>(words.size());
  for (auto& w : words) c.words.push_back({std::move(w), s--});
  return c;
}

corpus::SyntheticCorpus small_corpus() {
  corpus::SyntheticSpec spec;
  spec.docs_per_class = 50;
  return corpus::generate_synthetic(spec);
}

// Independent document-frequency log-odds straight from the definition.
double brute_log_odds(const std::vector<corpus::LabeledDocument>& docs, const std::string& word,
                      const std::string& label) {
  double in = 0, out = 0, n_in = 0, n_out = 0;
  for (const auto& d : docs) {
    auto toks = corpus::tokenize(d.text);
    bool has = std::find(toks.begin(), toks.end(), word) != toks.end();
    if (d.label == label) {
      n_in += 1;
      in += has;
    } else {
      n_out += 1;
      out += has;
    }
  }
  return std::log((in + 1) / (n_in - in + 1)) - std::log((out + 1) / (n_out - out + 1));
}

}  // namespace

TEST(LogOdds, HandValue) {
  // log(4/2) - log(2/6) = log 6
  EXPECT_NEAR(smoothed_log_odds(3, 4, 1, 6), std::log(6.0), 1e-15);
  EXPECT_DOUBLE_EQ(smoothed_log_odds(2, 5, 2, 5), 0.0);
}

TEST(Candidates, MarkersOutrankAllFillerOnSyntheticCorpus) {
  auto c = small_corpus();
  DocumentFrequencies freq(c.docs);
  for (const auto& label : c.labels) {
    auto cand = candidate_keywords(freq, label, 1000);
    const auto& markers = c.markers.at(label);
    std::set<std::string> own(markers.begin(), markers.end());
    double worst_marker = 1e300, best_filler = -1e300;
    for (const auto& w : cand.words) {
      EXPECT_NEAR(w.score, brute_log_odds(c.docs, w.word, label), 1e-12) << w.word;
      if (own.contains(w.word)) worst_marker = std::min(worst_marker, w.score);
      if (std::find(c.filler.begin(), c.filler.end(), w.word) != c.filler.end()) {
        best_filler = std::max(best_filler, w.score);
      }
    }
    EXPECT_GT(worst_marker, best_filler) << label;
    for (std::size_t i = 0; i < markers.size(); ++i) EXPECT_TRUE(own.contains(cand.words[i].word));

    auto top1 = candidate_keywords(freq, label, 1);
    ASSERT_EQ(top1.words.size(), 1u);
    EXPECT_TRUE(own.contains(top1.words[0].word));
  }
}

TEST(Candidates, TiesBreakLexicographicallyAndErrors) {
  std::vector<corpus::LabeledDocument> docs{{"1", "b a", "A"}, {"2", "c", "B"}};
  auto cand = candidate_keywords(docs, "A", 10);
  ASSERT_EQ(cand.words.size(), 3u);
  EXPECT_EQ(cand.words[0].word, "a");
  EXPECT_EQ(cand.words[1].word, "b");
  EXPECT_EQ(cand.words[0].score, cand.words[1].score);
  EXPECT_THROW(candidate_keywords(docs, "Z", 10), DataError);
  EXPECT_THROW(candidate_keywords(docs, "A", 0), DataError);
}

TEST(Similarity, HandCosineAverage) {
  VectorTable t(2);
  t.set("w", {1, 0});
  t.set("e1", {1, 0});
  t.set("e2", {0, 1});
  EXPECT_DOUBLE_EQ(average_element_similarity("w", elements({"e1", "e2"}), t), 0.5);
  t.set("zero", {0, 0});
  EXPECT_THROW(average_element_similarity("zero", elements({"e1"}), t), NumericError);
  EXPECT_THROW(average_element_similarity("nope", elements({"e1"}), t), DataError);
}

TEST(Similarity, PhraseVectorSkipsUnknownTokens) {
  VectorTable t(2);
  t.set("snatch", {1, 0});
  t.set("away", {0, 1});
  EXPECT_EQ(phrase_vector("snatch the away", t), (std::vector<double>{0.5, 0.5}));
  EXPECT_THROW(phrase_vector("none of these", t), DataError);
}

TEST(Select, ThreeCandidatesHandComputed) {
  VectorTable t(2);
  t.set("e1", {1, 0});
  t.set("e2", {0, 1});
  t.set("p", {1, 1});   // (0.7071 + 0.7071) / 2 = 0.7071
  t.set("q", {1, 0});   // (1 + 0) / 2 = 0.5
  t.set("r", {-1, 1});  // (-0.7071 + 0.7071) / 2 = 0
  auto got = select_keywords(candidates({"r", "q", "p"}), elements({"e1", "e2"}), t, 0.4);
  EXPECT_EQ(got, (KeywordSet{"q", "p"}));
  // Strict threshold: q's 0.5 does not pass 0.5.
  EXPECT_EQ(select_keywords(candidates({"r", "q", "p"}), elements({"e1", "e2"}), t, 0.5), (KeywordSet{"p"}));
}

TEST(Select, MonotoneInEta) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  VectorTable t(3);
  std::vector<std::string> words;
  for (int i = 0; i < 10; ++i) {
    words.push_back("w" + std::to_string(i));
    t.set(words.back(), {normal(rng), normal(rng), normal(rng)});
  }
  t.set("e", {1, 0.5, 0});
  t.set("f", {0, 1, 1});
  KeywordSet previous = words;
  for (double eta = -1.0; eta <= 1.0; eta += 0.05) {
    auto cur = select_keywords(candidates(words), elements({"e", "f"}), t, eta);
    for (const auto& w : cur) EXPECT_NE(std::find(previous.begin(), previous.end(), w), previous.end());
    previous = cur;
  }
}

TEST(WordBag, MarkerElementsAtHighEtaRecoverMarkerSetsExactly) {
  auto c = small_corpus();
  auto emb = synthetic::marker_aligned_embeddings(c, 32, 3);
  // One edge per charge whose element text lists that charge's markers.
  kgraph::ChargeGraph g;
  g.nodes.push_back({"root", kgraph::NodeKind::root, std::nullopt});
  for (const auto& label : c.labels) {
    std::string text;
    for (const auto& m : c.markers.at(label)) text += m + " ";
    g.nodes.push_back({label, kgraph::NodeKind::charge, label});
    g.edges.push_back({"root", label, text});
  }
  auto bag = build_word_bag(c.docs, g, emb, 0.9, 50);
  for (const auto& label : c.labels) {
    std::set<std::string> got(bag.bags.at(label).begin(), bag.bags.at(label).end());
    std::set<std::string> want(c.markers.at(label).begin(), c.markers.at(label).end());
    EXPECT_EQ(got, want) << label;
  }
  EXPECT_TRUE(bag.warnings.empty());
}

TEST(WordBag, MarkerAlignedGraphAtDefaultEta) {
  auto c = small_corpus();
  auto bag = build_word_bag(c.docs, synthetic::marker_aligned_graph(c), synthetic::marker_aligned_embeddings(c, 32, 3));
  for (const auto& label : c.labels) {
    std::set<std::string> got(bag.bags.at(label).begin(), bag.bags.at(label).end());
    std::set<std::string> want(c.markers.at(label).begin(), c.markers.at(label).end());
    EXPECT_EQ(got, want) << label;
  }
}

TEST(WordBag, EmptyBagWarnsAndJsonRoundTrips) {
  test::TempDir dir;
  auto c = small_corpus();
  auto bag = build_word_bag(c.docs, synthetic::marker_aligned_graph(c), synthetic::marker_aligned_embeddings(c, 32, 3),
                            0.99);
  EXPECT_EQ(bag.warnings.size(), 4u);
  save_word_bag(dir / "bag.json", bag);
  EXPECT_EQ(load_word_bag(dir / "bag.json"), bag);
  EXPECT_THROW(build_word_bag(c.docs, synthetic::marker_aligned_graph(c), HashEmbeddings(8), 2.0), DataError);
}

TEST(WordBag, FrequencyBagMatchesReferenceSizes) {
  auto c = small_corpus();
  auto kg_bag = build_word_bag(c.docs, synthetic::marker_aligned_graph(c), synthetic::marker_aligned_embeddings(c, 32, 3));
  auto freq = frequency_word_bag_like(c.docs, kg_bag);
  EXPECT_FALSE(freq.eta.has_value());
  EXPECT_EQ(freq.statistic, "document-frequency");
  for (const auto& [label, words] : kg_bag.bags) EXPECT_EQ(freq.bags.at(label).size(), words.size());
}

TEST(TargetAttentionTest, HandMembership) {
  WordBag bag;
  bag.bags = {{"A", {"snatch"}}, {"B", {"steal"}}};
  corpus::EncodedDocument doc{"d", {1, 1, 1, 1, 1}, {"he", "did", "snatch", "the", "bag"}, 0};
  auto t = target_attention(doc, bag);
  EXPECT_EQ(t.column(0), (std::vector<double>{0, 0, 1, 0, 0}));
  EXPECT_EQ(t.column(1), (std::vector<double>{0, 0, 0, 0, 0}));
  EXPECT_EQ(t.any(), (std::vector<double>{0, 0, 1, 0, 0}));
}

TEST(Embeddings, TextFormatRoundTripAndErrors) {
  VectorTable t(3);
  t.set("a", {0.1, -2.5, 1e-300});
  t.set("b", {1.0 / 3.0, 0, 7});
  auto back = parse_embeddings(dump_embeddings(t));
  EXPECT_EQ(back.words(), t.words());
  EXPECT_EQ(*back.lookup("b"), *t.lookup("b"));
  EXPECT_EQ(*back.lookup("a"), *t.lookup("a"));
  EXPECT_THROW(parse_embeddings("2 3\na 1 2 3\n"), DataError);
  EXPECT_THROW(parse_embeddings("1 3\na 1 2\n"), DataError);
  EXPECT_THROW(parse_embeddings("1 3\na 1 x 2\n"), DataError);
  EXPECT_THROW(parse_embeddings("garbage\n"), DataError);
}

TEST(Select, MatchesBruteForceOnRandomTinyInstances) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> step(-10, 10);
  for (int trial = 0; trial < 200; ++trial) {
    auto k = test::random_keyword_instance(rng);
    double eta = step(rng) / 10.0 + 0.05;
    EXPECT_EQ(select_keywords(k.candidates, k.elements, k.table, eta), test::brute_select(k, eta)) << trial;
  }
}
