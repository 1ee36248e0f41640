#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "fwgb/corpus.hpp"
#include "helpers.hpp"

using namespace fwgb;
using namespace fwgb::corpus;

namespace {

LabeledDocument doc(std::string id, std::string text, std::string label) {
  return {std::move(id), std::move(text), std::move(label)};
}

}  // namespace

TEST(Dataset, ParsesRecordsAndCollectsSortedLabels) {
  auto docs = parse_dataset(
      "{\"id\":\"1\",\"text\":\"x\",\"label\":\"A\"}\n"
      "{\"id\":\"2\",\"text\":\"y\",\"label\":\"B\"}\n"
      "{\"id\":\"3\",\"text\":\"z\",\"label\":\"A\"}\n");
  ASSERT_EQ(docs.size(), 3u);
  EXPECT_EQ(collect_labels(docs), (LabelSet{"A", "B"}));
  EXPECT_EQ(docs[1].text, "y");
}

TEST(Dataset, MissingLabelNamesTheLine) {
  try {
    parse_dataset("{\"id\":\"1\",\"text\":\"x\",\"label\":\"A\"}\n{\"id\":\"2\",\"text\":\"y\"}\n", "f.jsonl");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("f.jsonl:2"), std::string::npos) << e.what();
  }
}

TEST(Dataset, RejectsMalformedEmptyAndDuplicates) {
  EXPECT_THROW(parse_dataset(""), DataError);
  EXPECT_THROW(parse_dataset("\n\n"), DataError);
  EXPECT_THROW(parse_dataset("{not json}\n"), DataError);
  EXPECT_THROW(parse_dataset("{\"id\":\"1\",\"text\":\"x\",\"label\":\"\"}\n"), DataError);
  EXPECT_THROW(parse_dataset("{\"id\":\"1\",\"text\":\"x\",\"label\":\"A\"}\n{\"id\":\"1\",\"text\":\"y\",\"label\":\"A\"}"),
               DataError);
  EXPECT_THROW(parse_dataset("{\"id\":1,\"text\":\"x\",\"label\":\"A\"}\n"), DataError);
}

TEST(Dataset, CrlfParsesLikeLf) {
  std::string lf = "{\"id\":\"1\",\"text\":\"a b\",\"label\":\"A\"}\n{\"id\":\"2\",\"text\":\"c\",\"label\":\"B\"}\n";
  std::string crlf;
  for (char c : lf) {
    if (c == '\n') crlf += '\r';
    crlf += c;
  }
  EXPECT_EQ(parse_dataset(lf), parse_dataset(crlf));
}

TEST(Dataset, FileRoundTrip) {
  test::TempDir dir;
  std::vector<LabeledDocument> docs{doc("a", "snatch \"the\" bag\n", "Snatch"), doc("b", "偷 钱包", "Theft")};
  save_dataset(dir / "d.jsonl", docs);
  EXPECT_EQ(load_dataset(dir / "d.jsonl"), docs);
  EXPECT_THROW(load_dataset(dir / "missing.jsonl"), DataError);
}

TEST(Tokenize, EmptyAndWhitespace) {
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(tokenize("snatch away the bag"), (std::vector<std::string>{"snatch", "away", "the", "bag"}));
}

TEST(Tokenize, PunctuationSeparatesAndIsDropped) {
  EXPECT_EQ(tokenize("  he,did--snatch! the bag."), (std::vector<std::string>{"he", "did", "snatch", "the", "bag"}));
  EXPECT_EQ(tokenize("June 18, 2019 02:02"), (std::vector<std::string>{"June", "18", "2019", "02", "02"}));
}

TEST(Tokenize, CjkCodepointsAreSingleTokens) {
  // Hand segmentation: each CJK codepoint alone, Latin/digit runs together,
  // fullwidth comma dropped.
  EXPECT_EQ(tokenize("被告人张某抢夺bag，价值500元"),
            (std::vector<std::string>{"被", "告", "人", "张", "某", "抢", "夺", "bag", "价", "值", "500", "元"}));
  EXPECT_EQ(tokenize("café Жук"), (std::vector<std::string>{"café", "Жук"}));
}

TEST(Tokenize, Deterministic) {
  std::string t = "repeat 重复 this text";
  EXPECT_EQ(tokenize(t), tokenize(t));
}

TEST(Vocabulary, MinFreqThreshold) {
  auto v = build_vocabulary({doc("1", "a a b", "A")}, 2);
  EXPECT_TRUE(v.contains("a"));
  EXPECT_FALSE(v.contains("b"));
  EXPECT_EQ(v.id("b"), kUnkId);
  auto all = build_vocabulary({doc("1", "a a b", "A")}, 1);
  EXPECT_TRUE(all.contains("a"));
  EXPECT_TRUE(all.contains("b"));
  EXPECT_EQ(all.size(), 4u);
}

TEST(Vocabulary, FrequencyThenLexicographicOrder) {
  auto v = build_vocabulary({doc("1", "zeta beta beta alpha zeta gamma gamma gamma", "A")}, 1);
  EXPECT_EQ(v.entries(), (std::vector<std::string>{"gamma", "beta", "zeta", "alpha"}));
  EXPECT_EQ(v.id("gamma"), 2);
  EXPECT_EQ(v.id("beta"), 3);
  EXPECT_EQ(v.id("zeta"), 4);
  EXPECT_EQ(v.token(kPadId), "<pad>");
  EXPECT_EQ(v.token(kUnkId), "<unk>");
  EXPECT_THROW(build_vocabulary({}, 1), DataError);
}

TEST(Vocabulary, TestOnlyTokensDoNotChangeIds) {
  std::vector<LabeledDocument> train{doc("1", "a b a c", "A")};
  auto v1 = build_vocabulary(train, 1);
  auto enc = encode(doc("t", "a novel c", "A"), v1, {"A"});
  EXPECT_EQ(enc.ids, (std::vector<std::int32_t>{v1.id("a"), kUnkId, v1.id("c")}));
}

TEST(Encode, TruncatesToMaxLen) {
  std::string text;
  for (int i = 0; i < 600; ++i) text += "w" + std::to_string(i % 7) + " ";
  auto v = build_vocabulary({doc("1", text, "A")}, 1);
  auto e = encode(doc("1", text, "A"), v, {"A"});
  EXPECT_EQ(e.size(), 512u);
  EXPECT_EQ(e.tokens.size(), 512u);
  EXPECT_EQ(encode(doc("1", text, "A"), v, {"A"}, 20).size(), 20u);
}

TEST(Encode, HandLookupAndUnk) {
  auto v = Vocabulary({"the", "bag", "snatch"});
  auto e = encode(doc("d", "he did snatch the bag the bag x y z", "B"), v, {"A", "B"});
  EXPECT_EQ(e.ids, (std::vector<std::int32_t>{1, 1, 4, 2, 3, 2, 3, 1, 1, 1}));
  EXPECT_EQ(e.label, 1u);
  EXPECT_EQ(e.tokens[2], "snatch");
  auto unk = encode(doc("u", "q r s", "A"), v, {"A", "B"});
  EXPECT_TRUE(std::all_of(unk.ids.begin(), unk.ids.end(), [](auto id) { return id == kUnkId; }));
  EXPECT_THROW(encode(doc("x", "a", "C"), v, {"A", "B"}), DataError);
}

TEST(Split, CountsMatchArithmetic) {
  std::vector<LabeledDocument> docs;
  for (int c = 0; c < 4; ++c) {
    for (int i = 0; i < 100; ++i) docs.push_back(doc(std::to_string(c * 100 + i), "t", std::string(1, 'A' + c)));
  }
  auto s = split_dataset(docs, 10, 0.1, 3);
  EXPECT_EQ(s.balanced_test.size(), 40u);
  EXPECT_EQ(s.valid.size(), 36u);
  EXPECT_EQ(s.train.size(), 324u);
  EXPECT_EQ(&s.imbalanced_test(), &s.valid);

  std::map<std::string, int> per_class;
  for (const auto& d : s.balanced_test) ++per_class[d.label];
  for (const auto& [label, n] : per_class) EXPECT_EQ(n, 10) << label;

  std::set<std::string> ids;
  for (const auto* part : {&s.train, &s.valid, &s.balanced_test}) {
    for (const auto& d : *part) EXPECT_TRUE(ids.insert(d.id).second) << "duplicate " << d.id;
  }
  EXPECT_EQ(ids.size(), docs.size());

  auto again = split_dataset(docs, 10, 0.1, 3);
  EXPECT_EQ(again.train, s.train);
  EXPECT_EQ(again.balanced_test, s.balanced_test);
  EXPECT_NE(split_dataset(docs, 10, 0.1, 4).train, s.train);
}

TEST(Split, ZeroTestAndTooFewDocuments) {
  std::vector<LabeledDocument> docs;
  for (int i = 0; i < 20; ++i) docs.push_back(doc(std::to_string(i), "t", i < 10 ? "A" : "B"));
  auto s = split_dataset(docs, 0, 0.1, 1);
  EXPECT_TRUE(s.balanced_test.empty());
  EXPECT_EQ(s.valid.size(), 2u);
  EXPECT_EQ(s.train.size(), 18u);
  try {
    split_dataset(docs, 10, 0.1, 1);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("'A'"), std::string::npos);
  }
}

TEST(Synthetic, CountsLabelsAndDisjointMarkers) {
  SyntheticSpec spec;
  spec.docs_per_class = 50;
  auto c = generate_synthetic(spec);
  EXPECT_EQ(c.docs.size(), 200u);
  EXPECT_EQ(collect_labels(c.docs).size(), 4u);
  std::set<std::string> all_markers;
  std::size_t total = 0;
  for (const auto& [label, words] : c.markers) {
    all_markers.insert(words.begin(), words.end());
    total += words.size();
  }
  EXPECT_EQ(all_markers.size(), total);
  for (const auto& w : c.filler) EXPECT_FALSE(all_markers.contains(w));
}

TEST(Synthetic, EveryDocumentCarriesAnOwnMarkerAndTheMarkerRuleIsPerfect) {
  SyntheticSpec spec;
  auto c = generate_synthetic(spec);
  std::map<std::string, std::string> owner;
  for (const auto& [label, words] : c.markers) {
    for (const auto& w : words) owner[w] = label;
  }
  std::size_t correct = 0;
  for (const auto& d : c.docs) {
    std::set<std::string> seen;
    for (const auto& t : tokenize(d.text)) {
      if (auto it = owner.find(t); it != owner.end()) seen.insert(it->second);
    }
    ASSERT_FALSE(seen.empty()) << d.id;
    if (seen.size() == 1 && *seen.begin() == d.label) ++correct;
  }
  EXPECT_EQ(correct, c.docs.size());
}

TEST(Synthetic, ReproducibleUnderSeed) {
  SyntheticSpec spec;
  spec.seed = 99;
  EXPECT_EQ(dump_dataset(generate_synthetic(spec).docs), dump_dataset(generate_synthetic(spec).docs));
  auto other = spec;
  other.seed = 100;
  EXPECT_NE(dump_dataset(generate_synthetic(spec).docs), dump_dataset(generate_synthetic(other).docs));
}

TEST(Synthetic, InvalidSpecsRejected) {
  SyntheticSpec spec;
  spec.classes = 1;
  EXPECT_THROW(generate_synthetic(spec), DataError);
  spec = {};
  spec.injection_probability = 0.0;
  EXPECT_THROW(generate_synthetic(spec), DataError);
  spec = {};
  spec.min_length = 50;
  spec.max_length = 10;
  EXPECT_THROW(generate_synthetic(spec), DataError);
}
