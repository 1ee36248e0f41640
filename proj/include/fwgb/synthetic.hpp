#pragma once

// Companion artifacts for a synthetic corpus: a knowledge graph whose leaf
// elements line up with each class's markers, and word vectors in which
// markers point along their class's element direction while shared filler
// lives in an orthogonal subspace.

#include <cctype>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "fwgb/corpus.hpp"
#include "fwgb/kgraph.hpp"
#include "fwgb/train.hpp"
#include "fwgb/wordbag.hpp"

namespace fwgb::synthetic {

inline std::string leaf_element(const std::string& label) {
  std::string out = "aspect";
  for (char c : label) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string group_element(std::size_t group) { return "groupaspect" + std::to_string(group); }

// Classes are paired in label order under shared internal nodes, so siblings
// share their first element the way related charges share graph prefixes.
inline kgraph::ChargeGraph marker_aligned_graph(const corpus::SyntheticCorpus& c) {
  kgraph::ChargeGraph g;
  g.nodes.push_back({"root", kgraph::NodeKind::root, std::nullopt});
  for (std::size_t i = 0; i < c.labels.size(); ++i) {
    std::size_t group = i / 2;
    std::string group_id = "group" + std::to_string(group);
    if (i % 2 == 0) {
      g.nodes.push_back({group_id, kgraph::NodeKind::internal, std::nullopt});
      g.edges.push_back({"root", group_id, group_element(group)});
    }
    g.nodes.push_back({"leaf_" + c.labels[i], kgraph::NodeKind::charge, c.labels[i]});
    g.edges.push_back({group_id, "leaf_" + c.labels[i], leaf_element(c.labels[i])});
  }
  return g;
}

// Dimension must exceed the class count; the first `classes` axes are class
// directions.
inline wordbag::VectorTable marker_aligned_embeddings(const corpus::SyntheticCorpus& c, std::size_t dim,
                                                      std::uint64_t seed, double marker_noise = 0.3) {
  const std::size_t n = c.labels.size();
  if (dim <= n) throw DataError("embedding dimension must exceed the class count");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  auto noise = [&] {
    std::vector<double> v(dim, 0.0);
    double norm = 0.0;
    for (std::size_t k = n; k < dim; ++k) {
      v[k] = normal(rng);
      norm += v[k] * v[k];
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
  };
  auto axis = [&](std::size_t k) {
    std::vector<double> v(dim, 0.0);
    v[k] = 1.0;
    return v;
  };

  wordbag::VectorTable table(dim);
  for (std::size_t i = 0; i < n; ++i) table.set(leaf_element(c.labels[i]), axis(i));
  for (std::size_t group = 0; group * 2 < n; ++group) {
    std::vector<double> v(dim, 0.0);
    std::size_t members = 0;
    for (std::size_t i = group * 2; i < std::min(n, group * 2 + 2); ++i, ++members) v[i] = 1.0;
    for (auto& x : v) x /= std::sqrt(static_cast<double>(members));
    table.set(group_element(group), v);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& m : c.markers.at(c.labels[i])) {
      auto v = noise();
      for (auto& x : v) x *= marker_noise;
      v[i] += 1.0;
      table.set(m, v);
    }
  }
  for (const auto& w : c.filler) table.set(w, noise());
  return table;
}

// Everything a desk-scale run needs, derived from one seed.
struct DeskExperiment {
  corpus::SyntheticCorpus corpus;
  corpus::Splits splits;
  kgraph::ChargeGraph graph;
  wordbag::VectorTable embeddings{1};
  wordbag::WordBag bag;
};

struct DeskSizes {
  std::size_t train_per_class = 50;
  std::size_t test_per_class = 10;
  std::size_t valid_per_class = 6;
  std::size_t emb_dim = 32;
};

inline double valid_ratio(const DeskSizes& n) {
  return static_cast<double>(n.valid_per_class) / static_cast<double>(n.train_per_class + n.valid_per_class);
}

// spec.seed drives generation, the split and the word vectors.
inline DeskExperiment desk_experiment(corpus::SyntheticSpec spec, const DeskSizes& n = {},
                                      double eta = wordbag::kDefaultEta, std::size_t top_k = wordbag::kDefaultTopK) {
  spec.docs_per_class = n.train_per_class + n.test_per_class + n.valid_per_class;
  DeskExperiment e;
  e.corpus = corpus::generate_synthetic(spec);
  e.splits = corpus::split_dataset(e.corpus.docs, n.test_per_class, valid_ratio(n), spec.seed);
  e.graph = marker_aligned_graph(e.corpus).canonical();
  e.embeddings = marker_aligned_embeddings(e.corpus, n.emb_dim, spec.seed);
  e.bag = wordbag::build_word_bag(e.splits.train, e.graph, e.embeddings, eta, top_k);
  return e;
}

inline DeskExperiment desk_experiment(std::uint64_t seed) {
  corpus::SyntheticSpec spec;
  spec.seed = seed;
  return desk_experiment(spec);
}

// The CLI's desk preset.
inline train::TrainConfig desk_config(std::uint64_t seed) {
  train::TrainConfig c;
  c.seed = seed;
  c.embed_dim = 32;
  c.hidden_dim = 32;
  c.learning_rate = 1e-2;
  return c;
}

}  // namespace fwgb::synthetic
