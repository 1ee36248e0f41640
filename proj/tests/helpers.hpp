#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "fwgb/model.hpp"

namespace fwgb::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "fwgb") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(rd()) + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Random tiny model, document and 0/1 attention target.
struct TinyCase {
  model::FwgbConfig config;
  model::FwgbParameters params;
  corpus::EncodedDocument doc;
  wordbag::TargetAttention target;
};

inline TinyCase tiny_case(std::uint64_t seed, std::size_t length = 12, std::size_t labels = 3, std::size_t dim = 8,
                          model::Mode mode = model::Mode::full, std::size_t vocab = 20) {
  TinyCase t;
  t.config.mode = mode;
  t.config.labels = labels;
  t.config.vocab_size = vocab;
  t.config.embed_dim = dim;
  t.config.hidden_dim = dim;
  t.params = model::FwgbParameters::init(t.config, seed);
  std::mt19937_64 rng(seed * 7919 + 1);
  std::uniform_int_distribution<std::int32_t> id(2, static_cast<std::int32_t>(vocab) - 1);
  std::bernoulli_distribution hit(0.25);
  t.doc.id = "tiny";
  t.doc.label = std::uniform_int_distribution<std::size_t>(0, labels - 1)(rng);
  t.target = {length, labels, std::vector<double>(length * labels, 0.0)};
  for (std::size_t i = 0; i < length; ++i) {
    t.doc.ids.push_back(id(rng));
    t.doc.tokens.push_back("w" + std::to_string(t.doc.ids.back()));
    for (std::size_t n = 0; n < labels; ++n) t.target.data[i * labels + n] = hit(rng) ? 1.0 : 0.0;
  }
  return t;
}

}  // namespace fwgb::test
