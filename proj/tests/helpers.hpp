#ifndef OWS_TESTS_HELPERS_HPP
#define OWS_TESTS_HELPERS_HPP

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "ows/model.hpp"
#include "ows/random.hpp"

namespace testing_helpers {

using namespace ows;

inline ModelSpec small_mlp(Index n_layers = 2, Index d_model = 8, Index d_hidden = 12) {
  ModelSpec s;
  s.arch = Arch::kMlpStack;
  s.n_layers = n_layers;
  s.d_model = d_model;
  s.d_hidden = d_hidden;
  return s;
}

inline ModelSpec small_transformer(Index n_layers = 2, bool causal = false) {
  ModelSpec s;
  s.arch = Arch::kTinyTransformer;
  s.n_layers = n_layers;
  s.d_model = 8;
  s.d_hidden = 12;
  s.n_heads = 2;
  s.vocab = 11;
  s.seq_len = 5;
  s.causal = causal;
  return s;
}

inline Batch random_batch(const ModelSpec& spec, Index batch_size, std::uint64_t seed) {
  Rng rng(seed, 7);
  Batch b;
  b.batch_size = batch_size;
  if (spec.arch == Arch::kMlpStack) {
    b.seq_len = 1;
    b.inputs = rng.normal_matrix(batch_size, spec.d_model);
    b.targets = rng.normal_matrix(batch_size, spec.d_model);
  } else {
    b.seq_len = spec.seq_len;
    for (Index i = 0; i < batch_size * spec.seq_len; ++i) {
      b.tokens.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.vocab))));
      b.labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.vocab))));
    }
  }
  return b;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() / ("ows_test_" + name + "_" + std::to_string(counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace testing_helpers

#endif  // OWS_TESTS_HELPERS_HPP
