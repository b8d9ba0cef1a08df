#ifndef OWS_RANDOM_HPP
#define OWS_RANDOM_HPP

#include <array>
#include <cstdint>

#include "ows/linalg.hpp"

namespace ows {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11). A block of
// output is a pure function of (counter, key), so every draw in the library
// can be addressed by coordinates instead of by call order.
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key);
};

/// Uniform double in [0, 1) taken from the first two words of a Philox block.
double philox_uniform(std::uint64_t seed, std::uint64_t c0, std::uint64_t c1);

/// Independent 64-bit seed for sub-stream `tag` of `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

/// Sequential stream over a Philox keyspace: (seed, stream) select the key and
/// high counter words, each call advances the low counter.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  double uniform();
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Matrix of iid N(0, scale^2) entries.
  Matrix normal_matrix(Index rows, Index cols, double scale = 1.0);

 private:
  void refill();

  Philox4x32::Key key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  Philox4x32::Counter buffer_{};
  int used_ = 4;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

}  // namespace ows

#endif  // OWS_RANDOM_HPP
