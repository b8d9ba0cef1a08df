#include "ows/random.hpp"

#include <cmath>
#include <numbers>

namespace ows {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

inline std::uint32_t lo32(std::uint64_t x) { return static_cast<std::uint32_t>(x); }
inline std::uint32_t hi32(std::uint64_t x) { return static_cast<std::uint32_t>(x >> 32); }

inline double to_unit(std::uint32_t a, std::uint32_t b) {
  const std::uint64_t bits = ((static_cast<std::uint64_t>(a) << 32) | b) >> 11;
  return static_cast<double>(bits) * 0x1.0p-53;
}

}  // namespace

Philox4x32::Counter Philox4x32::generate(Counter ctr, Key key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, ctr[0], hi0, lo0);
    mulhilo(kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

double philox_uniform(std::uint64_t seed, std::uint64_t c0, std::uint64_t c1) {
  const auto out = Philox4x32::generate({lo32(c0), hi32(c0), lo32(c1), hi32(c1)},
                                        {lo32(seed), hi32(seed)});
  return to_unit(out[0], out[1]);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  const auto out = Philox4x32::generate({lo32(tag), hi32(tag), 0x5EEDu, 0xD3E1u}, {lo32(seed), hi32(seed)});
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : key_{lo32(seed), hi32(seed)}, stream_(stream) {}

void Rng::refill() {
  buffer_ = Philox4x32::generate({lo32(block_), hi32(block_), lo32(stream_), hi32(stream_)}, key_);
  ++block_;
  used_ = 0;
}

double Rng::uniform() {
  if (used_ > 2) refill();
  const double u = to_unit(buffer_[static_cast<size_t>(used_)], buffer_[static_cast<size_t>(used_ + 1)]);
  used_ += 2;
  return u;
}

double Rng::normal() {
  if (has_spare_normal_) {
    has_spare_normal_ = false;
    return spare_normal_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_normal_ = radius * std::sin(angle);
  has_spare_normal_ = true;
  return radius * std::cos(angle);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) return 0;
  const auto k = static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  return k < n ? k : n - 1;
}

Matrix Rng::normal_matrix(Index rows, Index cols, double scale) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = scale * normal();
  }
  return m;
}

}  // namespace ows
