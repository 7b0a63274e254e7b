#include "fbb/rng.hpp"

#include <cmath>

#include <boost/random/normal_distribution.hpp>

namespace fbb {

namespace {

constexpr std::uint32_t kMulA = 0xD2511F53u;
constexpr std::uint32_t kMulB = 0xCD9E8D57u;
constexpr std::uint32_t kWeylA = 0x9E3779B9u;
constexpr std::uint32_t kWeylB = 0xBB67AE85u;

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> c,
                                        std::array<std::uint32_t, 2> k) {
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMulA) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMulB) * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    k[0] += kWeylA;
    k[1] += kWeylB;
  }
  return c;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

RngStreamKey RngStreamKey::child(std::uint64_t label) const {
  RngStreamKey out = *this;
  out.path.push_back(label);
  return out;
}

RngStreamKey RngStreamKey::child(std::initializer_list<std::uint64_t> labels) const {
  RngStreamKey out = *this;
  out.path.insert(out.path.end(), labels.begin(), labels.end());
  return out;
}

Rng::Rng(const RngStreamKey& key) {
  std::uint64_t h = splitmix64(key.seed);
  std::uint64_t g = splitmix64(key.seed ^ 0x6A09E667F3BCC909ull);
  for (std::uint64_t label : key.path) {
    h = splitmix64(h ^ splitmix64(label + 0x3C6EF372FE94F82Bull));
    g = splitmix64(g + splitmix64(label ^ 0xA54FF53A5F1D36F1ull));
  }
  key_ = {static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  stream_hi_ = g;
}

void Rng::refill() {
  block_ = philox4x32({static_cast<std::uint32_t>(counter_),
                       static_cast<std::uint32_t>(counter_ >> 32),
                       static_cast<std::uint32_t>(stream_hi_),
                       static_cast<std::uint32_t>(stream_hi_ >> 32)},
                      key_);
  ++counter_;
  used_ = 0;
}

std::uint64_t Rng::next_u64() {
  if (used_ > 2) refill();
  const std::uint64_t lo = block_[static_cast<size_t>(used_)];
  const std::uint64_t hi = block_[static_cast<size_t>(used_ + 1)];
  used_ += 2;
  return (hi << 32) | lo;
}

double Rng::uniform() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

namespace {

// Adapts Rng to the uniform random bit generator interface.
struct BitSource {
  Rng& rng;
  using result_type = std::uint64_t;
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return rng.next_u64(); }
};

}  // namespace

double Rng::normal() {
  // Ziggurat; consumes one word per draw except in the tails.
  BitSource bits{*this};
  return boost::random::normal_distribution<double>()(bits);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw InvalidArgument("Rng::below requires n > 0");
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

void Rng::fill_normal(double* out, Index n) {
  for (Index i = 0; i < n; ++i) out[i] = normal();
}

Vec Rng::normals(Index n) {
  Vec v(n);
  fill_normal(v.data(), n);
  return v;
}

Mat Rng::normals(Index rows, Index cols) {
  Mat m(rows, cols);
  fill_normal(m.data(), rows * cols);
  return m;
}

Mat standard_normals(const RngStreamKey& key, Index rows, Index cols) {
  if (rows < 0 || cols < 0) throw InvalidArgument("standard_normals: negative shape");
  Rng rng(key);
  return rng.normals(rows, cols);
}

}  // namespace fbb
