#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "fbb/core.hpp"

namespace fbb {

// Philox4x32-10 block function (counter-based, no internal state).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key);

std::uint64_t splitmix64(std::uint64_t x);

// Identifies an independent substream: a seed plus a path of integer labels.
struct RngStreamKey {
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> path;

  RngStreamKey() = default;
  explicit RngStreamKey(std::uint64_t s, std::vector<std::uint64_t> p = {})
      : seed(s), path(std::move(p)) {}

  RngStreamKey child(std::uint64_t label) const;
  RngStreamKey child(std::initializer_list<std::uint64_t> labels) const;
  bool operator==(const RngStreamKey&) const = default;
};

// Sequential reader over the Philox stream of one key.
class Rng {
public:
  explicit Rng(const RngStreamKey& key);

  std::uint64_t next_u64();
  // Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform();
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  void fill_normal(double* out, Index n);
  Vec normals(Index n);
  Mat normals(Index rows, Index cols);

private:
  void refill();

  std::array<std::uint32_t, 2> key_{};
  std::uint64_t stream_hi_ = 0;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
};

Mat standard_normals(const RngStreamKey& key, Index rows, Index cols);

}  // namespace fbb
