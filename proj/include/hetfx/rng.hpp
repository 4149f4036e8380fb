#pragma once

#include <cstdint>
#include <vector>

namespace hetfx {

// Counter-based generator (Philox4x32-10) keyed by a 64-bit stream id.
// Streams are split hierarchically: substream(id, tag) derives a new id with
// a SplitMix64-style mix, so (base_seed, replicate, purpose) maps to an
// independent stream regardless of evaluation order or worker count.
//
// Stream layout used by the simulation engine, per replicate r:
//   rep      = substream(base_seed, r)
//   tag 1    treatment permutation
//   tag 2    subgroup draws (cluster-major, subject order)
//   tag 3    random effects (one draw block per cluster, in cluster order)
//   tag 4    outcome noise (cluster-major, subject order)
//   tag 5    parametric bootstrap root; bootstrap replicate b uses
//            substream(root, b)
class Rng {
public:
  explicit Rng(std::uint64_t stream_id);

  static std::uint64_t substream(std::uint64_t id, std::uint64_t tag);

  std::uint64_t next_u64();
  // Uniform on the open interval (0,1); never returns 0 or 1.
  double uniform();
  // Uniform integer in [0, n); unbiased via rejection. n >= 1.
  std::uint64_t bounded(std::uint64_t n);
  // Standard normal via inverse-CDF of a single uniform (platform-stable).
  double normal();
  double normal(double mean, double sd);
  bool bernoulli(double p);
  // Poisson by uniform products; large means are split additively so the
  // product never underflows.
  long poisson(double mean);
  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(bounded(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  void refill();
  std::uint32_t key_[2];
  std::uint64_t counter_;
  std::uint32_t block_[4];
  int pos_;
};

}  // namespace hetfx
