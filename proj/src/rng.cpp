#include "hetfx/rng.hpp"

#include <boost/math/distributions/normal.hpp>
#include <cmath>

#include "hetfx/errors.hpp"

namespace hetfx {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += kGolden;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void philox_round(std::uint32_t ctr[4], const std::uint32_t key[2]) {
  const std::uint64_t p0 = static_cast<std::uint64_t>(kPhiloxM0) * ctr[0];
  const std::uint64_t p1 = static_cast<std::uint64_t>(kPhiloxM1) * ctr[2];
  const std::uint32_t out[4] = {
      static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
      static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
  ctr[0] = out[0];
  ctr[1] = out[1];
  ctr[2] = out[2];
  ctr[3] = out[3];
}

}  // namespace

Rng::Rng(std::uint64_t stream_id) : counter_(0), pos_(4) {
  const std::uint64_t k = splitmix64(stream_id);
  key_[0] = static_cast<std::uint32_t>(k);
  key_[1] = static_cast<std::uint32_t>(k >> 32);
}

std::uint64_t Rng::substream(std::uint64_t id, std::uint64_t tag) {
  return splitmix64(splitmix64(id) ^ (tag * kGolden + 1));
}

void Rng::refill() {
  std::uint32_t ctr[4] = {static_cast<std::uint32_t>(counter_),
                          static_cast<std::uint32_t>(counter_ >> 32), 0u, 0u};
  std::uint32_t key[2] = {key_[0], key_[1]};
  for (int r = 0; r < 10; ++r) {
    philox_round(ctr, key);
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  block_[0] = ctr[0];
  block_[1] = ctr[1];
  block_[2] = ctr[2];
  block_[3] = ctr[3];
  ++counter_;
  pos_ = 0;
}

std::uint64_t Rng::next_u64() {
  if (pos_ > 2) refill();
  const std::uint64_t lo = block_[pos_];
  const std::uint64_t hi = block_[pos_ + 1];
  pos_ += 2;
  return (hi << 32) | lo;
}

double Rng::uniform() {
  // 53 random bits plus a half-ulp offset keeps the value strictly in (0,1).
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t Rng::bounded(std::uint64_t n) {
  if (n == 0) throw DataError("Rng::bounded requires n >= 1");
  const std::uint64_t threshold = (0ULL - n) % n;
  for (;;) {
    const std::uint64_t r = next_u64();
    if (r >= threshold) return r % n;
  }
}

double Rng::normal() {
  static const boost::math::normal_distribution<double> std_normal(0.0, 1.0);
  return boost::math::quantile(std_normal, uniform());
}

double Rng::normal(double mean, double sd) { return mean + sd * normal(); }

bool Rng::bernoulli(double p) { return uniform() < p; }

long Rng::poisson(double mean) {
  if (mean <= 0.0) return 0;
  if (mean > 16.0) {
    // Poisson additivity: split into sub-means below the product threshold.
    const long k = static_cast<long>(std::ceil(mean / 16.0));
    const double part = mean / static_cast<double>(k);
    long total = 0;
    for (long i = 0; i < k; ++i) total += poisson(part);
    return total;
  }
  const double limit = std::exp(-mean);
  long count = -1;
  double prod = 1.0;
  do {
    prod *= uniform();
    ++count;
  } while (prod > limit);
  return count;
}

}  // namespace hetfx
