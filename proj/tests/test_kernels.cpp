#include <doctest.h>

#include <cmath>
#include <tuple>
#include <utility>
#include <vector>

#include "hetfx/kernels.hpp"
#include "hetfx/rng.hpp"

using namespace hetfx;

namespace {

// Run f under both backends (when AVX2 exists) and return the pair.
template <typename F>
auto with_backends(F f) {
  kernels::set_backend(kernels::Backend::scalar);
  auto scalar = f();
  if (kernels::avx2_supported()) {
    kernels::set_backend(kernels::Backend::avx2);
    auto simd = f();
    kernels::set_backend(kernels::Backend::scalar);
    return std::pair{scalar, simd};
  }
  return std::pair{scalar, scalar};
}

std::vector<double> grid(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

}  // namespace

TEST_CASE("vector exp matches libm over the fitting range") {
  if (!kernels::avx2_supported()) return;
  std::vector<double> xs = grid(-700.0, 700.0, 4001);
  Rng rng(42);
  for (int i = 0; i < 1000; ++i) xs.push_back(-40.0 + 80.0 * rng.uniform());
  xs.push_back(0.0);
  xs.push_back(-0.0);

  std::vector<double> out(xs.size());
  kernels::set_backend(kernels::Backend::avx2);
  kernels::exp_v(xs.data(), out.data(), xs.size());
  kernels::set_backend(kernels::Backend::scalar);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double ref = std::exp(xs[i]);
    CHECK(std::abs(out[i] - ref) <= 4e-15 * ref);
  }
}

TEST_CASE("vector log matches libm") {
  if (!kernels::avx2_supported()) return;
  std::vector<double> xs;
  Rng rng(7);
  for (int i = 0; i < 4000; ++i) xs.push_back(std::exp(-30.0 + 60.0 * rng.uniform()));
  for (double v : {1.0, 2.0, 0.5, 1.0 + 1e-9, 1e-300, 1e300}) xs.push_back(v);

  std::vector<double> out(xs.size());
  kernels::set_backend(kernels::Backend::avx2);
  kernels::log_v(xs.data(), out.data(), xs.size());
  kernels::set_backend(kernels::Backend::scalar);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double ref = std::log(xs[i]);
    CHECK(out[i] == doctest::Approx(ref).epsilon(1e-13));
    if (ref != 0.0) CHECK(std::abs(out[i] - ref) <= 1e-13 * std::max(1.0, std::abs(ref)));
  }
}

TEST_CASE("backend equivalence on the family kernels") {
  const std::size_t n = 1003;  // deliberately not a multiple of the lane width
  Rng rng(123);
  std::vector<double> eta(n), ycount(n), ybin(n), ylogy(n);
  for (std::size_t i = 0; i < n; ++i) {
    eta[i] = -4.0 + 8.0 * rng.uniform();
    ycount[i] = static_cast<double>(rng.poisson(std::exp(eta[i])));
    ylogy[i] = ycount[i] > 0 ? ycount[i] * std::log(ycount[i]) : 0.0;
    ybin[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  }

  for (Family f : {Family::gaussian, Family::poisson, Family::bernoulli}) {
    const std::vector<double>& y = f == Family::bernoulli ? ybin : ycount;
    auto [s, v] = with_backends([&] {
      std::vector<double> mu(n), w(n), wres(n);
      kernels::mu_from_eta(f, eta.data(), mu.data(), n);
      kernels::irls_weights(f, eta.data(), mu.data(), y.data(), w.data(), wres.data(), n);
      const double dev = kernels::deviance_sum(f, y.data(), eta.data(), mu.data(), ylogy.data(), n);
      const double ll = kernels::loglik_sum(f, y.data(), eta.data(), mu.data(), n);
      return std::make_tuple(mu, w, wres, dev, ll);
    });
    const auto& [mu_s, w_s, wres_s, dev_s, ll_s] = s;
    const auto& [mu_v, w_v, wres_v, dev_v, ll_v] = v;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(mu_v[i] == doctest::Approx(mu_s[i]).epsilon(1e-13));
      CHECK(w_v[i] == doctest::Approx(w_s[i]).epsilon(1e-13));
      CHECK(wres_v[i] == doctest::Approx(wres_s[i]).epsilon(2e-12));
    }
    CHECK(dev_v == doctest::Approx(dev_s).epsilon(1e-12));
    CHECK(ll_v == doctest::Approx(ll_s).epsilon(1e-12));
  }
}

TEST_CASE("logit clamp is applied identically in both backends") {
  const std::vector<double> eta = {-1e6, -31.0, -30.0, -29.9, 0.0, 29.9, 30.0, 31.0, 1e6};
  auto [s, v] = with_backends([&] {
    std::vector<double> mu(eta.size());
    kernels::mu_from_eta(Family::bernoulli, eta.data(), mu.data(), eta.size());
    return mu;
  });
  for (std::size_t i = 0; i < eta.size(); ++i) {
    CHECK(s[i] > 0.0);
    CHECK(s[i] < 1.0);
    CHECK(v[i] == doctest::Approx(s[i]).epsilon(1e-13));
  }
  // clamped tails hit the same values as eta = +-30 exactly
  CHECK(s.front() == s[2]);
  CHECK(s.back() == s[6]);
}

TEST_CASE("active backend is reported and switchable") {
  const kernels::Backend b = kernels::active_backend();
  CHECK((b == kernels::Backend::scalar || b == kernels::Backend::avx2));
  kernels::set_backend(kernels::Backend::scalar);
  CHECK(kernels::active_backend() == kernels::Backend::scalar);
  if (kernels::avx2_supported()) {
    kernels::set_backend(kernels::Backend::avx2);
    CHECK(kernels::active_backend() == kernels::Backend::avx2);
    kernels::set_backend(kernels::Backend::scalar);
  }
}
