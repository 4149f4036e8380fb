#pragma once

#include <cstddef>

#include "hetfx/families.hpp"

// Internal: per-backend kernel tables. kernels.cpp owns dispatch.

namespace hetfx::kernels::detail {

struct KernelTable {
  void (*exp_v)(const double*, double*, std::size_t);
  void (*log_v)(const double*, double*, std::size_t);
  void (*mu_from_eta)(Family, const double*, double*, std::size_t);
  void (*irls_weights)(Family, const double*, const double*, const double*, double*, double*,
                       std::size_t);
  double (*deviance_sum)(Family, const double*, const double*, const double*, const double*,
                         std::size_t);
  double (*loglik_sum)(Family, const double*, const double*, const double*, std::size_t);
};

const KernelTable& scalar_table();
const KernelTable& avx2_table();  // valid only when the CPU supports AVX2+FMA

}  // namespace hetfx::kernels::detail
