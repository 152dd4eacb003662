#pragma once

#include <vector>

#include "subjectdiff/error.hpp"
#include "subjectdiff/tensor.hpp"

namespace sdiff {

// Forward-process coefficients. alpha_bars[t] is the cumulative product up to
// and including step t; it decreases strictly from just below 1.
struct NoiseSchedule {
    int T = 0;
    std::vector<real> betas;
    std::vector<real> alphas;
    std::vector<real> alpha_bars;

    static NoiseSchedule linear(int T, real beta_start = 1e-4, real beta_end = 0.02);

    real alpha_bar(int t) const {
        if (t < 0) return 1.0;  // clean-image level
        SDIFF_CHECK(t < T, ErrorKind::Input, "timestep out of range");
        return alpha_bars[t];
    }

    void validate() const;
};

// z_t = sqrt(abar_t) z + sqrt(1 - abar_t) eps
Tensor add_noise(const Tensor& z, int t, const Tensor& eps, const NoiseSchedule& s);

// eps_u + scale * (eps_c - eps_u)
Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, real scale);

}  // namespace sdiff
