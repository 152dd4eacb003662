#include "subjectdiff/schedule.hpp"

namespace sdiff {

NoiseSchedule NoiseSchedule::linear(int T, real beta_start, real beta_end) {
    SDIFF_CHECK(T >= 1, ErrorKind::Config, "schedule needs T >= 1");
    NoiseSchedule s;
    s.T = T;
    s.betas.resize(T);
    s.alphas.resize(T);
    s.alpha_bars.resize(T);
    real abar = 1.0;
    for (int t = 0; t < T; ++t) {
        real beta = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * (real)t / (T - 1);
        s.betas[t] = beta;
        s.alphas[t] = 1.0 - beta;
        abar *= s.alphas[t];
        s.alpha_bars[t] = abar;
    }
    s.validate();
    return s;
}

void NoiseSchedule::validate() const {
    SDIFF_CHECK((int)betas.size() == T && (int)alpha_bars.size() == T, ErrorKind::Config, "schedule size mismatch");
    real prev = 1.0;
    for (int t = 0; t < T; ++t) {
        SDIFF_CHECK(betas[t] > 0.0 && betas[t] < 1.0, ErrorKind::Config, "beta out of (0,1)");
        SDIFF_CHECK(alpha_bars[t] < prev, ErrorKind::Config, "alpha_bars not strictly decreasing");
        prev = alpha_bars[t];
    }
}

Tensor add_noise(const Tensor& z, int t, const Tensor& eps, const NoiseSchedule& s) {
    SDIFF_CHECK(z.same_shape(eps), ErrorKind::Input, "add_noise shape mismatch");
    SDIFF_CHECK(t >= 0 && t < s.T, ErrorKind::Input, "add_noise timestep out of range");
    real a = s.alpha_bars[t];
    real sa = std::sqrt(a), sb = std::sqrt(1.0 - a);
    Tensor out = z;
    for (int64_t i = 0; i < out.size(); ++i) out.v[i] = sa * z.v[i] + sb * eps.v[i];
    return out;
}

Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, real scale) {
    SDIFF_CHECK(eps_uncond.same_shape(eps_cond), ErrorKind::Input, "cfg_combine shape mismatch");
    Tensor out = eps_uncond;
    for (int64_t i = 0; i < out.size(); ++i) out.v[i] = eps_uncond.v[i] + scale * (eps_cond.v[i] - eps_uncond.v[i]);
    return out;
}

}  // namespace sdiff
