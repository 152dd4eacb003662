#include "subjectdiff/sampler.hpp"

namespace sdiff::diff {

DenoiseFn denoiser_fn(const UNet& unet) {
    return [&unet](const Tensor& z_t, int t, const Tensor& cond, const AttnHookFn& hook) {
        return unet.denoise(z_t, t, cond, hook);
    };
}

std::vector<int> sampling_timesteps(int T, int steps) {
    SDIFF_CHECK(steps >= 1, ErrorKind::Input, "need at least one sampling step");
    SDIFF_CHECK(steps <= T, ErrorKind::Input, "steps exceed schedule length");
    std::vector<int> ts(steps);
    for (int i = 0; i < steps; ++i) ts[i] = (int)((int64_t)(steps - i) * T / steps) - 1;
    return ts;
}

namespace {

Tensor run_model(const DenoiseFn& model, const Tensor& z, int t, const Tensor& cond,
                 const std::optional<Tensor>& uncond, real scale, int step_index, const SampleHooks& hooks) {
    AttnHookFn hook = nullptr;
    if (hooks.record || hooks.attn_override) {
        hook = [&](int layer, Tensor& probs) {
            if (hooks.attn_override) hooks.attn_override(step_index, layer, probs);
            if (hooks.record) hooks.record->maps[{step_index, layer}] = probs;
        };
    }
    Tensor eps_c = model(z, t, cond, hook);
    if (!uncond || scale == 1.0) return eps_c;
    Tensor eps_u = model(z, t, *uncond, nullptr);
    return cfg_combine(eps_u, eps_c, scale);
}

}  // namespace

Tensor sample_latent(const DenoiseFn& model, const NoiseSchedule& schedule, const Tensor& cond,
                     const std::optional<Tensor>& uncond, const SamplerSettings& settings, uint64_t seed,
                     const std::vector<int>& latent_shape, const SampleHooks& hooks) {
    Tensor z(latent_shape);
    if (hooks.init_latent) {
        SDIFF_CHECK(hooks.init_latent->shape == latent_shape, ErrorKind::Input, "init latent shape mismatch");
        z = *hooks.init_latent;
    } else {
        Rng rng = Rng(seed).child("init_latent");
        rng.fill_normal(z);
    }

    if (settings.method == SampleMethod::Ancestral) {
        SDIFF_CHECK(settings.steps == schedule.T, ErrorKind::Input,
                    "ancestral sampling walks every schedule step");
        Rng noise_rng = Rng(seed).child("ancestral_noise");
        for (int i = 0; i < schedule.T; ++i) {
            int t = schedule.T - 1 - i;
            Tensor eps = run_model(model, z, t, cond, uncond, settings.guidance_scale, i, hooks);
            real beta = schedule.betas[t];
            real abar = schedule.alpha_bars[t];
            real abar_prev = t > 0 ? schedule.alpha_bars[t - 1] : 1.0;
            real inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alphas[t]);
            real coeff = beta / std::sqrt(1.0 - abar);
            real sigma = t > 0 ? std::sqrt((1.0 - abar_prev) / (1.0 - abar) * beta) : 0.0;
            for (int64_t k = 0; k < z.size(); ++k) {
                real mean = inv_sqrt_alpha * (z.v[k] - coeff * eps.v[k]);
                z.v[k] = mean + (sigma > 0 ? sigma * noise_rng.normal() : 0.0);
            }
            if (hooks.latent_callback) hooks.latent_callback(i, z);
        }
        return z;
    }

    auto ts = sampling_timesteps(schedule.T, settings.steps);
    for (int i = 0; i < (int)ts.size(); ++i) {
        int t = ts[i];
        int t_next = i + 1 < (int)ts.size() ? ts[i + 1] : -1;
        Tensor eps = run_model(model, z, t, cond, uncond, settings.guidance_scale, i, hooks);
        real a = schedule.alpha_bar(t);
        real a_next = schedule.alpha_bar(t_next);
        real sa = std::sqrt(a), sb = std::sqrt(1.0 - a);
        real sa_n = std::sqrt(a_next), sb_n = std::sqrt(1.0 - a_next);
        for (int64_t k = 0; k < z.size(); ++k) {
            real x0 = (z.v[k] - sb * eps.v[k]) / sa;
            z.v[k] = sa_n * x0 + sb_n * eps.v[k];
        }
        if (hooks.latent_callback) hooks.latent_callback(i, z);
    }
    return z;
}

std::vector<Tensor> invert_latent(const DenoiseFn& model, const NoiseSchedule& schedule, const Tensor& z0,
                                  const Tensor& cond, int steps, SampleMethod method) {
    SDIFF_CHECK(method == SampleMethod::Deterministic, ErrorKind::Config,
                "inversion requires the deterministic scheduler");
    std::vector<Tensor> traj{z0};
    if (steps == 0) return traj;
    auto ts = sampling_timesteps(schedule.T, steps);  // descending
    Tensor z = z0;
    for (int j = (int)ts.size() - 1; j >= 0; --j) {
        int t_src = j + 1 < (int)ts.size() ? ts[j + 1] : -1;
        int t_dst = ts[j];
        int t_eval = t_src < 0 ? t_dst : t_src;
        Tensor eps = model(z, t_eval, cond, nullptr);
        real a_src = schedule.alpha_bar(t_src);
        real a_dst = schedule.alpha_bar(t_dst);
        real sa_s = std::sqrt(a_src), sb_s = std::sqrt(1.0 - a_src);
        real sa_d = std::sqrt(a_dst), sb_d = std::sqrt(1.0 - a_dst);
        for (int64_t k = 0; k < z.size(); ++k) {
            real x0 = (z.v[k] - sb_s * eps.v[k]) / sa_s;
            z.v[k] = sa_d * x0 + sb_d * eps.v[k];
        }
        traj.push_back(z);
    }
    return traj;
}

}  // namespace sdiff::diff
