#include "subjectdiff/control.hpp"

#include <cmath>

namespace sdiff::ctrl {

ControlBranch::ControlBranch(const diff::UNetConfig& cfg, int image_res, Rng rng)
    : cfg_(cfg), image_res_(image_res) {
    int c = cfg.base, c2 = cfg.base * cfg.mult;
    SDIFF_CHECK(image_res % cfg.latent_res == 0, ErrorKind::Config, "hint resolution incompatible with latent");
    int down_steps = 0;
    for (int r = image_res; r > cfg.latent_res; r /= 2) ++down_steps;
    SDIFF_CHECK(cfg.latent_res << down_steps == image_res, ErrorKind::Config, "hint downscale must be a power of 2");

    int ci = 1;
    for (int i = 0; i < std::max(down_steps, 1); ++i) {
        int co = (i + 1 >= std::max(down_steps, 1)) ? c : std::max(8, c / 2);
        int stride = i < down_steps ? 2 : 1;
        adapter_.emplace_back(store_, "adapter" + std::to_string(i), ci, co, 3, stride, 1, rng);
        ci = co;
    }

    temb1_ = nn::LinearLayer(store_, "temb1", cfg.temb_dim, cfg.temb_dim, rng);
    temb2_ = nn::LinearLayer(store_, "temb2", cfg.temb_dim, cfg.temb_dim, rng);
    conv_in_ = nn::Conv2dLayer(store_, "conv_in", cfg.in_channels, c, 3, 1, 1, rng);
    down0_ = diff::ResBlock(store_, "down0", c, c, cfg.temb_dim, cfg.groups, rng);
    down1_ = diff::ResBlock(store_, "down1", c, c, cfg.temb_dim, cfg.groups, rng);
    down_conv_ = nn::Conv2dLayer(store_, "down_conv", c, c2, 3, 2, 1, rng);
    mid0_ = diff::ResBlock(store_, "mid0", c2, c2, cfg.temb_dim, cfg.groups, rng);
    mid_attn_ = diff::CrossAttnBlock(store_, "mid_attn", c2, cfg.heads, cfg.d_cond, rng);
    mid1_ = diff::ResBlock(store_, "mid1", c2, c2, cfg.temb_dim, cfg.groups, rng);
    skip_conn_ = nn::Conv2dLayer(store_, "skip_conn", c, c, 1, 1, 0, rng, /*zero_init=*/true);
    mid_conn_ = nn::Conv2dLayer(store_, "mid_conn", c2, c2, 1, 1, 0, rng, /*zero_init=*/true);
}

ag::Var ControlBranch::hint_features(const Image& hint) const {
    SDIFF_CHECK(hint.h == image_res_ && hint.w == image_res_, ErrorKind::Input, "hint resolution mismatch");
    Tensor chw({1, hint.h, hint.w});
    for (int y = 0; y < hint.h; ++y)
        for (int x = 0; x < hint.w; ++x) {
            real v = 0;
            for (int ch = 0; ch < hint.c; ++ch) v += hint.at(y, x, ch);
            chw.v[(int64_t)y * hint.w + x] = v / hint.c;
        }
    auto x = ag::constant(std::move(chw));
    for (size_t i = 0; i < adapter_.size(); ++i) {
        x = adapter_[i].fwd(x);
        if (i + 1 < adapter_.size()) x = ag::silu(x);
    }
    return x;
}

diff::ControlResiduals ControlBranch::residuals(const ag::Var& z_t, int t, const ag::Var& cond,
                                                const ag::Var& hint_feat) const {
    auto temb = ag::constant(diff::UNet::timestep_embedding(t, cfg_.temb_dim));
    temb = temb2_.fwd(ag::silu(temb1_.fwd(temb)));

    auto x = ag::add(conv_in_.fwd(z_t), hint_feat);
    x = down0_.fwd(x, temb);
    x = down1_.fwd(x, temb);
    diff::ControlResiduals out;
    out.skip_add = skip_conn_.fwd(x);
    x = down_conv_.fwd(x);
    x = mid0_.fwd(x, temb);
    x = mid_attn_.fwd(x, cond, nullptr);
    x = mid1_.fwd(x, temb);
    out.mid_add = mid_conn_.fwd(x);
    return out;
}

ControlledDenoiser::ControlledDenoiser(const diff::UNet& base, const ControlBranch& branch, const Image& hint)
    : base_(base), branch_(branch) {
    SDIFF_CHECK(base.config().in_channels == branch.config().in_channels &&
                    base.config().latent_res == branch.config().latent_res &&
                    base.config().base == branch.config().base && base.config().mult == branch.config().mult &&
                    base.config().d_cond == branch.config().d_cond,
                ErrorKind::Config, "control branch incompatible with the base denoiser");
    ag::NoGradGuard ng;
    hint_feat_ = branch.hint_features(hint)->val;
}

ag::Var ControlledDenoiser::forward(const ag::Var& z_t, int t, const ag::Var& cond) const {
    auto res = branch_.residuals(z_t, t, cond, ag::constant(hint_feat_));
    return base_.forward(z_t, t, cond, nullptr, &res);
}

Tensor ControlledDenoiser::denoise(const Tensor& z_t, int t, const Tensor& cond,
                                   const diff::AttnHookFn& hook) const {
    ag::NoGradGuard ng;
    auto res = branch_.residuals(ag::constant(z_t), t, ag::constant(cond), ag::constant(hint_feat_));
    return base_.forward(ag::constant(z_t), t, ag::constant(cond), hook, &res)->val;
}

diff::DenoiseFn ControlledDenoiser::fn() const {
    return [this](const Tensor& z_t, int t, const Tensor& cond, const diff::AttnHookFn& hook) {
        return denoise(z_t, t, cond, hook);
    };
}

ControlledDenoiser attach_control(const diff::UNet& base, const ControlBranch& branch, const Image& hint) {
    return ControlledDenoiser(base, branch, hint);
}

EditMask extract_edit_mask(const diff::AttentionRecord& record, int token_index, real threshold,
                           std::pair<int, int> step_range, const std::vector<int>& layer_set, int latent_res,
                           int prompt_len) {
    SDIFF_CHECK(token_index >= 0 && token_index < prompt_len, ErrorKind::Input, "token index outside prompt");
    SDIFF_CHECK(step_range.second > step_range.first, ErrorKind::Input, "empty step range");
    SDIFF_CHECK(!layer_set.empty(), ErrorKind::Input, "empty layer set");

    Tensor acc({latent_res, latent_res});
    int count = 0;
    for (int step = step_range.first; step < step_range.second; ++step)
        for (int layer : layer_set) {
            const Tensor& probs = record.at(step, layer);  // [H, S, L]
            SDIFF_CHECK(token_index < probs.dim(2), ErrorKind::Input, "token index outside recorded maps");
            int H = probs.dim(0), S = probs.dim(1), L = probs.dim(2);
            int side = (int)std::lround(std::sqrt((real)S));
            SDIFF_CHECK(side * side == S, ErrorKind::Input, "non-square attention map");
            // head-mean spatial map for the token
            Image m(side, side, 1);
            for (int s = 0; s < S; ++s) {
                real v = 0;
                for (int h = 0; h < H; ++h) v += probs.v[((int64_t)h * S + s) * L + token_index];
                m.v[s] = v / H;
            }
            Image r = side == latent_res ? m : resize_nearest(m, latent_res, latent_res);
            for (int64_t i = 0; i < acc.size(); ++i) acc.v[i] += r.v[i];
            ++count;
        }
    acc.vec() /= (real)count;

    real mx = 0;
    for (auto v : acc.v) mx = std::max(mx, v);
    EditMask out;
    out.mask = Tensor({latent_res, latent_res});
    out.source_token_index = token_index;
    out.threshold = threshold;
    if (mx > 0) {
        for (int64_t i = 0; i < acc.size(); ++i) out.mask.v[i] = (acc.v[i] / mx >= threshold) ? 1.0 : 0.0;
    }
    return out;
}

Tensor mix_latents(const Tensor& z_orig, const Tensor& z_subj, const EditMask& mask) {
    SDIFF_CHECK(z_orig.same_shape(z_subj), ErrorKind::Input, "mix_latents shape mismatch");
    SDIFF_CHECK(z_orig.ndim() == 3, ErrorKind::Input, "mix_latents expects [C,H,W]");
    int C = z_orig.shape[0], H = z_orig.shape[1], W = z_orig.shape[2];
    SDIFF_CHECK((mask.mask.shape == std::vector<int>{H, W}), ErrorKind::Input, "mask resolution mismatch");
    Tensor out = z_orig;
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                real m = mask.mask.at({y, x});
                int64_t i = ((int64_t)c * H + y) * W + x;
                out.v[i] = m * z_subj.v[i] + (1.0 - m) * z_orig.v[i];
            }
    return out;
}

EditResult edit_with_subject(const diff::DenoiseFn& model, const NoiseSchedule& schedule,
                             const Tensor& cond_source, const Tensor& cond_subject, int shared_tokens,
                             const EditSettings& settings, uint64_t seed, const std::vector<int>& latent_shape,
                             const std::optional<Tensor>& init_latent) {
    SDIFF_CHECK(shared_tokens >= 1 && shared_tokens <= cond_source.rows() &&
                    shared_tokens <= cond_subject.rows(),
                ErrorKind::Input, "invalid shared token count");

    EditResult result;
    const int latent_res = latent_shape[1];

    // phase 1: source branch, recorded
    diff::SamplerSettings os;
    os.steps = settings.steps;
    os.guidance_scale = 1.0;
    std::vector<Tensor> orig_trace;
    diff::SampleHooks ohooks;
    ohooks.record = &result.original;
    ohooks.latent_callback = [&](int, Tensor& z) { orig_trace.push_back(z); };
    if (init_latent) ohooks.init_latent = &*init_latent;
    Tensor z_orig_final = diff::sample_latent(model, schedule, cond_source, std::nullopt, os, seed,
                                              latent_shape, ohooks);

    // mask from the source branch's record
    if (settings.force_mask) {
        result.mask.mask = Tensor({latent_res, latent_res});
        result.mask.mask.fill(*settings.force_mask ? 1.0 : 0.0);
        result.mask.source_token_index = settings.edit_token_index;
        result.mask.threshold = settings.threshold;
    } else {
        int mask_steps = std::max(1, (int)std::lround(settings.steps * settings.step_range_frac));
        result.mask = extract_edit_mask(result.original, settings.edit_token_index, settings.threshold,
                                        {0, mask_steps}, settings.mask_layers, latent_res, cond_source.rows());
    }

    // phase 2: subject branch with shared-token attention injected, mixing after every step
    diff::SamplerSettings ss;
    ss.steps = settings.steps;
    ss.guidance_scale = settings.guidance_scale;
    diff::SampleHooks shooks;
    shooks.record = &result.used_by_subject;
    if (init_latent) shooks.init_latent = &*init_latent;
    shooks.attn_override = [&](int step, int layer, Tensor& probs) {
        const Tensor& src = result.original.at(step, layer);
        int H = probs.dim(0), S = probs.dim(1), Ls = probs.dim(2);
        for (int h = 0; h < H; ++h)
            for (int s = 0; s < S; ++s)
                for (int j = 0; j < shared_tokens && j < Ls; ++j)
                    probs.v[((int64_t)h * S + s) * Ls + j] = src.v[((int64_t)h * S + s) * src.dim(2) + j];
    };
    shooks.latent_callback = [&](int step, Tensor& z) {
        z = mix_latents(orig_trace[step], z, result.mask);
    };
    std::optional<Tensor> uncond;
    if (settings.guidance_scale != 1.0) uncond = cond_source;  // subject-free branch
    result.latent = diff::sample_latent(model, schedule, cond_subject, uncond, ss, seed, latent_shape, shooks);
    (void)z_orig_final;
    return result;
}

}  // namespace sdiff::ctrl
