#pragma once

#include <optional>

#include "subjectdiff/image.hpp"
#include "subjectdiff/sampler.hpp"
#include "subjectdiff/unet.hpp"

namespace sdiff::ctrl {

// Trainable copy of the denoiser's encoder half plus a hint adapter; its
// features enter the frozen base through zero-initialized 1x1 connectors, so a
// fresh branch leaves the base extensionally unchanged.
class ControlBranch {
public:
    ControlBranch(const diff::UNetConfig& cfg, int image_res, Rng rng);

    // maps a single-channel hint image to latent-resolution features
    ag::Var hint_features(const Image& hint) const;

    diff::ControlResiduals residuals(const ag::Var& z_t, int t, const ag::Var& cond,
                                     const ag::Var& hint_feat) const;

    nn::ParamStore& store() { return store_; }
    const nn::ParamStore& store() const { return store_; }
    const diff::UNetConfig& config() const { return cfg_; }
    int image_res() const { return image_res_; }

private:
    diff::UNetConfig cfg_;
    int image_res_;
    nn::ParamStore store_{"control_branch"};
    std::vector<nn::Conv2dLayer> adapter_;
    nn::LinearLayer temb1_, temb2_;
    nn::Conv2dLayer conv_in_;
    diff::ResBlock down0_, down1_;
    nn::Conv2dLayer down_conv_;
    diff::ResBlock mid0_, mid1_;
    diff::CrossAttnBlock mid_attn_;
    nn::Conv2dLayer skip_conn_, mid_conn_;  // zero-initialized connectors
};

// Base denoiser with branch features added as residuals; base weights shared,
// never copied or touched.
class ControlledDenoiser {
public:
    ControlledDenoiser(const diff::UNet& base, const ControlBranch& branch, const Image& hint);

    Tensor denoise(const Tensor& z_t, int t, const Tensor& cond, const diff::AttnHookFn& hook = nullptr) const;
    diff::DenoiseFn fn() const;

    // training path: gradients flow into the branch only when the base is frozen
    ag::Var forward(const ag::Var& z_t, int t, const ag::Var& cond) const;

private:
    const diff::UNet& base_;
    const ControlBranch& branch_;
    Tensor hint_feat_;
};

ControlledDenoiser attach_control(const diff::UNet& base, const ControlBranch& branch, const Image& hint);

struct EditMask {
    Tensor mask;  // [res, res], values exactly 0 or 1
    int source_token_index = -1;
    real threshold = 0;
};

// Average the token's attention over heads, steps and layers, resample each
// layer map to the latent resolution, normalize by the max, binarize.
EditMask extract_edit_mask(const diff::AttentionRecord& record, int token_index, real threshold,
                           std::pair<int, int> step_range, const std::vector<int>& layer_set, int latent_res,
                           int prompt_len);

// z = mask * z_subj + (1 - mask) * z_orig, broadcast across channels
Tensor mix_latents(const Tensor& z_orig, const Tensor& z_subj, const EditMask& mask);

struct EditSettings {
    int edit_token_index = -1;  // position in the original prompt
    real threshold = 0.3;
    real step_range_frac = 0.8;         // first fraction of steps feeds the mask
    std::vector<int> mask_layers{0};    // coarsest cross-attention by default
    int steps = 50;
    real guidance_scale = 7.5;          // subject branch guidance
    std::optional<int> force_mask;      // 0 = all-zero mask, 1 = all-one (identity tests)
};

struct EditResult {
    Tensor latent;                      // mixed final latent
    EditMask mask;
    diff::AttentionRecord original;     // recorded source-branch maps
    diff::AttentionRecord used_by_subject;  // maps the subject branch actually used
};

// Two synchronized denoising walks: the source prompt and the prompt with
// subject rows inserted. Shared-token attention is injected from the source
// branch; latents are mixed through the edit mask after every step.
EditResult edit_with_subject(const diff::DenoiseFn& model, const NoiseSchedule& schedule,
                             const Tensor& cond_source, const Tensor& cond_subject, int shared_tokens,
                             const EditSettings& settings, uint64_t seed,
                             const std::vector<int>& latent_shape,
                             const std::optional<Tensor>& init_latent = std::nullopt);

}  // namespace sdiff::ctrl
