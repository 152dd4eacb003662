#pragma once

#include <functional>

#include "subjectdiff/nn.hpp"
#include "subjectdiff/schedule.hpp"

namespace sdiff::diff {

// layer 0 = coarse attention (res/2), layer 1 = fine attention (res)
using AttnHookFn = std::function<void(int layer, Tensor& probs)>;  // probs [heads, spatial, L]

struct UNetConfig {
    int in_channels = 4;
    int latent_res = 16;
    int base = 32;
    int mult = 2;  // channel multiplier at the coarse resolution
    int heads = 4;
    int d_cond = 128;
    int temb_dim = 128;
    int groups = 8;
};

// additive features from a control branch, matched to the base resolutions
struct ControlResiduals {
    ag::Var skip_add;  // [base, res, res]
    ag::Var mid_add;   // [2*base, res/2, res/2]
};

struct ResBlock {
    nn::GroupNormLayer gn1, gn2;
    nn::Conv2dLayer c1, c2;
    nn::LinearLayer temb_proj;
    nn::Conv2dLayer skip;
    bool has_skip = false;
    ResBlock() = default;
    ResBlock(nn::ParamStore& ps, const std::string& prefix, int cin, int cout, int temb_dim, int groups, Rng& rng);
    ag::Var fwd(const ag::Var& x, const ag::Var& temb) const;
};

struct CrossAttnBlock {
    nn::LayerNormLayer ln1, ln2;
    nn::MultiHeadAttention attn;
    nn::MlpBlock mlp;
    int channels = 0;
    CrossAttnBlock() = default;
    CrossAttnBlock(nn::ParamStore& ps, const std::string& prefix, int channels, int heads, int d_cond, Rng& rng);
    ag::Var fwd(const ag::Var& x, const ag::Var& cond, const std::function<void(Tensor&)>& probe) const;
};

// Two resolutions, two residual blocks each, one cross-attention per
// resolution. Small enough to train on a CPU, shaped like the real thing.
class UNet {
public:
    UNet(const UNetConfig& cfg, Rng rng);

    ag::Var forward(const ag::Var& z_t, int t, const ag::Var& cond, const AttnHookFn& hook = nullptr,
                    const ControlResiduals* control = nullptr) const;

    Tensor denoise(const Tensor& z_t, int t, const Tensor& cond, const AttnHookFn& hook = nullptr,
                   const ControlResiduals* control = nullptr) const;

    static Tensor timestep_embedding(int t, int dim);

    const UNetConfig& config() const { return cfg_; }
    nn::ParamStore& store() { return store_; }
    const nn::ParamStore& store() const { return store_; }

    // pieces reused by the control branch copy
    friend class ControlBranch;

private:
    UNetConfig cfg_;
    nn::ParamStore store_{"unet"};
    nn::LinearLayer temb1_, temb2_;
    nn::Conv2dLayer conv_in_;
    ResBlock down0_, down1_;
    nn::Conv2dLayer down_conv_;
    ResBlock mid0_, mid1_;
    CrossAttnBlock mid_attn_;
    nn::Conv2dLayer up_conv_;
    ResBlock up0_, up1_;
    CrossAttnBlock up_attn_;
    nn::GroupNormLayer out_gn_;
    nn::Conv2dLayer conv_out_;
};

// Eq-style training instance: clean latent, timestep, noise draw, noisy latent, conditioning.
struct DiffusionStep {
    Tensor z;
    int t = 0;
    Tensor epsilon;
    Tensor z_t;
    Tensor cond;  // [L, d_cond]
};

DiffusionStep make_diffusion_step(const Tensor& z, int t, const Tensor& epsilon, const Tensor& cond,
                                  const NoiseSchedule& schedule);

// mean squared error between the drawn and predicted noise
ag::Var training_loss_var(const UNet& unet, const Tensor& z_t, int t, const ag::Var& cond, const Tensor& epsilon);
real training_loss(const UNet& unet, const DiffusionStep& step);
real training_loss(const std::function<Tensor(const Tensor&, int, const Tensor&)>& denoiser,
                   const DiffusionStep& step);

}  // namespace sdiff::diff
