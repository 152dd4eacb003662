#include "subjectdiff/unet.hpp"

#include <cmath>

namespace sdiff::diff {

ResBlock::ResBlock(nn::ParamStore& ps, const std::string& prefix, int cin, int cout, int temb_dim, int groups,
                   Rng& rng) {
    gn1 = nn::GroupNormLayer(ps, prefix + ".gn1", cin, std::min(groups, cin));
    c1 = nn::Conv2dLayer(ps, prefix + ".c1", cin, cout, 3, 1, 1, rng);
    temb_proj = nn::LinearLayer(ps, prefix + ".temb", temb_dim, cout, rng);
    gn2 = nn::GroupNormLayer(ps, prefix + ".gn2", cout, std::min(groups, cout));
    c2 = nn::Conv2dLayer(ps, prefix + ".c2", cout, cout, 3, 1, 1, rng);
    has_skip = cin != cout;
    if (has_skip) skip = nn::Conv2dLayer(ps, prefix + ".skip", cin, cout, 1, 1, 0, rng);
}

ag::Var ResBlock::fwd(const ag::Var& x, const ag::Var& temb) const {
    auto h = c1.fwd(ag::silu(gn1.fwd(x)));
    auto tb = ag::reshape(temb_proj.fwd(temb), {temb_proj.b->val.dim(0)});
    h = ag::add_channel_bias(h, tb);
    h = c2.fwd(ag::silu(gn2.fwd(h)));
    auto res = has_skip ? skip.fwd(x) : x;
    return ag::add(h, res);
}

CrossAttnBlock::CrossAttnBlock(nn::ParamStore& ps, const std::string& prefix, int channels_, int heads, int d_cond,
                               Rng& rng) {
    channels = channels_;
    ln1 = nn::LayerNormLayer(ps, prefix + ".ln1", channels);
    attn = nn::MultiHeadAttention(ps, prefix + ".attn", channels, heads, rng, d_cond);
    ln2 = nn::LayerNormLayer(ps, prefix + ".ln2", channels);
    mlp = nn::MlpBlock(ps, prefix + ".mlp", channels, channels * 2, rng);
}

ag::Var CrossAttnBlock::fwd(const ag::Var& x, const ag::Var& cond, const std::function<void(Tensor&)>& probe) const {
    const int C = x->val.shape[0], H = x->val.shape[1], W = x->val.shape[2];
    auto seq = ag::transpose(ag::reshape(x, {C, H * W}));  // [HW, C]
    seq = ag::add(seq, attn.fwd(ln1.fwd(seq), cond, nullptr, probe));
    seq = ag::add(seq, mlp.fwd(ln2.fwd(seq)));
    return ag::reshape(ag::transpose(seq), {C, H, W});
}

UNet::UNet(const UNetConfig& cfg, Rng rng) : cfg_(cfg) {
    int c = cfg.base, c2 = cfg.base * cfg.mult;
    temb1_ = nn::LinearLayer(store_, "temb1", cfg.temb_dim, cfg.temb_dim, rng);
    temb2_ = nn::LinearLayer(store_, "temb2", cfg.temb_dim, cfg.temb_dim, rng);
    conv_in_ = nn::Conv2dLayer(store_, "conv_in", cfg.in_channels, c, 3, 1, 1, rng);
    down0_ = ResBlock(store_, "down0", c, c, cfg.temb_dim, cfg.groups, rng);
    down1_ = ResBlock(store_, "down1", c, c, cfg.temb_dim, cfg.groups, rng);
    down_conv_ = nn::Conv2dLayer(store_, "down_conv", c, c2, 3, 2, 1, rng);
    mid0_ = ResBlock(store_, "mid0", c2, c2, cfg.temb_dim, cfg.groups, rng);
    mid_attn_ = CrossAttnBlock(store_, "mid_attn", c2, cfg.heads, cfg.d_cond, rng);
    mid1_ = ResBlock(store_, "mid1", c2, c2, cfg.temb_dim, cfg.groups, rng);
    up_conv_ = nn::Conv2dLayer(store_, "up_conv", c2, c, 3, 1, 1, rng);
    up0_ = ResBlock(store_, "up0", c * 2, c, cfg.temb_dim, cfg.groups, rng);
    up1_ = ResBlock(store_, "up1", c, c, cfg.temb_dim, cfg.groups, rng);
    up_attn_ = CrossAttnBlock(store_, "up_attn", c, cfg.heads, cfg.d_cond, rng);
    out_gn_ = nn::GroupNormLayer(store_, "out_gn", c, std::min(cfg.groups, c));
    conv_out_ = nn::Conv2dLayer(store_, "conv_out", c, cfg.in_channels, 3, 1, 1, rng);
}

Tensor UNet::timestep_embedding(int t, int dim) {
    Tensor e({1, dim});
    int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        real freq = std::exp(-std::log(10000.0) * (real)i / (real)half);
        e.v[i] = std::sin(t * freq);
        e.v[half + i] = std::cos(t * freq);
    }
    return e;
}

ag::Var UNet::forward(const ag::Var& z_t, int t, const ag::Var& cond, const AttnHookFn& hook,
                      const ControlResiduals* control) const {
    SDIFF_CHECK(z_t->val.ndim() == 3 && z_t->val.shape[0] == cfg_.in_channels &&
                    z_t->val.shape[1] == cfg_.latent_res && z_t->val.shape[2] == cfg_.latent_res,
                ErrorKind::Input, "denoiser input shape mismatch");
    SDIFF_CHECK(cond->val.cols() == cfg_.d_cond, ErrorKind::Config, "conditioning dim mismatch");

    auto temb = ag::constant(timestep_embedding(t, cfg_.temb_dim));
    temb = temb2_.fwd(ag::silu(temb1_.fwd(temb)));

    auto probe_for = [&](int layer) -> std::function<void(Tensor&)> {
        if (!hook) return nullptr;
        return [layer, &hook](Tensor& probs) { hook(layer, probs); };
    };

    auto x = conv_in_.fwd(z_t);
    x = down0_.fwd(x, temb);
    x = down1_.fwd(x, temb);
    auto skip = x;
    if (control && control->skip_add) skip = ag::add(skip, control->skip_add);
    x = down_conv_.fwd(x);
    x = mid0_.fwd(x, temb);
    x = mid_attn_.fwd(x, cond, probe_for(0));
    x = mid1_.fwd(x, temb);
    if (control && control->mid_add) x = ag::add(x, control->mid_add);
    x = up_conv_.fwd(ag::upsample_nearest2x(x));
    x = ag::concat_axis0({x, skip});
    x = up0_.fwd(x, temb);
    x = up1_.fwd(x, temb);
    x = up_attn_.fwd(x, cond, probe_for(1));
    return conv_out_.fwd(ag::silu(out_gn_.fwd(x)));
}

Tensor UNet::denoise(const Tensor& z_t, int t, const Tensor& cond, const AttnHookFn& hook,
                     const ControlResiduals* control) const {
    ag::NoGradGuard ng;
    return forward(ag::constant(z_t), t, ag::constant(cond), hook, control)->val;
}

DiffusionStep make_diffusion_step(const Tensor& z, int t, const Tensor& epsilon, const Tensor& cond,
                                  const NoiseSchedule& schedule) {
    DiffusionStep s;
    s.z = z;
    s.t = t;
    s.epsilon = epsilon;
    s.z_t = add_noise(z, t, epsilon, schedule);
    s.cond = cond;
    return s;
}

ag::Var training_loss_var(const UNet& unet, const Tensor& z_t, int t, const ag::Var& cond, const Tensor& epsilon) {
    auto pred = unet.forward(ag::constant(z_t), t, cond);
    auto loss = ag::mse_loss(pred, epsilon);
    SDIFF_CHECK(std::isfinite(loss->val.v[0]), ErrorKind::Numeric, "non-finite denoising loss");
    return loss;
}

real training_loss(const UNet& unet, const DiffusionStep& step) {
    ag::NoGradGuard ng;
    return training_loss_var(unet, step.z_t, step.t, ag::constant(step.cond), step.epsilon)->val.v[0];
}

real training_loss(const std::function<Tensor(const Tensor&, int, const Tensor&)>& denoiser,
                   const DiffusionStep& step) {
    Tensor pred = denoiser(step.z_t, step.t, step.cond);
    SDIFF_CHECK(pred.same_shape(step.epsilon), ErrorKind::Input, "denoiser output shape mismatch");
    real s = 0;
    for (int64_t i = 0; i < pred.size(); ++i) {
        real d = pred.v[i] - step.epsilon.v[i];
        s += d * d;
    }
    real loss = s / (real)pred.size();
    SDIFF_CHECK(std::isfinite(loss), ErrorKind::Numeric, "non-finite denoising loss");
    return loss;
}

}  // namespace sdiff::diff
