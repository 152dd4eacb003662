#include "subjectdiff/codec.hpp"

namespace sdiff::diff {

LatentCodec::LatentCodec(const CodecConfig& cfg, Rng rng) : cfg_(cfg) {
    if (cfg_.mode == CodecConfig::Mode::Identity) {
        trained_flag_ = store_.add("trained", nn::init_ones({1}));
        scale_ = store_.add("latent_scale", nn::init_ones({1}));
        return;
    }
    SDIFF_CHECK(cfg.factor == 4, ErrorKind::Config, "learned codec implements factor 4");
    SDIFF_CHECK(cfg.resolution % 4 == 0, ErrorKind::Config, "resolution not divisible by codec factor");
    int h = cfg.hidden, c = cfg.latent_channels;
    e0_ = nn::Conv2dLayer(store_, "e0", 3, h, 3, 1, 1, rng);
    e1_ = nn::Conv2dLayer(store_, "e1", h, h, 3, 2, 1, rng);
    e2_ = nn::Conv2dLayer(store_, "e2", h, h, 3, 2, 1, rng);
    e3_ = nn::Conv2dLayer(store_, "e3", h, c, 3, 1, 1, rng);
    d0_ = nn::Conv2dLayer(store_, "d0", c, h, 3, 1, 1, rng);
    d1_ = nn::Conv2dLayer(store_, "d1", h, h, 3, 1, 1, rng);
    d2_ = nn::Conv2dLayer(store_, "d2", h, h, 3, 1, 1, rng);
    d3_ = nn::Conv2dLayer(store_, "d3", h, 3, 3, 1, 1, rng);
    trained_flag_ = store_.add("trained", nn::init_zeros({1}));
    scale_ = store_.add("latent_scale", nn::init_ones({1}));
}

ag::Var LatentCodec::encode_raw(const ag::Var& chw) const {
    if (identity()) return chw;
    auto x = ag::silu(e0_.fwd(chw));
    x = ag::silu(e1_.fwd(x));
    x = ag::silu(e2_.fwd(x));
    return e3_.fwd(x);
}

ag::Var LatentCodec::decode_raw(const ag::Var& latent) const {
    if (identity()) return latent;
    auto x = ag::silu(d0_.fwd(latent));
    x = ag::silu(d1_.fwd(ag::upsample_nearest2x(x)));
    x = ag::silu(d2_.fwd(ag::upsample_nearest2x(x)));
    return d3_.fwd(x);
}

bool LatentCodec::trained() const { return trained_flag_->val.v[0] != 0.0; }

void LatentCodec::mark_trained(real latent_scale) {
    trained_flag_->val.v[0] = 1.0;
    scale_->val.v[0] = latent_scale;
}

real LatentCodec::latent_scale() const { return scale_->val.v[0]; }

Tensor LatentCodec::encode(const Image& img) const {
    SDIFF_CHECK(img.h == cfg_.resolution && img.w == cfg_.resolution && img.c == 3, ErrorKind::Input,
                "codec expects " + std::to_string(cfg_.resolution) + "x" + std::to_string(cfg_.resolution) + "x3");
    if (identity()) return img.to_chw();
    SDIFF_CHECK(trained(), ErrorKind::State, "latent codec is untrained; train it or use the identity codec");
    ag::NoGradGuard ng;
    Tensor z = encode_raw(ag::constant(img.to_chw()))->val;
    z.vec() *= latent_scale();
    return z;
}

Image LatentCodec::decode(const Tensor& latent) const {
    if (identity()) {
        Image img = Image::from_chw(latent);
        img.clamp01();
        return img;
    }
    SDIFF_CHECK(trained(), ErrorKind::State, "latent codec is untrained; train it or use the identity codec");
    ag::NoGradGuard ng;
    Tensor z = latent;
    z.vec() /= latent_scale();
    Image img = Image::from_chw(decode_raw(ag::constant(z))->val);
    img.clamp01();
    return img;
}

}  // namespace sdiff::diff
