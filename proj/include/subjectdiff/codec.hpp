#pragma once

#include "subjectdiff/image.hpp"
#include "subjectdiff/nn.hpp"

namespace sdiff::diff {

struct CodecConfig {
    enum class Mode { Identity, Learned };
    Mode mode = Mode::Learned;
    int factor = 4;  // identity mode forces 1
    int latent_channels = 4;
    int hidden = 48;
    int resolution = 64;
};

// 4x convolutional autoencoder; identity mode passes images through untouched
// so latent-space tests can be exact.
class LatentCodec {
public:
    LatentCodec(const CodecConfig& cfg, Rng rng);

    int latent_res() const { return cfg_.resolution / factor(); }
    int latent_channels() const { return cfg_.mode == CodecConfig::Mode::Identity ? 3 : cfg_.latent_channels; }
    int factor() const { return cfg_.mode == CodecConfig::Mode::Identity ? 1 : cfg_.factor; }
    bool identity() const { return cfg_.mode == CodecConfig::Mode::Identity; }

    // training path (no trained-flag check, no latent scaling)
    ag::Var encode_raw(const ag::Var& chw) const;
    ag::Var decode_raw(const ag::Var& latent) const;

    // public contract: requires a trained codec outside identity mode
    Tensor encode(const Image& img) const;
    Image decode(const Tensor& latent) const;

    bool trained() const;
    void mark_trained(real latent_scale);
    real latent_scale() const;

    nn::ParamStore& store() { return store_; }
    const nn::ParamStore& store() const { return store_; }
    const CodecConfig& config() const { return cfg_; }

private:
    CodecConfig cfg_;
    nn::ParamStore store_{"codec"};
    nn::Conv2dLayer e0_, e1_, e2_, e3_;
    nn::Conv2dLayer d0_, d1_, d2_, d3_;
    ag::Var trained_flag_, scale_;
};

}  // namespace sdiff::diff
