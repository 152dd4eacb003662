#pragma once

#include "subjectdiff/codec.hpp"
#include "subjectdiff/encoders.hpp"
#include "subjectdiff/subject_prompt.hpp"
#include "subjectdiff/unet.hpp"

namespace testutil {

inline sdiff::enc::ImageEncoderConfig tiny_image_encoder_cfg() {
    sdiff::enc::ImageEncoderConfig c;
    c.resolution = 32;
    c.patch = 8;
    c.d_img = 16;
    c.blocks = 1;
    c.heads = 2;
    return c;
}

inline sdiff::enc::QFormerConfig tiny_qformer_cfg() {
    sdiff::enc::QFormerConfig c;
    c.queries = 2;
    c.d_q = 8;
    c.blocks = 1;
    c.heads = 2;
    c.d_img = 16;
    c.max_text = 16;
    return c;
}

inline sdiff::prompt::PromptConfig tiny_prompt_cfg() {
    sdiff::prompt::PromptConfig c;
    c.d_q = 8;
    c.d_text = 8;
    c.max_len = 24;
    c.blocks = 1;
    c.heads = 2;
    return c;
}

// under 1000 parameters, shaped like the real denoiser
inline sdiff::diff::UNetConfig tiny_unet_cfg() {
    sdiff::diff::UNetConfig c;
    c.in_channels = 1;
    c.latent_res = 8;
    c.base = 2;
    c.mult = 1;
    c.heads = 1;
    c.d_cond = 8;
    c.temb_dim = 4;
    c.groups = 2;
    return c;
}

inline sdiff::Tensor random_grid(int n_patches, int d_img, uint64_t seed) {
    sdiff::Tensor g({n_patches, d_img});
    sdiff::Rng rng(seed);
    rng.fill_normal(g);
    return g;
}

}  // namespace testutil
