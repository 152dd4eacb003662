#pragma once

#include <string>

#include "json.hpp"
#include "subjectdiff/codec.hpp"
#include "subjectdiff/encoders.hpp"
#include "subjectdiff/sampler.hpp"
#include "subjectdiff/subject_prompt.hpp"
#include "subjectdiff/toy_data.hpp"

namespace sdiff::pipe {

// Resolved run configuration. Every command writes the resolved form next to
// its outputs so a run can be reproduced from the directory alone.
struct RunConfig {
    std::string preset = "toy";

    // model
    int resolution = 64;
    int patch = 8;
    int d_img = 64;
    int image_encoder_blocks = 2;
    int image_encoder_heads = 4;
    int queries = 16;
    int d_q = 64;
    int qformer_blocks = 2;
    int qformer_heads = 4;
    int qformer_max_text = 24;
    int d_text = 128;
    int text_blocks = 2;
    int text_heads = 4;
    int max_len = 77;
    bool template_comma = true;
    int unet_base = 32;
    int unet_mult = 2;
    int unet_heads = 4;
    int temb_dim = 128;
    int unet_groups = 8;
    std::string codec_mode = "learned";  // learned | identity
    int codec_latent_channels = 4;
    int codec_hidden = 48;
    int schedule_T = 100;
    real beta_start = 1e-4;
    real beta_end = 0.02;

    // data
    std::string data_dir;
    synth::ToyDataConfig data;

    // stage 1
    int s1_steps = 1500;
    int s1_batch = 16;
    real s1_lr = 1e-3;
    int encoder_pretrain_steps = 600;
    real encoder_pretrain_lr = 1e-3;
    int codec_pretrain_steps = 2000;
    int codec_batch = 8;
    real codec_lr = 1e-3;

    // stage 2
    int s2_steps = 3000;
    int s2_batch = 16;
    real s2_lr = 2e-4;
    real drop_prob = 0.15;
    bool freeze_text_encoder = false;  // ablation: w/o training the text encoder
    bool omit_subject_text = false;    // ablation: w/o subject text into the multimodal encoder
    bool reinit_multimodal = false;    // ablation: w/o multimodal representation pre-training

    // fine-tune
    int ft_steps = 120;
    int ft_batch = 3;
    real ft_lr = 5e-5;
    bool ft_include_projection = true;

    // control branch
    int ctrl_steps = 800;
    int ctrl_batch = 8;
    real ctrl_lr = 1e-4;

    // sampler / editing
    int sample_steps = 50;
    real guidance_scale = 7.5;
    std::string sample_method = "deterministic";  // deterministic | ancestral
    real edit_threshold = 0.3;
    real edit_step_range_frac = 0.8;

    static RunConfig preset_toy();
    static RunConfig preset_full();
    static RunConfig from_preset(const std::string& name);

    // preset + per-key overrides from a json file
    static RunConfig load_file(const std::string& path);
    static RunConfig from_json(const nlohmann::json& j);
    nlohmann::ordered_json to_json() const;

    // derived model configs
    enc::ImageEncoderConfig image_encoder_config() const;
    enc::QFormerConfig qformer_config() const;
    prompt::PromptConfig prompt_config() const;
    diff::UNetConfig unet_config() const;
    diff::CodecConfig codec_config() const;
    diff::SamplerSettings sampler_settings() const;
    NoiseSchedule make_schedule() const;
    int latent_res() const;
    int latent_channels() const;
};

std::string cache_directory(const std::string& out_dir);  // SUBJECTDIFF_CACHE override

}  // namespace sdiff::pipe
