#include "subjectdiff/config.hpp"

#include <cstdlib>
#include <fstream>

namespace sdiff::pipe {

RunConfig RunConfig::preset_toy() { return RunConfig{}; }

RunConfig RunConfig::preset_full() {
    // full-scale constants; not runnable at desk scale, kept as a named preset
    RunConfig c;
    c.preset = "full";
    c.resolution = 512;
    c.patch = 14;
    c.d_img = 1024;
    c.image_encoder_blocks = 24;
    c.queries = 16;
    c.d_q = 768;
    c.qformer_blocks = 12;
    c.d_text = 768;
    c.text_blocks = 12;
    c.unet_base = 320;
    c.unet_mult = 2;
    c.schedule_T = 1000;
    c.s2_steps = 500000;
    c.s2_batch = 16;
    c.s2_lr = 2e-6;
    c.ft_steps = 120;
    c.ft_batch = 3;
    c.ft_lr = 5e-5;
    c.sample_steps = 100;
    c.guidance_scale = 7.5;
    return c;
}

RunConfig RunConfig::from_preset(const std::string& name) {
    if (name == "toy") return preset_toy();
    if (name == "full") return preset_full();
    if (name == "finetune_appendix") {
        RunConfig c = preset_toy();
        c.preset = "finetune_appendix";
        c.ft_lr = 5e-6;  // the alternative fine-tune rate
        return c;
    }
    throw Error(ErrorKind::Config, "unknown preset: " + name);
}

namespace {

template <typename T>
void opt(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    std::string preset = "toy";
    opt(j, "preset", preset);
    RunConfig c = from_preset(preset);

    if (j.contains("model")) {
        const auto& m = j.at("model");
        opt(m, "resolution", c.resolution);
        opt(m, "patch", c.patch);
        opt(m, "d_img", c.d_img);
        opt(m, "image_encoder_blocks", c.image_encoder_blocks);
        opt(m, "image_encoder_heads", c.image_encoder_heads);
        opt(m, "queries", c.queries);
        opt(m, "d_q", c.d_q);
        opt(m, "qformer_blocks", c.qformer_blocks);
        opt(m, "qformer_heads", c.qformer_heads);
        opt(m, "qformer_max_text", c.qformer_max_text);
        opt(m, "d_text", c.d_text);
        opt(m, "text_blocks", c.text_blocks);
        opt(m, "text_heads", c.text_heads);
        opt(m, "max_len", c.max_len);
        opt(m, "template_comma", c.template_comma);
        opt(m, "unet_base", c.unet_base);
        opt(m, "unet_mult", c.unet_mult);
        opt(m, "unet_heads", c.unet_heads);
        opt(m, "temb_dim", c.temb_dim);
        opt(m, "unet_groups", c.unet_groups);
        opt(m, "codec_mode", c.codec_mode);
        opt(m, "codec_latent_channels", c.codec_latent_channels);
        opt(m, "codec_hidden", c.codec_hidden);
        opt(m, "schedule_T", c.schedule_T);
        opt(m, "beta_start", c.beta_start);
        opt(m, "beta_end", c.beta_end);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        opt(d, "dir", c.data_dir);
        opt(d, "identities", c.data.identities);
        opt(d, "images_per_identity", c.data.images_per_identity);
        opt(d, "composites_per_image", c.data.composites_per_image);
        opt(d, "background_pool", c.data.background_pool);
        opt(d, "heldout_fraction", c.data.heldout_fraction);
    }
    if (j.contains("stage1")) {
        const auto& s = j.at("stage1");
        opt(s, "steps", c.s1_steps);
        opt(s, "batch", c.s1_batch);
        opt(s, "lr", c.s1_lr);
        opt(s, "encoder_pretrain_steps", c.encoder_pretrain_steps);
        opt(s, "encoder_pretrain_lr", c.encoder_pretrain_lr);
        opt(s, "codec_pretrain_steps", c.codec_pretrain_steps);
        opt(s, "codec_batch", c.codec_batch);
        opt(s, "codec_lr", c.codec_lr);
    }
    if (j.contains("stage2")) {
        const auto& s = j.at("stage2");
        opt(s, "steps", c.s2_steps);
        opt(s, "batch", c.s2_batch);
        opt(s, "lr", c.s2_lr);
        opt(s, "drop_prob", c.drop_prob);
        opt(s, "freeze_text_encoder", c.freeze_text_encoder);
        opt(s, "omit_subject_text", c.omit_subject_text);
        opt(s, "reinit_multimodal", c.reinit_multimodal);
    }
    if (j.contains("finetune")) {
        const auto& s = j.at("finetune");
        opt(s, "steps", c.ft_steps);
        opt(s, "batch", c.ft_batch);
        opt(s, "lr", c.ft_lr);
        opt(s, "include_projection", c.ft_include_projection);
    }
    if (j.contains("control")) {
        const auto& s = j.at("control");
        opt(s, "steps", c.ctrl_steps);
        opt(s, "batch", c.ctrl_batch);
        opt(s, "lr", c.ctrl_lr);
    }
    if (j.contains("sampler")) {
        const auto& s = j.at("sampler");
        opt(s, "steps", c.sample_steps);
        opt(s, "guidance_scale", c.guidance_scale);
        opt(s, "method", c.sample_method);
        opt(s, "edit_threshold", c.edit_threshold);
        opt(s, "edit_step_range_frac", c.edit_step_range_frac);
    }
    c.data.resolution = c.resolution;
    SDIFF_CHECK(c.drop_prob >= 0.0 && c.drop_prob <= 1.0, ErrorKind::Config, "drop_prob outside [0,1]");
    return c;
}

RunConfig RunConfig::load_file(const std::string& path) {
    std::ifstream is(path);
    SDIFF_CHECK(is.good(), ErrorKind::Io, "cannot open config: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Config, "config parse failure: " + std::string(e.what()));
    }
    return from_json(j);
}

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["preset"] = preset;
    j["model"] = {{"resolution", resolution},
                  {"patch", patch},
                  {"d_img", d_img},
                  {"image_encoder_blocks", image_encoder_blocks},
                  {"image_encoder_heads", image_encoder_heads},
                  {"queries", queries},
                  {"d_q", d_q},
                  {"qformer_blocks", qformer_blocks},
                  {"qformer_heads", qformer_heads},
                  {"qformer_max_text", qformer_max_text},
                  {"d_text", d_text},
                  {"text_blocks", text_blocks},
                  {"text_heads", text_heads},
                  {"max_len", max_len},
                  {"template_comma", template_comma},
                  {"unet_base", unet_base},
                  {"unet_mult", unet_mult},
                  {"unet_heads", unet_heads},
                  {"temb_dim", temb_dim},
                  {"unet_groups", unet_groups},
                  {"codec_mode", codec_mode},
                  {"codec_latent_channels", codec_latent_channels},
                  {"codec_hidden", codec_hidden},
                  {"schedule_T", schedule_T},
                  {"beta_start", beta_start},
                  {"beta_end", beta_end}};
    j["data"] = {{"dir", data_dir},
                 {"identities", data.identities},
                 {"images_per_identity", data.images_per_identity},
                 {"composites_per_image", data.composites_per_image},
                 {"background_pool", data.background_pool},
                 {"heldout_fraction", data.heldout_fraction}};
    j["stage1"] = {{"steps", s1_steps},
                   {"batch", s1_batch},
                   {"lr", s1_lr},
                   {"encoder_pretrain_steps", encoder_pretrain_steps},
                   {"encoder_pretrain_lr", encoder_pretrain_lr},
                   {"codec_pretrain_steps", codec_pretrain_steps},
                   {"codec_batch", codec_batch},
                   {"codec_lr", codec_lr}};
    j["stage2"] = {{"steps", s2_steps},        {"batch", s2_batch},
                   {"lr", s2_lr},              {"drop_prob", drop_prob},
                   {"freeze_text_encoder", freeze_text_encoder},
                   {"omit_subject_text", omit_subject_text},
                   {"reinit_multimodal", reinit_multimodal}};
    j["finetune"] = {{"steps", ft_steps}, {"batch", ft_batch}, {"lr", ft_lr},
                     {"include_projection", ft_include_projection}};
    j["control"] = {{"steps", ctrl_steps}, {"batch", ctrl_batch}, {"lr", ctrl_lr}};
    j["sampler"] = {{"steps", sample_steps},
                    {"guidance_scale", guidance_scale},
                    {"method", sample_method},
                    {"edit_threshold", edit_threshold},
                    {"edit_step_range_frac", edit_step_range_frac}};
    return j;
}

enc::ImageEncoderConfig RunConfig::image_encoder_config() const {
    enc::ImageEncoderConfig c;
    c.resolution = resolution;
    c.patch = patch;
    c.d_img = d_img;
    c.blocks = image_encoder_blocks;
    c.heads = image_encoder_heads;
    return c;
}

enc::QFormerConfig RunConfig::qformer_config() const {
    enc::QFormerConfig c;
    c.queries = queries;
    c.d_q = d_q;
    c.blocks = qformer_blocks;
    c.heads = qformer_heads;
    c.d_img = d_img;
    c.max_text = qformer_max_text;
    return c;
}

prompt::PromptConfig RunConfig::prompt_config() const {
    prompt::PromptConfig c;
    c.d_q = d_q;
    c.d_text = d_text;
    c.max_len = max_len;
    c.blocks = text_blocks;
    c.heads = text_heads;
    c.template_comma = template_comma;
    return c;
}

diff::CodecConfig RunConfig::codec_config() const {
    diff::CodecConfig c;
    c.mode = codec_mode == "identity" ? diff::CodecConfig::Mode::Identity : diff::CodecConfig::Mode::Learned;
    c.factor = 4;
    c.latent_channels = codec_latent_channels;
    c.hidden = codec_hidden;
    c.resolution = resolution;
    return c;
}

int RunConfig::latent_res() const {
    return codec_mode == "identity" ? resolution : resolution / 4;
}

int RunConfig::latent_channels() const { return codec_mode == "identity" ? 3 : codec_latent_channels; }

diff::UNetConfig RunConfig::unet_config() const {
    diff::UNetConfig c;
    c.in_channels = latent_channels();
    c.latent_res = latent_res();
    c.base = unet_base;
    c.mult = unet_mult;
    c.heads = unet_heads;
    c.d_cond = d_text;
    c.temb_dim = temb_dim;
    c.groups = unet_groups;
    return c;
}

diff::SamplerSettings RunConfig::sampler_settings() const {
    diff::SamplerSettings s;
    s.steps = sample_steps;
    s.guidance_scale = guidance_scale;
    SDIFF_CHECK(sample_method == "deterministic" || sample_method == "ancestral", ErrorKind::Config,
                "unknown sampler method: " + sample_method);
    s.method = sample_method == "ancestral" ? diff::SampleMethod::Ancestral : diff::SampleMethod::Deterministic;
    return s;
}

NoiseSchedule RunConfig::make_schedule() const { return NoiseSchedule::linear(schedule_T, beta_start, beta_end); }

std::string cache_directory(const std::string& out_dir) {
    const char* env = std::getenv("SUBJECTDIFF_CACHE");
    if (env && *env) return env;
    return out_dir + "/cache";
}

}  // namespace sdiff::pipe
