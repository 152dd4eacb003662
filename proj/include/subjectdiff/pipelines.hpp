#pragma once

#include "subjectdiff/checkpoint.hpp"
#include "subjectdiff/dataset.hpp"
#include "subjectdiff/metrics.hpp"

namespace sdiff::pipe {

struct TrainResult {
    std::string checkpoint_dir;
    real first_loss = 0;
    real last_loss = 0;
    int64_t steps = 0;
    real codec_psnr = 0;       // stage 1 only
    int64_t drop_count = 0;    // stage 2 only
    int64_t sample_count = 0;  // stage 2 only
};

// stage 1: image-encoder pre-fit (then frozen), codec pre-fit (then frozen),
// and the three representation objectives on the caption corpus
TrainResult train_stage1(const RunConfig& cfg, const std::string& out_dir, uint64_t seed,
                         const std::string& resume_from = "");

// stage 2: subject-conditioned denoising on synthesized pairs
TrainResult train_stage2(const RunConfig& cfg, const std::string& stage1_ckpt, const std::string& out_dir,
                         uint64_t seed, const std::string& resume_from = "");

struct FinetuneResult {
    std::string checkpoint_dir;
    std::string cache_path;      // cached subject embedding
    int64_t multimodal_calls = 0;
    real zero_shot_loss = 0;
    real final_loss = 0;
};

FinetuneResult finetune_subject(const RunConfig& cfg, const std::string& stage2_ckpt,
                                const std::vector<std::string>& image_paths, const std::string& subject_text,
                                const std::vector<std::string>& captions, const std::string& out_dir,
                                uint64_t seed);

TrainResult train_control(const RunConfig& cfg, const std::string& stage2_ckpt, const std::string& out_dir,
                          uint64_t seed);

// ---- inference ----

int checkpoint_rank(const std::string& stage);  // stage1=1, stage2=2, finetune/control=3

prompt::SubjectEmbedding subject_embedding_from_image(const ModelBundle& b, const Image& image,
                                                      const std::string& subject_text);

struct GenerateSettings {
    std::optional<int> steps;
    std::optional<real> guidance_scale;
    std::optional<std::string> method;
};

Image run_generate(const ModelBundle& b, const std::string& text,
                   const std::optional<prompt::SubjectEmbedding>& subject, const std::string& subject_text,
                   uint64_t seed, const GenerateSettings& overrides = {},
                   const ctrl::ControlledDenoiser* controlled = nullptr);

struct EditOutcome {
    Image image;
    Image mask;  // latent-resolution mask upsampled to image size
};

// source known by (text, seed) regeneration or derived from a real image via inversion
EditOutcome run_edit(const ModelBundle& b, const std::string& source_text, uint64_t source_seed,
                     const std::optional<Image>& source_image, const std::string& edit_token,
                     const prompt::SubjectEmbedding& subject, const std::string& subject_text, uint64_t seed);

Image run_style_transfer(const ModelBundle& b, const Image& reference, bool reference_is_edges,
                         const prompt::SubjectEmbedding& subject, const std::string& subject_text,
                         const std::string& text, uint64_t seed);

std::vector<Image> run_interpolate_grid(const ModelBundle& b, const std::array<prompt::SubjectEmbedding, 4>& corners,
                                        const std::array<std::string, 4>& subject_texts, int grid_n,
                                        const std::string& text, uint64_t seed);

// evaluate a checkpoint over the dataset's held-out identities
evalm::EvalReport evaluate_checkpoint(const ModelBundle& b, const synth::DatasetManifest& data,
                                      const std::vector<std::string>& prompt_templates, int n_images,
                                      const std::vector<uint64_t>& seeds);

// stage-1 towers as the learned image/text embedder
evalm::Embedder learned_embedder(const ModelBundle& b);

// component hashes for the freeze-ledger checks
std::map<std::string, uint64_t> component_hashes(ModelBundle& b);

void write_resolved_config(const RunConfig& cfg, const std::string& out_dir, uint64_t seed);

}  // namespace sdiff::pipe
