#pragma once

#include <optional>
#include <string>
#include <vector>

#include "subjectdiff/image.hpp"
#include "subjectdiff/nn.hpp"
#include "subjectdiff/tokenizer.hpp"

namespace sdiff::enc {

struct ImageEncoderConfig {
    int resolution = 64;
    int patch = 8;
    int d_img = 64;
    int blocks = 2;
    int heads = 4;
    int n_patches() const { return (resolution / patch) * (resolution / patch); }
};

struct ImageFeatureGrid {
    Tensor features;  // [n_patches, d_img]
    int source_h = 0, source_w = 0;
};

// Patch transformer. Pre-fit once on the toy corpus, then frozen; encode() is
// deterministic and never touches parameters.
class ImageEncoder {
public:
    ImageEncoder(const ImageEncoderConfig& cfg, Rng rng);

    // autograd path (used by the pre-fit)
    ag::Var forward(const Image& img) const;

    ImageFeatureGrid encode(const Image& img) const;

    nn::ParamStore& store() { return store_; }
    const nn::ParamStore& store() const { return store_; }
    const ImageEncoderConfig& config() const { return cfg_; }

private:
    ImageEncoderConfig cfg_;
    nn::ParamStore store_{"image_encoder"};
    nn::LinearLayer patch_embed_;
    ag::Var pos_;
    std::vector<nn::TransformerBlock> blocks_;
    nn::LayerNormLayer final_ln_;
};

struct QFormerConfig {
    int queries = 16;
    int d_q = 64;
    int blocks = 2;
    int heads = 4;
    int d_img = 64;
    int max_text = 24;
};

enum class AttnMode { Unimodal, MultimodalCausal, Full };

struct SubjectFeatures {
    Tensor features;  // [K, d_q]
};

struct Stage1Losses {
    real itc = 0;
    real itg = 0;
    std::optional<real> itm;
};

struct Stage1Batch {
    std::vector<Tensor> grids;              // frozen image features, one per sample
    std::vector<std::vector<int>> text_ids; // caption ids with BOS
};

// Query-token multimodal encoder: learnable queries attend to text through
// shared self-attention and to frozen image features through cross-attention.
class QFormer {
public:
    QFormer(const QFormerConfig& cfg, Rng rng);

    // hidden states [K + T, d_q]; text_ids may be empty (queries only)
    ag::Var forward_hidden(const ag::Var& grid, const std::vector<int>& text_ids, AttnMode mode) const;

    // gradient-capable subject-feature path used by stage-2 training
    ag::Var subject_features_var(const Tensor& grid, const std::vector<int>& subject_text_ids) const;

    // public inference contract: K x d_q, deterministic, subject text required
    SubjectFeatures encode_multimodal(const ImageFeatureGrid& grid, const std::string& subject_text) const;

    // the three representation-learning objectives; itm absent when B == 1
    ag::Var stage1_loss(const Stage1Batch& batch, Stage1Losses* values) const;
    Stage1Losses stage1_losses(const Stage1Batch& batch) const;

    // next-token losses per sample (for the permutation property)
    std::vector<real> itg_per_sample(const Stage1Batch& batch) const;

    // pooled contrastive towers, reused as the learned image/text embedder
    Tensor pooled_image_embedding(const Tensor& grid) const;
    Tensor pooled_text_embedding(const std::vector<int>& ids_with_bos) const;

    int64_t multimodal_calls() const { return multimodal_calls_; }
    void reset_multimodal_calls() { multimodal_calls_ = 0; }

    nn::ParamStore& store() { return store_; }
    const nn::ParamStore& store() const { return store_; }
    const QFormerConfig& config() const { return cfg_; }

private:
    struct Block {
        nn::LayerNormLayer ln_self;
        nn::MultiHeadAttention self_attn;
        nn::LayerNormLayer ln_cross;
        nn::MultiHeadAttention cross_attn;
        nn::LayerNormLayer ln_mlp;
        nn::MlpBlock mlp;
    };

    Tensor attn_mask(int T, AttnMode mode) const;
    ag::Var itc_image_embed(const ag::Var& hidden) const;  // [K, d_q] normalized
    ag::Var itc_text_embed(const ag::Var& hidden, int K) const;

    QFormerConfig cfg_;
    nn::ParamStore store_{"multimodal_encoder"};
    ag::Var query_bank_;
    ag::Var tok_emb_;
    ag::Var text_pos_;
    std::vector<Block> blocks_;
    nn::LayerNormLayer final_ln_;
    nn::LinearLayer itc_img_proj_, itc_txt_proj_, itm_head_, itg_head_;
    real itc_temperature_ = 0.07;
    mutable int64_t multimodal_calls_ = 0;
};

}  // namespace sdiff::enc
