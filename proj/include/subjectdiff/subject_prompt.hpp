#pragma once

#include <optional>
#include <string>
#include <vector>

#include "subjectdiff/encoders.hpp"
#include "subjectdiff/nn.hpp"
#include "subjectdiff/tokenizer.hpp"

namespace sdiff::prompt {

enum class Role : unsigned char { TEXT, TEMPLATE, SUBJECT_TEXT, SOFT_SUBJECT };

struct SubjectEmbedding {
    Tensor emb;  // [K, d_text]
};

struct GuidancePrompt {
    ag::Var token_embeddings;   // [L, d_text]
    std::vector<Role> roles;
    std::vector<int> token_ids; // -1 at soft-subject rows
    std::string source_text;
    std::string subject_text;
    bool dropped = false;
    int length() const { return (int)roles.size(); }
};

struct ConditioningSequence {
    Tensor states;  // [L, d_cond]
};

struct PromptConfig {
    int d_q = 64;
    int d_text = 128;
    int max_len = 77;
    int blocks = 2;
    int heads = 4;
    bool template_comma = true;  // "[text], the [subject] is" vs "[text] the [subject] is"
};

// two linear layers with a GELU in between
class ProjectionMlp {
public:
    ProjectionMlp(const PromptConfig& cfg, Rng rng);
    ag::Var project_var(const ag::Var& features) const;
    SubjectEmbedding project(const enc::SubjectFeatures& features) const;
    nn::ParamStore& store() { return store_; }
    const nn::ParamStore& store() const { return store_; }

private:
    int d_q_, d_text_;
    nn::ParamStore store_{"projection"};
    nn::LinearLayer l1_, l2_;
};

// Small causal transformer over assembled prompts; plays the text-conditioning
// role for the denoiser. Soft subject rows get positional embeddings like any
// other token.
class TextCondEncoder {
public:
    TextCondEncoder(const PromptConfig& cfg, Rng rng);

    GuidancePrompt assemble(const std::string& text, const std::string& subject_text,
                            const std::optional<SubjectEmbedding>& subject) const;
    // gradient-capable variant (soft rows as graph nodes)
    GuidancePrompt assemble_var(const std::string& text, const std::string& subject_text,
                                const std::optional<ag::Var>& subject_rows) const;

    ag::Var encode_var(const GuidancePrompt& prompt) const;
    ConditioningSequence encode(const GuidancePrompt& prompt) const;

    const PromptConfig& config() const { return cfg_; }
    nn::ParamStore& store() { return store_; }
    const nn::ParamStore& store() const { return store_; }

private:
    PromptConfig cfg_;
    nn::ParamStore store_{"text_encoder"};
    ag::Var tok_emb_, pos_;
    std::vector<nn::TransformerBlock> blocks_;
    nn::LayerNormLayer final_ln_;
};

// role-sequence grammar: TEXT+ TEMPLATE+ SUBJECT_TEXT+ TEMPLATE+ SOFT_SUBJECT{K}
bool roles_match_template(const std::vector<Role>& roles, int K);

SubjectEmbedding mean_subject_embedding(const std::vector<SubjectEmbedding>& embs);
SubjectEmbedding interpolate(const SubjectEmbedding& a, const SubjectEmbedding& b, real t);
SubjectEmbedding bilinear(const std::array<SubjectEmbedding, 4>& corners, real u, real v);
bool sample_drop(Rng& rng, real p = 0.15);

// cache file: header json (subject_text, K, d_text, source hashes) + tensor blob
struct SubjectCache {
    SubjectEmbedding embedding;
    std::string subject_text;
    std::vector<std::string> source_hashes;
};
void save_subject_cache(const std::string& path, const SubjectCache& cache);
SubjectCache load_subject_cache(const std::string& path);

}  // namespace sdiff::prompt
