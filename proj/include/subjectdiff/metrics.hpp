#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "subjectdiff/image.hpp"

namespace sdiff::evalm {

// Pluggable embedder; outputs are unit-normalized (or zero when the embedder
// has nothing to say about the input).
struct Embedder {
    std::string name;
    int dim = 0;
    std::function<Tensor(const Image&)> embed_image;
    std::function<Tensor(const std::string&)> embed_text;  // optional tower
};

// one-hot over (shape, color, texture, context) read by the oracle classifiers
Embedder oracle_embedder();

real cosine(const Tensor& a, const Tensor& b);

// mean cosine over all |A| x |B| pairs
real pairwise_cosine_mean(const std::vector<Image>& set_a, const std::vector<Image>& set_b,
                          const Embedder& embedder);

// mean cosine between the prompt embedding and each image embedding
real clip_t_score(const std::vector<Image>& images, const std::string& prompt, const Embedder& embedder);

// ---- protocol ----

struct ProtocolSubject {
    std::string name;
    std::vector<Image> real_images;
    std::vector<std::string> prompts;
};

// generation may fail; failures are excluded from the means, never zero-filled
using GenerateFn = std::function<std::optional<Image>(int subject_index, const std::string& prompt, uint64_t seed)>;

struct ProtocolConfig {
    int n_images = 4;
    std::vector<uint64_t> seeds;  // one entry per experiment run
    static std::vector<uint64_t> default_seeds();
};

struct SubjectRow {
    std::string subject;
    real dino = 0, clip_i = 0, clip_t = 0;
};

struct EvalReport {
    std::vector<SubjectRow> rows;  // per-subject, averaged across runs
    real mean_dino = 0, mean_clip_i = 0, mean_clip_t = 0;
    real spread_dino = 0, spread_clip_i = 0, spread_clip_t = 0;  // across-run spread of the means
    std::string spread_stat = "std";
    int n_images = 0;
    int n_runs = 0;
    int generated = 0;
    int failed = 0;
    uint64_t prompt_list_hash = 0;

    std::string to_text() const;
    std::string to_jsonl() const;
};

std::string format_mean_spread(real mean, real spread);  // "0.594 (±0.004)"

EvalReport run_protocol(const GenerateFn& generate, const std::vector<ProtocolSubject>& subjects,
                        const Embedder& subject_embedder, const Embedder& clip_embedder,
                        const ProtocolConfig& cfg);

}  // namespace sdiff::evalm
