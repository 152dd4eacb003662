#pragma once

#include "subjectdiff/matting.hpp"
#include "subjectdiff/toy_data.hpp"

namespace sdiff::synth {

// Prompted-context training pair built from a subject image: matte the
// subject out with the oracle soft mask, blend it onto a random pool
// background, keep the untouched original as the target.
struct SynthesisSettings {
    real tau_fg = 0.8;
    real tau_bg = 0.2;
    MattingSettings matting;
};

struct SynthesizedPair {
    Image input;   // composite
    Image target;  // original, untouched
    int background_id = 0;
};

SynthesizedPair synthesize_pair(const Image& subject_image, const SoftMask& mask,
                                const std::vector<Image>& background_pool, Rng rng,
                                const SynthesisSettings& settings = {},
                                const AlphaMatte* precomputed_alpha = nullptr);

// Generates the sprite corpus and the pair manifest under root/.
// Layout: dataset.json, pairs.jsonl, subjects/, masks/, pairs/.
DatasetManifest make_toy_dataset(const ToyDataConfig& cfg, uint64_t seed, const std::string& root,
                                 const SynthesisSettings& settings = {});

void write_manifest(const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& root);

// context id for each pair's caption is recoverable from the identity + caption;
// stored explicitly in the record for convenience
int context_of_caption(const std::string& caption);

}  // namespace sdiff::synth
