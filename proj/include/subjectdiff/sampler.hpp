#pragma once

#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "subjectdiff/schedule.hpp"
#include "subjectdiff/subject_prompt.hpp"
#include "subjectdiff/unet.hpp"

namespace sdiff::diff {

// Cross-attention maps captured during sampling, keyed by (step index, layer):
// each entry is [heads, spatial, prompt_tokens], rows softmax-normalized.
struct AttentionRecord {
    std::map<std::pair<int, int>, Tensor> maps;
    std::vector<prompt::Role> prompt_roles;

    const Tensor& at(int step, int layer) const {
        auto it = maps.find({step, layer});
        SDIFF_CHECK(it != maps.end(), ErrorKind::Input, "no attention map recorded for that step/layer");
        return it->second;
    }
};

enum class SampleMethod { Deterministic, Ancestral };

struct SamplerSettings {
    int steps = 50;
    real guidance_scale = 7.5;
    SampleMethod method = SampleMethod::Deterministic;
};

struct SampleHooks {
    AttentionRecord* record = nullptr;  // conditional-branch maps
    // runs after the attention softmax of the conditional branch; may rewrite probs
    std::function<void(int step, int layer, Tensor& probs)> attn_override;
    // runs after each latent update; may substitute the latent
    std::function<void(int step, Tensor& z)> latent_callback;
    const Tensor* init_latent = nullptr;  // replaces the seed draw
    const ControlResiduals* control = nullptr;
    std::function<ControlResiduals(const Tensor& z_t, int t)> control_fn;  // per-step branch features
};

// the denoiser as the sampler sees it
using DenoiseFn =
    std::function<Tensor(const Tensor& z_t, int t, const Tensor& cond, const AttnHookFn& hook)>;

DenoiseFn denoiser_fn(const UNet& unet);

// descending timestep subsequence, last transition lands on the clean level
std::vector<int> sampling_timesteps(int T, int steps);

Tensor sample_latent(const DenoiseFn& model, const NoiseSchedule& schedule, const Tensor& cond,
                     const std::optional<Tensor>& uncond, const SamplerSettings& settings, uint64_t seed,
                     const std::vector<int>& latent_shape, const SampleHooks& hooks = {});

// deterministic reverse walk; trajectory[0] is the clean latent, back() the deepest level
std::vector<Tensor> invert_latent(const DenoiseFn& model, const NoiseSchedule& schedule, const Tensor& z0,
                                  const Tensor& cond, int steps, SampleMethod method = SampleMethod::Deterministic);

}  // namespace sdiff::diff
