#pragma once

#include <memory>

#include "subjectdiff/config.hpp"
#include "subjectdiff/control.hpp"

namespace sdiff::pipe {

// All model components in one place. Component pointers may be absent when a
// checkpoint predates them (e.g. no control branch before train-control).
struct ModelBundle {
    RunConfig cfg;
    NoiseSchedule schedule;
    std::unique_ptr<enc::ImageEncoder> image_encoder;
    std::unique_ptr<enc::QFormer> qformer;
    std::unique_ptr<prompt::ProjectionMlp> projection;
    std::unique_ptr<prompt::TextCondEncoder> text_encoder;
    std::unique_ptr<diff::UNet> unet;
    std::unique_ptr<diff::LatentCodec> codec;
    std::unique_ptr<ctrl::ControlBranch> control;

    static ModelBundle init(const RunConfig& cfg, uint64_t seed);

    struct ComponentRef {
        std::string name;
        nn::ParamStore* store;
    };
    std::vector<ComponentRef> components();  // present components, canonical order
    nn::ParamStore* find_store(const std::string& name);
};

struct CheckpointInfo {
    std::string stage;  // stage1 | stage2 | finetune | control
    int64_t trained_steps = 0;
    std::vector<std::string> frozen;  // component names with role=frozen
    RunConfig cfg;
};

// one blob per component + an integrity-checked manifest; bit-exact round trip
void save_checkpoint(const std::string& dir, ModelBundle& bundle, const CheckpointInfo& info,
                     const nn::AdamW* optimizer = nullptr);

struct LoadedCheckpoint {
    ModelBundle bundle;
    CheckpointInfo info;
    bool has_optimizer = false;
    nn::AdamW optimizer;
};

LoadedCheckpoint load_checkpoint(const std::string& dir);

// copies matching components from an existing checkpoint into a freshly
// initialized bundle; frozen roles are applied. Returns the loaded names.
std::vector<std::string> load_components_into(ModelBundle& bundle, const std::string& dir,
                                              const std::vector<std::string>& only = {});

CheckpointInfo read_checkpoint_info(const std::string& dir);

uint64_t component_hash(const nn::ParamStore& store);

}  // namespace sdiff::pipe
