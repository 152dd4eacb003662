#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "subjectdiff/image.hpp"
#include "subjectdiff/rng.hpp"

namespace sdiff::synth {

// Sprite identity = (shape, color, texture). Contexts describe the scene the
// subject appears in; they are caption words, not identity.
struct SpriteAttrs {
    int shape = 0;
    int color = 0;
    int texture = 0;
};

extern const std::vector<std::string> kShapeNames;    // circle square triangle cross ring
extern const std::vector<std::string> kColorNames;    // red green blue yellow magenta
extern const std::vector<std::string> kTextureNames;  // solid striped
extern const std::vector<std::string> kContextNames;  // snow grass night desert water

int num_shapes();
int num_colors();
int num_textures();
int num_contexts();
int max_identities();

std::array<real, 3> color_anchor(int color);
std::string context_phrase(int context);  // e.g. "in the snow"

// subject placement inside a square image
struct SpritePose {
    real cx, cy, size;
};

// alpha in [0,1] with ~1px soft edge
Image render_sprite_alpha(int shape, const SpritePose& pose, int resolution);
Image render_context_background(int context, int resolution, Rng& rng);
Image render_procedural_background(int resolution, Rng& rng);  // composite pool styles

// sprite colored + textured, composited over bg with the given alpha
Image render_sprite_on(const Image& bg, const Image& alpha, const SpriteAttrs& attrs, Rng& jitter_rng);

struct SubjectImage {
    Image image;        // sprite on a context background
    Image soft_mask;    // oracle alpha, single channel
    int context = 0;
    SpritePose pose;
};

SubjectImage render_subject_image(const SpriteAttrs& attrs, int context, int resolution, Rng rng);

// ----- dataset -----

struct ToyDataConfig {
    int resolution = 64;
    int identities = 50;
    int images_per_identity = 8;
    int composites_per_image = 5;
    int background_pool = 24;
    real heldout_fraction = 0.2;
};

struct IdentityInfo {
    int id = 0;
    SpriteAttrs attrs;
    bool heldout = false;
    std::string subject_text;  // category word (the shape)
};

struct PairRecord {
    std::string input_path;
    std::string target_path;
    std::string mask_path;
    std::string subject_text;
    std::string caption;
    int subject_id = 0;
    int image_index = 0;
    int background_id = 0;
    int context = 0;
    uint64_t seed = 0;
};

struct DatasetManifest {
    ToyDataConfig config;
    uint64_t seed = 0;
    std::vector<IdentityInfo> identities;
    std::vector<PairRecord> pairs;
    std::string root;

    std::vector<int> train_identity_ids() const;
    std::vector<int> heldout_identity_ids() const;
};

// identity list + split, deterministic in seed
std::vector<IdentityInfo> plan_identities(const ToyDataConfig& cfg, uint64_t seed);

std::string caption_for(const SpriteAttrs& attrs, int context);

}  // namespace sdiff::synth
