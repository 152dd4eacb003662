#pragma once

#include "subjectdiff/image.hpp"
#include "subjectdiff/toy_data.hpp"

namespace sdiff::evalm {

// Procedural readings of a sprite image; the generator and these classifiers
// are designed as a matched pair so they can serve as ground truth.
struct SpriteReading {
    bool subject_found = false;
    int shape = -1;
    int color = -1;
    int texture = -1;
    int context = -1;
};

SpriteReading classify_sprite(const Image& img);
int classify_context(const Image& img);

bool matches_identity(const SpriteReading& r, const synth::SpriteAttrs& attrs);

}  // namespace sdiff::evalm
