#include "subjectdiff/toy_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "subjectdiff/error.hpp"

namespace sdiff::synth {

const std::vector<std::string> kShapeNames{"circle", "square", "triangle", "cross", "ring"};
const std::vector<std::string> kColorNames{"red", "green", "blue", "yellow", "magenta"};
const std::vector<std::string> kTextureNames{"solid", "striped"};
const std::vector<std::string> kContextNames{"snow", "grass", "night", "desert", "water"};

int num_shapes() { return (int)kShapeNames.size(); }
int num_colors() { return (int)kColorNames.size(); }
int num_textures() { return (int)kTextureNames.size(); }
int num_contexts() { return (int)kContextNames.size(); }
int max_identities() { return num_shapes() * num_colors() * num_textures(); }

std::array<real, 3> color_anchor(int color) {
    static const std::array<std::array<real, 3>, 5> anchors{{
        {0.85, 0.10, 0.10},  // red
        {0.10, 0.78, 0.15},  // green
        {0.15, 0.25, 0.90},  // blue
        {0.92, 0.86, 0.10},  // yellow
        {0.85, 0.15, 0.80},  // magenta
    }};
    return anchors[color];
}

std::string context_phrase(int context) {
    switch (context) {
        case 0: return "in the snow";
        case 1: return "on the grass";
        case 2: return "at night";
        case 3: return "in the desert";
        case 4: return "in the water";
    }
    throw Error(ErrorKind::Input, "bad context id");
}

namespace {

// signed inside test per shape; coordinates relative to pose center, size = half extent
bool inside_shape(int shape, real dx, real dy, real s) {
    switch (shape) {
        case 0:  // circle
            return dx * dx + dy * dy <= s * s;
        case 1:  // square
            return std::abs(dx) <= 0.88 * s && std::abs(dy) <= 0.88 * s;
        case 2: {  // triangle, apex up
            real t = (dy + s) / (1.85 * s);
            if (t < 0 || t > 1) return false;
            return std::abs(dx) <= 1.05 * s * t;
        }
        case 3:  // cross
            return (std::abs(dx) <= 0.34 * s && std::abs(dy) <= s) ||
                   (std::abs(dy) <= 0.34 * s && std::abs(dx) <= s);
        case 4: {  // ring
            real d2 = dx * dx + dy * dy;
            return d2 <= s * s && d2 >= (0.55 * s) * (0.55 * s);
        }
    }
    return false;
}

}  // namespace

Image render_sprite_alpha(int shape, const SpritePose& pose, int resolution) {
    Image alpha(resolution, resolution, 1);
    const int ss = 4;  // supersampling grid per axis
    for (int y = 0; y < resolution; ++y)
        for (int x = 0; x < resolution; ++x) {
            int hit = 0;
            for (int sy = 0; sy < ss; ++sy)
                for (int sx = 0; sx < ss; ++sx) {
                    real px = x + (sx + 0.5) / ss;
                    real py = y + (sy + 0.5) / ss;
                    if (inside_shape(shape, px - pose.cx, py - pose.cy, pose.size)) ++hit;
                }
            alpha.at(y, x, 0) = (real)hit / (ss * ss);
        }
    return alpha;
}

Image render_context_background(int context, int resolution, Rng& rng) {
    Image bg(resolution, resolution, 3);
    for (int y = 0; y < resolution; ++y)
        for (int x = 0; x < resolution; ++x) {
            real r = 0, g = 0, b = 0;
            switch (context) {
                case 0: {  // snow: bright, light speckle
                    real n = rng.uniform(-0.05, 0.03);
                    r = 0.93 + n;
                    g = 0.93 + n;
                    b = 0.96 + n * 0.5;
                    break;
                }
                case 1: {  // grass: green with streaks
                    real streak = 0.05 * std::sin(x * 1.3 + (y % 7));
                    real n = rng.uniform(-0.05, 0.05);
                    r = 0.13 + n * 0.4;
                    g = 0.52 + streak + n;
                    b = 0.16 + n * 0.4;
                    break;
                }
                case 2: {  // night: dark blue, sparse stars
                    r = 0.05;
                    g = 0.06;
                    b = 0.20 + 0.02 * std::sin(y * 0.21);
                    if (rng.uniform() < 0.008) {
                        r = g = b = 0.95;
                    }
                    break;
                }
                case 3: {  // desert: sandy dunes
                    real dune = 0.05 * std::sin(y * 0.55 + 0.3 * std::sin(x * 0.2));
                    r = 0.87 + dune;
                    g = 0.71 + dune;
                    b = 0.42 + dune * 0.6;
                    break;
                }
                case 4: {  // water: blue waves
                    real wave = 0.06 * std::sin(y * 0.9 + x * 0.15);
                    r = 0.10;
                    g = 0.34 + wave * 0.5;
                    b = 0.72 + wave;
                    break;
                }
                default: throw Error(ErrorKind::Input, "bad context id");
            }
            bg.at(y, x, 0) = std::clamp(r, 0.0, 1.0);
            bg.at(y, x, 1) = std::clamp(g, 0.0, 1.0);
            bg.at(y, x, 2) = std::clamp(b, 0.0, 1.0);
        }
    return bg;
}

Image render_procedural_background(int resolution, Rng& rng) {
    Image bg(resolution, resolution, 3);
    int style = rng.uniform_int(3);
    real c0[3] = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
    real c1[3] = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
    int period = 4 + rng.uniform_int(12);
    for (int y = 0; y < resolution; ++y)
        for (int x = 0; x < resolution; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                real v = 0;
                if (style == 0) {  // solid with mild noise
                    v = c0[ch] + rng.uniform(-0.03, 0.03);
                } else if (style == 1) {  // checker
                    bool a = ((x / period) + (y / period)) % 2 == 0;
                    v = a ? c0[ch] : c1[ch];
                } else {  // diagonal gradient
                    real t = (real)(x + y) / (2.0 * resolution);
                    v = c0[ch] * (1 - t) + c1[ch] * t;
                }
                bg.at(y, x, ch) = std::clamp(v, 0.0, 1.0);
            }
    return bg;
}

Image render_sprite_on(const Image& bg, const Image& alpha, const SpriteAttrs& attrs, Rng& jitter_rng) {
    SDIFF_CHECK(bg.h == alpha.h && bg.w == alpha.w, ErrorKind::Input, "sprite/bg resolution mismatch");
    auto base = color_anchor(attrs.color);
    real jitter[3];
    for (auto& j : jitter) j = jitter_rng.uniform(-0.03, 0.03);

    // sprites carry a dark outline: pixels whose 2-neighborhood crosses the boundary
    auto near_edge = [&](int y, int x) {
        for (int dy = -2; dy <= 2; ++dy)
            for (int dx = -2; dx <= 2; ++dx) {
                int yy = y + dy, xx = x + dx;
                real a = (yy < 0 || yy >= bg.h || xx < 0 || xx >= bg.w) ? 0.0 : alpha.at(yy, xx, 0);
                if (a < 0.5) return true;
            }
        return false;
    };

    Image out = bg;
    for (int y = 0; y < bg.h; ++y)
        for (int x = 0; x < bg.w; ++x) {
            real a = alpha.at(y, x, 0);
            if (a <= 0.0) continue;
            bool outline = near_edge(y, x);
            real shade = 1.0;
            if (attrs.texture == 1 && (y / 8) % 2 == 1) shade = 0.42;  // thick dark bands
            for (int ch = 0; ch < 3; ++ch) {
                real c = outline ? 0.02 : std::clamp(base[ch] * shade + jitter[ch], 0.0, 1.0);
                out.at(y, x, ch) = a * c + (1.0 - a) * bg.at(y, x, ch);
            }
        }
    return out;
}

SubjectImage render_subject_image(const SpriteAttrs& attrs, int context, int resolution, Rng rng) {
    SubjectImage si;
    si.context = context;
    real half = resolution / 2.0;
    si.pose.cx = half + rng.uniform(-4.0, 4.0) * resolution / 64.0;
    si.pose.cy = half + rng.uniform(-4.0, 4.0) * resolution / 64.0;
    si.pose.size = (0.30 + rng.uniform(-0.03, 0.03)) * resolution;
    si.soft_mask = render_sprite_alpha(attrs.shape, si.pose, resolution);
    Rng bg_rng = rng.child("bg");
    Image bg = render_context_background(context, resolution, bg_rng);
    Rng jit = rng.child("jitter");
    si.image = render_sprite_on(bg, si.soft_mask, attrs, jit);
    return si;
}

std::vector<IdentityInfo> plan_identities(const ToyDataConfig& cfg, uint64_t seed) {
    SDIFF_CHECK(cfg.identities >= 1 && cfg.identities <= max_identities(), ErrorKind::Config,
                "identities must be in [1, " + std::to_string(max_identities()) + "]");
    std::vector<SpriteAttrs> all;
    for (int s = 0; s < num_shapes(); ++s)
        for (int c = 0; c < num_colors(); ++c)
            for (int t = 0; t < num_textures(); ++t) all.push_back({s, c, t});
    Rng rng = Rng(seed).child("identity_plan");
    auto perm = rng.permutation((int)all.size());
    std::vector<IdentityInfo> out;
    int heldout_count = (int)std::lround(cfg.identities * cfg.heldout_fraction);
    heldout_count = std::clamp(heldout_count, cfg.identities > 1 ? 1 : 0, cfg.identities - 1);
    for (int i = 0; i < cfg.identities; ++i) {
        IdentityInfo info;
        info.id = i;
        info.attrs = all[perm[i]];
        info.heldout = i >= cfg.identities - heldout_count;
        info.subject_text = kShapeNames[info.attrs.shape];
        out.push_back(info);
    }
    return out;
}

std::string caption_for(const SpriteAttrs& attrs, int context) {
    return "a " + kColorNames[attrs.color] + " " + kShapeNames[attrs.shape] + " " + context_phrase(context);
}

std::vector<int> DatasetManifest::train_identity_ids() const {
    std::vector<int> out;
    for (const auto& id : identities)
        if (!id.heldout) out.push_back(id.id);
    return out;
}

std::vector<int> DatasetManifest::heldout_identity_ids() const {
    std::vector<int> out;
    for (const auto& id : identities)
        if (id.heldout) out.push_back(id.id);
    return out;
}

}  // namespace sdiff::synth
