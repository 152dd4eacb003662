#include "subjectdiff/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace sdiff::evalm {

namespace {

using synth::SpritePose;

std::array<real, 3> context_mean(int ctx) {
    // canonical background means, computed once from the generator
    static std::vector<std::array<real, 3>> means = [] {
        std::vector<std::array<real, 3>> m;
        for (int c = 0; c < synth::num_contexts(); ++c) {
            Rng rng(1234);
            Image bg = synth::render_context_background(c, 32, rng);
            std::array<real, 3> s{0, 0, 0};
            for (int y = 0; y < bg.h; ++y)
                for (int x = 0; x < bg.w; ++x)
                    for (int ch = 0; ch < 3; ++ch) s[ch] += bg.at(y, x, ch);
            for (auto& v : s) v /= bg.h * bg.w;
            m.push_back(s);
        }
        return m;
    }();
    return means[ctx];
}

real dist2(const std::array<real, 3>& a, const std::array<real, 3>& b) {
    real s = 0;
    for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

// median color over the border frame; robust to the central subject
std::array<real, 3> border_color(const Image& img) {
    int bw = std::max(3, img.h / 12);
    std::vector<real> ch[3];
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            bool border = y < bw || y >= img.h - bw || x < bw || x >= img.w - bw;
            if (!border) continue;
            for (int c = 0; c < 3; ++c) ch[c].push_back(img.at(y, x, c));
        }
    std::array<real, 3> out{};
    for (int c = 0; c < 3; ++c) {
        std::nth_element(ch[c].begin(), ch[c].begin() + ch[c].size() / 2, ch[c].end());
        out[c] = ch[c][ch[c].size() / 2];
    }
    return out;
}

struct ShapeGeom {
    real unit_area;     // pixels at size 1
    real centroid_dx;   // centroid offset from the pose center, in units of size
    real centroid_dy;
};

// canonical geometry measured from the renderer itself
const ShapeGeom& shape_geom(int shape) {
    static std::vector<ShapeGeom> geoms = [] {
        std::vector<ShapeGeom> g;
        for (int s = 0; s < synth::num_shapes(); ++s) {
            SpritePose pose{32.0, 32.0, 20.0};
            Image alpha = synth::render_sprite_alpha(s, pose, 64);
            real count = 0, cx = 0, cy = 0;
            for (int y = 0; y < 64; ++y)
                for (int x = 0; x < 64; ++x)
                    if (alpha.at(y, x, 0) > 0.5) {
                        count += 1.0;
                        cx += x;
                        cy += y;
                    }
            ShapeGeom geom;
            geom.unit_area = count / (20.0 * 20.0);
            geom.centroid_dx = (cx / count - 32.0) / 20.0;
            geom.centroid_dy = (cy / count - 32.0) / 20.0;
            g.push_back(geom);
        }
        return g;
    }();
    return geoms[shape];
}

}  // namespace

int classify_context(const Image& img) {
    auto bc = border_color(img);
    int best = 0;
    real bd = 1e9;
    for (int c = 0; c < synth::num_contexts(); ++c) {
        real d = dist2(bc, context_mean(c));
        if (d < bd) {
            bd = d;
            best = c;
        }
    }
    return best;
}

SpriteReading classify_sprite(const Image& img) {
    SpriteReading r;
    r.context = classify_context(img);
    auto bg = border_color(img);

    // candidate subject pixels: far enough from the background model
    const real thresh2 = 0.02;
    const int n = img.h * img.w;
    std::vector<char> cand(n, 0);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            std::array<real, 3> px{img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)};
            if (dist2(px, bg) > thresh2) cand[(size_t)y * img.w + x] = 1;
        }

    // largest 8-connected component is the subject; speckle stays behind
    std::vector<int> comp(n, -1);
    int best_comp = -1, best_size = 0, n_comps = 0;
    std::vector<int> stack;
    for (int start = 0; start < n; ++start) {
        if (!cand[start] || comp[start] >= 0) continue;
        int id = n_comps++;
        int size = 0;
        stack.push_back(start);
        comp[start] = id;
        while (!stack.empty()) {
            int cur = stack.back();
            stack.pop_back();
            ++size;
            int cy0 = cur / img.w, cx0 = cur % img.w;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    int yy = cy0 + dy, xx = cx0 + dx;
                    if (yy < 0 || yy >= img.h || xx < 0 || xx >= img.w) continue;
                    int idx = yy * img.w + xx;
                    if (cand[idx] && comp[idx] < 0) {
                        comp[idx] = id;
                        stack.push_back(idx);
                    }
                }
        }
        if (size > best_size) {
            best_size = size;
            best_comp = id;
        }
    }
    if (best_size < n / 50) return r;  // no clear subject
    r.subject_found = true;

    std::vector<char> mask(n, 0);
    int count = 0;
    real cx = 0, cy = 0;
    for (int i = 0; i < n; ++i)
        if (comp[i] == best_comp) {
            mask[i] = 1;
            ++count;
            cx += i % img.w;
            cy += i / img.w;
        }
    cx /= count;
    cy /= count;

    // color and texture by per-pixel vote between each anchor and its darkened
    // band variant; outline and boundary pixels (near-black) do not vote
    std::vector<int> color_votes(synth::num_colors(), 0);
    int dark_votes = 0, voted = 0;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            if (!mask[(size_t)y * img.w + x]) continue;
            std::array<real, 3> px{img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)};
            if (std::max({px[0], px[1], px[2]}) < 0.25) continue;
            int best_color = -1;
            bool best_dark = false;
            real bd = 1e9;
            for (int c = 0; c < synth::num_colors(); ++c) {
                auto a = synth::color_anchor(c);
                real d_bright = dist2(px, a);
                std::array<real, 3> dark{a[0] * 0.42, a[1] * 0.42, a[2] * 0.42};
                real d_dark = dist2(px, dark);
                if (d_bright < bd) {
                    bd = d_bright;
                    best_color = c;
                    best_dark = false;
                }
                if (d_dark < bd) {
                    bd = d_dark;
                    best_color = c;
                    best_dark = true;
                }
            }
            ++color_votes[best_color];
            dark_votes += best_dark ? 1 : 0;
            ++voted;
        }
    if (voted == 0) return r;
    r.color = (int)(std::max_element(color_votes.begin(), color_votes.end()) - color_votes.begin());
    real dark_frac = (real)dark_votes / voted;
    r.texture = (dark_frac > 0.18 && dark_frac < 0.85) ? 1 : 0;

    // shape by best IoU against canonical masks, centroid-aligned
    real best_iou = -1;
    for (int s = 0; s < synth::num_shapes(); ++s) {
        const auto& geom = shape_geom(s);
        real base_size = std::sqrt((real)count / geom.unit_area);
        for (real f : {0.9, 1.0, 1.1}) {
            real size = base_size * f;
            SpritePose pose{cx - geom.centroid_dx * size, cy - geom.centroid_dy * size, size};
            Image alpha = synth::render_sprite_alpha(s, pose, img.h);
            int64_t inter = 0, uni = 0;
            for (size_t i = 0; i < mask.size(); ++i) {
                bool a = mask[i] != 0;
                bool b = alpha.v[i] > 0.5;
                inter += (a && b) ? 1 : 0;
                uni += (a || b) ? 1 : 0;
            }
            real iou = uni > 0 ? (real)inter / (real)uni : 0.0;
            if (iou > best_iou) {
                best_iou = iou;
                r.shape = s;
            }
        }
    }
    return r;
}

bool matches_identity(const SpriteReading& r, const synth::SpriteAttrs& attrs) {
    return r.subject_found && r.shape == attrs.shape && r.color == attrs.color && r.texture == attrs.texture;
}

}  // namespace sdiff::evalm
