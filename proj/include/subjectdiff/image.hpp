#pragma once

#include <string>

#include "subjectdiff/tensor.hpp"

namespace sdiff {

// Images are [H,W,C] doubles in [0,1]; files are 8-bit PNG.
struct Image {
    int h = 0, w = 0, c = 0;
    std::vector<real> v;

    Image() = default;
    Image(int h_, int w_, int c_) : h(h_), w(w_), c(c_), v((size_t)h_ * w_ * c_, 0.0) {}

    real& at(int y, int x, int ch) { return v[((size_t)y * w + x) * c + ch]; }
    real at(int y, int x, int ch) const { return v[((size_t)y * w + x) * c + ch]; }

    void clamp01() {
        for (auto& x : v) x = x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x);
    }

    // [H,W,C] <-> [C,H,W] tensor used by conv stacks
    Tensor to_chw() const;
    static Image from_chw(const Tensor& t);
};

void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

real psnr(const Image& a, const Image& b);
real mean_abs_diff(const Image& a, const Image& b);
bool images_equal(const Image& a, const Image& b);

// 3x3 gradient-magnitude edge map, normalized to [0,1], single channel.
Image edge_map(const Image& img);

// fraction of edge pixels in `want` that have an edge pixel of `have` within 1px
real edge_recall(const Image& want, const Image& have, real threshold = 0.25);

Image resize_nearest(const Image& img, int oh, int ow);

}  // namespace sdiff
