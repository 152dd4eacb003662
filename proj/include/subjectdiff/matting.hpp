#pragma once

#include <Eigen/Sparse>
#include <string>
#include <vector>

#include "subjectdiff/image.hpp"
#include "subjectdiff/rng.hpp"

namespace sdiff::synth {

struct SoftMask {
    Image confidence;  // single channel, values clamped to [0,1]
};

enum class TriLabel : unsigned char { FG, BG, UNKNOWN };

struct Trimap {
    int h = 0, w = 0;
    std::vector<TriLabel> labels;
    TriLabel at(int y, int x) const { return labels[(size_t)y * w + x]; }
};

struct AlphaMatte {
    Image alpha;  // single channel in [0,1]
};

struct MattingSettings {
    int window_radius = 1;
    real eps_reg = 1e-7;
    real lambda_c = 100.0;
    real cg_tol = 1e-10;
    int cg_max_iters = 10000;
};

Trimap build_trimap(const SoftMask& mask, real tau_fg, real tau_bg);

using SparseMat = Eigen::SparseMatrix<real>;

// Local-window affinity Laplacian: symmetric, PSD, zero row sums.
SparseMat matting_laplacian(const Image& image, int window_radius, real eps_reg);

// Solves (L + lambda*D_known) a = lambda*b_known with conjugate gradients,
// then clamps a to [0,1].
AlphaMatte solve_matting(const Image& image, const Trimap& trimap, const MattingSettings& settings = {});

Image composite(const Image& fg, const AlphaMatte& alpha, const Image& bg);

// dense reference path used by tests and the acceptance oracle
Tensor matting_system_dense(const Image& image, const Trimap& trimap, const MattingSettings& settings,
                            Tensor& rhs_out);

}  // namespace sdiff::synth
