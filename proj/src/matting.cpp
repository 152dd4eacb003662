#include "subjectdiff/matting.hpp"

#include <Eigen/Dense>

#include "subjectdiff/error.hpp"

namespace sdiff::synth {

Trimap build_trimap(const SoftMask& mask, real tau_fg, real tau_bg) {
    SDIFF_CHECK(mask.confidence.c == 1, ErrorKind::Input, "soft mask must be single channel");
    SDIFF_CHECK(tau_bg >= 0.0 && tau_fg <= 1.0 && tau_bg < tau_fg, ErrorKind::Input,
                "require 0 <= tau_bg < tau_fg <= 1");
    Trimap t;
    t.h = mask.confidence.h;
    t.w = mask.confidence.w;
    t.labels.resize((size_t)t.h * t.w);
    for (int y = 0; y < t.h; ++y)
        for (int x = 0; x < t.w; ++x) {
            real c = std::clamp(mask.confidence.at(y, x, 0), 0.0, 1.0);
            TriLabel l = c >= tau_fg ? TriLabel::FG : (c >= tau_bg ? TriLabel::UNKNOWN : TriLabel::BG);
            t.labels[(size_t)y * t.w + x] = l;
        }
    return t;
}

SparseMat matting_laplacian(const Image& image, int window_radius, real eps_reg) {
    const int h = image.h, w = image.w, n = h * w;
    const int r = window_radius;
    const int win = 2 * r + 1;
    const int wn = win * win;
    SDIFF_CHECK(h >= win && w >= win, ErrorKind::Input, "image smaller than matting window");
    SDIFF_CHECK(image.c == 3, ErrorKind::Input, "matting expects RGB");

    std::vector<Eigen::Triplet<real>> trips;
    trips.reserve((size_t)n * wn * 2);

    using V3 = Eigen::Matrix<real, 3, 1>;
    using M3 = Eigen::Matrix<real, 3, 3>;

    std::vector<int> idx(wn);
    std::vector<V3> cols(wn);
    for (int cy = r; cy < h - r; ++cy)
        for (int cx = r; cx < w - r; ++cx) {
            int k = 0;
            V3 mu = V3::Zero();
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    int y = cy + dy, x = cx + dx;
                    idx[k] = y * w + x;
                    cols[k] = V3(image.at(y, x, 0), image.at(y, x, 1), image.at(y, x, 2));
                    mu += cols[k];
                    ++k;
                }
            mu /= (real)wn;
            M3 cov = M3::Zero();
            for (int i = 0; i < wn; ++i) cov += (cols[i] - mu) * (cols[i] - mu).transpose();
            cov /= (real)wn;
            M3 m = (cov + (eps_reg / wn) * M3::Identity()).inverse();
            for (int i = 0; i < wn; ++i)
                for (int j = 0; j < wn; ++j) {
                    real aff = (1.0 + (cols[i] - mu).dot(m * (cols[j] - mu))) / (real)wn;
                    real val = (i == j ? 1.0 : 0.0) - aff;
                    trips.emplace_back(idx[i], idx[j], val);
                }
        }

    SparseMat L(n, n);
    L.setFromTriplets(trips.begin(), trips.end());
    // exact symmetry regardless of accumulation order
    SparseMat Lt = SparseMat(L.transpose());
    L = (L + Lt) * 0.5;
    return L;
}

namespace {

void build_system(const Image& image, const Trimap& trimap, const MattingSettings& st, SparseMat& A,
                  Eigen::Matrix<real, Eigen::Dynamic, 1>& rhs, int& n_known) {
    const int n = image.h * image.w;
    SDIFF_CHECK(trimap.h == image.h && trimap.w == image.w, ErrorKind::Input, "trimap size mismatch");
    A = matting_laplacian(image, st.window_radius, st.eps_reg);
    rhs.setZero(n);
    n_known = 0;
    std::vector<Eigen::Triplet<real>> diag;
    for (int i = 0; i < n; ++i) {
        TriLabel l = trimap.labels[i];
        if (l == TriLabel::UNKNOWN) continue;
        ++n_known;
        diag.emplace_back(i, i, st.lambda_c);
        if (l == TriLabel::FG) rhs[i] = st.lambda_c;
    }
    SparseMat D(n, n);
    D.setFromTriplets(diag.begin(), diag.end());
    A = A + D;
}

}  // namespace

AlphaMatte solve_matting(const Image& image, const Trimap& trimap, const MattingSettings& st) {
    bool has_fg = false, has_bg = false;
    for (auto l : trimap.labels) {
        has_fg = has_fg || l == TriLabel::FG;
        has_bg = has_bg || l == TriLabel::BG;
    }
    SDIFF_CHECK(has_fg && has_bg, ErrorKind::Input, "trimap needs at least one FG and one BG pixel");

    SparseMat A;
    Eigen::Matrix<real, Eigen::Dynamic, 1> rhs;
    int n_known = 0;
    build_system(image, trimap, st, A, rhs, n_known);
    const int n = image.h * image.w;

    // plain conjugate gradients; A is SPD (PSD Laplacian + positive diagonal on known pixels)
    Eigen::Matrix<real, Eigen::Dynamic, 1> x(n);
    for (int i = 0; i < n; ++i) {
        switch (trimap.labels[i]) {
            case TriLabel::FG: x[i] = 1.0; break;
            case TriLabel::BG: x[i] = 0.0; break;
            default: x[i] = 0.5; break;
        }
    }
    Eigen::Matrix<real, Eigen::Dynamic, 1> rvec = rhs - A * x;
    Eigen::Matrix<real, Eigen::Dynamic, 1> p = rvec, Ap(n);
    real rr = rvec.squaredNorm();
    const real rhs_norm2 = std::max(rhs.squaredNorm(), (real)1e-30);
    const real tol2 = st.cg_tol * st.cg_tol * rhs_norm2;
    int iters = 0;
    while (rr > tol2 && iters < st.cg_max_iters) {
        Ap.noalias() = A * p;
        real pap = p.dot(Ap);
        if (pap <= 0) break;
        real alpha = rr / pap;
        x += alpha * p;
        rvec -= alpha * Ap;
        real rr_new = rvec.squaredNorm();
        p = rvec + (rr_new / rr) * p;
        rr = rr_new;
        ++iters;
    }
    SDIFF_CHECK(std::isfinite(rr), ErrorKind::Numeric, "matting solver diverged after " + std::to_string(iters) + " iterations");
    real resid_inf = (rhs - A * x).template lpNorm<Eigen::Infinity>();
    SDIFF_CHECK(resid_inf < 1e-6 * st.lambda_c, ErrorKind::Numeric,
                "matting solver did not converge: residual " + std::to_string(resid_inf) + " after " +
                    std::to_string(iters) + " iterations");

    AlphaMatte out;
    out.alpha = Image(image.h, image.w, 1);
    for (int i = 0; i < n; ++i) out.alpha.v[i] = std::clamp(x[i], 0.0, 1.0);
    return out;
}

Image composite(const Image& fg, const AlphaMatte& alpha, const Image& bg) {
    SDIFF_CHECK(fg.h == bg.h && fg.w == bg.w && fg.c == bg.c, ErrorKind::Input, "composite resolution mismatch");
    SDIFF_CHECK(alpha.alpha.h == fg.h && alpha.alpha.w == fg.w, ErrorKind::Input, "alpha resolution mismatch");
    Image out(fg.h, fg.w, fg.c);
    for (int y = 0; y < fg.h; ++y)
        for (int x = 0; x < fg.w; ++x) {
            real a = alpha.alpha.at(y, x, 0);
            for (int ch = 0; ch < fg.c; ++ch) out.at(y, x, ch) = a * fg.at(y, x, ch) + (1.0 - a) * bg.at(y, x, ch);
        }
    return out;
}

Tensor matting_system_dense(const Image& image, const Trimap& trimap, const MattingSettings& st, Tensor& rhs_out) {
    SparseMat A;
    Eigen::Matrix<real, Eigen::Dynamic, 1> rhs;
    int n_known = 0;
    build_system(image, trimap, st, A, rhs, n_known);
    const int n = image.h * image.w;
    Tensor dense({n, n});
    for (int k = 0; k < A.outerSize(); ++k)
        for (SparseMat::InnerIterator it(A, k); it; ++it) dense.at({(int)it.row(), (int)it.col()}) = it.value();
    rhs_out = Tensor({n});
    for (int i = 0; i < n; ++i) rhs_out.v[i] = rhs[i];
    return dense;
}

}  // namespace sdiff::synth
