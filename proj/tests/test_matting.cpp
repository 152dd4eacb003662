#include <Eigen/Dense>

#include "doctest.h"
#include "subjectdiff/matting.hpp"
#include "subjectdiff/rng.hpp"

using namespace sdiff;
using namespace sdiff::synth;

namespace {

Image random_image(int h, int w, Rng& rng) {
    Image img(h, w, 3);
    for (auto& v : img.v) v = rng.uniform();
    return img;
}

Trimap random_trimap(int h, int w, Rng& rng) {
    Trimap t;
    t.h = h;
    t.w = w;
    t.labels.resize((size_t)h * w);
    // keep some of every label
    while (true) {
        bool fg = false, bg = false;
        for (auto& l : t.labels) {
            real u = rng.uniform();
            l = u < 0.25 ? TriLabel::FG : (u < 0.5 ? TriLabel::BG : TriLabel::UNKNOWN);
            fg = fg || l == TriLabel::FG;
            bg = bg || l == TriLabel::BG;
        }
        if (fg && bg) break;
    }
    return t;
}

// two-region step image: left constant color A, right constant color B
Image step_image(int h, int w) {
    Image img(h, w, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            bool left = x < w / 2;
            img.at(y, x, 0) = left ? 0.9 : 0.1;
            img.at(y, x, 1) = left ? 0.2 : 0.8;
            img.at(y, x, 2) = left ? 0.1 : 0.9;
        }
    return img;
}

}  // namespace

TEST_CASE("trimap thresholds follow the confidence bands") {
    SoftMask m;
    m.confidence = Image(1, 3, 1);
    m.confidence.at(0, 0, 0) = 0.96;
    m.confidence.at(0, 1, 0) = 0.5;
    m.confidence.at(0, 2, 0) = 0.1;
    auto t = build_trimap(m, 0.8, 0.2);
    CHECK(t.at(0, 0) == TriLabel::FG);
    CHECK(t.at(0, 1) == TriLabel::UNKNOWN);
    CHECK(t.at(0, 2) == TriLabel::BG);

    SoftMask ones;
    ones.confidence = Image(4, 4, 1);
    for (auto& v : ones.confidence.v) v = 1.0;
    auto t2 = build_trimap(ones, 0.8, 0.2);
    for (auto l : t2.labels) CHECK(l == TriLabel::FG);

    SoftMask mid;
    mid.confidence = Image(4, 4, 1);
    for (auto& v : mid.confidence.v) v = 0.5;
    auto t3 = build_trimap(mid, 1.0, 0.0);
    for (auto l : t3.labels) CHECK(l == TriLabel::UNKNOWN);

    CHECK_THROWS_AS(build_trimap(mid, 0.2, 0.8), Error);
}

TEST_CASE("trimap partition covers the image") {
    Rng rng(77);
    SoftMask m;
    m.confidence = Image(8, 8, 1);
    for (auto& v : m.confidence.v) v = rng.uniform();
    auto t = build_trimap(m, 0.7, 0.3);
    CHECK(t.labels.size() == 64);  // one label per pixel by construction
}

TEST_CASE("matting laplacian is symmetric with zero row sums and PSD") {
    Rng rng(123);
    for (int trial = 0; trial < 3; ++trial) {
        Image img = random_image(6, 6, rng);
        auto L = matting_laplacian(img, 1, 1e-7);
        const int n = 36;

        Tensor dense({n, n});
        for (int k = 0; k < L.outerSize(); ++k)
            for (SparseMat::InnerIterator it(L, k); it; ++it) dense.at({(int)it.row(), (int)it.col()}) = it.value();

        real asym = 0, rowsum = 0;
        for (int i = 0; i < n; ++i) {
            real s = 0;
            for (int j = 0; j < n; ++j) {
                asym = std::max(asym, std::abs(dense.at({i, j}) - dense.at({j, i})));
                s += dense.at({i, j});
            }
            rowsum = std::max(rowsum, std::abs(s));
        }
        CHECK(asym == 0.0);
        CHECK(rowsum < 1e-10);

        Eigen::Map<EMat> M(dense.data(), n, n);
        Eigen::SelfAdjointEigenSolver<EMat> es(M);
        CHECK(es.eigenvalues().minCoeff() >= -1e-8);
    }
}

TEST_CASE("iterative solve matches dense direct solve") {
    Rng rng(321);
    MattingSettings st;
    for (int trial = 0; trial < 5; ++trial) {
        Image img = random_image(8, 8, rng);
        Trimap tm = random_trimap(8, 8, rng);

        auto matte = solve_matting(img, tm, st);

        Tensor rhs;
        Tensor A = matting_system_dense(img, tm, st, rhs);
        const int n = 64;
        Eigen::Map<EMat> Am(A.data(), n, n);
        Eigen::Map<Eigen::Matrix<real, Eigen::Dynamic, 1>> bm(rhs.data(), n);
        Eigen::Matrix<real, Eigen::Dynamic, 1> x = Am.ldlt().solve(bm);

        real max_diff = 0;
        for (int i = 0; i < n; ++i) {
            real xc = std::clamp(x[i], 0.0, 1.0);
            max_diff = std::max(max_diff, std::abs(xc - matte.alpha.v[i]));
        }
        CHECK(max_diff < 1e-6);
    }
}

TEST_CASE("all-known trimap returns the labels") {
    Image img = step_image(8, 8);
    Trimap tm;
    tm.h = tm.w = 8;
    tm.labels.resize(64);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) tm.labels[y * 8 + x] = x < 4 ? TriLabel::FG : TriLabel::BG;
    MattingSettings st;
    st.lambda_c = 1000.0;
    auto matte = solve_matting(img, tm, st);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            real want = x < 4 ? 1.0 : 0.0;
            CHECK(std::abs(matte.alpha.at(y, x, 0) - want) < 1e-5);
        }
}

TEST_CASE("two-region seeds recover the step mask") {
    Image img = step_image(8, 8);
    Trimap tm;
    tm.h = tm.w = 8;
    tm.labels.assign(64, TriLabel::UNKNOWN);
    // seed a few pixels on each side
    tm.labels[3 * 8 + 1] = TriLabel::FG;
    tm.labels[4 * 8 + 0] = TriLabel::FG;
    tm.labels[3 * 8 + 6] = TriLabel::BG;
    tm.labels[4 * 8 + 7] = TriLabel::BG;
    auto matte = solve_matting(img, tm);
    real max_err = 0;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            real want = x < 4 ? 1.0 : 0.0;
            max_err = std::max(max_err, std::abs(matte.alpha.at(y, x, 0) - want));
        }
    CHECK(max_err < 0.02);
}

TEST_CASE("matting constraint satisfaction bound") {
    Rng rng(55);
    Image img = random_image(8, 8, rng);
    Trimap tm = random_trimap(8, 8, rng);
    MattingSettings st;
    st.lambda_c = 100.0;
    auto matte = solve_matting(img, tm, st);
    for (int i = 0; i < 64; ++i) {
        if (tm.labels[i] == TriLabel::FG) CHECK(std::abs(matte.alpha.v[i] - 1.0) < 10.0 / st.lambda_c);
        if (tm.labels[i] == TriLabel::BG) CHECK(std::abs(matte.alpha.v[i]) < 10.0 / st.lambda_c);
    }
}

TEST_CASE("solver input validation") {
    Rng rng(9);
    Image img = random_image(8, 8, rng);
    Trimap tm;
    tm.h = tm.w = 8;
    tm.labels.assign(64, TriLabel::UNKNOWN);
    CHECK_THROWS_AS(solve_matting(img, tm), Error);

    Image tiny = random_image(2, 2, rng);
    CHECK_THROWS_AS(matting_laplacian(tiny, 1, 1e-7), Error);
}

TEST_CASE("composite identities") {
    Rng rng(31);
    Image fg = random_image(5, 7, rng), bg = random_image(5, 7, rng);
    AlphaMatte a;
    a.alpha = Image(5, 7, 1);

    for (auto& v : a.alpha.v) v = 1.0;
    CHECK(images_equal(composite(fg, a, bg), fg));

    for (auto& v : a.alpha.v) v = 0.0;
    CHECK(images_equal(composite(fg, a, bg), bg));

    for (auto& v : a.alpha.v) v = 0.5;
    Image ones(5, 7, 3), zeros(5, 7, 3);
    for (auto& v : ones.v) v = 1.0;
    Image mix = composite(ones, a, zeros);
    for (auto v : mix.v) CHECK(v == 0.5);

    Image small = random_image(4, 7, rng);
    CHECK_THROWS_AS(composite(fg, a, small), Error);
}

TEST_CASE("composite stays in bounds") {
    Rng rng(77);
    Image fg = random_image(6, 6, rng), bg = random_image(6, 6, rng);
    AlphaMatte a;
    a.alpha = Image(6, 6, 1);
    for (auto& v : a.alpha.v) v = rng.uniform();
    Image out = composite(fg, a, bg);
    for (auto v : out.v) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}
