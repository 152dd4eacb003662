#include <cmath>
#include <functional>

#include "doctest.h"
#include "subjectdiff/autograd.hpp"
#include "subjectdiff/nn.hpp"
#include "subjectdiff/rng.hpp"

using namespace sdiff;
namespace ag = sdiff::ag;

namespace {

// central finite differences vs analytic gradient for a scalar-loss builder
real max_rel_err(std::vector<ag::Var> params, const std::function<ag::Var()>& build, real h = 1e-5) {
    for (auto& p : params) {
        p->grad = Tensor();
        p->grad_ready = false;
    }
    auto loss = build();
    ag::backward(loss);
    std::vector<Tensor> analytic;
    for (auto& p : params) {
        REQUIRE(p->grad_ready);
        analytic.push_back(p->grad);
    }
    real worst = 0;
    ag::NoGradGuard ng;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        for (int64_t i = 0; i < p->val.size(); ++i) {
            real keep = p->val.v[i];
            p->val.v[i] = keep + h;
            real lp = build()->val.v[0];
            p->val.v[i] = keep - h;
            real lm = build()->val.v[0];
            p->val.v[i] = keep;
            real fd = (lp - lm) / (2 * h);
            real a = analytic[pi].v[i];
            real err = std::abs(a - fd) / std::max((real)1e-6, std::abs(a) + std::abs(fd));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

ag::Var randleaf(Rng& rng, std::vector<int> shape, bool rg = true) {
    Tensor t(std::move(shape));
    rng.fill_normal(t);
    return ag::leaf(std::move(t), rg);
}

}  // namespace

TEST_CASE("elementwise and linear ops match finite differences") {
    Rng rng(42);
    auto x = randleaf(rng, {3, 4});
    auto w = randleaf(rng, {4, 5});
    auto b = randleaf(rng, {5});
    auto t = Tensor({3, 5});
    Rng(7).fill_normal(t);

    CHECK(max_rel_err({x, w, b}, [&] {
              return ag::mse_loss(ag::silu(ag::add_rowvec(ag::matmul(x, w), b)), t);
          }) < 1e-6);
    CHECK(max_rel_err({x}, [&] { return ag::mean_all(ag::gelu(x)); }) < 1e-6);
    CHECK(max_rel_err({x}, [&] { return ag::mean_all(ag::sigmoid(ag::scale(x, 1.7))); }) < 1e-6);
    CHECK(max_rel_err({x, w}, [&] {
              return ag::sum_all(ag::mul(ag::matmul(x, w), ag::matmul(x, w)));
          }) < 1e-6);
}

TEST_CASE("shape ops match finite differences") {
    Rng rng(3);
    auto x = randleaf(rng, {4, 6});
    CHECK(max_rel_err({x}, [&] {
              auto a = ag::slice_cols(x, 0, 3);
              auto b = ag::slice_cols(x, 3, 3);
              return ag::mean_all(ag::mul(a, b));
          }) < 1e-6);
    CHECK(max_rel_err({x}, [&] {
              auto parts = std::vector<ag::Var>{ag::slice_axis0(x, 1, 2), ag::slice_axis0(x, 0, 1)};
              return ag::mean_all(ag::concat_axis0(parts));
          }) < 1e-6);
    CHECK(max_rel_err({x}, [&] {
              return ag::sum_all(ag::transpose(ag::reshape(x, {6, 4})));
          }) < 1e-6);
    auto table = randleaf(rng, {9, 5});
    std::vector<int> ids{1, 4, 4, 0};
    CHECK(max_rel_err({table}, [&] {
              return ag::mean_all(ag::silu(ag::gather_rows(table, ids)));
          }) < 1e-6);
}

TEST_CASE("softmax and losses match finite differences") {
    Rng rng(11);
    auto x = randleaf(rng, {3, 5});
    Tensor mask({3, 5});
    mask.fill(0.0);
    mask.at({0, 4}) = -1e9;

    Tensor wts({3, 5});
    Rng(21).fill_normal(wts);
    auto wvar = ag::leaf(wts, false);
    CHECK(max_rel_err({x}, [&] { return ag::mean_all(ag::mul(ag::softmax_rows(x, &mask), wvar)); }) < 1e-6);
    std::vector<int> targets{1, 0, 3};
    CHECK(max_rel_err({x}, [&] { return ag::softmax_ce_rows(x, targets); }) < 1e-6);
    Tensor labels({3, 5});
    Rng(5).fill_uniform(labels, 0, 1);
    for (auto& v : labels.v) v = v > 0.5 ? 1.0 : 0.0;
    CHECK(max_rel_err({x}, [&] { return ag::bce_with_logits(x, labels); }) < 1e-6);
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(1);
    auto x = randleaf(rng, {8, 13}, false);
    auto p = ag::softmax_rows(x);
    for (int r = 0; r < 8; ++r) {
        real s = 0;
        for (int c = 0; c < 13; ++c) s += p->val.at({r, c});
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("normalizations match finite differences") {
    Rng rng(17);
    auto x = randleaf(rng, {4, 6});
    auto g = randleaf(rng, {6});
    auto b = randleaf(rng, {6});
    CHECK(max_rel_err({x, g, b}, [&] { return ag::mean_all(ag::silu(ag::layer_norm(x, g, b))); }) < 1e-5);

    auto xc = randleaf(rng, {4, 3, 3});
    auto gg = randleaf(rng, {4});
    auto gb = randleaf(rng, {4});
    CHECK(max_rel_err({xc, gg, gb}, [&] {
              return ag::mean_all(ag::silu(ag::group_norm(xc, gg, gb, 2)));
          }) < 1e-5);

    CHECK(max_rel_err({x}, [&] { return ag::mean_all(ag::normalize_rows(x)); }) < 1e-5);
    CHECK(max_rel_err({x}, [&] { return ag::mean_all(ag::max_axis0(x)); }) < 1e-6);
    CHECK(max_rel_err({x}, [&] { return ag::mean_all(ag::mean_axis0(x)); }) < 1e-6);
}

TEST_CASE("conv ops match finite differences") {
    Rng rng(23);
    auto x = randleaf(rng, {2, 5, 5});
    auto w = randleaf(rng, {3, 2, 3, 3});
    auto b = randleaf(rng, {3});
    Tensor t({3, 5, 5});
    Rng(9).fill_normal(t);
    CHECK(max_rel_err({x, w, b}, [&] { return ag::mse_loss(ag::conv2d(x, w, b, 1, 1), t); }) < 1e-5);

    Tensor t2({3, 3, 3});
    Rng(10).fill_normal(t2);
    CHECK(max_rel_err({x, w, b}, [&] { return ag::mse_loss(ag::conv2d(x, w, b, 2, 1), t2); }) < 1e-5);

    auto cb = randleaf(rng, {2});
    CHECK(max_rel_err({x, cb}, [&] {
              return ag::mean_all(ag::silu(ag::add_channel_bias(x, cb)));
          }) < 1e-6);
    CHECK(max_rel_err({x}, [&] { return ag::mean_all(ag::silu(ag::upsample_nearest2x(x))); }) < 1e-6);
}

TEST_CASE("multi-head attention matches finite differences") {
    Rng rng(31);
    nn::ParamStore ps("test");
    nn::MultiHeadAttention mha(ps, "attn", 8, 2, rng);
    auto xq = randleaf(rng, {4, 8});
    auto xkv = randleaf(rng, {6, 8});
    std::vector<ag::Var> params{xq, xkv};
    for (auto& p : ps.items) params.push_back(p->var);
    Tensor t({4, 8});
    Rng(12).fill_normal(t);
    CHECK(max_rel_err(params, [&] { return ag::mse_loss(mha.fwd(xq, xkv), t); }, 1e-5) < 5e-5);
}

TEST_CASE("transformer block matches finite differences") {
    Rng rng(37);
    nn::ParamStore ps("test");
    nn::TransformerBlock blk(ps, "blk", 8, 2, rng);
    auto x = randleaf(rng, {3, 8});
    std::vector<ag::Var> params{x};
    for (auto& p : ps.items) params.push_back(p->var);
    Tensor t({3, 8});
    Rng(13).fill_normal(t);
    // causal mask
    Tensor mask({3, 3});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) mask.at({i, j}) = j > i ? -1e9 : 0.0;
    CHECK(max_rel_err(params, [&] { return ag::mse_loss(blk.fwd(x, &mask), t); }, 1e-5) < 5e-5);
}

TEST_CASE("adamw reduces a quadratic") {
    nn::ParamStore ps("test");
    Rng rng(5);
    auto w = ps.add("w", nn::init_normal(rng, {4, 4}, 1.0));
    nn::AdamW opt;
    opt.lr = 0.05;
    opt.weight_decay = 0.0;
    Tensor target({4, 4});
    Rng(6).fill_normal(target);
    real first = 0, last = 0;
    for (int i = 0; i < 300; ++i) {
        nn::AdamW::zero_grad(ps.items);
        auto loss = ag::mse_loss(w, target);
        if (i == 0) first = loss->val.v[0];
        last = loss->val.v[0];
        ag::backward(loss);
        opt.step(ps.items);
    }
    CHECK(last < 1e-4);
    CHECK(last < first);
}

TEST_CASE("no-grad mode builds no graph") {
    Rng rng(2);
    auto x = randleaf(rng, {2, 2});
    ag::NoGradGuard ng;
    auto y = ag::silu(ag::matmul(x, x));
    CHECK_FALSE(y->requires_grad);
    CHECK(y->parents.empty());
}
