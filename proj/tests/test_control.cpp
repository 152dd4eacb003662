#include "doctest.h"
#include "subjectdiff/control.hpp"
#include "subjectdiff/serialize.hpp"
#include "test_helpers.hpp"

using namespace sdiff;
using namespace sdiff::ctrl;
using namespace sdiff::diff;
using namespace testutil;

namespace {

uint64_t store_hash(const nn::ParamStore& s) {
    uint64_t h = 1469598103934665603ULL;
    for (const auto& p : s.items) h = hash_tensor(p->var->val, h);
    return h;
}

Image random_hint(int res, uint64_t seed) {
    Image h(res, res, 1);
    Rng rng(seed);
    for (auto& v : h.v) v = rng.uniform();
    return h;
}

AttentionRecord constructed_record(int steps, const std::vector<int>& layers, int heads, int side, int L,
                                   const std::function<real(int s, int y, int x, int tok)>& value) {
    AttentionRecord rec;
    for (int step = 0; step < steps; ++step)
        for (int layer : layers) {
            Tensor probs({heads, side * side, L});
            for (int h = 0; h < heads; ++h)
                for (int y = 0; y < side; ++y)
                    for (int x = 0; x < side; ++x)
                        for (int tok = 0; tok < L; ++tok)
                            probs.v[(((int64_t)h * side * side) + y * side + x) * L + tok] = value(step, y, x, tok);
            rec.maps[{step, layer}] = probs;
        }
    return rec;
}

}  // namespace

TEST_CASE("zero-initialized branch leaves the base denoiser bit-identical") {
    UNetConfig ucfg = tiny_unet_cfg();
    UNet base(ucfg, Rng(1));
    ControlBranch branch(ucfg, 8, Rng(2));
    Image hint = random_hint(8, 3);
    auto controlled = attach_control(base, branch, hint);

    uint64_t base_hash = store_hash(base.store());
    Tensor cond({4, 8});
    Rng(4).fill_normal(cond);
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        Tensor z({1, 8, 8});
        rng.fill_normal(z);
        int t = rng.uniform_int(10);
        Tensor a = base.denoise(z, t, cond);
        Tensor b = controlled.denoise(z, t, cond);
        CHECK(bit_equal(a, b));
    }
    CHECK(store_hash(base.store()) == base_hash);
}

TEST_CASE("nonzero connectors change the controlled output, base untouched") {
    UNetConfig ucfg = tiny_unet_cfg();
    UNet base(ucfg, Rng(1));
    ControlBranch branch(ucfg, 8, Rng(2));
    for (auto& p : branch.store().items)
        if (p->name.rfind("skip_conn", 0) == 0 || p->name.rfind("mid_conn", 0) == 0) p->var->val.fill(0.05);
    Image hint = random_hint(8, 3);
    auto controlled = attach_control(base, branch, hint);

    uint64_t base_hash = store_hash(base.store());
    Tensor cond({4, 8});
    Rng(4).fill_normal(cond);
    Tensor z({1, 8, 8});
    Rng(6).fill_normal(z);
    CHECK_FALSE(bit_equal(base.denoise(z, 3, cond), controlled.denoise(z, 3, cond)));
    CHECK(store_hash(base.store()) == base_hash);
}

TEST_CASE("branch training moves only branch parameters") {
    UNetConfig ucfg = tiny_unet_cfg();
    UNet base(ucfg, Rng(1));
    ControlBranch branch(ucfg, 8, Rng(2));
    base.store().set_trainable(false);
    Image hint = random_hint(8, 7);
    ControlledDenoiser controlled(base, branch, hint);

    uint64_t base_before = store_hash(base.store());
    uint64_t branch_before = store_hash(branch.store());

    Tensor cond({4, 8}), z({1, 8, 8}), eps({1, 8, 8});
    Rng r(8);
    r.fill_normal(cond);
    r.fill_normal(z);
    r.fill_normal(eps);
    nn::AdamW opt;
    opt.lr = 1e-3;
    for (int i = 0; i < 5; ++i) {
        nn::AdamW::zero_grad(branch.store().items);
        auto pred = controlled.forward(ag::constant(z), 3, ag::constant(cond));
        auto loss = ag::mse_loss(pred, eps);
        ag::backward(loss);
        opt.step(branch.store().items);
    }
    CHECK(store_hash(base.store()) == base_before);
    CHECK(store_hash(branch.store()) != branch_before);
}

TEST_CASE("edit mask extraction: quadrant, empty, threshold boundary") {
    // attention mass on the top-left quadrant of an 8x8 map for token 2
    auto rec = constructed_record(4, {0}, 2, 8, 5, [](int, int y, int x, int tok) {
        if (tok != 2) return tok == 0 ? 1.0 : 0.0;
        return (y < 4 && x < 4) ? 1.0 : 0.0;
    });
    auto mask = extract_edit_mask(rec, 2, 0.3, {0, 4}, {0}, 16, 5);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) CHECK(mask.mask.at({y, x}) == ((y < 8 && x < 8) ? 1.0 : 0.0));

    // token attention identically zero -> empty mask
    auto zero_rec = constructed_record(4, {0}, 2, 8, 5, [](int, int, int, int tok) {
        return tok == 0 ? 1.0 : 0.0;
    });
    auto empty = extract_edit_mask(zero_rec, 2, 0.3, {0, 4}, {0}, 16, 5);
    for (auto v : empty.mask.v) CHECK(v == 0.0);

    // threshold 0 with positive attention -> full mask
    auto pos_rec = constructed_record(4, {0}, 2, 8, 5, [](int, int y, int x, int) {
        return 0.1 + 0.01 * (y + x);
    });
    auto full = extract_edit_mask(pos_rec, 2, 0.0, {0, 4}, {0}, 16, 5);
    for (auto v : full.mask.v) CHECK(v == 1.0);

    CHECK_THROWS_AS(extract_edit_mask(rec, 9, 0.3, {0, 4}, {0}, 16, 5), Error);   // token outside prompt
    CHECK_THROWS_AS(extract_edit_mask(rec, 2, 0.3, {2, 2}, {0}, 16, 5), Error);   // empty step range
}

TEST_CASE("mask monotonicity: higher threshold never grows the mask") {
    Rng rng(11);
    auto rec = constructed_record(3, {0, 1}, 2, 8, 6, [&](int s, int y, int x, int tok) {
        return 0.01 + 0.99 * std::abs(std::sin(0.7 * s + 1.3 * y + 2.1 * x + 0.5 * tok));
    });
    EditMask prev;
    bool first = true;
    for (real th : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
        auto m = extract_edit_mask(rec, 3, th, {0, 3}, {0, 1}, 16, 6);
        if (!first) {
            for (int64_t i = 0; i < m.mask.size(); ++i) CHECK(m.mask.v[i] <= prev.mask.v[i]);
        }
        prev = m;
        first = false;
    }
}

TEST_CASE("mix_latents identities and partition") {
    Tensor zo({2, 4, 4}), zs({2, 4, 4});
    Rng r(13);
    r.fill_normal(zo);
    r.fill_normal(zs);

    EditMask empty;
    empty.mask = Tensor({4, 4});
    CHECK(bit_equal(mix_latents(zo, zs, empty), zo));

    EditMask full;
    full.mask = Tensor({4, 4});
    full.mask.fill(1.0);
    CHECK(bit_equal(mix_latents(zo, zs, full), zs));

    EditMask checker;
    checker.mask = Tensor({4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) checker.mask.at({y, x}) = (y + x) % 2;
    Tensor mixed = mix_latents(zo, zs, checker);
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                real want = (y + x) % 2 ? zs.at({c, y, x}) : zo.at({c, y, x});
                CHECK(mixed.at({c, y, x}) == want);
            }

    Tensor wrong({2, 3, 4});
    CHECK_THROWS_AS(mix_latents(zo, wrong, empty), Error);
}

TEST_CASE("edit identities: forced empty and full masks, injection contract") {
    UNetConfig ucfg = tiny_unet_cfg();
    UNet unet(ucfg, Rng(21));
    NoiseSchedule sched = NoiseSchedule::linear(20);

    Tensor cond_src({4, 8}), cond_subj({9, 8});
    Rng(22).fill_normal(cond_src);
    Rng(23).fill_normal(cond_subj);
    const int shared = 4;

    EditSettings st;
    st.edit_token_index = 1;
    st.steps = 5;
    st.guidance_scale = 1.0;

    // forced all-zero mask: result equals the source branch's final latent
    EditSettings zero_st = st;
    zero_st.force_mask = 0;
    auto zr = edit_with_subject(denoiser_fn(unet), sched, cond_src, cond_subj, shared, zero_st, 99, {1, 8, 8});
    SamplerSettings plain;
    plain.steps = 5;
    plain.guidance_scale = 1.0;
    auto src_final = sample_latent(denoiser_fn(unet), sched, cond_src, std::nullopt, plain, 99, {1, 8, 8});
    CHECK(bit_equal(zr.latent, src_final));

    // forced all-one mask: result equals the injected subject branch alone
    EditSettings one_st = st;
    one_st.force_mask = 1;
    auto orr = edit_with_subject(denoiser_fn(unet), sched, cond_src, cond_subj, shared, one_st, 99, {1, 8, 8});
    AttentionRecord src_rec;
    SampleHooks sh;
    sh.record = &src_rec;
    sample_latent(denoiser_fn(unet), sched, cond_src, std::nullopt, plain, 99, {1, 8, 8}, sh);
    SampleHooks inj;
    inj.attn_override = [&](int step, int layer, Tensor& probs) {
        const Tensor& src = src_rec.at(step, layer);
        int H = probs.dim(0), S = probs.dim(1), Ls = probs.dim(2);
        for (int h = 0; h < H; ++h)
            for (int s = 0; s < S; ++s)
                for (int j = 0; j < shared; ++j)
                    probs.v[((int64_t)h * S + s) * Ls + j] = src.v[((int64_t)h * S + s) * src.dim(2) + j];
    };
    auto subj_final = sample_latent(denoiser_fn(unet), sched, cond_subj, std::nullopt, plain, 99, {1, 8, 8}, inj);
    CHECK(bit_equal(orr.latent, subj_final));

    // injection contract: used maps equal recorded source maps on shared tokens
    auto er = edit_with_subject(denoiser_fn(unet), sched, cond_src, cond_subj, shared, st, 99, {1, 8, 8});
    REQUIRE(er.original.maps.size() == er.used_by_subject.maps.size());
    for (const auto& [key, used] : er.used_by_subject.maps) {
        const Tensor& src = er.original.at(key.first, key.second);
        int H = used.dim(0), S = used.dim(1), Ls = used.dim(2);
        for (int h = 0; h < H; ++h)
            for (int s = 0; s < S; ++s)
                for (int j = 0; j < shared; ++j)
                    CHECK(used.v[((int64_t)h * S + s) * Ls + j] == src.v[((int64_t)h * S + s) * src.dim(2) + j]);
    }
    CHECK(bit_equal(edit_with_subject(denoiser_fn(unet), sched, cond_src, cond_subj, shared, st, 99, {1, 8, 8}).latent,
                    er.latent));
}

TEST_CASE("edit locality: latents outside the mask equal the source trace") {
    UNetConfig ucfg = tiny_unet_cfg();
    UNet unet(ucfg, Rng(31));
    NoiseSchedule sched = NoiseSchedule::linear(20);
    Tensor cond_src({4, 8}), cond_subj({9, 8});
    Rng(32).fill_normal(cond_src);
    Rng(33).fill_normal(cond_subj);

    EditSettings st;
    st.edit_token_index = 2;
    st.steps = 5;
    st.threshold = 0.5;
    st.guidance_scale = 1.0;
    auto er = edit_with_subject(denoiser_fn(unet), sched, cond_src, cond_subj, 4, st, 7, {1, 8, 8});

    SamplerSettings plain;
    plain.steps = 5;
    plain.guidance_scale = 1.0;
    auto src_final = sample_latent(denoiser_fn(unet), sched, cond_src, std::nullopt, plain, 7, {1, 8, 8});
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            if (er.mask.mask.at({y, x}) == 0.0) CHECK(er.latent.at({0, y, x}) == src_final.at({0, y, x}));
}
