#include <cmath>

#include "doctest.h"
#include "subjectdiff/encoders.hpp"
#include "subjectdiff/serialize.hpp"
#include "test_helpers.hpp"

using namespace sdiff;
using namespace sdiff::enc;
using namespace testutil;

namespace {

uint64_t store_hash(const nn::ParamStore& s) {
    uint64_t h = 1469598103934665603ULL;
    for (const auto& p : s.items) h = hash_tensor(p->var->val, h);
    return h;
}

Image noise_image(int res, uint64_t seed) {
    Image img(res, res, 3);
    Rng rng(seed);
    for (auto& v : img.v) v = rng.uniform();
    return img;
}

}  // namespace

TEST_CASE("image encoder shape, determinism and frozen contract") {
    ImageEncoderConfig cfg;
    cfg.resolution = 64;
    cfg.patch = 8;
    cfg.d_img = 32;
    cfg.blocks = 1;
    cfg.heads = 2;
    ImageEncoder encd(cfg, Rng(1));
    Image img = noise_image(64, 2);

    auto g = encd.encode(img);
    CHECK(g.features.shape == std::vector<int>{64, 32});

    auto g2 = encd.encode(img);
    CHECK(bit_equal(g.features, g2.features));

    uint64_t before = store_hash(encd.store());
    for (int i = 0; i < 1000; ++i) encd.encode(img);
    CHECK(store_hash(encd.store()) == before);

    Image wrong = noise_image(32, 3);
    CHECK_THROWS_AS(encd.encode(wrong), Error);
}

TEST_CASE("multimodal encoder output arity and determinism") {
    auto qcfg = tiny_qformer_cfg();
    QFormer qf(qcfg, Rng(7));
    ImageFeatureGrid grid;
    grid.features = testutil::random_grid(16, qcfg.d_img, 11);

    auto f = qf.encode_multimodal(grid, "circle");
    CHECK(f.features.shape == std::vector<int>{2, 8});
    auto f2 = qf.encode_multimodal(grid, "circle");
    CHECK(bit_equal(f.features, f2.features));

    CHECK_THROWS_AS(qf.encode_multimodal(grid, ""), Error);
    CHECK_THROWS_AS(qf.encode_multimodal(grid, "   "), Error);

    auto qcfg32 = qcfg;
    qcfg32.queries = 32;
    QFormer qf32(qcfg32, Rng(7));
    CHECK(qf32.encode_multimodal(grid, "circle").features.shape == std::vector<int>{32, 8});
}

TEST_CASE("stage-1 losses: uniform batch, singleton, perfect classifier") {
    auto qcfg = tiny_qformer_cfg();
    QFormer qf(qcfg, Rng(3));
    const auto& vocab = Vocab::toy();

    // four identical pairs: all pooled embeddings identical -> itc = ln(4)
    Stage1Batch batch;
    for (int i = 0; i < 4; ++i) {
        batch.grids.push_back(testutil::random_grid(16, qcfg.d_img, 5));
        batch.text_ids.push_back(vocab.tokenize_with_bos("a red circle in the snow"));
    }
    auto v = qf.stage1_losses(batch);
    CHECK(v.itc == doctest::Approx(std::log(4.0)).epsilon(1e-9));
    CHECK(v.itg >= 0.0);
    CHECK(v.itm.has_value());

    Stage1Batch single;
    single.grids.push_back(batch.grids[0]);
    single.text_ids.push_back(batch.text_ids[0]);
    auto vs = qf.stage1_losses(single);
    CHECK(vs.itc == doctest::Approx(0.0).epsilon(1e-12));
    CHECK_FALSE(vs.itm.has_value());

    // a perfect binary classifier drives the matching loss to zero
    Tensor labels({4, 1});
    labels.v = {1, 1, 0, 0};
    Tensor logits({4, 1});
    logits.v = {40.0, 35.0, -40.0, -30.0};
    auto bce = ag::bce_with_logits(ag::constant(logits), labels);
    CHECK(bce->val.v[0] < 1e-12);
}

TEST_CASE("stage-1 permutation property") {
    auto qcfg = tiny_qformer_cfg();
    QFormer qf(qcfg, Rng(13));
    const auto& vocab = Vocab::toy();

    std::vector<std::string> caps{"a red circle in the snow", "a blue square at night",
                                  "a green triangle on the grass", "a yellow ring in the water"};
    Stage1Batch batch;
    for (int i = 0; i < 4; ++i) {
        batch.grids.push_back(testutil::random_grid(16, qcfg.d_img, 20 + i));
        batch.text_ids.push_back(vocab.tokenize_with_bos(caps[i]));
    }
    Stage1Batch permuted;
    std::vector<int> perm{2, 0, 3, 1};
    for (int i : perm) {
        permuted.grids.push_back(batch.grids[i]);
        permuted.text_ids.push_back(batch.text_ids[i]);
    }

    auto a = qf.stage1_losses(batch);
    auto b = qf.stage1_losses(permuted);
    CHECK(a.itc == doctest::Approx(b.itc).epsilon(1e-12));
    REQUIRE(a.itm.has_value());
    CHECK(*a.itm == doctest::Approx(*b.itm).epsilon(1e-12));

    auto ga = qf.itg_per_sample(batch);
    auto gb = qf.itg_per_sample(permuted);
    for (int i = 0; i < 4; ++i) CHECK(ga[perm[i]] == doctest::Approx(gb[i]).epsilon(1e-12));
}

TEST_CASE("stage-1 training reduces the joint loss and leaves frozen parts alone") {
    auto icfg = tiny_image_encoder_cfg();
    auto qcfg = tiny_qformer_cfg();
    ImageEncoder image_enc(icfg, Rng(31));
    QFormer qf(qcfg, Rng(32));
    image_enc.store().set_trainable(false);
    const auto& vocab = Vocab::toy();

    std::vector<std::string> caps{"a red circle in the snow",      "a blue square at night",
                                  "a green triangle on the grass", "a yellow ring in the water",
                                  "a magenta cross in the desert", "a red square in the water",
                                  "a blue ring at night",          "a green circle in the snow"};
    Stage1Batch batch;
    for (int i = 0; i < 8; ++i) {
        batch.grids.push_back(image_enc.encode(noise_image(icfg.resolution, 40 + i)).features);
        batch.text_ids.push_back(vocab.tokenize_with_bos(caps[i]));
    }

    uint64_t frozen_before = store_hash(image_enc.store());
    nn::AdamW opt;
    opt.lr = 2e-3;
    real first = 0, last = 0;
    for (int step = 0; step < 100; ++step) {
        nn::AdamW::zero_grad(qf.store().items);
        Stage1Losses v;
        auto loss = qf.stage1_loss(batch, &v);
        if (step == 0) first = loss->val.v[0];
        last = loss->val.v[0];
        ag::backward(loss);
        opt.step(qf.store().items);
    }
    CHECK(last < first);
    CHECK(store_hash(image_enc.store()) == frozen_before);

    // fixed seed, fresh model -> identical first-step loss
    QFormer qf2(qcfg, Rng(32));
    Stage1Losses v2;
    qf2.stage1_loss(batch, &v2);
    QFormer qf3(qcfg, Rng(32));
    Stage1Losses v3;
    qf3.stage1_loss(batch, &v3);
    CHECK(v2.itc == v3.itc);
    CHECK(v2.itg == v3.itg);
}
