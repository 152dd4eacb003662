#include <filesystem>

#include "doctest.h"
#include "subjectdiff/subject_prompt.hpp"
#include "test_helpers.hpp"

using namespace sdiff;
using namespace sdiff::prompt;
using namespace testutil;

namespace {

SubjectEmbedding rand_emb(int k, int d, uint64_t seed) {
    SubjectEmbedding e;
    e.emb = Tensor({k, d});
    Rng(seed).fill_normal(e.emb);
    return e;
}

}  // namespace

TEST_CASE("projection shape, zeroed output layer, determinism") {
    PromptConfig cfg = testutil::tiny_prompt_cfg();
    cfg.d_q = 8;
    cfg.d_text = 16;
    ProjectionMlp proj(cfg, Rng(4));

    enc::SubjectFeatures f;
    f.features = Tensor({5, 8});
    Rng(9).fill_normal(f.features);

    auto e = proj.project(f);
    CHECK(e.emb.shape == std::vector<int>{5, 16});
    CHECK(bit_equal(proj.project(f).emb, e.emb));

    // zero the second layer -> all-zero output
    for (auto& p : proj.store().items)
        if (p->name.rfind("l2", 0) == 0) p->var->val.fill(0.0);
    auto z = proj.project(f);
    for (auto v : z.emb.v) CHECK(v == 0.0);

    enc::SubjectFeatures bad;
    bad.features = Tensor({5, 12});
    CHECK_THROWS_AS(proj.project(bad), Error);
}

TEST_CASE("template assembly matches the grammar") {
    PromptConfig cfg = testutil::tiny_prompt_cfg();
    TextCondEncoder te(cfg, Rng(5));
    auto subj = rand_emb(4, cfg.d_text, 17);

    auto p = te.assemble("a red circle in the snow", "circle", subj);
    // 6 text + [, the] + [circle] + [is] + 4 soft
    CHECK(p.length() == 6 + 2 + 1 + 1 + 4);
    CHECK_FALSE(p.dropped);
    CHECK(roles_match_template(p.roles, 4));
    int soft = 0;
    for (auto r : p.roles) soft += r == Role::SOFT_SUBJECT ? 1 : 0;
    CHECK(soft == 4);
    CHECK(p.token_ids[p.length() - 1] == -1);

    auto dropped = te.assemble("a red circle in the snow", "circle", std::nullopt);
    CHECK(dropped.dropped);
    for (auto r : dropped.roles) CHECK(r == Role::TEXT);
    CHECK(dropped.length() == 6);

    // comma-free template variant
    PromptConfig nc = cfg;
    nc.template_comma = false;
    TextCondEncoder te2(nc, Rng(5));
    auto p2 = te2.assemble("a red circle in the snow", "circle", subj);
    CHECK(p2.length() == 6 + 1 + 1 + 1 + 4);
    CHECK(roles_match_template(p2.roles, 4));

    CHECK_THROWS_AS(te.assemble("", "circle", subj), Error);
    CHECK_THROWS_AS(te.assemble("a red circle", "", subj), Error);
    CHECK_THROWS_AS(te.assemble("a glorp", "circle", subj), Error);
}

TEST_CASE("drop invariant: dropped prompt is identical to subject-absent assembly") {
    PromptConfig cfg = testutil::tiny_prompt_cfg();
    TextCondEncoder te(cfg, Rng(6));
    auto a = te.assemble("a blue square at night", "square", std::nullopt);
    auto b = te.assemble("a blue square at night", "square", std::nullopt);
    CHECK(bit_equal(a.token_embeddings->val, b.token_embeddings->val));
    CHECK(a.roles == b.roles);
    CHECK(a.token_ids == b.token_ids);
}

TEST_CASE("guidance encoding is length-preserving and input-sensitive") {
    PromptConfig cfg = testutil::tiny_prompt_cfg();
    TextCondEncoder te(cfg, Rng(8));
    auto subj = rand_emb(4, cfg.d_text, 3);

    auto p = te.assemble("a green triangle on the grass", "triangle", subj);
    auto c = te.encode(p);
    CHECK(c.states.shape == std::vector<int>{p.length(), cfg.d_text});

    auto pd = te.assemble("a green triangle on the grass", "triangle", std::nullopt);
    auto cd = te.encode(pd);
    CHECK(cd.states.shape[0] == 6);
    // shared prefix states differ because attention sees different suffixes?
    // causal masking means the prefix states are equal; the full matrices differ in length
    CHECK(c.states.shape[0] != cd.states.shape[0]);

    auto c2 = te.encode(p);
    CHECK(bit_equal(c.states, c2.states));

    // context length guard
    PromptConfig shortcfg = cfg;
    shortcfg.max_len = 8;
    TextCondEncoder te_s(shortcfg, Rng(8));
    auto long_p = te_s.assemble("a green triangle on the grass", "triangle", rand_emb(4, cfg.d_text, 3));
    CHECK_THROWS_AS(te_s.encode(long_p), Error);
}

TEST_CASE("prompt grammar holds across random prompts") {
    PromptConfig cfg = testutil::tiny_prompt_cfg();
    TextCondEncoder te(cfg, Rng(11));
    Rng rng(42);
    std::vector<std::string> shapes{"circle", "square", "triangle", "cross", "ring"};
    std::vector<std::string> colors{"red", "green", "blue", "yellow", "magenta"};
    std::vector<std::string> ctx{"in the snow", "on the grass", "at night", "in the desert", "in the water"};
    for (int i = 0; i < 1000; ++i) {
        std::string shape = shapes[rng.uniform_int(5)];
        std::string text = "a " + colors[rng.uniform_int(5)] + " " + shape + " " + ctx[rng.uniform_int(5)];
        int k = 1 + rng.uniform_int(6);
        auto p = te.assemble(text, shape, rand_emb(k, cfg.d_text, rng.next_u64()));
        CHECK(roles_match_template(p.roles, k));
        CHECK(p.length() == (int)p.roles.size());
    }
}

TEST_CASE("subject drop sampling matches the binomial bound") {
    Rng rng(1234);
    for (int i = 0; i < 100; ++i) {
        CHECK_FALSE(sample_drop(rng, 0.0));
        CHECK(sample_drop(rng, 1.0));
    }
    int hits = 0;
    const int n = 10000;
    Rng rng2(777);
    for (int i = 0; i < n; ++i) hits += sample_drop(rng2, 0.15) ? 1 : 0;
    real rate = (real)hits / n;
    CHECK(std::abs(rate - 0.15) <= 0.011);
    CHECK_THROWS_AS(sample_drop(rng, 1.5), Error);
}

TEST_CASE("embedding arithmetic identities") {
    auto a = rand_emb(3, 5, 1), b = rand_emb(3, 5, 2);

    CHECK(bit_equal(mean_subject_embedding({a}).emb, a.emb));
    CHECK(bit_equal(mean_subject_embedding({a, a}).emb, a.emb));
    SubjectEmbedding neg;
    neg.emb = a.emb;
    neg.emb.vec() *= -1.0;
    auto zero = mean_subject_embedding({a, neg});
    for (auto v : zero.emb.v) CHECK(v == 0.0);
    CHECK_THROWS_AS(mean_subject_embedding({}), Error);

    CHECK(bit_equal(interpolate(a, b, 0.0).emb, a.emb));
    CHECK(bit_equal(interpolate(a, b, 1.0).emb, b.emb));
    SubjectEmbedding zeros, twos;
    zeros.emb = Tensor({3, 5});
    twos.emb = Tensor({3, 5});
    twos.emb.fill(2.0);
    auto mid = interpolate(zeros, twos, 0.5);
    for (auto v : mid.emb.v) CHECK(v == 1.0);
    CHECK_THROWS_AS(interpolate(a, b, 1.5), Error);

    std::array<SubjectEmbedding, 4> corners{a, b, rand_emb(3, 5, 3), rand_emb(3, 5, 4)};
    CHECK(bit_equal(bilinear(corners, 0, 0).emb, corners[0].emb));
    CHECK(bit_equal(bilinear(corners, 1, 0).emb, corners[1].emb));
    CHECK(bit_equal(bilinear(corners, 0, 1).emb, corners[2].emb));
    CHECK(bit_equal(bilinear(corners, 1, 1).emb, corners[3].emb));
}

TEST_CASE("mean and interpolation commute with a fixed linear map") {
    auto a = rand_emb(3, 5, 6), b = rand_emb(3, 5, 7);
    Tensor M({5, 5});
    Rng(8).fill_normal(M);
    auto apply = [&](const SubjectEmbedding& e) {
        SubjectEmbedding out;
        out.emb = Tensor({3, 5});
        out.emb.mat() = e.emb.mat() * M.mat();
        return out;
    };
    auto lhs = apply(interpolate(a, b, 0.3));
    auto rhs = interpolate(apply(a), apply(b), 0.3);
    CHECK(max_abs_diff(lhs.emb, rhs.emb) < 1e-12);

    auto ml = apply(mean_subject_embedding({a, b}));
    auto mr = mean_subject_embedding({apply(a), apply(b)});
    CHECK(max_abs_diff(ml.emb, mr.emb) < 1e-12);
}

TEST_CASE("subject cache round trip is bit-exact through guidance encoding") {
    PromptConfig cfg = testutil::tiny_prompt_cfg();
    TextCondEncoder te(cfg, Rng(21));
    auto e = rand_emb(4, cfg.d_text, 33);

    SubjectCache cache;
    cache.embedding = e;
    cache.subject_text = "circle";
    cache.source_hashes = {"abc123", "def456"};
    auto path = std::filesystem::temp_directory_path() / "sdiff_cache_test.bin";
    save_subject_cache(path.string(), cache);
    auto loaded = load_subject_cache(path.string());

    CHECK(loaded.subject_text == "circle");
    CHECK(loaded.source_hashes == cache.source_hashes);
    CHECK(bit_equal(loaded.embedding.emb, e.emb));

    auto now = te.encode(te.assemble("a red circle in the snow", "circle", e));
    auto from_disk = te.encode(te.assemble("a red circle in the snow", "circle", loaded.embedding));
    CHECK(bit_equal(now.states, from_disk.states));
    std::filesystem::remove(path);
}
