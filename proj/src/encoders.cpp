#include "subjectdiff/encoders.hpp"

#include <algorithm>

#include "subjectdiff/serialize.hpp"

namespace sdiff::enc {

// ---------- ImageEncoder ----------

ImageEncoder::ImageEncoder(const ImageEncoderConfig& cfg, Rng rng) : cfg_(cfg) {
    SDIFF_CHECK(cfg.resolution % cfg.patch == 0, ErrorKind::Config, "resolution not divisible by patch");
    int pdim = cfg.patch * cfg.patch * 3;
    patch_embed_ = nn::LinearLayer(store_, "patch_embed", pdim, cfg.d_img, rng);
    pos_ = store_.add("pos", nn::init_normal(rng, {cfg.n_patches(), cfg.d_img}, 0.02));
    for (int b = 0; b < cfg.blocks; ++b)
        blocks_.emplace_back(store_, "block" + std::to_string(b), cfg.d_img, cfg.heads, rng);
    final_ln_ = nn::LayerNormLayer(store_, "final_ln", cfg.d_img);
}

ag::Var ImageEncoder::forward(const Image& img) const {
    SDIFF_CHECK(img.h == cfg_.resolution && img.w == cfg_.resolution && img.c == 3, ErrorKind::Config,
                "image encoder expects " + std::to_string(cfg_.resolution) + "x" +
                    std::to_string(cfg_.resolution) + "x3");
    const int p = cfg_.patch;
    const int side = cfg_.resolution / p;
    Tensor patches({side * side, p * p * 3});
    for (int py = 0; py < side; ++py)
        for (int px = 0; px < side; ++px) {
            int row = py * side + px;
            int k = 0;
            for (int y = 0; y < p; ++y)
                for (int x = 0; x < p; ++x)
                    for (int ch = 0; ch < 3; ++ch)
                        patches.at({row, k++}) = img.at(py * p + y, px * p + x, ch);
        }
    auto x = ag::add(patch_embed_.fwd(ag::constant(std::move(patches))), pos_);
    for (const auto& b : blocks_) x = b.fwd(x);
    return final_ln_.fwd(x);
}

ImageFeatureGrid ImageEncoder::encode(const Image& img) const {
    ag::NoGradGuard ng;
    ImageFeatureGrid g;
    g.features = forward(img)->val;
    g.source_h = img.h;
    g.source_w = img.w;
    return g;
}

// ---------- QFormer ----------

QFormer::QFormer(const QFormerConfig& cfg, Rng rng) : cfg_(cfg) {
    SDIFF_CHECK(cfg.queries >= 1, ErrorKind::Config, "need at least one query token");
    const int V = Vocab::toy().size();
    query_bank_ = store_.add("queries", nn::init_normal(rng, {cfg.queries, cfg.d_q}, 0.02));
    tok_emb_ = store_.add("tok_emb", nn::init_normal(rng, {V, cfg.d_q}, 0.02));
    text_pos_ = store_.add("text_pos", nn::init_normal(rng, {cfg.max_text, cfg.d_q}, 0.02));
    for (int b = 0; b < cfg.blocks; ++b) {
        Block blk;
        std::string p = "block" + std::to_string(b);
        blk.ln_self = nn::LayerNormLayer(store_, p + ".ln_self", cfg.d_q);
        blk.self_attn = nn::MultiHeadAttention(store_, p + ".self", cfg.d_q, cfg.heads, rng);
        blk.ln_cross = nn::LayerNormLayer(store_, p + ".ln_cross", cfg.d_q);
        blk.cross_attn = nn::MultiHeadAttention(store_, p + ".cross", cfg.d_q, cfg.heads, rng, cfg.d_img);
        blk.ln_mlp = nn::LayerNormLayer(store_, p + ".ln_mlp", cfg.d_q);
        blk.mlp = nn::MlpBlock(store_, p + ".mlp", cfg.d_q, cfg.d_q * 4, rng);
        blocks_.push_back(std::move(blk));
    }
    final_ln_ = nn::LayerNormLayer(store_, "final_ln", cfg.d_q);
    itc_img_proj_ = nn::LinearLayer(store_, "itc_img", cfg.d_q, cfg.d_q, rng);
    itc_txt_proj_ = nn::LinearLayer(store_, "itc_txt", cfg.d_q, cfg.d_q, rng);
    itm_head_ = nn::LinearLayer(store_, "itm", cfg.d_q, 1, rng);
    itg_head_ = nn::LinearLayer(store_, "itg", cfg.d_q, V, rng);
}

Tensor QFormer::attn_mask(int T, AttnMode mode) const {
    const int K = cfg_.queries;
    const int S = K + T;
    Tensor m({S, S});
    const real NEG = -1e9;
    for (int i = 0; i < S; ++i)
        for (int j = 0; j < S; ++j) {
            bool qi = i < K, qj = j < K;
            bool allowed = true;
            switch (mode) {
                case AttnMode::Unimodal: allowed = (qi == qj); break;
                case AttnMode::MultimodalCausal:
                    allowed = qi ? qj : (qj || j <= i);
                    break;
                case AttnMode::Full: allowed = true; break;
            }
            m.at({i, j}) = allowed ? 0.0 : NEG;
        }
    return m;
}

ag::Var QFormer::forward_hidden(const ag::Var& grid, const std::vector<int>& text_ids, AttnMode mode) const {
    const int K = cfg_.queries;
    const int T = (int)text_ids.size();
    SDIFF_CHECK(T <= cfg_.max_text, ErrorKind::Input, "text longer than max_text");
    SDIFF_CHECK(grid->val.cols() == cfg_.d_img, ErrorKind::Config, "grid feature dim mismatch");

    ag::Var x;
    if (T > 0) {
        auto te = ag::gather_rows(tok_emb_, text_ids);
        auto pe = ag::slice_axis0(text_pos_, 0, T);
        x = ag::concat_axis0({query_bank_, ag::add(te, pe)});
    } else {
        x = query_bank_;
    }
    Tensor mask = attn_mask(T, mode);
    for (const auto& b : blocks_) {
        auto h = b.ln_self.fwd(x);
        x = ag::add(x, b.self_attn.fwd(h, h, &mask));
        // cross-attention applies to the query slice only
        auto q = ag::slice_axis0(x, 0, K);
        auto cq = b.cross_attn.fwd(b.ln_cross.fwd(q), grid);
        q = ag::add(q, cq);
        x = T > 0 ? ag::concat_axis0({q, ag::slice_axis0(x, K, T)}) : q;
        x = ag::add(x, b.mlp.fwd(b.ln_mlp.fwd(x)));
    }
    return final_ln_.fwd(x);
}

ag::Var QFormer::subject_features_var(const Tensor& grid, const std::vector<int>& subject_text_ids) const {
    ++multimodal_calls_;
    auto h = forward_hidden(ag::constant(grid), subject_text_ids, AttnMode::Full);
    return ag::slice_axis0(h, 0, cfg_.queries);
}

SubjectFeatures QFormer::encode_multimodal(const ImageFeatureGrid& grid, const std::string& subject_text) const {
    SDIFF_CHECK(!split_words(subject_text).empty(), ErrorKind::Input, "subject text must be non-empty");
    ag::NoGradGuard ng;
    auto ids = Vocab::toy().tokenize(subject_text);
    SubjectFeatures f;
    f.features = subject_features_var(grid.features, ids)->val;
    return f;
}

ag::Var QFormer::itc_image_embed(const ag::Var& hidden) const {
    return ag::normalize_rows(itc_img_proj_.fwd(ag::slice_axis0(hidden, 0, cfg_.queries)));
}

ag::Var QFormer::itc_text_embed(const ag::Var& hidden, int K) const {
    return ag::normalize_rows(itc_txt_proj_.fwd(ag::slice_axis0(hidden, K, 1)));
}

ag::Var QFormer::stage1_loss(const Stage1Batch& batch, Stage1Losses* values) const {
    const int B = (int)batch.grids.size();
    SDIFF_CHECK(B >= 1 && batch.text_ids.size() == (size_t)B, ErrorKind::Input, "bad stage-1 batch");
    const int K = cfg_.queries;

    // --- ITC (unimodal forward; image and text sides do not see each other) ---
    std::vector<ag::Var> img_embs, txt_embs;
    for (int i = 0; i < B; ++i) {
        auto h = forward_hidden(ag::constant(batch.grids[i]), batch.text_ids[i], AttnMode::Unimodal);
        img_embs.push_back(itc_image_embed(h));
        txt_embs.push_back(itc_text_embed(h, K));
    }
    auto txt_all = ag::concat_axis0(txt_embs);  // [B, d]
    std::vector<ag::Var> sim_rows;
    for (int i = 0; i < B; ++i) {
        auto s = ag::matmul(img_embs[i], ag::transpose(txt_all));  // [K, B]
        sim_rows.push_back(ag::max_axis0(s));                      // [1, B]
    }
    auto logits = ag::scale(ag::concat_axis0(sim_rows), 1.0 / itc_temperature_);  // [B, B]
    std::vector<int> diag(B);
    for (int i = 0; i < B; ++i) diag[i] = i;
    auto itc = ag::scale(
        ag::add(ag::softmax_ce_rows(logits, diag), ag::softmax_ce_rows(ag::transpose(logits), diag)), 0.5);

    // --- ITG (queries as prefix, causal text) ---
    const int bos = Vocab::toy().bos_id();
    std::vector<ag::Var> itg_terms;
    for (int i = 0; i < B; ++i) {
        const auto& ids = batch.text_ids[i];
        std::vector<int> inp;
        std::vector<int> tgt;
        if (!ids.empty() && ids[0] == bos) {
            inp = ids;
            tgt.assign(ids.begin() + 1, ids.end());
        } else {
            inp.push_back(bos);
            inp.insert(inp.end(), ids.begin(), ids.end());
            tgt = ids;
        }
        if (tgt.empty()) continue;
        auto h = forward_hidden(ag::constant(batch.grids[i]), inp, AttnMode::MultimodalCausal);
        auto states = ag::slice_axis0(h, K, (int)tgt.size());
        itg_terms.push_back(ag::softmax_ce_rows(itg_head_.fwd(states), tgt));
    }
    SDIFF_CHECK(!itg_terms.empty(), ErrorKind::Input, "stage-1 batch has no text to generate");
    ag::Var itg = itg_terms[0];
    for (size_t i = 1; i < itg_terms.size(); ++i) itg = ag::add(itg, itg_terms[i]);
    itg = ag::scale(itg, 1.0 / (real)itg_terms.size());

    // --- ITM (matched vs in-batch mismatched pairs) ---
    // Negative pairing must not depend on batch order: samples are rotated in
    // content-hash order, so permuting the batch leaves the pair set fixed.
    ag::Var itm;
    bool has_itm = B >= 2;
    if (has_itm) {
        std::vector<std::pair<uint64_t, int>> keyed(B);
        for (int i = 0; i < B; ++i) {
            uint64_t h = hash_tensor(batch.grids[i]);
            h = fnv1a(batch.text_ids[i].data(), batch.text_ids[i].size() * sizeof(int), h);
            keyed[i] = {h, i};
        }
        std::sort(keyed.begin(), keyed.end());
        std::vector<ag::Var> logit_rows;
        Tensor labels({2 * B, 1});
        for (int j = 0; j < B; ++j) {
            int i = keyed[j].second;
            auto h = forward_hidden(ag::constant(batch.grids[i]), batch.text_ids[i], AttnMode::Full);
            logit_rows.push_back(itm_head_.fwd(ag::mean_axis0(ag::slice_axis0(h, 0, K))));
            labels.v[j] = 1.0;
        }
        for (int j = 0; j < B; ++j) {
            int i = keyed[j].second;
            int neg = keyed[(j + 1) % B].second;
            auto h = forward_hidden(ag::constant(batch.grids[i]), batch.text_ids[neg], AttnMode::Full);
            logit_rows.push_back(itm_head_.fwd(ag::mean_axis0(ag::slice_axis0(h, 0, K))));
            labels.v[B + j] = 0.0;
        }
        itm = ag::bce_with_logits(ag::concat_axis0(logit_rows), labels);
    }

    if (values) {
        values->itc = itc->val.v[0];
        values->itg = itg->val.v[0];
        values->itm = has_itm ? std::optional<real>(itm->val.v[0]) : std::nullopt;
    }
    auto total = ag::add(itc, itg);
    if (has_itm) total = ag::add(total, itm);
    SDIFF_CHECK(std::isfinite(total->val.v[0]), ErrorKind::Numeric, "non-finite stage-1 loss");
    return total;
}

Stage1Losses QFormer::stage1_losses(const Stage1Batch& batch) const {
    ag::NoGradGuard ng;
    Stage1Losses v;
    stage1_loss(batch, &v);
    return v;
}

Tensor QFormer::pooled_image_embedding(const Tensor& grid) const {
    ag::NoGradGuard ng;
    auto h = forward_hidden(ag::constant(grid), {}, AttnMode::Full);
    auto per_query = itc_image_embed(h);             // [K, d], rows normalized
    auto pooled = ag::mean_axis0(per_query);         // [1, d]
    return ag::normalize_rows(pooled)->val.reshaped({cfg_.d_q});
}

Tensor QFormer::pooled_text_embedding(const std::vector<int>& ids_with_bos) const {
    ag::NoGradGuard ng;
    // text-only unimodal pass; queries run alongside but are not read
    auto h = forward_hidden(ag::constant(Tensor({1, cfg_.d_img})), ids_with_bos, AttnMode::Unimodal);
    return itc_text_embed(h, cfg_.queries)->val.reshaped({cfg_.d_q});
}

std::vector<real> QFormer::itg_per_sample(const Stage1Batch& batch) const {
    ag::NoGradGuard ng;
    std::vector<real> out;
    const int K = cfg_.queries;
    const int bos = Vocab::toy().bos_id();
    for (size_t i = 0; i < batch.grids.size(); ++i) {
        std::vector<int> inp = batch.text_ids[i];
        if (inp.empty() || inp[0] != bos) inp.insert(inp.begin(), bos);
        std::vector<int> tgt(inp.begin() + 1, inp.end());
        auto h = forward_hidden(ag::constant(batch.grids[i]), inp, AttnMode::MultimodalCausal);
        auto states = ag::slice_axis0(h, K, (int)tgt.size());
        out.push_back(ag::softmax_ce_rows(itg_head_.fwd(states), tgt)->val.v[0]);
    }
    return out;
}

}  // namespace sdiff::enc
