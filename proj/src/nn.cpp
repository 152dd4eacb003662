#include "subjectdiff/nn.hpp"

namespace sdiff::nn {

ag::Var MultiHeadAttention::fwd(const ag::Var& xq, const ag::Var& xkv, const Tensor* mask,
                                const std::function<void(Tensor&)>& probe) const {
    const int Sq = xq->val.rows();
    const int Skv = xkv->val.rows();
    const int dh = d_model / n_heads;
    auto q = wq.fwd(xq);
    auto k = wk.fwd(xkv);
    auto v = wv.fwd(xkv);

    std::vector<ag::Var> probs_h(n_heads);
    std::vector<ag::Var> head_out(n_heads);
    for (int h = 0; h < n_heads; ++h) {
        auto qh = ag::slice_cols(q, h * dh, dh);
        auto kh = ag::slice_cols(k, h * dh, dh);
        auto scores = ag::scale(ag::matmul(qh, ag::transpose(kh)), 1.0 / std::sqrt((real)dh));
        probs_h[h] = ag::softmax_rows(scores, mask);
    }
    if (probe) {
        SDIFF_CHECK(!ag::grad_enabled(), ErrorKind::State, "attention probes require inference mode");
        Tensor stacked({n_heads, Sq, Skv});
        for (int h = 0; h < n_heads; ++h)
            std::copy(probs_h[h]->val.v.begin(), probs_h[h]->val.v.end(),
                      stacked.v.begin() + (int64_t)h * Sq * Skv);
        probe(stacked);
        for (int h = 0; h < n_heads; ++h)
            std::copy(stacked.v.begin() + (int64_t)h * Sq * Skv, stacked.v.begin() + (int64_t)(h + 1) * Sq * Skv,
                      probs_h[h]->val.v.begin());
    }
    for (int h = 0; h < n_heads; ++h) {
        auto vh = ag::slice_cols(v, h * dh, dh);
        head_out[h] = ag::matmul(probs_h[h], vh);
    }
    return wo.fwd(ag::concat_cols(head_out));
}

void AdamW::step(const std::vector<std::shared_ptr<Param>>& params) {
    ++t;
    const real bc1 = 1.0 - std::pow(beta1, (real)t);
    const real bc2 = 1.0 - std::pow(beta2, (real)t);
    for (auto& p : params) {
        auto& var = *p->var;
        if (!var.requires_grad || !var.grad_ready) continue;
        auto it = slots.find(p->name);
        if (it == slots.end()) {
            Slot s;
            s.m = Tensor(var.val.shape);
            s.v = Tensor(var.val.shape);
            it = slots.emplace(p->name, std::move(s)).first;
        }
        Slot& s = it->second;
        for (int64_t i = 0; i < var.val.size(); ++i) {
            real g = var.grad.v[i];
            s.m.v[i] = beta1 * s.m.v[i] + (1.0 - beta1) * g;
            s.v.v[i] = beta2 * s.v.v[i] + (1.0 - beta2) * g * g;
            real mhat = s.m.v[i] / bc1;
            real vhat = s.v.v[i] / bc2;
            var.val.v[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * var.val.v[i]);
        }
    }
}

}  // namespace sdiff::nn
