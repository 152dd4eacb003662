#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "subjectdiff/autograd.hpp"
#include "subjectdiff/rng.hpp"

namespace sdiff::nn {

struct Param {
    std::string name;
    ag::Var var;
};

// Ordered parameter registry for one checkpoint component (e.g. "unet").
// Order of registration is the serialization order.
struct ParamStore {
    std::string component;
    std::vector<std::shared_ptr<Param>> items;

    explicit ParamStore(std::string comp = "") : component(std::move(comp)) {}

    ag::Var add(const std::string& name, Tensor init) {
        auto p = std::make_shared<Param>();
        p->name = name;
        p->var = ag::leaf(std::move(init), true);
        p->var->requires_grad = true;  // independent of any NoGradGuard at construction
        items.push_back(p);
        return p->var;
    }

    void set_trainable(bool t) {
        for (auto& p : items) p->var->requires_grad = t;
    }

    int64_t num_scalars() const {
        int64_t n = 0;
        for (const auto& p : items) n += p->var->val.size();
        return n;
    }

    const Param* find(const std::string& name) const {
        for (const auto& p : items)
            if (p->name == name) return p.get();
        return nullptr;
    }
};

// ---- init ----
inline Tensor init_normal(Rng& rng, std::vector<int> shape, real std) {
    Tensor t(std::move(shape));
    rng.fill_normal(t, 0.0, std);
    return t;
}
inline Tensor init_zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
inline Tensor init_ones(std::vector<int> shape) {
    Tensor t(std::move(shape));
    t.fill(1.0);
    return t;
}

// ---- layers ----

struct LinearLayer {
    ag::Var W, b;  // W: [in,out]
    LinearLayer() = default;
    LinearLayer(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng, bool zero_init = false) {
        W = ps.add(prefix + ".w", zero_init ? init_zeros({in, out}) : init_normal(rng, {in, out}, std::sqrt(1.0 / in)));
        b = ps.add(prefix + ".b", init_zeros({out}));
    }
    ag::Var fwd(const ag::Var& x) const { return ag::add_rowvec(ag::matmul(x, W), b); }
};

struct LayerNormLayer {
    ag::Var g, b;
    LayerNormLayer() = default;
    LayerNormLayer(ParamStore& ps, const std::string& prefix, int dim) {
        g = ps.add(prefix + ".g", init_ones({dim}));
        b = ps.add(prefix + ".b", init_zeros({dim}));
    }
    ag::Var fwd(const ag::Var& x) const { return ag::layer_norm(x, g, b); }
};

struct MultiHeadAttention {
    int n_heads = 0, d_model = 0, d_kv = 0;
    LinearLayer wq, wk, wv, wo;
    MultiHeadAttention() = default;
    // d_kv: dimensionality of the key/value source sequence (may differ for cross-attention)
    MultiHeadAttention(ParamStore& ps, const std::string& prefix, int d_model_, int n_heads_, Rng& rng,
                       int d_kv_ = -1)
        : n_heads(n_heads_), d_model(d_model_), d_kv(d_kv_ < 0 ? d_model_ : d_kv_) {
        SDIFF_CHECK(d_model % n_heads == 0, ErrorKind::Config, "d_model not divisible by heads");
        wq = LinearLayer(ps, prefix + ".q", d_model, d_model, rng);
        wk = LinearLayer(ps, prefix + ".k", d_kv, d_model, rng);
        wv = LinearLayer(ps, prefix + ".v", d_kv, d_model, rng);
        wo = LinearLayer(ps, prefix + ".o", d_model, d_model, rng);
    }

    // mask: additive [Sq,Skv] or null. probe: if non-null, called with the
    // stacked attention probabilities [heads, Sq, Skv]; may rewrite them
    // in-place (inference only).
    ag::Var fwd(const ag::Var& xq, const ag::Var& xkv, const Tensor* mask = nullptr,
                const std::function<void(Tensor&)>& probe = nullptr) const;
};

struct MlpBlock {
    LinearLayer fc1, fc2;
    MlpBlock() = default;
    MlpBlock(ParamStore& ps, const std::string& prefix, int dim, int hidden, Rng& rng) {
        fc1 = LinearLayer(ps, prefix + ".fc1", dim, hidden, rng);
        fc2 = LinearLayer(ps, prefix + ".fc2", hidden, dim, rng);
    }
    ag::Var fwd(const ag::Var& x) const { return fc2.fwd(ag::gelu(fc1.fwd(x))); }
};

// Pre-norm transformer block with optional cross-attention.
struct TransformerBlock {
    LayerNormLayer ln1, ln2;
    MultiHeadAttention attn;
    MlpBlock mlp;
    TransformerBlock() = default;
    TransformerBlock(ParamStore& ps, const std::string& prefix, int dim, int heads, Rng& rng)
        : ln1(ps, prefix + ".ln1", dim),
          ln2(ps, prefix + ".ln2", dim),
          attn(ps, prefix + ".attn", dim, heads, rng),
          mlp(ps, prefix + ".mlp", dim, dim * 4, rng) {}
    ag::Var fwd(const ag::Var& x, const Tensor* mask = nullptr) const {
        auto h = ag::add(x, attn.fwd(ln1.fwd(x), ln1.fwd(x), mask));
        return ag::add(h, mlp.fwd(ln2.fwd(h)));
    }
};

struct Conv2dLayer {
    ag::Var w, b;  // [Co,Ci,kh,kw]
    int stride = 1, pad = 1;
    Conv2dLayer() = default;
    Conv2dLayer(ParamStore& ps, const std::string& prefix, int ci, int co, int k, int stride_, int pad_, Rng& rng,
                bool zero_init = false) {
        real std = std::sqrt(1.0 / (ci * k * k));
        w = ps.add(prefix + ".w", zero_init ? init_zeros({co, ci, k, k}) : init_normal(rng, {co, ci, k, k}, std));
        b = ps.add(prefix + ".b", init_zeros({co}));
        stride = stride_;
        pad = pad_;
    }
    ag::Var fwd(const ag::Var& x) const { return ag::conv2d(x, w, b, stride, pad); }
};

struct GroupNormLayer {
    ag::Var g, b;
    int groups = 1;
    GroupNormLayer() = default;
    GroupNormLayer(ParamStore& ps, const std::string& prefix, int channels, int groups_) {
        g = ps.add(prefix + ".g", init_ones({channels}));
        b = ps.add(prefix + ".b", init_zeros({channels}));
        groups = groups_;
    }
    ag::Var fwd(const ag::Var& x) const { return ag::group_norm(x, g, b, groups); }
};

// ---- optimizer ----

// Adam with decoupled weight decay.
struct AdamW {
    real lr = 1e-3;
    real beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.01;
    int64_t t = 0;

    struct Slot {
        Tensor m, v;
    };
    std::unordered_map<std::string, Slot> slots;

    void step(const std::vector<std::shared_ptr<Param>>& params);
    static void zero_grad(const std::vector<std::shared_ptr<Param>>& params) {
        for (auto& p : params) {
            p->var->grad = Tensor();
            p->var->grad_ready = false;
        }
    }
};

// gathers several stores into one optimizer view
inline std::vector<std::shared_ptr<Param>> collect(std::initializer_list<const ParamStore*> stores) {
    std::vector<std::shared_ptr<Param>> out;
    for (const auto* s : stores)
        for (const auto& p : s->items) out.push_back(p);
    return out;
}

}  // namespace sdiff::nn
