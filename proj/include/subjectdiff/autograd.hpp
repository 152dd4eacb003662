#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "subjectdiff/tensor.hpp"

namespace sdiff::ag {

// Tape-free reverse-mode autograd: each op returns a node holding its value,
// its parents, and a closure that pushes gradient into the parents.
struct Node {
    Tensor val;
    Tensor grad;
    bool requires_grad = false;
    bool grad_ready = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> back;

    void ensure_grad() {
        if (!grad_ready) {
            grad = Tensor(val.shape);
            grad_ready = true;
        }
    }
};

using Var = std::shared_ptr<Node>;

bool grad_enabled();

// Disables graph construction in scope; op results carry values only.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    bool prev;
};

Var leaf(Tensor t, bool requires_grad = false);
Var constant(Tensor t);

// Accumulates d(loss)/d(node) into every reachable node with requires_grad.
void backward(const Var& loss);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, real c);
Var silu(const Var& a);
Var gelu(const Var& a);
Var sigmoid(const Var& a);

// ---- matrix ----
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add_rowvec(const Var& x, const Var& b);        // [R,C] + [C] per row
Var add_channel_bias(const Var& x, const Var& b);  // [C,H,W] + [C] per channel
Var normalize_rows(const Var& x, real eps = 1e-12);
Var max_axis0(const Var& x);   // [R,C] -> [1,C] column max
Var mean_axis0(const Var& x);  // [R,C] -> [1,C] column mean

// ---- shape ----
Var reshape(const Var& x, std::vector<int> shape);
Var slice_cols(const Var& x, int start, int len);
Var concat_cols(const std::vector<Var>& xs);
Var slice_axis0(const Var& x, int start, int len);
Var concat_axis0(const std::vector<Var>& xs);
Var gather_rows(const Var& table, const std::vector<int>& ids);

// ---- normalization / activation over structure ----
Var softmax_rows(const Var& x, const Tensor* additive_mask = nullptr);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, real eps = 1e-5);
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, real eps = 1e-5);

// ---- conv ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var upsample_nearest2x(const Var& x);

// ---- reductions / losses ----
Var sum_all(const Var& x);
Var mean_all(const Var& x);
Var mse_loss(const Var& pred, const Tensor& target);
Var softmax_ce_rows(const Var& logits, const std::vector<int>& targets);
Var bce_with_logits(const Var& logits, const Tensor& labels);

}  // namespace sdiff::ag
