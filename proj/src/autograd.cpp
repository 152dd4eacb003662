#include "subjectdiff/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace sdiff::ag {

namespace {
thread_local bool g_grad_enabled = true;

Var make_op(Tensor val, std::vector<Var> parents, std::function<void(Node&)> back) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    if (!g_grad_enabled) return n;
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    if (!rg) return n;
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->back = std::move(back);
    return n;
}

void accum(const Var& p, const Tensor& g) {
    if (!p->requires_grad) return;
    p->ensure_grad();
    p->grad.vec() += g.vec();
}
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

Var leaf(Tensor t, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    n->requires_grad = requires_grad && g_grad_enabled;
    return n;
}

Var constant(Tensor t) { return leaf(std::move(t), false); }

void backward(const Var& loss) {
    SDIFF_CHECK(loss->val.size() == 1, ErrorKind::Input, "backward expects a scalar loss");
    SDIFF_CHECK(loss->requires_grad, ErrorKind::State, "loss does not require grad");
    // iterative post-order DFS
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({loss.get(), 0});
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss->ensure_grad();
    loss->grad.v[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->back && n->grad_ready) n->back(*n);
    }
}

// ---- elementwise ----

Var add(const Var& a, const Var& b) {
    SDIFF_CHECK(a->val.same_shape(b->val), ErrorKind::Input, "add shape mismatch");
    Tensor out = a->val;
    out.vec() += b->val.vec();
    return make_op(std::move(out), {a, b}, [a, b](Node& self) {
        accum(a, self.grad);
        accum(b, self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    SDIFF_CHECK(a->val.same_shape(b->val), ErrorKind::Input, "sub shape mismatch");
    Tensor out = a->val;
    out.vec() -= b->val.vec();
    return make_op(std::move(out), {a, b}, [a, b](Node& self) {
        accum(a, self.grad);
        if (b->requires_grad) {
            b->ensure_grad();
            b->grad.vec() -= self.grad.vec();
        }
    });
}

Var mul(const Var& a, const Var& b) {
    SDIFF_CHECK(a->val.same_shape(b->val), ErrorKind::Input, "mul shape mismatch");
    Tensor out = a->val;
    out.vec().array() *= b->val.vec().array();
    return make_op(std::move(out), {a, b}, [a, b](Node& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad.vec().array() += self.grad.vec().array() * b->val.vec().array();
        }
        if (b->requires_grad) {
            b->ensure_grad();
            b->grad.vec().array() += self.grad.vec().array() * a->val.vec().array();
        }
    });
}

Var scale(const Var& a, real c) {
    Tensor out = a->val;
    out.vec() *= c;
    return make_op(std::move(out), {a}, [a, c](Node& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad.vec() += c * self.grad.vec();
        }
    });
}

Var silu(const Var& a) {
    Tensor out = a->val;
    for (auto& x : out.v) x = x / (1.0 + std::exp(-x));
    return make_op(std::move(out), {a}, [a](Node& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t i = 0; i < self.grad.size(); ++i) {
            real x = a->val.v[i];
            real s = 1.0 / (1.0 + std::exp(-x));
            a->grad.v[i] += self.grad.v[i] * (s + x * s * (1.0 - s));
        }
    });
}

Var gelu(const Var& a) {
    // tanh approximation
    constexpr real k = 0.7978845608028654;  // sqrt(2/pi)
    Tensor out = a->val;
    for (auto& x : out.v) {
        real u = k * (x + 0.044715 * x * x * x);
        x = 0.5 * x * (1.0 + std::tanh(u));
    }
    return make_op(std::move(out), {a}, [a](Node& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t i = 0; i < self.grad.size(); ++i) {
            real x = a->val.v[i];
            real u = k * (x + 0.044715 * x * x * x);
            real t = std::tanh(u);
            real du = k * (1.0 + 3.0 * 0.044715 * x * x);
            real d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
            a->grad.v[i] += self.grad.v[i] * d;
        }
    });
}

Var sigmoid(const Var& a) {
    Tensor out = a->val;
    for (auto& x : out.v) x = 1.0 / (1.0 + std::exp(-x));
    Tensor saved = out;
    return make_op(std::move(out), {a}, [a, saved](Node& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t i = 0; i < self.grad.size(); ++i) {
            real s = saved.v[i];
            a->grad.v[i] += self.grad.v[i] * s * (1.0 - s);
        }
    });
}

// ---- matrix ----

Var matmul(const Var& a, const Var& b) {
    SDIFF_CHECK(a->val.ndim() == 2 && b->val.ndim() == 2, ErrorKind::Input, "matmul expects 2-d");
    SDIFF_CHECK(a->val.shape[1] == b->val.shape[0], ErrorKind::Input, "matmul inner dim mismatch");
    Tensor out({a->val.shape[0], b->val.shape[1]});
    out.mat().noalias() = a->val.mat() * b->val.mat();
    return make_op(std::move(out), {a, b}, [a, b](Node& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad.mat().noalias() += self.grad.mat() * b->val.mat().transpose();
        }
        if (b->requires_grad) {
            b->ensure_grad();
            b->grad.mat().noalias() += a->val.mat().transpose() * self.grad.mat();
        }
    });
}

Var transpose(const Var& a) {
    SDIFF_CHECK(a->val.ndim() == 2, ErrorKind::Input, "transpose expects 2-d");
    Tensor out({a->val.shape[1], a->val.shape[0]});
    out.mat() = a->val.mat().transpose();
    return make_op(std::move(out), {a}, [a](Node& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad.mat() += self.grad.mat().transpose();
        }
    });
}

Var add_rowvec(const Var& x, const Var& b) {
    SDIFF_CHECK(b->val.size() == x->val.cols(), ErrorKind::Input, "add_rowvec size mismatch");
    Tensor out = x->val;
    out.mat().rowwise() += b->val.vec().transpose();
    return make_op(std::move(out), {x, b}, [x, b](Node& self) {
        accum(x, self.grad);
        if (b->requires_grad) {
            b->ensure_grad();
            b->grad.vec() += self.grad.mat().colwise().sum().transpose();
        }
    });
}

Var add_channel_bias(const Var& x, const Var& b) {
    SDIFF_CHECK(x->val.ndim() == 3, ErrorKind::Input, "add_channel_bias expects [C,H,W]");
    int C = x->val.shape[0];
    int hw = x->val.shape[1] * x->val.shape[2];
    SDIFF_CHECK(b->val.size() == C, ErrorKind::Input, "channel bias size mismatch");
    Tensor out = x->val;
    for (int c = 0; c < C; ++c) {
        real bc = b->val.v[c];
        for (int i = 0; i < hw; ++i) out.v[(int64_t)c * hw + i] += bc;
    }
    return make_op(std::move(out), {x, b}, [x, b, C, hw](Node& self) {
        accum(x, self.grad);
        if (b->requires_grad) {
            b->ensure_grad();
            for (int c = 0; c < C; ++c) {
                real s = 0;
                for (int i = 0; i < hw; ++i) s += self.grad.v[(int64_t)c * hw + i];
                b->grad.v[c] += s;
            }
        }
    });
}

Var normalize_rows(const Var& x, real eps) {
    int R = x->val.rows(), C = x->val.cols();
    Tensor out = x->val;
    std::vector<real> norms(R);
    for (int r = 0; r < R; ++r) {
        real s = 0;
        for (int c = 0; c < C; ++c) s += x->val.v[(int64_t)r * C + c] * x->val.v[(int64_t)r * C + c];
        norms[r] = std::sqrt(s + eps);
        for (int c = 0; c < C; ++c) out.v[(int64_t)r * C + c] /= norms[r];
    }
    return make_op(std::move(out), {x}, [x, norms, R, C](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int r = 0; r < R; ++r) {
            real inv = 1.0 / norms[r];
            real dot = 0;
            for (int c = 0; c < C; ++c) dot += self.grad.v[(int64_t)r * C + c] * x->val.v[(int64_t)r * C + c];
            for (int c = 0; c < C; ++c) {
                real xi = x->val.v[(int64_t)r * C + c];
                x->grad.v[(int64_t)r * C + c] += inv * self.grad.v[(int64_t)r * C + c] - xi * dot * inv * inv * inv;
            }
        }
    });
}

Var max_axis0(const Var& x) {
    int R = x->val.rows(), C = x->val.cols();
    Tensor out({1, C});
    std::vector<int> arg(C, 0);
    for (int c = 0; c < C; ++c) {
        real best = x->val.v[c];
        for (int r = 1; r < R; ++r) {
            real v = x->val.v[(int64_t)r * C + c];
            if (v > best) {
                best = v;
                arg[c] = r;
            }
        }
        out.v[c] = best;
    }
    return make_op(std::move(out), {x}, [x, arg, C](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int c = 0; c < C; ++c) x->grad.v[(int64_t)arg[c] * C + c] += self.grad.v[c];
    });
}

Var mean_axis0(const Var& x) {
    int R = x->val.rows(), C = x->val.cols();
    Tensor out({1, C});
    out.mat() = x->val.mat().colwise().mean();
    return make_op(std::move(out), {x}, [x, R](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        x->grad.mat().rowwise() += (self.grad.mat() / (real)R).row(0);
    });
}

// ---- shape ----

Var reshape(const Var& x, std::vector<int> shape) {
    Tensor out = x->val.reshaped(std::move(shape));
    return make_op(std::move(out), {x}, [x](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        x->grad.vec() += self.grad.vec();
    });
}

Var slice_cols(const Var& x, int start, int len) {
    int R = x->val.rows(), C = x->val.cols();
    SDIFF_CHECK(start >= 0 && start + len <= C, ErrorKind::Input, "slice_cols out of range");
    Tensor out({R, len});
    out.mat() = x->val.mat().middleCols(start, len);
    return make_op(std::move(out), {x}, [x, start, len](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        x->grad.mat().middleCols(start, len) += self.grad.mat();
    });
}

Var concat_cols(const std::vector<Var>& xs) {
    SDIFF_CHECK(!xs.empty(), ErrorKind::Input, "concat_cols on empty list");
    int R = xs[0]->val.rows(), C = 0;
    for (const auto& v : xs) {
        SDIFF_CHECK(v->val.rows() == R, ErrorKind::Input, "concat_cols row mismatch");
        C += v->val.cols();
    }
    Tensor out({R, C});
    int off = 0;
    for (const auto& v : xs) {
        out.mat().middleCols(off, v->val.cols()) = v->val.mat();
        off += v->val.cols();
    }
    std::vector<Var> parents = xs;
    return make_op(std::move(out), parents, [xs](Node& self) {
        int off = 0;
        for (const auto& v : xs) {
            int c = v->val.cols();
            if (v->requires_grad) {
                v->ensure_grad();
                v->grad.mat() += self.grad.mat().middleCols(off, c);
            }
            off += c;
        }
    });
}

Var slice_axis0(const Var& x, int start, int len) {
    SDIFF_CHECK(x->val.ndim() >= 1, ErrorKind::Input, "slice_axis0 rank");
    int D0 = x->val.shape[0];
    SDIFF_CHECK(start >= 0 && start + len <= D0, ErrorKind::Input, "slice_axis0 out of range");
    int64_t stride = x->val.size() / D0;
    std::vector<int> shape = x->val.shape;
    shape[0] = len;
    Tensor out(shape);
    std::copy(x->val.v.begin() + start * stride, x->val.v.begin() + (start + len) * stride, out.v.begin());
    return make_op(std::move(out), {x}, [x, start, stride](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int64_t i = 0; i < self.grad.size(); ++i) x->grad.v[start * stride + i] += self.grad.v[i];
    });
}

Var concat_axis0(const std::vector<Var>& xs) {
    SDIFF_CHECK(!xs.empty(), ErrorKind::Input, "concat_axis0 on empty list");
    std::vector<int> shape = xs[0]->val.shape;
    int D0 = 0;
    for (const auto& v : xs) D0 += v->val.shape[0];
    shape[0] = D0;
    Tensor out(shape);
    int64_t off = 0;
    for (const auto& v : xs) {
        std::copy(v->val.v.begin(), v->val.v.end(), out.v.begin() + off);
        off += v->val.size();
    }
    std::vector<Var> parents = xs;
    return make_op(std::move(out), parents, [xs](Node& self) {
        int64_t off = 0;
        for (const auto& v : xs) {
            if (v->requires_grad) {
                v->ensure_grad();
                for (int64_t i = 0; i < v->val.size(); ++i) v->grad.v[i] += self.grad.v[off + i];
            }
            off += v->val.size();
        }
    });
}

Var gather_rows(const Var& table, const std::vector<int>& ids) {
    int C = table->val.cols();
    Tensor out({(int)ids.size(), C});
    for (size_t i = 0; i < ids.size(); ++i) {
        SDIFF_CHECK(ids[i] >= 0 && ids[i] < table->val.rows(), ErrorKind::Input, "gather_rows id out of range");
        out.mat().row((int)i) = table->val.mat().row(ids[i]);
    }
    return make_op(std::move(out), {table}, [table, ids](Node& self) {
        if (!table->requires_grad) return;
        table->ensure_grad();
        for (size_t i = 0; i < ids.size(); ++i) table->grad.mat().row(ids[i]) += self.grad.mat().row((int)i);
    });
}

// ---- structured ----

Var softmax_rows(const Var& x, const Tensor* additive_mask) {
    int R = x->val.rows(), C = x->val.cols();
    Tensor logits = x->val;
    if (additive_mask) {
        SDIFF_CHECK(additive_mask->same_shape(x->val), ErrorKind::Input, "softmax mask shape mismatch");
        logits.vec() += additive_mask->vec();
    }
    Tensor out({R, C});
    for (int r = 0; r < R; ++r) {
        real mx = -1e300;
        for (int c = 0; c < C; ++c) mx = std::max(mx, logits.v[(int64_t)r * C + c]);
        real s = 0;
        for (int c = 0; c < C; ++c) {
            real e = std::exp(logits.v[(int64_t)r * C + c] - mx);
            out.v[(int64_t)r * C + c] = e;
            s += e;
        }
        for (int c = 0; c < C; ++c) out.v[(int64_t)r * C + c] /= s;
    }
    Tensor saved = out;
    return make_op(std::move(out), {x}, [x, saved, R, C](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int r = 0; r < R; ++r) {
            real dot = 0;
            for (int c = 0; c < C; ++c) dot += self.grad.v[(int64_t)r * C + c] * saved.v[(int64_t)r * C + c];
            for (int c = 0; c < C; ++c) {
                int64_t i = (int64_t)r * C + c;
                x->grad.v[i] += (self.grad.v[i] - dot) * saved.v[i];
            }
        }
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, real eps) {
    int R = x->val.rows(), C = x->val.cols();
    SDIFF_CHECK(gamma->val.size() == C && beta->val.size() == C, ErrorKind::Input, "layer_norm param size");
    Tensor out({R, C});
    std::vector<real> mean(R), rstd(R);
    for (int r = 0; r < R; ++r) {
        real m = 0;
        for (int c = 0; c < C; ++c) m += x->val.v[(int64_t)r * C + c];
        m /= C;
        real var = 0;
        for (int c = 0; c < C; ++c) {
            real d = x->val.v[(int64_t)r * C + c] - m;
            var += d * d;
        }
        var /= C;
        mean[r] = m;
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (int c = 0; c < C; ++c) {
            real xhat = (x->val.v[(int64_t)r * C + c] - m) * rstd[r];
            out.v[(int64_t)r * C + c] = xhat * gamma->val.v[c] + beta->val.v[c];
        }
    }
    return make_op(std::move(out), {x, gamma, beta}, [x, gamma, beta, mean, rstd, R, C](Node& self) {
        for (int r = 0; r < R; ++r) {
            real sum_dy_g = 0, sum_dy_g_xhat = 0;
            for (int c = 0; c < C; ++c) {
                int64_t i = (int64_t)r * C + c;
                real xhat = (x->val.v[i] - mean[r]) * rstd[r];
                real dyg = self.grad.v[i] * gamma->val.v[c];
                sum_dy_g += dyg;
                sum_dy_g_xhat += dyg * xhat;
                if (gamma->requires_grad) {
                    gamma->ensure_grad();
                    gamma->grad.v[c] += self.grad.v[i] * xhat;
                }
                if (beta->requires_grad) {
                    beta->ensure_grad();
                    beta->grad.v[c] += self.grad.v[i];
                }
            }
            if (x->requires_grad) {
                x->ensure_grad();
                for (int c = 0; c < C; ++c) {
                    int64_t i = (int64_t)r * C + c;
                    real xhat = (x->val.v[i] - mean[r]) * rstd[r];
                    real dyg = self.grad.v[i] * gamma->val.v[c];
                    x->grad.v[i] += rstd[r] * (dyg - sum_dy_g / C - xhat * sum_dy_g_xhat / C);
                }
            }
        }
    });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, real eps) {
    SDIFF_CHECK(x->val.ndim() == 3, ErrorKind::Input, "group_norm expects [C,H,W]");
    int C = x->val.shape[0], hw = x->val.shape[1] * x->val.shape[2];
    SDIFF_CHECK(C % groups == 0, ErrorKind::Config, "group_norm channels not divisible by groups");
    SDIFF_CHECK(gamma->val.size() == C && beta->val.size() == C, ErrorKind::Input, "group_norm param size");
    int cpg = C / groups;
    int64_t n = (int64_t)cpg * hw;
    Tensor out(x->val.shape);
    std::vector<real> mean(groups), rstd(groups);
    for (int g = 0; g < groups; ++g) {
        int64_t base = (int64_t)g * cpg * hw;
        real m = 0;
        for (int64_t i = 0; i < n; ++i) m += x->val.v[base + i];
        m /= (real)n;
        real var = 0;
        for (int64_t i = 0; i < n; ++i) {
            real d = x->val.v[base + i] - m;
            var += d * d;
        }
        var /= (real)n;
        mean[g] = m;
        rstd[g] = 1.0 / std::sqrt(var + eps);
        for (int c = 0; c < cpg; ++c) {
            int ch = g * cpg + c;
            for (int i = 0; i < hw; ++i) {
                int64_t idx = (int64_t)ch * hw + i;
                out.v[idx] = (x->val.v[idx] - m) * rstd[g] * gamma->val.v[ch] + beta->val.v[ch];
            }
        }
    }
    return make_op(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, mean, rstd, groups, cpg, hw, n](Node& self) {
        for (int g = 0; g < groups; ++g) {
            real sum_dy_g = 0, sum_dy_g_xhat = 0;
            for (int c = 0; c < cpg; ++c) {
                int ch = g * cpg + c;
                for (int i = 0; i < hw; ++i) {
                    int64_t idx = (int64_t)ch * hw + i;
                    real xhat = (x->val.v[idx] - mean[g]) * rstd[g];
                    real dyg = self.grad.v[idx] * gamma->val.v[ch];
                    sum_dy_g += dyg;
                    sum_dy_g_xhat += dyg * xhat;
                    if (gamma->requires_grad) {
                        gamma->ensure_grad();
                        gamma->grad.v[ch] += self.grad.v[idx] * xhat;
                    }
                    if (beta->requires_grad) {
                        beta->ensure_grad();
                        beta->grad.v[ch] += self.grad.v[idx];
                    }
                }
            }
            if (x->requires_grad) {
                x->ensure_grad();
                for (int c = 0; c < cpg; ++c) {
                    int ch = g * cpg + c;
                    for (int i = 0; i < hw; ++i) {
                        int64_t idx = (int64_t)ch * hw + i;
                        real xhat = (x->val.v[idx] - mean[g]) * rstd[g];
                        real dyg = self.grad.v[idx] * gamma->val.v[ch];
                        x->grad.v[idx] += rstd[g] * (dyg - sum_dy_g / (real)n - xhat * sum_dy_g_xhat / (real)n);
                    }
                }
            }
        }
    });
}

// ---- conv ----

namespace {
// x [Ci,H,W] -> col [Ci*kh*kw, Ho*Wo]
void im2col(const Tensor& x, int kh, int kw, int stride, int pad, int Ho, int Wo, Tensor& col) {
    int Ci = x.shape[0], H = x.shape[1], W = x.shape[2];
    for (int c = 0; c < Ci; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                int row = (c * kh + ky) * kw + kx;
                for (int oy = 0; oy < Ho; ++oy) {
                    int iy = oy * stride + ky - pad;
                    for (int ox = 0; ox < Wo; ++ox) {
                        int ix = ox * stride + kx - pad;
                        real val = 0;
                        if (iy >= 0 && iy < H && ix >= 0 && ix < W) val = x.v[((int64_t)c * H + iy) * W + ix];
                        col.v[(int64_t)row * Ho * Wo + oy * Wo + ox] = val;
                    }
                }
            }
}

void col2im_accum(const Tensor& col, int Ci, int H, int W, int kh, int kw, int stride, int pad, int Ho, int Wo,
                  Tensor& dx) {
    for (int c = 0; c < Ci; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                int row = (c * kh + ky) * kw + kx;
                for (int oy = 0; oy < Ho; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    for (int ox = 0; ox < Wo; ++ox) {
                        int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= W) continue;
                        dx.v[((int64_t)c * H + iy) * W + ix] += col.v[(int64_t)row * Ho * Wo + oy * Wo + ox];
                    }
                }
            }
}
}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    SDIFF_CHECK(x->val.ndim() == 3 && w->val.ndim() == 4, ErrorKind::Input, "conv2d expects [C,H,W], [Co,Ci,kh,kw]");
    int Ci = x->val.shape[0], H = x->val.shape[1], W = x->val.shape[2];
    int Co = w->val.shape[0], kh = w->val.shape[2], kw = w->val.shape[3];
    SDIFF_CHECK(w->val.shape[1] == Ci, ErrorKind::Config, "conv2d channel mismatch");
    int Ho = (H + 2 * pad - kh) / stride + 1;
    int Wo = (W + 2 * pad - kw) / stride + 1;
    SDIFF_CHECK(Ho > 0 && Wo > 0, ErrorKind::Input, "conv2d output empty");

    auto col = std::make_shared<Tensor>(std::vector<int>{Ci * kh * kw, Ho * Wo});
    im2col(x->val, kh, kw, stride, pad, Ho, Wo, *col);

    Tensor out({Co, Ho, Wo});
    ConstMatMap wmat(w->val.data(), Co, Ci * kh * kw);
    MatMap(out.data(), Co, Ho * Wo).noalias() = wmat * col->mat();
    for (int c = 0; c < Co; ++c) {
        real bc = b->val.v[c];
        for (int i = 0; i < Ho * Wo; ++i) out.v[(int64_t)c * Ho * Wo + i] += bc;
    }
    return make_op(std::move(out), {x, w, b},
                   [x, w, b, col, Ci, H, W, Co, kh, kw, stride, pad, Ho, Wo](Node& self) {
        ConstMatMap dout(self.grad.data(), Co, Ho * Wo);
        if (w->requires_grad) {
            w->ensure_grad();
            MatMap(w->grad.data(), Co, Ci * kh * kw).noalias() += dout * col->mat().transpose();
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int c = 0; c < Co; ++c) b->grad.v[c] += dout.row(c).sum();
        }
        if (x->requires_grad) {
            x->ensure_grad();
            Tensor dcol({Ci * kh * kw, Ho * Wo});
            ConstMatMap wmat(w->val.data(), Co, Ci * kh * kw);
            dcol.mat().noalias() = wmat.transpose() * dout;
            col2im_accum(dcol, Ci, H, W, kh, kw, stride, pad, Ho, Wo, x->grad);
        }
    });
}

Var upsample_nearest2x(const Var& x) {
    SDIFF_CHECK(x->val.ndim() == 3, ErrorKind::Input, "upsample expects [C,H,W]");
    int C = x->val.shape[0], H = x->val.shape[1], W = x->val.shape[2];
    Tensor out({C, H * 2, W * 2});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H * 2; ++y)
            for (int xx = 0; xx < W * 2; ++xx)
                out.v[((int64_t)c * H * 2 + y) * W * 2 + xx] = x->val.v[((int64_t)c * H + y / 2) * W + xx / 2];
    return make_op(std::move(out), {x}, [x, C, H, W](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H * 2; ++y)
                for (int xx = 0; xx < W * 2; ++xx)
                    x->grad.v[((int64_t)c * H + y / 2) * W + xx / 2] +=
                        self.grad.v[((int64_t)c * H * 2 + y) * W * 2 + xx];
    });
}

// ---- reductions / losses ----

Var sum_all(const Var& x) {
    Tensor out({1});
    out.v[0] = x->val.vec().sum();
    return make_op(std::move(out), {x}, [x](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        x->grad.vec().array() += self.grad.v[0];
    });
}

Var mean_all(const Var& x) {
    int64_t n = x->val.size();
    Tensor out({1});
    out.v[0] = x->val.vec().sum() / (real)n;
    return make_op(std::move(out), {x}, [x, n](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        x->grad.vec().array() += self.grad.v[0] / (real)n;
    });
}

Var mse_loss(const Var& pred, const Tensor& target) {
    SDIFF_CHECK(pred->val.same_shape(target), ErrorKind::Input, "mse_loss shape mismatch");
    int64_t n = pred->val.size();
    Tensor out({1});
    real s = 0;
    for (int64_t i = 0; i < n; ++i) {
        real d = pred->val.v[i] - target.v[i];
        s += d * d;
    }
    out.v[0] = s / (real)n;
    return make_op(std::move(out), {pred}, [pred, target, n](Node& self) {
        if (!pred->requires_grad) return;
        pred->ensure_grad();
        real g = 2.0 * self.grad.v[0] / (real)n;
        for (int64_t i = 0; i < n; ++i) pred->grad.v[i] += g * (pred->val.v[i] - target.v[i]);
    });
}

Var softmax_ce_rows(const Var& logits, const std::vector<int>& targets) {
    int R = logits->val.rows(), C = logits->val.cols();
    SDIFF_CHECK((int)targets.size() == R, ErrorKind::Input, "softmax_ce target count mismatch");
    Tensor probs({R, C});
    real loss = 0;
    for (int r = 0; r < R; ++r) {
        real mx = -1e300;
        for (int c = 0; c < C; ++c) mx = std::max(mx, logits->val.v[(int64_t)r * C + c]);
        real s = 0;
        for (int c = 0; c < C; ++c) {
            real e = std::exp(logits->val.v[(int64_t)r * C + c] - mx);
            probs.v[(int64_t)r * C + c] = e;
            s += e;
        }
        for (int c = 0; c < C; ++c) probs.v[(int64_t)r * C + c] /= s;
        SDIFF_CHECK(targets[r] >= 0 && targets[r] < C, ErrorKind::Input, "softmax_ce target out of range");
        loss -= std::log(std::max(probs.v[(int64_t)r * C + targets[r]], (real)1e-300));
    }
    Tensor out({1});
    out.v[0] = loss / R;
    return make_op(std::move(out), {logits}, [logits, probs, targets, R, C](Node& self) {
        if (!logits->requires_grad) return;
        logits->ensure_grad();
        real g = self.grad.v[0] / R;
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c) {
                int64_t i = (int64_t)r * C + c;
                logits->grad.v[i] += g * (probs.v[i] - (c == targets[r] ? 1.0 : 0.0));
            }
    });
}

Var bce_with_logits(const Var& logits, const Tensor& labels) {
    SDIFF_CHECK(logits->val.same_shape(labels), ErrorKind::Input, "bce shape mismatch");
    int64_t n = logits->val.size();
    Tensor out({1});
    real loss = 0;
    for (int64_t i = 0; i < n; ++i) {
        real z = logits->val.v[i], y = labels.v[i];
        // log(1+exp(-|z|)) + max(z,0) - z*y, numerically stable
        loss += std::log1p(std::exp(-std::abs(z))) + std::max(z, (real)0) - z * y;
    }
    out.v[0] = loss / (real)n;
    return make_op(std::move(out), {logits}, [logits, labels, n](Node& self) {
        if (!logits->requires_grad) return;
        logits->ensure_grad();
        real g = self.grad.v[0] / (real)n;
        for (int64_t i = 0; i < n; ++i) {
            real z = logits->val.v[i];
            real s = 1.0 / (1.0 + std::exp(-z));
            logits->grad.v[i] += g * (s - labels.v[i]);
        }
    });
}

}  // namespace sdiff::ag
