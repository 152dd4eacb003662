#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "subjectdiff/error.hpp"

namespace sdiff {

using real = double;

using EMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EMat>;
using ConstMatMap = Eigen::Map<const EMat>;
using VecMap = Eigen::Map<Eigen::Matrix<real, Eigen::Dynamic, 1>>;
using ConstVecMap = Eigen::Map<const Eigen::Matrix<real, Eigen::Dynamic, 1>>;

// Dense row-major n-d array of doubles. Small enough to copy freely at desk scale.
struct Tensor {
    std::vector<int> shape;
    std::vector<real> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(count(shape), 0.0) {}
    Tensor(std::vector<int> s, std::vector<real> data) : shape(std::move(s)), v(std::move(data)) {
        SDIFF_CHECK((int64_t)v.size() == count(shape), ErrorKind::Config, "tensor data/shape mismatch");
    }

    static int64_t count(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    int64_t size() const { return (int64_t)v.size(); }
    int dim(int i) const { return shape[(i >= 0) ? i : (int)shape.size() + i]; }
    int ndim() const { return (int)shape.size(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    real* data() { return v.data(); }
    const real* data() const { return v.data(); }

    // 2-d views; for >2-d tensors rows = product of leading dims.
    int rows() const {
        if (shape.empty()) return 1;
        int64_t r = 1;
        for (size_t i = 0; i + 1 < shape.size(); ++i) r *= shape[i];
        return (int)r;
    }
    int cols() const { return shape.empty() ? 1 : shape.back(); }

    MatMap mat() { return MatMap(v.data(), rows(), cols()); }
    ConstMatMap mat() const { return ConstMatMap(v.data(), rows(), cols()); }
    VecMap vec() { return VecMap(v.data(), (Eigen::Index)v.size()); }
    ConstVecMap vec() const { return ConstVecMap(v.data(), (Eigen::Index)v.size()); }

    real& at(std::initializer_list<int> idx) { return v[offset(idx)]; }
    real at(std::initializer_list<int> idx) const { return v[offset(idx)]; }

    void fill(real x) { std::fill(v.begin(), v.end(), x); }

    bool all_finite() const {
        for (real x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    Tensor reshaped(std::vector<int> s) const {
        SDIFF_CHECK(count(s) == size(), ErrorKind::Config, "reshape count mismatch");
        Tensor t;
        t.shape = std::move(s);
        t.v = v;
        return t;
    }

private:
    int64_t offset(std::initializer_list<int> idx) const {
        SDIFF_CHECK(idx.size() == shape.size(), ErrorKind::Config, "index rank mismatch");
        int64_t off = 0;
        size_t i = 0;
        for (int id : idx) {
            off = off * shape[i] + id;
            ++i;
        }
        return off;
    }
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

inline real max_abs_diff(const Tensor& a, const Tensor& b) {
    SDIFF_CHECK(a.same_shape(b), ErrorKind::Input, "max_abs_diff shape mismatch");
    real m = 0;
    for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
    return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (int64_t i = 0; i < a.size(); ++i)
        if (a.v[i] != b.v[i]) return false;
    return true;
}

}  // namespace sdiff
