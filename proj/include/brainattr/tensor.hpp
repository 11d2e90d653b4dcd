#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "brainattr/common.hpp"

namespace brainattr {

// Dense row-major tensor of doubles. Rank 1 or 2 covers the whole pipeline;
// rank-1 tensors behave as (1, n) rows where a matrix is expected.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> values;

    Tensor() = default;
    Tensor(std::vector<int64_t> s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
        if (numel_of(shape) != static_cast<int64_t>(values.size()))
            throw invalid_input("tensor: shape does not match value count");
    }

    static Tensor zeros(int64_t r, int64_t c) {
        return Tensor({r, c}, std::vector<double>(static_cast<size_t>(r * c), 0.0));
    }
    static Tensor zeros_like(const Tensor& t) {
        return Tensor(t.shape, std::vector<double>(t.values.size(), 0.0));
    }
    static Tensor row(std::vector<double> v) {
        const int64_t n = static_cast<int64_t>(v.size());
        return Tensor({1, n}, std::move(v));
    }
    static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }

    int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
    int64_t cols() const { return shape.size() < 2 ? (shape.empty() ? 0 : 1) : shape[1]; }
    int64_t numel() const { return static_cast<int64_t>(values.size()); }
    bool is_scalar() const { return numel() == 1; }

    double& at(int64_t r, int64_t c) { return values[static_cast<size_t>(r * cols() + c)]; }
    double at(int64_t r, int64_t c) const { return values[static_cast<size_t>(r * cols() + c)]; }

    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) n *= d;
        return n;
    }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

}  // namespace brainattr
