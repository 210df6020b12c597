// Dense row-major 64-bit float tensor. The plain value type used for
// parameters, checkpoints and test fixtures; differentiable computation
// happens on a Tape (autodiff.hpp) which consumes and produces NdArrays.
#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gummp/errors.hpp"
#include "gummp/rng.hpp"

namespace gummp {

inline std::string shape_str(const std::vector<size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

struct NdArray {
    std::vector<size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // same length as data when non-empty

    NdArray() = default;

    explicit NdArray(std::vector<size_t> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), 0.0);
    }

    NdArray(std::vector<size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != data.size())
            throw ShapeError("NdArray: shape " + shape_str(shape) + " does not match " +
                             std::to_string(data.size()) + " values");
    }

    static size_t numel_of(const std::vector<size_t>& s) {
        return std::accumulate(s.begin(), s.end(), size_t{1}, std::multiplies<size_t>());
    }

    static NdArray zeros(std::vector<size_t> s) { return NdArray(std::move(s)); }

    static NdArray full(std::vector<size_t> s, double v) {
        NdArray a(std::move(s));
        std::fill(a.data.begin(), a.data.end(), v);
        return a;
    }

    static NdArray scalar(double v) { return NdArray({1}, {v}); }

    static NdArray vec(std::initializer_list<double> vals) {
        return NdArray({vals.size()}, std::vector<double>(vals));
    }

    // Uniform in [-limit, limit], drawn row-major.
    static NdArray uniform(std::vector<size_t> s, double limit, SeededRng& rng) {
        NdArray a(std::move(s));
        for (double& v : a.data) v = rng.uniform(-limit, limit);
        return a;
    }

    // Glorot-uniform for a [rows x cols] matrix: limit = sqrt(6/(rows+cols)).
    static NdArray glorot(size_t rows, size_t cols, SeededRng& rng) {
        double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
        return uniform({rows, cols}, limit, rng);
    }

    // Glorot-style init for a length-n vector parameter (fan_out = 1).
    static NdArray glorot_vec(size_t n, SeededRng& rng) {
        double limit = std::sqrt(6.0 / static_cast<double>(n + 1));
        return uniform({n}, limit, rng);
    }

    size_t numel() const { return data.size(); }
    size_t rank() const { return shape.size(); }
    size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    bool empty() const { return data.empty(); }

    double& at(size_t i) { return data[i]; }
    double at(size_t i) const { return data[i]; }
    double& at(size_t i, size_t j) { return data[i * cols() + j]; }
    double at(size_t i, size_t j) const { return data[i * cols() + j]; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }

    bool operator==(const NdArray& o) const { return shape == o.shape && data == o.data; }
};

}  // namespace gummp
