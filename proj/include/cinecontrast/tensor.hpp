// Dense row-major tensor value type plus the error taxonomy used across
// the library. Real is float for training and double for gradient checks.
#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "cinecontrast/rng.hpp"

namespace cinecontrast {

using Shape = std::vector<int>;

// Precondition / invariant breach by the caller.
class ContractViolation : public std::logic_error {
  public:
    explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

// Non-finite value produced at runtime; message names the producing op.
class NumericFailure : public std::runtime_error {
  public:
    explicit NumericFailure(const std::string& what) : std::runtime_error(what) {}
};

// Bad run configuration (e.g. a label with zero positives).
class ConfigError : public std::runtime_error {
  public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
  public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw ContractViolation("shape dims must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

template <class Real>
struct Tensor {
    Shape shape;
    std::vector<Real> data;
    bool requires_grad = false;

    Tensor() = default;
    explicit Tensor(Shape s, Real fill = Real(0))
        : shape(std::move(s)), data(shape_numel(shape), fill) {}
    Tensor(Shape s, std::vector<Real> values) : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != shape_numel(shape)) {
            throw ContractViolation("tensor data length does not match shape " + shape_str(shape));
        }
    }

    std::size_t size() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    bool is_scalar() const { return data.size() == 1; }

    Real& operator[](std::size_t i) { return data[i]; }
    Real operator[](std::size_t i) const { return data[i]; }

    Real scalar() const {
        if (!is_scalar()) throw ContractViolation("tensor is not a scalar");
        return data[0];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, Real v) { return Tensor(std::move(s), v); }
    static Tensor scalar_of(Real v) { return Tensor(Shape{1}, std::vector<Real>{v}); }

    static Tensor randn(Shape s, Rng& rng, Real sd = Real(1)) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = static_cast<Real>(rng.normal(0.0, static_cast<double>(sd)));
        return t;
    }

    template <class Other>
    Tensor<Other> cast() const {
        Tensor<Other> out;
        out.shape = shape;
        out.requires_grad = requires_grad;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<Other>(data[i]);
        return out;
    }
};

template <class Real>
bool all_finite(const Tensor<Real>& t) {
    for (Real v : t.data) {
        if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
}

}  // namespace cinecontrast
