// Named parameter sets, the AdamW optimizer, the step learning-rate
// schedule, and a central finite-difference gradient-check harness.
#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "cinecontrast/autograd.hpp"
#include "cinecontrast/tensor.hpp"

namespace cinecontrast {

template <class Real>
class ParamSet {
  public:
    struct Entry {
        std::string name;
        Tensor<Real> tensor;
        bool trainable = true;
    };

    void add(std::string name, Tensor<Real> t, bool trainable = true) {
        if (index_.count(name)) throw ContractViolation("ParamSet: duplicate name " + name);
        index_[name] = entries_.size();
        entries_.push_back(Entry{std::move(name), std::move(t), trainable});
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<Real>& at(const std::string& name) { return entries_[idx(name)].tensor; }
    const Tensor<Real>& at(const std::string& name) const { return entries_[idx(name)].tensor; }

    bool trainable(const std::string& name) const { return entries_[idx(name)].trainable; }
    void set_trainable(const std::string& name, bool v) { entries_[idx(name)].trainable = v; }

    std::size_t size() const { return entries_.size(); }
    const Entry& entry(std::size_t i) const { return entries_[i]; }
    Entry& entry(std::size_t i) { return entries_[i]; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.name);
        return out;
    }

    std::size_t trainable_scalars() const {
        std::size_t n = 0;
        for (const auto& e : entries_) {
            if (e.trainable) n += e.tensor.size();
        }
        return n;
    }

    std::size_t total_scalars() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.tensor.size();
        return n;
    }

  private:
    std::size_t idx(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractViolation("ParamSet: unknown name " + name);
        return it->second;
    }

    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

template <class Real>
using GradMap = std::unordered_map<std::string, Tensor<Real>>;

// Parameters placed as leaves on one tape, addressable by name.
template <class Real>
struct PlacedParams {
    std::unordered_map<std::string, ag::Var<Real>> vars;

    ag::Var<Real> at(const std::string& name) const {
        auto it = vars.find(name);
        if (it == vars.end()) throw ContractViolation("PlacedParams: unknown name " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return vars.count(name) != 0; }
};

template <class Real>
PlacedParams<Real> place_params(ag::Tape<Real>& tape, const ParamSet<Real>& params) {
    PlacedParams<Real> placed;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& e = params.entry(i);
        placed.vars[e.name] = tape.leaf(e.tensor, /*requires_grad=*/true);
    }
    return placed;
}

// Reverse pass from a scalar loss; parameters unreachable from the loss get
// zero gradients.
template <class Real>
GradMap<Real> forward_backward(ag::Tape<Real>& tape, ag::Var<Real> loss,
                               const ParamSet<Real>& params, const PlacedParams<Real>& placed) {
    if (!loss.value().is_scalar()) {
        throw ContractViolation("forward_backward: loss must be a scalar");
    }
    tape.backward(loss);
    GradMap<Real> grads;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& name = params.entry(i).name;
        grads[name] = tape.grad(placed.at(name).id);
    }
    return grads;
}

struct LrSchedule {
    double base_lr = 4.8e-5;
    int decay_epoch = 300;
    double factor = 0.1;
};

inline double lr_at(int epoch, const LrSchedule& s) {
    if (epoch < 0) throw ContractViolation("lr_at: epoch must be non-negative");
    return epoch >= s.decay_epoch ? s.base_lr * s.factor : s.base_lr;
}

// Optimizer state: first/second moments per parameter plus the step count.
template <class Real>
struct OptimState {
    double lr = 4.8e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-6;
    long t = 0;
    std::unordered_map<std::string, Tensor<Real>> m;
    std::unordered_map<std::string, Tensor<Real>> v;
};

// One AdamW step over the trainable entries: bias-corrected moments plus
// decoupled weight decay applied directly to the parameter.
template <class Real>
void adamw_step(ParamSet<Real>& params, const GradMap<Real>& grads, OptimState<Real>& state) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& e = params.entry(i);
        if (!e.trainable) continue;
        auto git = grads.find(e.name);
        if (git == grads.end()) {
            throw ContractViolation("adamw_step: missing gradient for " + e.name);
        }
        const Tensor<Real>& g = git->second;
        if (!g.same_shape(e.tensor)) {
            throw ContractViolation("adamw_step: gradient shape mismatch for " + e.name);
        }
        auto& m = state.m.try_emplace(e.name, Tensor<Real>::zeros(e.tensor.shape)).first->second;
        auto& v = state.v.try_emplace(e.name, Tensor<Real>::zeros(e.tensor.shape)).first->second;
        for (std::size_t j = 0; j < e.tensor.size(); ++j) {
            const double gj = static_cast<double>(g.data[j]);
            const double mj = state.beta1 * static_cast<double>(m.data[j]) + (1.0 - state.beta1) * gj;
            const double vj = state.beta2 * static_cast<double>(v.data[j]) + (1.0 - state.beta2) * gj * gj;
            m.data[j] = static_cast<Real>(mj);
            v.data[j] = static_cast<Real>(vj);
            const double mhat = mj / bc1;
            const double vhat = vj / bc2;
            double p = static_cast<double>(e.tensor.data[j]);
            p -= state.lr * (mhat / (std::sqrt(vhat) + state.eps));
            p -= state.lr * state.weight_decay * static_cast<double>(e.tensor.data[j]);
            e.tensor.data[j] = static_cast<Real>(p);
        }
    }
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

struct GradCheckReport {
    struct PerParam {
        std::string name;
        double max_rel_err = 0.0;
        std::size_t worst_index = 0;
        double analytic = 0.0;
        double fd = 0.0;
    };
    std::vector<PerParam> params;
    bool pass = false;
    double tol = 0.0;

    double max_rel_err() const {
        double m = 0.0;
        for (const auto& p : params) m = std::max(m, p.max_rel_err);
        return m;
    }
};

// fn builds a scalar loss from the placed parameters on the given tape.
template <class Real>
using LossFn = std::function<ag::Var<Real>(ag::Tape<Real>&, const PlacedParams<Real>&)>;

// Central finite differences against the analytic reverse pass, element by
// element. rel_err = |a - fd| / max(|a|, |fd|, 1e-8).
//
// abs_floor: fp64 central FD resolves gradients only down to about
// eps*|f|/h; elements whose |analytic - fd| falls under this floor pass on
// the absolute difference instead. 0 disables the floor.
template <class Real>
GradCheckReport grad_check(const LossFn<Real>& fn, ParamSet<Real>& params, Real h, double tol,
                           double abs_floor = 0.0) {
    if (!(h > Real(0))) throw ContractViolation("grad_check: h must be positive");

    auto eval = [&]() -> Real {
        ag::Tape<Real> tape;
        auto placed = place_params(tape, params);
        return fn(tape, placed).value().scalar();
    };

    const Real f0a = eval();
    const Real f0b = eval();
    if (f0a != f0b) {
        throw ContractViolation("grad_check: fn is nondeterministic across probe evaluations");
    }

    GradMap<Real> analytic;
    {
        ag::Tape<Real> tape;
        auto placed = place_params(tape, params);
        auto loss = fn(tape, placed);
        analytic = forward_backward(tape, loss, params, placed);
    }

    GradCheckReport report;
    report.tol = tol;
    bool pass = true;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& e = params.entry(i);
        typename GradCheckReport::PerParam pp;
        pp.name = e.name;
        bool param_ok = true;
        for (std::size_t j = 0; j < e.tensor.size(); ++j) {
            const Real orig = e.tensor.data[j];
            e.tensor.data[j] = orig + h;
            const Real fp = eval();
            e.tensor.data[j] = orig - h;
            const Real fm = eval();
            e.tensor.data[j] = orig;
            const double fd = (static_cast<double>(fp) - static_cast<double>(fm)) /
                              (2.0 * static_cast<double>(h));
            const double an = static_cast<double>(analytic[e.name].data[j]);
            const double denom = std::max({std::abs(an), std::abs(fd), 1e-8});
            const double rel = std::abs(an - fd) / denom;
            if (rel > tol && std::abs(an - fd) > abs_floor) param_ok = false;
            if (rel > pp.max_rel_err) {
                pp.max_rel_err = rel;
                pp.worst_index = j;
                pp.analytic = an;
                pp.fd = fd;
            }
        }
        pass = pass && param_ok;
        report.params.push_back(std::move(pp));
    }
    report.pass = pass;
    return report;
}

}  // namespace cinecontrast
