// Exact (non-tree) t-SNE: per-point sigma by binary search on perplexity,
// symmetrized affinities, Student-t low-dimensional kernel, gradient descent
// with momentum, adaptive gains and early exaggeration.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "cinecontrast/rng.hpp"
#include "cinecontrast/tensor.hpp"

namespace cinecontrast::stats {

struct TsneConfig {
    double perplexity = 30.0;
    int iters = 500;
    int early_exaggeration_iters = 100;
    double early_exaggeration = 12.0;
    double learning_rate = 200.0;
    double momentum_initial = 0.5;
    double momentum_final = 0.8;
    int momentum_switch_iter = 250;
    std::uint64_t seed = 0;
};

inline double tsne_default_perplexity(int n) {
    return std::min(30.0, static_cast<double>(n) / 5.0);
}

struct TsneResult {
    std::vector<double> coords;  // n x 2, row-major
    double kl_initial = 0.0;
    double kl_final = 0.0;
    int jittered_points = 0;  // duplicates nudged by ~1e-9 before embedding
};

namespace detail {

inline std::vector<double> pairwise_sq_dists(const std::vector<double>& x, int n, int d) {
    std::vector<double> dist(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            double acc = 0.0;
            const double* a = x.data() + static_cast<std::size_t>(i) * d;
            const double* b = x.data() + static_cast<std::size_t>(j) * d;
            for (int k = 0; k < d; ++k) {
                const double diff = a[k] - b[k];
                acc += diff * diff;
            }
            dist[static_cast<std::size_t>(i) * n + j] = acc;
            dist[static_cast<std::size_t>(j) * n + i] = acc;
        }
    }
    return dist;
}

// Gaussian conditional affinities for one row; returns achieved perplexity.
inline double row_affinities(const std::vector<double>& dist, int n, int i, double beta,
                             std::vector<double>& p_row) {
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
        p_row[static_cast<std::size_t>(j)] =
            j == i ? 0.0 : std::exp(-beta * dist[static_cast<std::size_t>(i) * n + j]);
        sum += p_row[static_cast<std::size_t>(j)];
    }
    if (sum <= 0.0) sum = 1e-300;
    double h = 0.0;  // entropy in nats
    for (int j = 0; j < n; ++j) {
        p_row[static_cast<std::size_t>(j)] /= sum;
        const double p = p_row[static_cast<std::size_t>(j)];
        if (p > 1e-300) h -= p * std::log(p);
    }
    return std::exp(h);
}

inline double kl_divergence(const std::vector<double>& p, const std::vector<double>& q, int n) {
    double kl = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const double pij = p[static_cast<std::size_t>(i) * n + j];
            if (pij > 1e-300) {
                kl += pij * std::log(pij / std::max(q[static_cast<std::size_t>(i) * n + j], 1e-300));
            }
        }
    }
    return kl;
}

// Student-t affinities of the embedding; returns normalized q and the raw
// kernel values (1 + ||yi-yj||^2)^-1 needed by the gradient.
inline void embedding_affinities(const std::vector<double>& y, int n, std::vector<double>& q,
                                 std::vector<double>& kernel) {
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const double dx = y[static_cast<std::size_t>(i) * 2] - y[static_cast<std::size_t>(j) * 2];
            const double dy = y[static_cast<std::size_t>(i) * 2 + 1] - y[static_cast<std::size_t>(j) * 2 + 1];
            const double k = 1.0 / (1.0 + dx * dx + dy * dy);
            kernel[static_cast<std::size_t>(i) * n + j] = k;
            kernel[static_cast<std::size_t>(j) * n + i] = k;
            sum += 2.0 * k;
        }
        kernel[static_cast<std::size_t>(i) * n + i] = 0.0;
    }
    const double inv = 1.0 / std::max(sum, 1e-300);
    for (std::size_t idx = 0; idx < q.size(); ++idx) q[idx] = kernel[idx] * inv;
}

}  // namespace detail

// Embed n points of dimension d (row-major x) into 2-D.
inline TsneResult tsne(std::vector<double> x, int n, int d, const TsneConfig& cfg) {
    if (n < 4) throw ContractViolation("tsne: need at least 4 points");
    if (!(cfg.perplexity > 0.0) || cfg.perplexity >= static_cast<double>(n)) {
        throw ContractViolation("tsne: perplexity must be in (0, n)");
    }
    if (x.size() != static_cast<std::size_t>(n) * d) {
        throw ContractViolation("tsne: x size does not match n*d");
    }

    TsneResult result;
    Rng rng(cfg.seed);

    // exact duplicates cannot be assigned finite-beta affinities; nudge them
    {
        std::map<std::vector<double>, int> seen;
        for (int i = 0; i < n; ++i) {
            std::vector<double> row(x.begin() + static_cast<std::size_t>(i) * d,
                                    x.begin() + static_cast<std::size_t>(i + 1) * d);
            auto [it, inserted] = seen.try_emplace(std::move(row), i);
            if (!inserted) {
                for (int k = 0; k < d; ++k) {
                    x[static_cast<std::size_t>(i) * d + k] += rng.normal(0.0, 1e-9);
                }
                ++result.jittered_points;
            }
        }
    }

    const auto dist = detail::pairwise_sq_dists(x, n, d);

    // conditional affinities with per-point beta matched to the perplexity
    std::vector<double> p_cond(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<double> p_row(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        double beta = 1.0, beta_lo = 0.0, beta_hi = std::numeric_limits<double>::infinity();
        double perp = detail::row_affinities(dist, n, i, beta, p_row);
        for (int it = 0; it < 200 && std::abs(perp - cfg.perplexity) > 1e-4; ++it) {
            if (perp > cfg.perplexity) {
                beta_lo = beta;
                beta = std::isinf(beta_hi) ? beta * 2.0 : 0.5 * (beta + beta_hi);
            } else {
                beta_hi = beta;
                beta = 0.5 * (beta + beta_lo);
            }
            perp = detail::row_affinities(dist, n, i, beta, p_row);
        }
        for (int j = 0; j < n; ++j) p_cond[static_cast<std::size_t>(i) * n + j] = p_row[static_cast<std::size_t>(j)];
    }

    // symmetrize; sums to one over all ordered pairs
    std::vector<double> p(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            p[static_cast<std::size_t>(i) * n + j] =
                (p_cond[static_cast<std::size_t>(i) * n + j] + p_cond[static_cast<std::size_t>(j) * n + i]) /
                (2.0 * static_cast<double>(n));
        }
    }

    std::vector<double> y(static_cast<std::size_t>(n) * 2);
    for (auto& v : y) v = rng.normal(0.0, 1e-4);

    std::vector<double> q(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<double> kernel(static_cast<std::size_t>(n) * n, 0.0);
    detail::embedding_affinities(y, n, q, kernel);
    result.kl_initial = detail::kl_divergence(p, q, n);

    std::vector<double> incr(static_cast<std::size_t>(n) * 2, 0.0);
    std::vector<double> gains(static_cast<std::size_t>(n) * 2, 1.0);
    std::vector<double> grad(static_cast<std::size_t>(n) * 2, 0.0);

    for (int iter = 0; iter < cfg.iters; ++iter) {
        const double exag = iter < cfg.early_exaggeration_iters ? cfg.early_exaggeration : 1.0;
        detail::embedding_affinities(y, n, q, kernel);

        std::fill(grad.begin(), grad.end(), 0.0);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                if (i == j) continue;
                const std::size_t ij = static_cast<std::size_t>(i) * n + j;
                const double mult = (exag * p[ij] - q[ij]) * kernel[ij];
                grad[static_cast<std::size_t>(i) * 2] +=
                    4.0 * mult * (y[static_cast<std::size_t>(i) * 2] - y[static_cast<std::size_t>(j) * 2]);
                grad[static_cast<std::size_t>(i) * 2 + 1] +=
                    4.0 * mult * (y[static_cast<std::size_t>(i) * 2 + 1] - y[static_cast<std::size_t>(j) * 2 + 1]);
            }
        }

        const double momentum =
            iter < cfg.momentum_switch_iter ? cfg.momentum_initial : cfg.momentum_final;
        for (std::size_t k = 0; k < y.size(); ++k) {
            gains[k] = (grad[k] > 0.0) != (incr[k] > 0.0) ? gains[k] + 0.2 : gains[k] * 0.8;
            gains[k] = std::max(gains[k], 0.01);
            incr[k] = momentum * incr[k] - cfg.learning_rate * gains[k] * grad[k];
            y[k] += incr[k];
        }

        // re-center
        double cx = 0.0, cy = 0.0;
        for (int i = 0; i < n; ++i) {
            cx += y[static_cast<std::size_t>(i) * 2];
            cy += y[static_cast<std::size_t>(i) * 2 + 1];
        }
        cx /= n;
        cy /= n;
        for (int i = 0; i < n; ++i) {
            y[static_cast<std::size_t>(i) * 2] -= cx;
            y[static_cast<std::size_t>(i) * 2 + 1] -= cy;
        }
    }

    detail::embedding_affinities(y, n, q, kernel);
    result.kl_final = detail::kl_divergence(p, q, n);
    result.coords = std::move(y);
    return result;
}

}  // namespace cinecontrast::stats
