// Evaluation statistics: empirical ROC/AUROC (Mann-Whitney with half credit
// for ties), DeLong variance / confidence intervals / paired test,
// Bland-Altman agreement, and regression error metrics.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "cinecontrast/tensor.hpp"

namespace cinecontrast::stats {

struct ScoredSample {
    double score = 0.0;
    int label = 0;  // 0 or 1
};

struct RocResult {
    double auc = 0.0;
    double variance = 0.0;  // DeLong estimate, filled by delong_ci
    double ci_low = 0.0;
    double ci_high = 0.0;
    bool degenerate = false;  // zero DeLong variance (e.g. perfect separation)
    std::vector<std::pair<double, double>> curve;  // (fpr, tpr)
};

struct AgreementResult {
    double bias = 0.0;
    double sd_diff = 0.0;
    double loa_low = 0.0;
    double loa_high = 0.0;
    double bias_ci_low = 0.0;
    double bias_ci_high = 0.0;
    std::size_t n = 0;
};

struct RegressionMetrics {
    double mae = 0.0;
    double mse = 0.0;
    double sd_abs_err = 0.0;
};

namespace detail {

// 1-based midranks (ties get the average rank).
inline std::vector<double> midranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

inline double sample_variance(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return acc / static_cast<double>(v.size() - 1);
}

struct Components {
    std::vector<double> v10;  // per-positive placements
    std::vector<double> v01;  // per-negative placements
    double auc = 0.0;
};

// DeLong structural components via midranks; ties receive half credit.
inline Components delong_components(const std::vector<ScoredSample>& samples) {
    std::vector<double> pos, neg, all;
    for (const auto& s : samples) {
        if (!std::isfinite(s.score)) throw ContractViolation("auroc: non-finite score");
        if (s.label != 0 && s.label != 1) throw ContractViolation("auroc: label must be 0 or 1");
        (s.label == 1 ? pos : neg).push_back(s.score);
        all.push_back(s.score);
    }
    if (pos.empty()) throw ContractViolation("auroc: no positive samples");
    if (neg.empty()) throw ContractViolation("auroc: no negative samples");

    const auto r_all = midranks(all);
    const auto r_pos = midranks(pos);
    const auto r_neg = midranks(neg);
    const double np = static_cast<double>(pos.size());
    const double nn = static_cast<double>(neg.size());

    Components c;
    std::size_t pi = 0, ni = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].label == 1) {
            c.v10.push_back((r_all[i] - r_pos[pi]) / nn);
            ++pi;
        } else {
            c.v01.push_back(1.0 - (r_all[i] - r_neg[ni]) / np);
            ++ni;
        }
    }
    double sum = 0.0;
    for (double v : c.v10) sum += v;
    c.auc = sum / np;
    return c;
}

inline double normal_two_sided_p(double z) {
    return std::erfc(std::abs(z) / std::sqrt(2.0));
}

}  // namespace detail

// Empirical AUROC (Mann-Whitney statistic, half credit for ties) plus the
// ROC curve from a descending-score threshold sweep with tied scores grouped.
inline RocResult auroc(const std::vector<ScoredSample>& samples) {
    auto comps = detail::delong_components(samples);
    RocResult r;
    r.auc = comps.auc;

    std::vector<ScoredSample> sorted = samples;
    std::sort(sorted.begin(), sorted.end(),
              [](const ScoredSample& a, const ScoredSample& b) { return a.score > b.score; });
    const double np = static_cast<double>(comps.v10.size());
    const double nn = static_cast<double>(comps.v01.size());
    r.curve.emplace_back(0.0, 0.0);
    double tp = 0.0, fp = 0.0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        while (j + 1 < sorted.size() && sorted[j + 1].score == sorted[i].score) ++j;
        for (std::size_t k = i; k <= j; ++k) {
            if (sorted[k].label == 1) {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
        }
        r.curve.emplace_back(fp / nn, tp / np);
        i = j + 1;
    }
    return r;
}

// AUROC with the DeLong variance estimate and a 1.96-sigma confidence
// interval clipped to [0,1]. Zero variance is flagged, not an error.
inline RocResult delong_ci(const std::vector<ScoredSample>& samples) {
    auto comps = detail::delong_components(samples);
    if (comps.v10.size() < 2 || comps.v01.size() < 2) {
        throw ContractViolation("delong_ci: need at least 2 positives and 2 negatives");
    }
    RocResult r = auroc(samples);
    const double s10 = detail::sample_variance(comps.v10);
    const double s01 = detail::sample_variance(comps.v01);
    r.variance = s10 / static_cast<double>(comps.v10.size()) +
                 s01 / static_cast<double>(comps.v01.size());
    if (r.variance <= 0.0) {
        r.degenerate = true;
        r.ci_low = r.ci_high = r.auc;
    } else {
        const double half = 1.96 * std::sqrt(r.variance);
        r.ci_low = std::max(0.0, r.auc - half);
        r.ci_high = std::min(1.0, r.auc + half);
    }
    return r;
}

// Two-sided p-value for H0: aucA == aucB on paired scores (identical label
// vector). Degenerate zero variance of the difference: p = 1 when the AUCs
// agree, 0 otherwise.
inline double delong_compare(const std::vector<ScoredSample>& a,
                             const std::vector<ScoredSample>& b) {
    if (a.size() != b.size()) throw ContractViolation("delong_compare: sample counts differ");
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].label != b[i].label) {
            throw ContractViolation("delong_compare: label vectors differ at index " +
                                    std::to_string(i));
        }
    }
    auto ca = detail::delong_components(a);
    auto cb = detail::delong_components(b);
    std::vector<double> d10(ca.v10.size()), d01(ca.v01.size());
    for (std::size_t i = 0; i < d10.size(); ++i) d10[i] = ca.v10[i] - cb.v10[i];
    for (std::size_t i = 0; i < d01.size(); ++i) d01[i] = ca.v01[i] - cb.v01[i];
    const double var = detail::sample_variance(d10) / static_cast<double>(d10.size()) +
                       detail::sample_variance(d01) / static_cast<double>(d01.size());
    const double diff = ca.auc - cb.auc;
    if (var <= 0.0) return diff == 0.0 ? 1.0 : 0.0;
    return detail::normal_two_sided_p(diff / std::sqrt(var));
}

// Bland-Altman agreement of preds against truths: bias, sd of differences
// (n-1), 1.96-sd limits of agreement and a 1.96*sd/sqrt(n) bias interval.
inline AgreementResult bland_altman(const std::vector<double>& preds,
                                    const std::vector<double>& truths) {
    if (preds.size() != truths.size() || preds.size() < 2) {
        throw ContractViolation("bland_altman: need paired inputs of length >= 2");
    }
    AgreementResult r;
    r.n = preds.size();
    std::vector<double> diffs(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) diffs[i] = preds[i] - truths[i];
    for (double d : diffs) r.bias += d;
    r.bias /= static_cast<double>(r.n);
    r.sd_diff = std::sqrt(detail::sample_variance(diffs));
    r.loa_low = r.bias - 1.96 * r.sd_diff;
    r.loa_high = r.bias + 1.96 * r.sd_diff;
    const double half = 1.96 * r.sd_diff / std::sqrt(static_cast<double>(r.n));
    r.bias_ci_low = r.bias - half;
    r.bias_ci_high = r.bias + half;
    return r;
}

inline RegressionMetrics regression_metrics(const std::vector<double>& preds,
                                            const std::vector<double>& truths) {
    if (preds.size() != truths.size() || preds.empty()) {
        throw ContractViolation("regression_metrics: need paired non-empty inputs");
    }
    RegressionMetrics m;
    std::vector<double> abs_errors(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double e = preds[i] - truths[i];
        m.mae += std::abs(e);
        m.mse += e * e;
        abs_errors[i] = std::abs(e);
    }
    m.mae /= static_cast<double>(preds.size());
    m.mse /= static_cast<double>(preds.size());
    m.sd_abs_err = std::sqrt(detail::sample_variance(abs_errors));
    return m;
}

}  // namespace cinecontrast::stats
