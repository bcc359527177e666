#pragma once

#include "ctm/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace ctm {

/// Detection quality of one (method, ID, OOD) pairing. ID is the positive
/// class throughout; a sample is declared ID when its score is >= threshold.
struct DetectionMetrics {
    double fpr_at_tpr = 0;
    double tpr_target = 0.95;
    double auroc = 0;
    double aupr_in = 0;
    double aupr_out = 0;
    double threshold_lambda = 0;
    Index n_id = 0;
    Index n_ood = 0;
    /// (FPR, TPR) points from the strictest threshold down to the loosest.
    std::vector<std::pair<double, double>> roc;
};

namespace detail {

template <typename Derived>
std::vector<double> sorted_copy(const Eigen::MatrixBase<Derived>& v, const char* side) {
    if (v.size() < 1) {
        throw ValidationError(std::string(side) + " scores are empty");
    }
    std::vector<double> out(static_cast<std::size_t>(v.size()));
    for (Index i = 0; i < v.size(); ++i) {
        const double s = static_cast<double>(v(i));
        if (std::isnan(s)) {
            throw ValidationError(std::string(side) + " score at index " + std::to_string(i) +
                                  " is NaN");
        }
        out[static_cast<std::size_t>(i)] = s;
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// One distinct score value and how many ID / OOD samples carry it.
struct TieGroup {
    double value;
    std::int64_t n_id;
    std::int64_t n_ood;
};

/// Distinct values of the pooled scores in descending order.
inline std::vector<TieGroup> tie_groups_descending(const std::vector<double>& id_sorted,
                                                   const std::vector<double>& ood_sorted) {
    std::vector<TieGroup> groups;
    auto i = static_cast<std::ptrdiff_t>(id_sorted.size()) - 1;
    auto j = static_cast<std::ptrdiff_t>(ood_sorted.size()) - 1;
    while (i >= 0 || j >= 0) {
        double v;
        if (i < 0) {
            v = ood_sorted[static_cast<std::size_t>(j)];
        } else if (j < 0) {
            v = id_sorted[static_cast<std::size_t>(i)];
        } else {
            v = std::max(id_sorted[static_cast<std::size_t>(i)], ood_sorted[static_cast<std::size_t>(j)]);
        }
        TieGroup g{v, 0, 0};
        while (i >= 0 && id_sorted[static_cast<std::size_t>(i)] == v) {
            ++g.n_id;
            --i;
        }
        while (j >= 0 && ood_sorted[static_cast<std::size_t>(j)] == v) {
            ++g.n_ood;
            --j;
        }
        groups.push_back(g);
    }
    return groups;
}

inline double threshold_from_sorted(const std::vector<double>& id_sorted, double tpr_target) {
    if (!(tpr_target > 0.0) || tpr_target > 1.0) {
        throw ValidationError("tpr_target must lie in (0, 1]");
    }
    const auto n = static_cast<double>(id_sorted.size());
    // Walk tie groups from the top; the first value whose ">=" count reaches
    // the target is the largest admissible threshold.
    std::int64_t at_or_above = 0;
    auto i = static_cast<std::ptrdiff_t>(id_sorted.size()) - 1;
    while (i >= 0) {
        const double v = id_sorted[static_cast<std::size_t>(i)];
        while (i >= 0 && id_sorted[static_cast<std::size_t>(i)] == v) {
            ++at_or_above;
            --i;
        }
        if (static_cast<double>(at_or_above) / n >= tpr_target) {
            return v;
        }
    }
    return id_sorted.front();
}

inline double average_precision(const std::vector<TieGroup>& groups, std::int64_t n_pos, bool id_positive) {
    double ap = 0.0;
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    for (const auto& g : groups) {
        const std::int64_t pos = id_positive ? g.n_id : g.n_ood;
        const std::int64_t neg = id_positive ? g.n_ood : g.n_id;
        tp += pos;
        fp += neg;
        if (pos > 0) {
            const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
            ap += (static_cast<double>(pos) / static_cast<double>(n_pos)) * precision;
        }
    }
    return ap;
}

}  // namespace detail

/// Largest observed ID score lambda with |{s >= lambda}| / n_id >= tpr_target.
template <typename Derived>
double threshold_at_tpr(const Eigen::MatrixBase<Derived>& id_scores, double tpr_target = 0.95) {
    return detail::threshold_from_sorted(detail::sorted_copy(id_scores, "ID"), tpr_target);
}

/// Fraction of OOD scores at or above the TPR-calibrated threshold.
template <typename DerivedId, typename DerivedOod>
double fpr_at_tpr(const Eigen::MatrixBase<DerivedId>& id_scores,
                  const Eigen::MatrixBase<DerivedOod>& ood_scores, double tpr_target = 0.95) {
    const double lambda = threshold_at_tpr(id_scores, tpr_target);
    const auto ood = detail::sorted_copy(ood_scores, "OOD");
    const auto first = std::lower_bound(ood.begin(), ood.end(), lambda);
    return static_cast<double>(ood.end() - first) / static_cast<double>(ood.size());
}

/// Mann-Whitney form of the ROC area with half credit for ties.
template <typename DerivedId, typename DerivedOod>
double auroc(const Eigen::MatrixBase<DerivedId>& id_scores,
             const Eigen::MatrixBase<DerivedOod>& ood_scores) {
    const auto id = detail::sorted_copy(id_scores, "ID");
    const auto ood = detail::sorted_copy(ood_scores, "OOD");
    // Twice the credit, kept integral so the sum is exact.
    std::int64_t twice = 0;
    std::int64_t ood_below = static_cast<std::int64_t>(ood.size());
    for (const auto& g : detail::tie_groups_descending(id, ood)) {
        ood_below -= g.n_ood;
        twice += g.n_id * (2 * ood_below + g.n_ood);
    }
    const double pairs = static_cast<double>(id.size()) * static_cast<double>(ood.size());
    return 0.5 * static_cast<double>(twice) / pairs;
}

/// Step-wise average precision with ID as the positive class.
template <typename DerivedId, typename DerivedOod>
double aupr_in(const Eigen::MatrixBase<DerivedId>& id_scores,
               const Eigen::MatrixBase<DerivedOod>& ood_scores) {
    const auto id = detail::sorted_copy(id_scores, "ID");
    const auto ood = detail::sorted_copy(ood_scores, "OOD");
    return detail::average_precision(detail::tie_groups_descending(id, ood),
                                     static_cast<std::int64_t>(id.size()), true);
}

/// Average precision with OOD as the positive class (lower score = more OOD).
template <typename DerivedId, typename DerivedOod>
double aupr_out(const Eigen::MatrixBase<DerivedId>& id_scores,
                const Eigen::MatrixBase<DerivedOod>& ood_scores) {
    const auto id = detail::sorted_copy(id_scores, "ID");
    const auto ood = detail::sorted_copy(ood_scores, "OOD");
    auto groups = detail::tie_groups_descending(id, ood);
    std::reverse(groups.begin(), groups.end());
    return detail::average_precision(groups, static_cast<std::int64_t>(ood.size()), false);
}

template <typename DerivedId, typename DerivedOod>
std::vector<std::pair<double, double>> roc_curve(const Eigen::MatrixBase<DerivedId>& id_scores,
                                                 const Eigen::MatrixBase<DerivedOod>& ood_scores) {
    const auto id = detail::sorted_copy(id_scores, "ID");
    const auto ood = detail::sorted_copy(ood_scores, "OOD");
    std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    for (const auto& g : detail::tie_groups_descending(id, ood)) {
        tp += g.n_id;
        fp += g.n_ood;
        pts.emplace_back(static_cast<double>(fp) / static_cast<double>(ood.size()),
                         static_cast<double>(tp) / static_cast<double>(id.size()));
    }
    return pts;
}

template <typename DerivedId, typename DerivedOod>
DetectionMetrics evaluate_pair(const Eigen::MatrixBase<DerivedId>& id_scores,
                               const Eigen::MatrixBase<DerivedOod>& ood_scores,
                               double tpr_target = 0.95) {
    DetectionMetrics m;
    m.tpr_target = tpr_target;
    m.threshold_lambda = threshold_at_tpr(id_scores, tpr_target);
    m.fpr_at_tpr = fpr_at_tpr(id_scores, ood_scores, tpr_target);
    m.auroc = auroc(id_scores, ood_scores);
    m.aupr_in = aupr_in(id_scores, ood_scores);
    m.aupr_out = aupr_out(id_scores, ood_scores);
    m.n_id = id_scores.size();
    m.n_ood = ood_scores.size();
    m.roc = roc_curve(id_scores, ood_scores);
    return m;
}

}  // namespace ctm
