#pragma once

// Influence of the final linear layer between two features, measured through
// g = KL(u || softmax(W z + b)) with u the uniform distribution over classes.

#include "ctm/scorers.hpp"
#include "ctm/types.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace ctm {

template <typename Scalar>
struct KernelResult {
    Scalar value = 0;
    /// Set when either gradient vanished (zero feature or uniform p).
    bool degenerate = false;
};

namespace detail {

template <typename Derived>
void check_probabilities(const Eigen::MatrixBase<Derived>& p, const char* what) {
    using Scalar = typename Derived::Scalar;
    if (p.size() < 1) {
        throw ValidationError(std::string(what) + ": empty probability vector");
    }
    Scalar sum = 0;
    for (Index k = 0; k < p.size(); ++k) {
        if (!(p(k) >= Scalar(0)) || !std::isfinite(static_cast<double>(p(k)))) {
            throw ValidationError(std::string(what) + ": entry " + std::to_string(k) +
                                  " is not a probability");
        }
        sum += p(k);
    }
    if (std::abs(static_cast<double>(sum) - 1.0) > 1e-9) {
        throw ValidationError(std::string(what) + ": probabilities sum to " +
                              std::to_string(static_cast<double>(sum)));
    }
}

}  // namespace detail

/// D_KL(u || p) = sum_k (1/C) log((1/C) / p_k), with p clamped at 1e-300.
template <typename Derived>
typename Derived::Scalar kl_to_uniform(const Eigen::MatrixBase<Derived>& p) {
    using Scalar = typename Derived::Scalar;
    detail::check_probabilities(p, "kl_to_uniform");
    const Scalar u = Scalar(1) / static_cast<Scalar>(p.size());
    Scalar s = 0;
    for (Index k = 0; k < p.size(); ++k) {
        const Scalar pk = std::max(p(k), Scalar(1e-300));
        s += u * std::log(u / pk);
    }
    return s;
}

/// Gradient of kl_to_uniform(softmax(W z + b)) with respect to W, flattened
/// row-major by class: entry (k * m + j) = (p_k - 1/C) * z_j.
template <typename DerivedZ, typename DerivedP>
Vector<typename DerivedZ::Scalar> grad_g_wrt_W(const Eigen::MatrixBase<DerivedZ>& z,
                                               const Eigen::MatrixBase<DerivedP>& p) {
    using Scalar = typename DerivedZ::Scalar;
    detail::check_probabilities(p, "grad_g_wrt_W");
    const Index C = p.size();
    const Index m = z.size();
    if (m < 1) {
        throw ValidationError("grad_g_wrt_W: empty feature vector");
    }
    const Scalar u = Scalar(1) / static_cast<Scalar>(C);
    Vector<Scalar> g(C * m);
    for (Index k = 0; k < C; ++k) {
        for (Index j = 0; j < m; ++j) {
            g(k * m + j) = (p(k) - u) * z(j);
        }
    }
    return g;
}

/// Closed-form cosine between the two weight gradients:
///   (<p', p> - 1/C) / (||u - p'|| ||u - p||) * cos(z', z).
template <typename DerivedZa, typename DerivedPa, typename DerivedZb, typename DerivedPb>
KernelResult<typename DerivedZa::Scalar> kernel_closed_form(const Eigen::MatrixBase<DerivedZa>& z_a,
                                                            const Eigen::MatrixBase<DerivedPa>& p_a,
                                                            const Eigen::MatrixBase<DerivedZb>& z_b,
                                                            const Eigen::MatrixBase<DerivedPb>& p_b) {
    using Scalar = typename DerivedZa::Scalar;
    detail::check_probabilities(p_a, "kernel_closed_form");
    detail::check_probabilities(p_b, "kernel_closed_form");
    if (p_a.size() != p_b.size() || z_a.size() != z_b.size()) {
        throw ValidationError("kernel_closed_form: mismatched dimensions");
    }
    const Index C = p_a.size();
    const Scalar u = Scalar(1) / static_cast<Scalar>(C);

    const Vector<Scalar> da = p_a.array() - u;
    const Vector<Scalar> db = p_b.array() - u;
    const Scalar na = l2_norm(da);
    const Scalar nb = l2_norm(db);
    const auto cos = cosine_similarity(z_a, z_b);
    if (!(na > Scalar(0)) || !(nb > Scalar(0)) || cos.degenerate) {
        return {Scalar(0), true};
    }
    // <u - p', u - p> equals <p', p> - 1/C; the centred form avoids cancellation.
    const Scalar prob_factor = clamp_unit(dot_sequential(da, db) / (na * nb));
    return {prob_factor * cos.value, false};
}

/// Kernel between z and the class mean mu_k, taking the prediction at mu_k
/// to be exactly one-hot at k.
template <typename DerivedZ, typename DerivedP, typename Scalar = typename DerivedZ::Scalar>
KernelResult<Scalar> kernel_vs_class_mean(const Eigen::MatrixBase<DerivedZ>& z,
                                          const Eigen::MatrixBase<DerivedP>& p,
                                          const Matrix<Scalar>& means, Index k) {
    detail::check_probabilities(p, "kernel_vs_class_mean");
    if (k < 0 || k >= means.rows() || means.rows() != p.size()) {
        throw ValidationError("kernel_vs_class_mean: class " + std::to_string(k) +
                              " is out of range or means do not match p");
    }
    if (means.cols() != z.size()) {
        throw ValidationError("kernel_vs_class_mean: feature dimension does not match the means");
    }
    if (!(l2_norm(means.row(k)) > Scalar(0))) {
        throw ValidationError("kernel_vs_class_mean: class mean " + std::to_string(k) +
                              " has zero norm");
    }
    if (p(k) < p.maxCoeff()) {
        throw ValidationError("kernel_vs_class_mean: p_k is not the largest probability");
    }
    const Vector<Scalar> onehot = Vector<Scalar>::Unit(p.size(), k);
    return kernel_closed_form(means.row(k).transpose(), onehot, z, p);
}

/// Same, with p computed as softmax(W z + b).
template <typename DerivedZ, typename Scalar = typename DerivedZ::Scalar>
KernelResult<Scalar> kernel_vs_class_mean(const Eigen::MatrixBase<DerivedZ>& z,
                                          const Matrix<Scalar>& means,
                                          const LinearHead<Scalar>& head, Index k) {
    validate_head(head);
    if (head.dim() != z.size()) {
        throw ValidationError("kernel_vs_class_mean: feature dimension does not match the head");
    }
    const Vector<Scalar> p = softmax((head.W * z + head.b).eval());
    return kernel_vs_class_mean(z, p, means, k);
}

struct OneHotClassReport {
    Index argmax = 0;
    double max_probability = 0;
};

struct OneHotReport {
    std::vector<OneHotClassReport> classes;
    /// Classes with argmax == k and max probability >= threshold.
    Index num_one_hot = 0;
    double threshold = 0.99;
};

/// How close softmax(W mu_k + b) is to one-hot at k for every class.
template <typename Scalar>
OneHotReport onehot_check(const Matrix<Scalar>& means, const LinearHead<Scalar>& head,
                          double threshold = 0.99) {
    validate_head(head);
    if (means.rows() != head.num_classes() || means.cols() != head.dim()) {
        throw ValidationError("onehot_check: means are " + std::to_string(means.rows()) + "x" +
                              std::to_string(means.cols()) + " but the head is " +
                              std::to_string(head.num_classes()) + "x" + std::to_string(head.dim()));
    }
    OneHotReport report;
    report.threshold = threshold;
    const Matrix<Scalar> logits = head_logits(means, head);
    for (Index k = 0; k < means.rows(); ++k) {
        const Vector<Scalar> p = softmax(logits.row(k).transpose());
        OneHotClassReport c;
        c.argmax = argmax_first(p);
        c.max_probability = static_cast<double>(p(c.argmax));
        if (c.argmax == k && c.max_probability >= threshold) {
            ++report.num_one_hot;
        }
        report.classes.push_back(c);
    }
    return report;
}

}  // namespace ctm
