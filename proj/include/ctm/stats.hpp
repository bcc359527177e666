#pragma once

#include "ctm/types.hpp"

#include <filesystem>

namespace ctm {

/// Class-conditional statistics of ID training features.
///
/// Row k of `means` is the class mean mu_k. `precision` is the inverse of
/// `tied_covariance + regularization_eps * I`.
template <typename Scalar>
struct ClassStats {
    Matrix<Scalar> means;
    Eigen::VectorXi counts;
    Matrix<Scalar> tied_covariance;
    Matrix<Scalar> precision;
    Scalar regularization_eps = 0;

    Index num_classes() const { return means.rows(); }
    Index dim() const { return means.cols(); }
};

template <typename Scalar>
struct ClassMeans {
    Matrix<Scalar> means;
    Eigen::VectorXi counts;
};

namespace detail {

template <typename Derived>
void check_train_labels(const Eigen::MatrixBase<Derived>& train, const LabelVector& labels) {
    validate_features(train, "training features");
    validate_labels(labels, 1);
    if (labels.size() != train.rows()) {
        throw ValidationError("training features have " + std::to_string(train.rows()) +
                              " rows but " + std::to_string(labels.size()) + " labels were given");
    }
}

}  // namespace detail

/// Per-class arithmetic means. Every class 0..C-1 must own at least one row.
template <typename Derived>
ClassMeans<typename Derived::Scalar> fit_class_means(const Eigen::MatrixBase<Derived>& train,
                                                     const LabelVector& labels) {
    using Scalar = typename Derived::Scalar;
    detail::check_train_labels(train, labels);

    const Index C = labels.num_classes;
    ClassMeans<Scalar> out;
    out.means = Matrix<Scalar>::Zero(C, train.cols());
    out.counts = Eigen::VectorXi::Zero(C);
    for (Index i = 0; i < train.rows(); ++i) {
        const int y = labels.labels[static_cast<std::size_t>(i)];
        out.means.row(y) += train.row(i);
        ++out.counts(y);
    }
    for (Index k = 0; k < C; ++k) {
        if (out.counts(k) == 0) {
            throw ValidationError("class " + std::to_string(k) + " has no training samples");
        }
        out.means.row(k) /= static_cast<Scalar>(out.counts(k));
    }
    return out;
}

/// Shared within-class covariance, normalized by the total sample count n.
template <typename Derived, typename MeansDerived>
Matrix<typename Derived::Scalar> fit_tied_covariance(const Eigen::MatrixBase<Derived>& train,
                                                     const LabelVector& labels,
                                                     const Eigen::MatrixBase<MeansDerived>& means) {
    using Scalar = typename Derived::Scalar;
    detail::check_train_labels(train, labels);
    if (means.cols() != train.cols() || means.rows() != labels.num_classes) {
        throw ValidationError("means are " + std::to_string(means.rows()) + "x" +
                              std::to_string(means.cols()) + ", expected " +
                              std::to_string(labels.num_classes) + "x" +
                              std::to_string(train.cols()));
    }

    Matrix<Scalar> centered(train.rows(), train.cols());
    for (Index i = 0; i < train.rows(); ++i) {
        centered.row(i) = train.row(i) - means.row(labels.labels[static_cast<std::size_t>(i)]);
    }
    Matrix<Scalar> cov = centered.transpose() * centered;
    cov /= static_cast<Scalar>(train.rows());
    // Exact symmetry regardless of how the product was blocked.
    Matrix<Scalar> sym = (cov + cov.transpose()) * Scalar(0.5);
    return sym;
}

/// Absolute ridge added before inversion: eps_scale * trace(cov) / m, or
/// eps_scale itself when the covariance is identically zero.
template <typename Derived>
typename Derived::Scalar ridge_for(const Eigen::MatrixBase<Derived>& cov,
                                   typename Derived::Scalar eps_scale) {
    using Scalar = typename Derived::Scalar;
    const Scalar scaled = eps_scale * cov.trace() / static_cast<Scalar>(cov.rows());
    return scaled > Scalar(0) ? scaled : eps_scale;
}

/// (cov + eps I)^-1 via an LDL^T solve, symmetrized.
template <typename Derived>
Matrix<typename Derived::Scalar> regularized_precision(const Eigen::MatrixBase<Derived>& cov,
                                                       typename Derived::Scalar eps_scale = 1e-6) {
    using Scalar = typename Derived::Scalar;
    if (cov.rows() != cov.cols() || cov.rows() < 1) {
        throw ValidationError("covariance must be a non-empty square matrix");
    }
    require_finite(cov, "covariance");
    if (!(eps_scale > Scalar(0)) || !std::isfinite(static_cast<double>(eps_scale))) {
        throw ValidationError("eps_scale must be a positive finite number");
    }

    const Index m = cov.rows();
    const Scalar eps = ridge_for(cov, eps_scale);
    Matrix<Scalar> reg = cov;
    reg.diagonal().array() += eps;

    Eigen::LDLT<Matrix<Scalar>> ldlt(reg);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
        throw NumericalError("regularized covariance is not positive definite");
    }
    Matrix<Scalar> inv = ldlt.solve(Matrix<Scalar>::Identity(m, m));
    if (ldlt.info() != Eigen::Success || !inv.allFinite()) {
        throw NumericalError("solve against the regularized covariance failed");
    }
    Matrix<Scalar> sym = (inv + inv.transpose()) * Scalar(0.5);
    return sym;
}

template <typename Derived>
ClassStats<typename Derived::Scalar> fit_class_stats(const Eigen::MatrixBase<Derived>& train,
                                                     const LabelVector& labels,
                                                     typename Derived::Scalar eps_scale = 1e-6) {
    using Scalar = typename Derived::Scalar;
    auto fitted = fit_class_means(train, labels);
    ClassStats<Scalar> stats;
    stats.tied_covariance = fit_tied_covariance(train, labels, fitted.means);
    stats.precision = regularized_precision(stats.tied_covariance, eps_scale);
    stats.regularization_eps = ridge_for(stats.tied_covariance, eps_scale);
    stats.means = std::move(fitted.means);
    stats.counts = std::move(fitted.counts);
    return stats;
}

// Persistence: a directory holding means.npy, counts.csv and covariance.npy.
// The precision is refit from the covariance on load.
void save_class_stats(const ClassStats<double>& stats, const std::filesystem::path& dir);
ClassStats<double> load_class_stats(const std::filesystem::path& dir, double eps_scale = 1e-6);

}  // namespace ctm
