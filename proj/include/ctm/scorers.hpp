#pragma once

#include "ctm/method.hpp"
#include "ctm/stats.hpp"
#include "ctm/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

namespace ctm {

/// Per-sample OOD scores; higher always means "more in-distribution".
template <typename Scalar>
struct ScoreVector {
    Vector<Scalar> scores;
    std::string method;
    bool higher_is_id = true;
    /// Rows whose score fell back to a fixed value (zero-norm feature).
    std::vector<Index> degenerate_rows;

    Index size() const { return scores.size(); }
};

template <typename Scalar>
struct CosineResult {
    Scalar value = 0;
    bool degenerate = false;
};

enum class PredictionHeadMode { standard, cw, cm };

// ---------------------------------------------------------------------------
// Small row primitives. Fixed left-to-right summation so results do not
// depend on vectorization width.

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar dot_sequential(const Eigen::MatrixBase<DerivedA>& a,
                                         const Eigen::MatrixBase<DerivedB>& b) {
    typename DerivedA::Scalar s = 0;
    for (Index j = 0; j < a.size(); ++j) {
        s += a(j) * b(j);
    }
    return s;
}

template <typename Derived>
typename Derived::Scalar l2_norm(const Eigen::MatrixBase<Derived>& a) {
    return std::sqrt(dot_sequential(a, a));
}

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar squared_distance(const Eigen::MatrixBase<DerivedA>& a,
                                           const Eigen::MatrixBase<DerivedB>& b) {
    typename DerivedA::Scalar s = 0;
    for (Index j = 0; j < a.size(); ++j) {
        const auto d = a(j) - b(j);
        s += d * d;
    }
    return s;
}

template <typename Scalar>
Scalar clamp_unit(Scalar v) {
    return std::clamp(v, Scalar(-1), Scalar(1));
}

/// Index of the largest entry; ties go to the lowest index.
template <typename Derived>
Index argmax_first(const Eigen::MatrixBase<Derived>& row) {
    Index best = 0;
    for (Index k = 1; k < row.size(); ++k) {
        if (row(k) > row(best)) {
            best = k;
        }
    }
    return best;
}

/// Rows scaled to unit L2 norm. Zero rows stay zero and are reported.
template <typename Derived>
Matrix<typename Derived::Scalar> normalize_rows(const Eigen::MatrixBase<Derived>& m,
                                                std::vector<Index>* zero_rows = nullptr) {
    using Scalar = typename Derived::Scalar;
    Matrix<Scalar> out(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i) {
        const Scalar n = l2_norm(m.row(i));
        if (n > Scalar(0)) {
            out.row(i) = m.row(i) / n;
        } else {
            out.row(i).setZero();
            if (zero_rows) {
                zero_rows->push_back(i);
            }
        }
    }
    return out;
}

/// cos(a, b) clamped to [-1, 1]; 0 with the degenerate flag when either
/// vector has zero norm.
template <typename DerivedA, typename DerivedB>
CosineResult<typename DerivedA::Scalar> cosine_similarity(const Eigen::MatrixBase<DerivedA>& a,
                                                          const Eigen::MatrixBase<DerivedB>& b) {
    using Scalar = typename DerivedA::Scalar;
    if (a.size() != b.size()) {
        throw ValidationError("cosine_similarity: vectors have lengths " + std::to_string(a.size()) +
                              " and " + std::to_string(b.size()));
    }
    const Scalar na = l2_norm(a);
    const Scalar nb = l2_norm(b);
    if (!(na > Scalar(0)) || !(nb > Scalar(0))) {
        return {Scalar(0), true};
    }
    return {clamp_unit(dot_sequential(a, b) / (na * nb)), false};
}

// ---------------------------------------------------------------------------
// Softmax helpers

template <typename Derived>
typename Derived::Scalar logsumexp(const Eigen::MatrixBase<Derived>& row) {
    using Scalar = typename Derived::Scalar;
    const Scalar mx = row.maxCoeff();
    Scalar s = 0;
    for (Index k = 0; k < row.size(); ++k) {
        s += std::exp(row(k) - mx);
    }
    return mx + std::log(s);
}

template <typename Derived>
Vector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
    using Scalar = typename Derived::Scalar;
    const Scalar mx = logits.maxCoeff();
    Vector<Scalar> p(logits.size());
    Scalar s = 0;
    for (Index k = 0; k < logits.size(); ++k) {
        p(k) = std::exp(logits(k) - mx);
        s += p(k);
    }
    p /= s;
    return p;
}

/// Logits W z + b for every row of `features`.
template <typename Derived, typename Scalar = typename Derived::Scalar>
Matrix<Scalar> head_logits(const Eigen::MatrixBase<Derived>& features,
                           const LinearHead<Scalar>& head) {
    validate_head(head);
    if (features.cols() != head.dim()) {
        throw ValidationError("features have dimension " + std::to_string(features.cols()) +
                              " but the head expects " + std::to_string(head.dim()));
    }
    Matrix<Scalar> logits = features * head.W.transpose();
    logits.rowwise() += head.b.transpose();
    return logits;
}

namespace detail {

template <typename Derived>
void check_dims(const Eigen::MatrixBase<Derived>& test, Index m, const char* what) {
    validate_features(test, "test features");
    if (test.cols() != m) {
        throw ValidationError(std::string(what) + ": test features have dimension " +
                              std::to_string(test.cols()) + ", expected " + std::to_string(m));
    }
}

/// Unit-normalized prototype rows; a zero row is a hard error.
template <typename Derived>
Matrix<typename Derived::Scalar> unit_prototypes(const Eigen::MatrixBase<Derived>& rows,
                                                 const char* what) {
    validate_features(rows, what);
    std::vector<Index> zero;
    auto unit = normalize_rows(rows, &zero);
    if (!zero.empty()) {
        throw ValidationError(std::string(what) + ": row " + std::to_string(zero.front()) +
                              " has zero norm");
    }
    return unit;
}

/// max_k cos(prototype_k, z) per row of `test`.
template <typename Derived, typename Scalar = typename Derived::Scalar>
ScoreVector<Scalar> max_cosine(const Eigen::MatrixBase<Derived>& test,
                               const Matrix<Scalar>& unit_protos, std::string method) {
    ScoreVector<Scalar> out;
    out.method = std::move(method);
    const Matrix<Scalar> unit_test = normalize_rows(test, &out.degenerate_rows);
    const Matrix<Scalar> cos = unit_test * unit_protos.transpose();
    out.scores.resize(test.rows());
    for (Index i = 0; i < test.rows(); ++i) {
        out.scores(i) = clamp_unit(cos.row(i).maxCoeff());
    }
    for (const Index i : out.degenerate_rows) {
        out.scores(i) = Scalar(0);
    }
    return out;
}

template <typename Derived>
void check_logits(const Eigen::MatrixBase<Derived>& logits) {
    validate_features(logits, "logits");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Scores

/// Class Typical Matching: max over classes of cos(mu_k, z).
template <typename Derived, typename MeansDerived>
ScoreVector<typename Derived::Scalar> score_ctm(const Eigen::MatrixBase<Derived>& test,
                                                const Eigen::MatrixBase<MeansDerived>& means) {
    detail::check_dims(test, means.cols(), "score_ctm");
    const auto unit_means = detail::unit_prototypes(means, "class means");
    return detail::max_cosine(test, unit_means, "ctm");
}

/// Maximum softmax probability.
template <typename Derived>
ScoreVector<typename Derived::Scalar> score_msp(const Eigen::MatrixBase<Derived>& logits) {
    using Scalar = typename Derived::Scalar;
    detail::check_logits(logits);
    ScoreVector<Scalar> out;
    out.method = "msp";
    out.scores.resize(logits.rows());
    for (Index i = 0; i < logits.rows(); ++i) {
        // max_k softmax_k = exp(max - max) / sum = 1 / sum_k exp(l_k - max)
        const Scalar mx = logits.row(i).maxCoeff();
        Scalar s = 0;
        for (Index k = 0; k < logits.cols(); ++k) {
            s += std::exp(logits(i, k) - mx);
        }
        out.scores(i) = Scalar(1) / s;
    }
    return out;
}

template <typename Derived>
ScoreVector<typename Derived::Scalar> score_maxlogit(const Eigen::MatrixBase<Derived>& logits) {
    using Scalar = typename Derived::Scalar;
    detail::check_logits(logits);
    ScoreVector<Scalar> out;
    out.method = "maxlogit";
    out.scores.resize(logits.rows());
    for (Index i = 0; i < logits.rows(); ++i) {
        out.scores(i) = logits.row(i).maxCoeff();
    }
    return out;
}

/// T * logsumexp(logits / T), the negated free energy.
template <typename Derived>
ScoreVector<typename Derived::Scalar> score_energy(const Eigen::MatrixBase<Derived>& logits,
                                                   typename Derived::Scalar temperature = 1) {
    using Scalar = typename Derived::Scalar;
    if (!(temperature > Scalar(0)) || !std::isfinite(static_cast<double>(temperature))) {
        throw ValidationError("score_energy: temperature must be positive");
    }
    detail::check_logits(logits);
    ScoreVector<Scalar> out;
    out.method = "energy";
    out.scores.resize(logits.rows());
    for (Index i = 0; i < logits.rows(); ++i) {
        const Vector<Scalar> scaled = logits.row(i).transpose() / temperature;
        out.scores(i) = temperature * logsumexp(scaled);
    }
    return out;
}

/// max_k -(z - mu_k)^T P (z - mu_k) with the regularized tied precision P.
template <typename Derived, typename Scalar = typename Derived::Scalar>
ScoreVector<Scalar> score_mahalanobis(const Eigen::MatrixBase<Derived>& test,
                                      const ClassStats<Scalar>& stats) {
    detail::check_dims(test, stats.dim(), "score_mahalanobis");
    if (stats.precision.rows() != stats.dim() || stats.precision.cols() != stats.dim()) {
        throw ValidationError("score_mahalanobis: precision is not " + std::to_string(stats.dim()) +
                              "x" + std::to_string(stats.dim()));
    }
    ScoreVector<Scalar> out;
    out.method = "mahalanobis";
    out.scores = Vector<Scalar>::Constant(test.rows(), -std::numeric_limits<Scalar>::infinity());
    Matrix<Scalar> centered(test.rows(), test.cols());
    for (Index k = 0; k < stats.num_classes(); ++k) {
        centered = test.rowwise() - stats.means.row(k);
        const Vector<Scalar> quad =
            ((centered * stats.precision).cwiseProduct(centered)).rowwise().sum();
        out.scores = out.scores.cwiseMax(-quad);
    }
    return out;
}

// ---------------------------------------------------------------------------
// KNN

/// L2-normalized training rows for exact nearest-neighbour search.
template <typename Scalar>
class KnnIndex {
public:
    KnnIndex() = default;
    explicit KnnIndex(Matrix<Scalar> unit_rows) : unit_rows_(std::move(unit_rows)) {}

    Index size() const { return unit_rows_.rows(); }
    Index dim() const { return unit_rows_.cols(); }
    const Matrix<Scalar>& rows() const { return unit_rows_; }

private:
    Matrix<Scalar> unit_rows_;
};

template <typename Derived>
KnnIndex<typename Derived::Scalar> knn_fit(const Eigen::MatrixBase<Derived>& train) {
    validate_features(train, "knn training features");
    std::vector<Index> zero;
    auto unit = normalize_rows(train, &zero);
    if (!zero.empty()) {
        throw ValidationError("knn_fit: training row " + std::to_string(zero.front()) +
                              " has zero norm");
    }
    return KnnIndex<typename Derived::Scalar>(std::move(unit));
}

/// Negative distance to the k-th nearest normalized training row.
template <typename Derived, typename Scalar = typename Derived::Scalar>
ScoreVector<Scalar> score_knn(const KnnIndex<Scalar>& index, const Eigen::MatrixBase<Derived>& test,
                              int k) {
    detail::check_dims(test, index.dim(), "score_knn");
    if (k < 1 || k > index.size()) {
        throw ValidationError("score_knn: k = " + std::to_string(k) + " is outside [1, " +
                              std::to_string(index.size()) + "]");
    }
    ScoreVector<Scalar> out;
    out.method = "knn";
    const Matrix<Scalar> unit_test = normalize_rows(test, &out.degenerate_rows);
    out.scores.resize(test.rows());

    std::vector<Scalar> dist(static_cast<std::size_t>(index.size()));
    const auto kth = dist.begin() + (k - 1);
    for (Index i = 0; i < test.rows(); ++i) {
        for (Index t = 0; t < index.size(); ++t) {
            dist[static_cast<std::size_t>(t)] = squared_distance(unit_test.row(i), index.rows().row(t));
        }
        std::nth_element(dist.begin(), kth, dist.end());
        out.scores(i) = -std::sqrt(*kth);
    }
    for (const Index i : out.degenerate_rows) {
        out.scores(i) = Scalar(-2);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Prediction heads

/// Class predictions under the affine head (standard), cosine to the weight
/// rows without bias (cw) or cosine to the class means (cm).
template <typename Derived, typename Scalar = typename Derived::Scalar>
LabelVector head_predict(const Eigen::MatrixBase<Derived>& features, const LinearHead<Scalar>& head,
                         const std::type_identity_t<Matrix<Scalar>>* means, PredictionHeadMode mode) {
    validate_head(head);
    detail::check_dims(features, head.dim(), "head_predict");
    Matrix<Scalar> scores;
    switch (mode) {
        case PredictionHeadMode::standard:
            scores = head_logits(features, head);
            break;
        case PredictionHeadMode::cw:
            scores = normalize_rows(features) *
                     detail::unit_prototypes(head.W, "head weights").transpose();
            break;
        case PredictionHeadMode::cm:
            if (!means) {
                throw ConfigError("head_predict: cm mode requires class means");
            }
            if (means->rows() != head.num_classes() || means->cols() != head.dim()) {
                throw ValidationError("head_predict: class means do not match the head shape");
            }
            scores = normalize_rows(features) *
                     detail::unit_prototypes(*means, "class means").transpose();
            break;
    }
    LabelVector out;
    out.num_classes = static_cast<int>(head.num_classes());
    out.labels.resize(static_cast<std::size_t>(features.rows()));
    for (Index i = 0; i < features.rows(); ++i) {
        out.labels[static_cast<std::size_t>(i)] = static_cast<int>(argmax_first(scores.row(i)));
    }
    return out;
}

/// max_k cos(w_k, z): the confidence score of the cw head.
template <typename Derived, typename Scalar = typename Derived::Scalar>
ScoreVector<Scalar> score_cosine_weights(const Eigen::MatrixBase<Derived>& test,
                                         const LinearHead<Scalar>& head) {
    validate_head(head);
    detail::check_dims(test, head.dim(), "score_cosine_weights");
    return detail::max_cosine(test, detail::unit_prototypes(head.W, "head weights"), "cw");
}

// ---------------------------------------------------------------------------
// Dispatch

/// Whatever a method may need. Pointers left null are "not provided".
template <typename Scalar>
struct ScoreInputs {
    const Matrix<Scalar>* features = nullptr;
    const Matrix<Scalar>* logits = nullptr;
    const LinearHead<Scalar>* head = nullptr;
    const ClassStats<Scalar>* stats = nullptr;
    const KnnIndex<Scalar>* knn = nullptr;
};

template <typename Scalar>
ScoreVector<Scalar> score(const MethodConfig& method, const ScoreInputs<Scalar>& in) {
    const auto missing = [&](const char* what) {
        return ConfigError("method " + method.label() + " requires " + what);
    };
    const auto need_features = [&]() -> const Matrix<Scalar>& {
        if (!in.features) {
            throw missing("features");
        }
        return *in.features;
    };
    // Logits come from a file when given, otherwise from W z + b.
    const auto with_logits = [&](auto&& fn) {
        if (in.logits) {
            return fn(*in.logits);
        }
        if (in.head && in.features) {
            return fn(head_logits(*in.features, *in.head));
        }
        throw missing("logits (or a head and features)");
    };

    ScoreVector<Scalar> out;
    if (method.name == "ctm") {
        if (!in.stats) {
            throw missing("class means");
        }
        out = score_ctm(need_features(), in.stats->means);
    } else if (method.name == "mahalanobis") {
        if (!in.stats) {
            throw missing("class statistics");
        }
        out = score_mahalanobis(need_features(), *in.stats);
    } else if (method.name == "knn") {
        if (!in.knn) {
            throw missing("a knn index");
        }
        if (!method.k) {
            throw ConfigError("method knn requires hyperparameter k");
        }
        out = score_knn(*in.knn, need_features(), *method.k);
    } else if (method.name == "msp") {
        out = with_logits([](const auto& l) { return score_msp(l); });
    } else if (method.name == "maxlogit") {
        out = with_logits([](const auto& l) { return score_maxlogit(l); });
    } else if (method.name == "energy") {
        const Scalar t = static_cast<Scalar>(method.temperature.value_or(1.0));
        out = with_logits([t](const auto& l) { return score_energy(l, t); });
    } else {
        throw ConfigError("unknown method '" + method.name + "'");
    }
    out.method = method.label();
    return out;
}

}  // namespace ctm
