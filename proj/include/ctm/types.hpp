#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctm {

using Index = Eigen::Index;

/// Samples are stored one per row, so matrices are row-major.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXr = Matrix<double>;
using VectorXr = Vector<double>;

// ---------------------------------------------------------------------------
// Errors. Everything the toolkit throws derives from ctm::Error.

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file contents (bad magic, unparsable header or numeral).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Well-formed file whose array layout is outside the supported subset.
class LayoutError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

/// Manifest does not match the expected schema.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// A method was asked to run without an input it requires.
class ConfigError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------

/// Integer class labels in [0, num_classes).
struct LabelVector {
    std::vector<int> labels;
    int num_classes = 0;

    Index size() const { return static_cast<Index>(labels.size()); }
};

/// Final affine layer f(z) = W z + b, one row of W per class.
template <typename Scalar>
struct LinearHead {
    Matrix<Scalar> W;
    Vector<Scalar> b;

    Index num_classes() const { return W.rows(); }
    Index dim() const { return W.cols(); }
};

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, const std::string& what) {
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            if (!std::isfinite(static_cast<double>(m(i, j)))) {
                throw ValidationError(what + ": non-finite entry at row " + std::to_string(i) +
                                      ", column " + std::to_string(j));
            }
        }
    }
}

/// Checks the FeatureMatrix invariants: non-empty and finite.
template <typename Derived>
void validate_features(const Eigen::DenseBase<Derived>& m, const std::string& what = "features") {
    if (m.rows() < 1 || m.cols() < 1) {
        throw ValidationError(what + ": matrix must have at least one row and one column (got " +
                              std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")");
    }
    require_finite(m, what);
}

inline void validate_labels(const LabelVector& labels, int min_classes = 2) {
    if (labels.num_classes < min_classes) {
        throw ValidationError("labels: need at least " + std::to_string(min_classes) +
                              " classes, got " +
                              std::to_string(labels.num_classes));
    }
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        const int y = labels.labels[i];
        if (y < 0 || y >= labels.num_classes) {
            throw ValidationError("labels: label " + std::to_string(y) + " at row " +
                                  std::to_string(i) + " is outside [0, " +
                                  std::to_string(labels.num_classes - 1) + "]");
        }
    }
}

template <typename Scalar>
void validate_head(const LinearHead<Scalar>& head) {
    if (head.W.rows() != head.b.size()) {
        throw ValidationError("head: W has " + std::to_string(head.W.rows()) +
                              " rows but b has length " + std::to_string(head.b.size()));
    }
    if (head.W.rows() < 1 || head.W.cols() < 1) {
        throw ValidationError("head: W is empty");
    }
    require_finite(head.W, "head W");
    require_finite(head.b, "head b");
}

}  // namespace ctm
