#pragma once

#include "ctm/ingest.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace ctm::testing {

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("ctm_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline MatrixXr random_matrix(std::mt19937_64& rng, Index rows, Index cols, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    MatrixXr m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) {
            m(i, j) = normal(rng);
        }
    }
    return m;
}

inline VectorXr random_vector(std::mt19937_64& rng, Index n, double scale = 1.0) {
    return random_matrix(rng, n, 1, scale).col(0);
}

/// Synthetic labelled clusters: class k concentrates around the unit vector
/// e_k (C classes in dimension m > C), rescaled by a random positive radius.
struct ClusterSet {
    MatrixXr features;
    LabelVector labels;
};

inline ClusterSet cluster_samples(std::mt19937_64& rng, int C, Index m, Index per_class, double noise) {
    std::normal_distribution<double> normal(0.0, noise);
    std::uniform_real_distribution<double> radius(0.5, 3.0);
    ClusterSet out;
    out.features.resize(C * per_class, m);
    out.labels.num_classes = C;
    Index row = 0;
    for (Index i = 0; i < per_class; ++i) {
        for (int k = 0; k < C; ++k) {
            VectorXr z = VectorXr::Unit(m, k);
            for (Index j = 0; j < m; ++j) {
                z(j) += normal(rng);
            }
            out.features.row(row++) = radius(rng) * z.normalized().transpose();
            out.labels.labels.push_back(k);
        }
    }
    return out;
}

/// Samples living in the span of e_C .. e_{m-1}, orthogonal to every class
/// direction.
inline MatrixXr orthogonal_ood(std::mt19937_64& rng, int C, Index m, Index n) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> radius(0.5, 3.0);
    MatrixXr out = MatrixXr::Zero(n, m);
    for (Index i = 0; i < n; ++i) {
        VectorXr z = VectorXr::Zero(m);
        for (Index j = C; j < m; ++j) {
            z(j) = normal(rng);
        }
        out.row(i) = radius(rng) * z.normalized().transpose();
    }
    return out;
}

/// Writes a complete separable benchmark under `dir` and returns the
/// manifest path. The head rows are the training class means with zero bias.
struct SeparableFixture {
    std::filesystem::path manifest;
    MatrixXr id_train;
    LabelVector train_labels;
    MatrixXr id_test;
    LabelVector test_labels;
    MatrixXr ood;
};

inline std::string methods_json(const std::vector<std::string>& methods) {
    std::string out = "[";
    for (std::size_t i = 0; i < methods.size(); ++i) {
        out += (i ? ", " : "") + methods[i];
    }
    return out + "]";
}

inline SeparableFixture write_separable_fixture(const std::filesystem::path& dir, std::uint64_t seed,
                                                const std::string& methods =
                                                    R"([{"name": "ctm"}, {"name": "mahalanobis"},
                                                        {"name": "knn", "k": 10}, {"name": "msp"},
                                                        {"name": "maxlogit"}, {"name": "energy"}])",
                                                int runs = 5) {
    constexpr int C = 5;
    constexpr Index m = 16;
    std::mt19937_64 rng(seed);
    SeparableFixture fx;
    auto train = cluster_samples(rng, C, m, 60, 0.15);
    auto test = cluster_samples(rng, C, m, 40, 0.15);
    fx.id_train = train.features;
    fx.train_labels = train.labels;
    fx.id_test = test.features;
    fx.test_labels = test.labels;
    fx.ood = orthogonal_ood(rng, C, m, 500);

    // Head = class means, b = 0.
    MatrixXr W = MatrixXr::Zero(C, m);
    for (Index i = 0; i < fx.id_train.rows(); ++i) {
        W.row(fx.train_labels.labels[static_cast<std::size_t>(i)]) += fx.id_train.row(i);
    }
    W /= 60.0;

    write_array(fx.id_train, dir / "train.npy", ArrayFormat::npy);
    write_labels(fx.train_labels, dir / "train_labels.csv");
    write_array(fx.id_test, dir / "test.npy", ArrayFormat::npy);
    write_labels(fx.test_labels, dir / "test_labels.csv");
    write_array(fx.ood, dir / "ood.npy", ArrayFormat::npy);
    write_array(W, dir / "W.npy", ArrayFormat::npy);
    write_array(MatrixXr::Zero(C, 1), dir / "b.npy", ArrayFormat::npy);

    fx.manifest = dir / "manifest.json";
    write_text(fx.manifest, R"({
  "id_train": {"features": "train.npy", "labels": "train_labels.csv"},
  "id_test": {"features": "test.npy", "labels": "test_labels.csv"},
  "ood_sets": {"orthogonal": "ood.npy", "id_copy": "test.npy"},
  "head": {"W": "W.npy", "b": "b.npy"},
  "methods": )" + methods + R"(,
  "seed": 1234,
  "runs": )" + std::to_string(runs) + R"(
})");
    return fx;
}

}  // namespace ctm::testing
