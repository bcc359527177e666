#include "ctm/ingest.hpp"
#include "ctm/stats.hpp"

#include <fstream>

namespace ctm {

void save_class_stats(const ClassStats<double>& stats, const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("stats directory does not exist: " + dir.string());
    }
    write_array(stats.means, dir / "means.npy", ArrayFormat::npy);
    write_array(stats.tied_covariance, dir / "covariance.npy", ArrayFormat::npy);

    const auto counts_path = dir / "counts.csv";
    std::ofstream out(counts_path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + counts_path.string());
    }
    out << "count\n";
    for (Index k = 0; k < stats.counts.size(); ++k) {
        out << stats.counts(k) << '\n';
    }
    if (!out.flush()) {
        throw IoError("write failed for " + counts_path.string());
    }
}

ClassStats<double> load_class_stats(const std::filesystem::path& dir, double eps_scale) {
    ClassStats<double> stats;
    stats.means = read_array(dir / "means.npy");
    stats.tied_covariance = read_array(dir / "covariance.npy");
    const MatrixXr counts = read_array(dir / "counts.csv");
    if (counts.cols() != 1 || counts.rows() != stats.means.rows()) {
        throw ValidationError(dir.string() + ": counts.csv must hold one count per class");
    }
    if (stats.tied_covariance.rows() != stats.means.cols() ||
        stats.tied_covariance.cols() != stats.means.cols()) {
        throw ValidationError(dir.string() + ": covariance shape does not match means");
    }
    stats.counts.resize(counts.rows());
    for (Index k = 0; k < counts.rows(); ++k) {
        if (counts(k, 0) < 1 || counts(k, 0) != std::floor(counts(k, 0))) {
            throw ValidationError(dir.string() + ": class " + std::to_string(k) +
                                  " has an invalid count");
        }
        stats.counts(k) = static_cast<int>(counts(k, 0));
    }
    stats.precision = regularized_precision(stats.tied_covariance, eps_scale);
    stats.regularization_eps = ridge_for(stats.tied_covariance, eps_scale);
    return stats;
}

}  // namespace ctm
