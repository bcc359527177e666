#pragma once

#include "ctm/ingest.hpp"
#include "ctm/metrics.hpp"
#include "ctm/scorers.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ctm {

// ---------------------------------------------------------------------------
// In-memory benchmark inputs

struct OodData {
    std::string name;
    MatrixXr features;
    std::optional<MatrixXr> logits;
    /// Non-empty when the set failed to load; its cells report this error.
    std::string load_error;
};

struct BenchmarkData {
    MatrixXr id_train;
    LabelVector train_labels;
    MatrixXr id_test;
    std::optional<LabelVector> test_labels;
    std::optional<MatrixXr> id_test_logits;
    std::vector<OodData> ood_sets;
    std::optional<LinearHead<double>> head;
    std::string head_error;
};

struct BenchmarkConfig {
    std::vector<MethodConfig> methods;
    std::uint64_t seed = 0;
    int runs = 5;
    double tpr_target = 0.95;
    std::string layer;
};

BenchmarkConfig config_from_manifest(const BenchmarkManifest& manifest);

/// Loads the top-level feature files. ID failures throw; OOD and head
/// failures are recorded and surface in the affected cells.
BenchmarkData load_benchmark_data(const BenchmarkManifest& manifest);

/// Loads one layer group, reusing the top-level labels and head. All feature
/// files in the group must share one dimension.
BenchmarkData load_layer_data(const BenchmarkManifest& manifest, const LayerGroup& layer);

// ---------------------------------------------------------------------------
// Reports

struct ReportRow {
    std::string method;
    std::string ood_set;
    std::string layer;
    int run = 0;
    std::optional<DetectionMetrics> metrics;
    std::string error;
};

struct AggregateRow {
    std::string method;
    std::string ood_set;
    std::string layer;
    int runs = 0;
    double fpr_mean = 0, fpr_std = 0;
    double auroc_mean = 0, auroc_std = 0;
    double aupr_in_mean = 0, aupr_in_std = 0;
    double aupr_out_mean = 0, aupr_out_std = 0;
    std::string error;
};

/// Feature-norm summary of one dataset.
struct NormStats {
    std::string layer;
    std::string dataset;
    Index n = 0;
    double mean = 0;
    double stddev = 0;
    double min = 0;
    double max = 0;
};

struct RunReport {
    std::vector<ReportRow> rows;
    std::vector<AggregateRow> aggregates;
    std::vector<NormStats> norms;
    std::vector<MethodConfig> methods;
    std::uint64_t seed = 0;
    int runs = 0;

    /// True when no cell recorded an error.
    bool ok() const;
};

struct AblationOodResult {
    std::string ood_set;
    std::vector<double> auroc_runs;
    double auroc_mean = 0;
    double auroc_std = 0;
    std::string error;
};

struct AblationModeResult {
    PredictionHeadMode mode = PredictionHeadMode::standard;
    double accuracy = 0;
    std::vector<AblationOodResult> ood;
};

struct AccuracyReport {
    std::vector<AblationModeResult> modes;
    std::uint64_t seed = 0;
    int runs = 0;

    bool ok() const;
};

std::string to_string(PredictionHeadMode mode);

/// Mean and sample standard deviation (zero for a single value), summed in
/// order.
std::pair<double, double> mean_and_std(const std::vector<double>& values);

/// Recomputes aggregates from run rows, skipping failed ones.
std::vector<AggregateRow> aggregate_rows(const std::vector<ReportRow>& rows);

// ---------------------------------------------------------------------------
// Operations

/// Row indices kept for run `run_index`: all rows in order when n <= target_n,
/// otherwise the first target_n positions of a partial Fisher-Yates shuffle.
std::vector<Index> subsample_indices(Index n, Index target_n, std::uint64_t seed, int run_index);

MatrixXr subsample_ood(const MatrixXr& ood, Index target_n, std::uint64_t seed, int run_index);

MatrixXr gather_rows(const MatrixXr& m, const std::vector<Index>& rows);

RunReport run_benchmark(const BenchmarkData& data, const BenchmarkConfig& config);
RunReport run_benchmark(const BenchmarkManifest& manifest);

/// One benchmark per layer group; rows carry the layer name.
RunReport layer_sweep(const BenchmarkManifest& manifest);

/// ID test accuracy and AUROC under the standard, cw and cm heads.
AccuracyReport head_ablation(const BenchmarkData& data, const BenchmarkConfig& config);
AccuracyReport head_ablation(const BenchmarkManifest& manifest);

enum class ReportFormat { csv, markdown };

ReportFormat parse_report_format(const std::string& name);

std::string format_report(const RunReport& report, ReportFormat format);
std::string format_report(const AccuracyReport& report, ReportFormat format);
void emit_report(const RunReport& report, ReportFormat format, const std::filesystem::path& path);
void emit_report(const AccuracyReport& report, ReportFormat format,
                 const std::filesystem::path& path);

/// Two-column "fpr,tpr" CSV.
void write_roc_csv(const std::vector<std::pair<double, double>>& roc,
                   const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_exact(double v);

}  // namespace ctm
