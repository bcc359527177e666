#pragma once

#include "ctm/method.hpp"
#include "ctm/types.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ctm {

enum class ArrayFormat { npy, csv };

ArrayFormat parse_array_format(const std::string& name);

/// Chooses the format from the file extension (".npy" or ".csv").
ArrayFormat format_for_path(const std::filesystem::path& path);

/// Reads a 2-D float array.
///
/// NPY: version 1.0, little-endian '<f4' or '<f8', C order, shape (n, m).
/// CSV: one header line (ignored), then one comma-separated row per sample.
/// float32 data are widened to double. Non-finite entries are rejected.
MatrixXr read_array(const std::filesystem::path& path);

/// Writes float64 NPY or CSV (shortest round-trip decimal representation).
void write_array(const Eigen::Ref<const MatrixXr>& matrix, const std::filesystem::path& path,
                 ArrayFormat format);

/// Score vectors go to disk as a single column: shape (n, 1) for NPY, one
/// value per line under a "score" header for CSV.
void write_scores(const Eigen::Ref<const VectorXr>& scores, const std::filesystem::path& path,
                  ArrayFormat format);

/// Reads integer labels from a single-column CSV (with header) or an NPY
/// file of shape (n,) or (n, 1) with float or integer dtype. When
/// `num_classes` is empty it becomes max(label) + 1.
LabelVector read_labels(const std::filesystem::path& path,
                        std::optional<int> num_classes = std::nullopt);

void write_labels(const LabelVector& labels, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Benchmark manifest

struct DatasetPaths {
    std::filesystem::path features;
    std::optional<std::filesystem::path> labels;
    std::optional<std::filesystem::path> logits;
};

struct OodSetPaths {
    std::string name;
    std::filesystem::path features;
    std::optional<std::filesystem::path> logits;
};

struct HeadPaths {
    std::filesystem::path W;
    std::filesystem::path b;
};

/// Alternative feature taps for the same samples. Labels and head come from
/// the top-level entries.
struct LayerGroup {
    std::string name;
    std::filesystem::path id_train;
    std::filesystem::path id_test;
    std::vector<OodSetPaths> ood_sets;
};

struct BenchmarkManifest {
    DatasetPaths id_train;
    DatasetPaths id_test;
    std::vector<OodSetPaths> ood_sets;
    std::optional<HeadPaths> head;
    std::vector<LayerGroup> layers;
    std::vector<MethodConfig> methods;
    std::uint64_t seed = 0;
    int runs = 5;

    /// Non-fatal findings such as unknown keys.
    std::vector<std::string> warnings;
};

/// Parses and validates a JSON manifest. Relative paths are resolved against
/// the manifest's directory and must exist.
BenchmarkManifest load_manifest(const std::filesystem::path& path);

/// Same, from an in-memory document; `base_dir` anchors relative paths.
BenchmarkManifest parse_manifest(const std::string& json_text,
                                 const std::filesystem::path& base_dir);

}  // namespace ctm
