#include "ctm/harness.hpp"

#include "ctm/random.hpp"
#include "ctm/stats.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <tuple>
#include <numeric>
#include <random>

namespace ctm {

namespace {

bool needs_stats(const MethodConfig& m) {
    return m.name == "ctm" || m.name == "mahalanobis";
}

NormStats norm_stats(const MatrixXr& features, std::string layer, std::string dataset) {
    NormStats s;
    s.layer = std::move(layer);
    s.dataset = std::move(dataset);
    s.n = features.rows();
    std::vector<double> norms(static_cast<std::size_t>(features.rows()));
    for (Index i = 0; i < features.rows(); ++i) {
        norms[static_cast<std::size_t>(i)] = l2_norm(features.row(i));
    }
    if (!norms.empty()) {
        const auto [mean, sd] = mean_and_std(norms);
        s.mean = mean;
        s.stddev = sd;
        s.min = *std::min_element(norms.begin(), norms.end());
        s.max = *std::max_element(norms.begin(), norms.end());
    }
    return s;
}

std::optional<MatrixXr> optional_array(const std::optional<std::filesystem::path>& path) {
    if (!path) {
        return std::nullopt;
    }
    return read_array(*path);
}

void check_logits_rows(const std::optional<MatrixXr>& logits, Index rows, const std::string& what) {
    if (logits && logits->rows() != rows) {
        throw ValidationError(what + ": logits have " + std::to_string(logits->rows()) +
                              " rows but features have " + std::to_string(rows));
    }
}

OodData load_ood(const OodSetPaths& paths) {
    OodData ood;
    ood.name = paths.name;
    try {
        ood.features = read_array(paths.features);
        ood.logits = optional_array(paths.logits);
        check_logits_rows(ood.logits, ood.features.rows(), "OOD set " + paths.name);
    } catch (const Error& e) {
        ood.load_error = e.what();
    }
    return ood;
}

/// Shared by top-level and layer loading: labels, logits and head.
void load_common(const BenchmarkManifest& manifest, BenchmarkData& data) {
    data.train_labels = read_labels(*manifest.id_train.labels);
    if (data.train_labels.size() != data.id_train.rows()) {
        throw ValidationError("id_train: " + std::to_string(data.train_labels.size()) +
                              " labels for " + std::to_string(data.id_train.rows()) + " feature rows");
    }
    if (manifest.id_test.labels) {
        data.test_labels = read_labels(*manifest.id_test.labels, data.train_labels.num_classes);
        if (data.test_labels->size() != data.id_test.rows()) {
            throw ValidationError("id_test: " + std::to_string(data.test_labels->size()) +
                                  " labels for " + std::to_string(data.id_test.rows()) +
                                  " feature rows");
        }
    }
    if (manifest.head) {
        try {
            LinearHead<double> head;
            head.W = read_array(manifest.head->W);
            const MatrixXr b = read_array(manifest.head->b);
            if (b.cols() != 1 && b.rows() != 1) {
                throw ValidationError("head b must be a single row or column");
            }
            head.b = b.reshaped();
            validate_head(head);
            data.head = std::move(head);
        } catch (const Error& e) {
            data.head_error = e.what();
        }
    }
}

std::string cell_error_prefix(const std::string& what) {
    return what.empty() ? std::string() : what + ": ";
}

}  // namespace

// ---------------------------------------------------------------------------

BenchmarkConfig config_from_manifest(const BenchmarkManifest& manifest) {
    BenchmarkConfig cfg;
    cfg.methods = manifest.methods;
    cfg.seed = manifest.seed;
    cfg.runs = manifest.runs;
    return cfg;
}

BenchmarkData load_benchmark_data(const BenchmarkManifest& manifest) {
    BenchmarkData data;
    data.id_train = read_array(manifest.id_train.features);
    data.id_test = read_array(manifest.id_test.features);
    if (data.id_test.cols() != data.id_train.cols()) {
        throw ValidationError("id_test features have dimension " + std::to_string(data.id_test.cols()) +
                              " but id_train has " + std::to_string(data.id_train.cols()));
    }
    data.id_test_logits = optional_array(manifest.id_test.logits);
    check_logits_rows(data.id_test_logits, data.id_test.rows(), "id_test");
    load_common(manifest, data);
    for (const auto& o : manifest.ood_sets) {
        data.ood_sets.push_back(load_ood(o));
    }
    return data;
}

BenchmarkData load_layer_data(const BenchmarkManifest& manifest, const LayerGroup& layer) {
    BenchmarkData data;
    data.id_train = read_array(layer.id_train);
    data.id_test = read_array(layer.id_test);
    load_common(manifest, data);
    const Index m = data.id_train.cols();
    const auto check_dim = [&](const MatrixXr& f, const std::string& what) {
        if (f.cols() != m) {
            throw ValidationError("layer '" + layer.name + "': " + what + " has dimension " +
                                  std::to_string(f.cols()) + " but id_train has " + std::to_string(m));
        }
    };
    check_dim(data.id_test, "id_test");
    for (const auto& o : layer.ood_sets) {
        OodData ood;
        ood.name = o.name;
        ood.features = read_array(o.features);
        check_dim(ood.features, "OOD set " + o.name);
        data.ood_sets.push_back(std::move(ood));
    }
    // Head logits only make sense for the head's own input dimension.
    if (data.head && data.head->dim() != m) {
        data.head_error = "head expects dimension " + std::to_string(data.head->dim()) +
                          ", layer '" + layer.name + "' has " + std::to_string(m);
        data.head.reset();
    }
    return data;
}

bool RunReport::ok() const {
    return std::all_of(rows.begin(), rows.end(), [](const ReportRow& r) { return r.error.empty(); });
}

bool AccuracyReport::ok() const {
    for (const auto& m : modes) {
        for (const auto& o : m.ood) {
            if (!o.error.empty()) {
                return false;
            }
        }
    }
    return true;
}

std::string to_string(PredictionHeadMode mode) {
    switch (mode) {
        case PredictionHeadMode::standard: return "standard";
        case PredictionHeadMode::cw: return "cw";
        case PredictionHeadMode::cm: return "cm";
    }
    return "unknown";
}

std::pair<double, double> mean_and_std(const std::vector<double>& values) {
    if (values.empty()) {
        return {0.0, 0.0};
    }
    double sum = 0.0;
    for (const double v : values) {
        sum += v;
    }
    const double mean = sum / static_cast<double>(values.size());
    if (values.size() < 2) {
        return {mean, 0.0};
    }
    double ss = 0.0;
    for (const double v : values) {
        ss += (v - mean) * (v - mean);
    }
    return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

std::vector<AggregateRow> aggregate_rows(const std::vector<ReportRow>& rows) {
    std::vector<AggregateRow> out;
    std::map<std::tuple<std::string, std::string, std::string>, std::size_t> slot;
    std::vector<std::array<std::vector<double>, 4>> values;
    for (const auto& r : rows) {
        const auto key = std::make_tuple(r.layer, r.method, r.ood_set);
        auto it = slot.find(key);
        if (it == slot.end()) {
            it = slot.emplace(key, out.size()).first;
            AggregateRow a;
            a.method = r.method;
            a.ood_set = r.ood_set;
            a.layer = r.layer;
            out.push_back(a);
            values.emplace_back();
        }
        auto& agg = out[it->second];
        if (!r.metrics) {
            if (agg.error.empty()) {
                agg.error = r.error;
            }
            continue;
        }
        auto& v = values[it->second];
        v[0].push_back(r.metrics->fpr_at_tpr);
        v[1].push_back(r.metrics->auroc);
        v[2].push_back(r.metrics->aupr_in);
        v[3].push_back(r.metrics->aupr_out);
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        auto& a = out[i];
        const auto& v = values[i];
        a.runs = static_cast<int>(v[0].size());
        std::tie(a.fpr_mean, a.fpr_std) = mean_and_std(v[0]);
        std::tie(a.auroc_mean, a.auroc_std) = mean_and_std(v[1]);
        std::tie(a.aupr_in_mean, a.aupr_in_std) = mean_and_std(v[2]);
        std::tie(a.aupr_out_mean, a.aupr_out_std) = mean_and_std(v[3]);
    }
    return out;
}

std::vector<Index> subsample_indices(Index n, Index target_n, std::uint64_t seed, int run_index) {
    if (target_n < 1) {
        throw ValidationError("subsample target must be at least 1, got " + std::to_string(target_n));
    }
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    if (n <= target_n) {
        return idx;
    }
    std::mt19937_64 rng(run_seed(seed, static_cast<std::uint64_t>(run_index)));
    for (Index i = 0; i < target_n; ++i) {
        const auto j = i + static_cast<Index>(uniform_below(rng, static_cast<std::uint64_t>(n - i)));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(target_n));
    return idx;
}

MatrixXr gather_rows(const MatrixXr& m, const std::vector<Index>& rows) {
    MatrixXr out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.row(static_cast<Index>(i)) = m.row(rows[i]);
    }
    return out;
}

MatrixXr subsample_ood(const MatrixXr& ood, Index target_n, std::uint64_t seed, int run_index) {
    return gather_rows(ood, subsample_indices(ood.rows(), target_n, seed, run_index));
}

RunReport run_benchmark(const BenchmarkData& data, const BenchmarkConfig& config) {
    if (config.runs < 1) {
        throw ValidationError("runs must be positive");
    }
    RunReport report;
    report.seed = config.seed;
    report.runs = config.runs;
    report.methods = config.methods;

    // Fitting happens once, before any scoring.
    std::optional<ClassStats<double>> stats;
    std::string stats_error;
    if (std::any_of(config.methods.begin(), config.methods.end(), needs_stats)) {
        try {
            stats = fit_class_stats(data.id_train, data.train_labels);
        } catch (const Error& e) {
            stats_error = std::string("fitting class statistics: ") + e.what();
        }
    }
    std::optional<KnnIndex<double>> knn;
    std::string knn_error;
    if (std::any_of(config.methods.begin(), config.methods.end(),
                    [](const MethodConfig& m) { return m.name == "knn"; })) {
        try {
            knn = knn_fit(data.id_train);
        } catch (const Error& e) {
            knn_error = std::string("fitting knn index: ") + e.what();
        }
    }

    report.norms.push_back(norm_stats(data.id_test, config.layer, "id_test"));
    for (const auto& ood : data.ood_sets) {
        if (ood.load_error.empty()) {
            report.norms.push_back(norm_stats(ood.features, config.layer, ood.name));
        }
    }

    const Index n_id = data.id_test.rows();
    std::vector<std::vector<std::vector<Index>>> subsets(data.ood_sets.size());
    for (std::size_t s = 0; s < data.ood_sets.size(); ++s) {
        if (!data.ood_sets[s].load_error.empty()) {
            continue;
        }
        for (int r = 0; r < config.runs; ++r) {
            subsets[s].push_back(subsample_indices(data.ood_sets[s].features.rows(), n_id, config.seed, r));
        }
    }

    const auto inputs_for = [&](const MatrixXr& features, const MatrixXr* logits) {
        ScoreInputs<double> in;
        in.features = &features;
        in.logits = logits;
        in.head = data.head ? &*data.head : nullptr;
        in.stats = stats ? &*stats : nullptr;
        in.knn = knn ? &*knn : nullptr;
        return in;
    };
    const auto fit_error_for = [&](const MethodConfig& m) -> std::string {
        if (needs_stats(m) && !stats) {
            return stats_error;
        }
        if (m.name == "knn" && !knn) {
            return knn_error;
        }
        return {};
    };
    const auto fail_cell = [&](const MethodConfig& m, const std::string& ood_set, const std::string& error) {
        for (int r = 0; r < config.runs; ++r) {
            report.rows.push_back({m.label(), ood_set, config.layer, r, std::nullopt, error});
        }
    };
    const auto with_head_context = [&](const std::string& what) {
        if (data.head_error.empty()) {
            return what;
        }
        return what + " (head unavailable: " + data.head_error + ")";
    };

    for (const auto& method : config.methods) {
        std::string method_error = fit_error_for(method);
        ScoreVector<double> id_scores;
        if (method_error.empty()) {
            try {
                const MatrixXr* id_logits = data.id_test_logits ? &*data.id_test_logits : nullptr;
                id_scores = score(method, inputs_for(data.id_test, id_logits));
            } catch (const Error& e) {
                method_error = with_head_context(std::string("scoring id_test: ") + e.what());
            }
        }

        for (std::size_t s = 0; s < data.ood_sets.size(); ++s) {
            const auto& ood = data.ood_sets[s];
            if (!method_error.empty()) {
                fail_cell(method, ood.name, method_error);
                continue;
            }
            if (!ood.load_error.empty()) {
                fail_cell(method, ood.name, cell_error_prefix("loading") + ood.load_error);
                continue;
            }
            std::vector<ReportRow> cell;
            try {
                for (int r = 0; r < config.runs; ++r) {
                    const auto& rows = subsets[s][static_cast<std::size_t>(r)];
                    const MatrixXr features = gather_rows(ood.features, rows);
                    std::optional<MatrixXr> logits;
                    if (ood.logits) {
                        logits = gather_rows(*ood.logits, rows);
                    }
                    const auto ood_scores = score(method, inputs_for(features, logits ? &*logits : nullptr));
                    cell.push_back({method.label(), ood.name, config.layer, r,
                                    evaluate_pair(id_scores.scores, ood_scores.scores, config.tpr_target),
                                    {}});
                }
            } catch (const Error& e) {
                fail_cell(method, ood.name, with_head_context(std::string("scoring ") + ood.name + ": " + e.what()));
                continue;
            }
            report.rows.insert(report.rows.end(), cell.begin(), cell.end());
        }
    }
    report.aggregates = aggregate_rows(report.rows);
    return report;
}

RunReport run_benchmark(const BenchmarkManifest& manifest) {
    return run_benchmark(load_benchmark_data(manifest), config_from_manifest(manifest));
}

RunReport layer_sweep(const BenchmarkManifest& manifest) {
    if (manifest.layers.size() < 2) {
        throw ValidationError("layer sweep needs at least 2 layer groups, manifest declares " +
                              std::to_string(manifest.layers.size()));
    }
    // Load everything first so a bad group fails before any work is done.
    std::vector<BenchmarkData> data;
    for (const auto& layer : manifest.layers) {
        data.push_back(load_layer_data(manifest, layer));
    }
    RunReport out;
    auto cfg = config_from_manifest(manifest);
    out.seed = cfg.seed;
    out.runs = cfg.runs;
    out.methods = cfg.methods;
    for (std::size_t i = 0; i < manifest.layers.size(); ++i) {
        cfg.layer = manifest.layers[i].name;
        auto r = run_benchmark(data[i], cfg);
        out.rows.insert(out.rows.end(), r.rows.begin(), r.rows.end());
        out.norms.insert(out.norms.end(), r.norms.begin(), r.norms.end());
    }
    out.aggregates = aggregate_rows(out.rows);
    return out;
}

AccuracyReport head_ablation(const BenchmarkData& data, const BenchmarkConfig& config) {
    if (!data.head) {
        throw ConfigError("head ablation requires head weights" +
                          (data.head_error.empty() ? std::string() : " (" + data.head_error + ")"));
    }
    if (!data.test_labels) {
        throw ConfigError("head ablation requires id_test labels");
    }
    const auto& head = *data.head;
    if (head.num_classes() != data.train_labels.num_classes) {
        throw ValidationError("head has " + std::to_string(head.num_classes()) + " classes but labels have " +
                              std::to_string(data.train_labels.num_classes));
    }
    const MatrixXr means = fit_class_means(data.id_train, data.train_labels).means;

    AccuracyReport report;
    report.seed = config.seed;
    report.runs = config.runs;

    const auto mode_scores = [&](PredictionHeadMode mode, const MatrixXr& features) {
        switch (mode) {
            case PredictionHeadMode::standard: return score_maxlogit(head_logits(features, head));
            case PredictionHeadMode::cw: return score_cosine_weights(features, head);
            case PredictionHeadMode::cm: break;
        }
        return score_ctm(features, means);
    };

    const Index n_id = data.id_test.rows();
    for (const auto mode : {PredictionHeadMode::standard, PredictionHeadMode::cw, PredictionHeadMode::cm}) {
        AblationModeResult res;
        res.mode = mode;
        const auto pred = head_predict(data.id_test, head, &means, mode);
        Index correct = 0;
        for (std::size_t i = 0; i < pred.labels.size(); ++i) {
            correct += pred.labels[i] == data.test_labels->labels[i] ? 1 : 0;
        }
        res.accuracy = static_cast<double>(correct) / static_cast<double>(n_id);

        const auto id_scores = mode_scores(mode, data.id_test);
        for (const auto& ood : data.ood_sets) {
            AblationOodResult o;
            o.ood_set = ood.name;
            if (!ood.load_error.empty()) {
                o.error = "loading: " + ood.load_error;
                res.ood.push_back(std::move(o));
                continue;
            }
            try {
                for (int r = 0; r < config.runs; ++r) {
                    const auto rows = subsample_indices(ood.features.rows(), n_id, config.seed, r);
                    const auto ood_scores = mode_scores(mode, gather_rows(ood.features, rows));
                    o.auroc_runs.push_back(auroc(id_scores.scores, ood_scores.scores));
                }
                std::tie(o.auroc_mean, o.auroc_std) = mean_and_std(o.auroc_runs);
            } catch (const Error& e) {
                o.auroc_runs.clear();
                o.error = e.what();
            }
            res.ood.push_back(std::move(o));
        }
        report.modes.push_back(std::move(res));
    }
    return report;
}

AccuracyReport head_ablation(const BenchmarkManifest& manifest) {
    if (!manifest.head) {
        throw ConfigError("head ablation requires a 'head' entry in the manifest");
    }
    if (!manifest.id_test.labels) {
        throw ConfigError("head ablation requires 'id_test.labels' in the manifest");
    }
    return head_ablation(load_benchmark_data(manifest), config_from_manifest(manifest));
}

}  // namespace ctm
