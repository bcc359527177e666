#include "commands.hpp"

#include "ctm/harness.hpp"
#include "ctm/influence.hpp"
#include "ctm/ingest.hpp"
#include "ctm/scorers.hpp"
#include "ctm/stats.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

namespace ctm::cli {

namespace {

namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitCellFailed = 1;
constexpr int kExitError = 2;

struct ReportOptions {
    std::string manifest;
    std::string out_dir;
    std::string format = "csv";
    std::optional<std::uint64_t> seed;
    std::optional<int> runs;
    bool roc = false;
};

void add_report_options(CLI::App* cmd, ReportOptions& opt) {
    cmd->add_option("--manifest", opt.manifest, "Benchmark manifest (JSON)")->required();
    cmd->add_option("--out", opt.out_dir, "Output directory (default: print to stdout)");
    cmd->add_option("--format", opt.format, "Report format")->check(CLI::IsMember({"csv", "markdown"}));
    cmd->add_option("--seed", opt.seed, "Override the manifest seed");
    cmd->add_option("--runs", opt.runs, "Override the manifest run count")->check(CLI::PositiveNumber);
}

BenchmarkManifest load_with_overrides(const ReportOptions& opt, std::ostream& err) {
    auto manifest = load_manifest(opt.manifest);
    for (const auto& w : manifest.warnings) {
        err << "warning: " << w << '\n';
    }
    if (opt.seed) {
        manifest.seed = *opt.seed;
    }
    if (opt.runs) {
        manifest.runs = *opt.runs;
    }
    return manifest;
}

/// Writes `text` to DIR/<stem>.<ext> or to `out` when no directory is given.
void deliver(const std::string& text, const ReportOptions& opt, const std::string& stem, std::ostream& out) {
    if (opt.out_dir.empty()) {
        out << text;
        return;
    }
    fs::create_directories(opt.out_dir);
    const auto path = fs::path(opt.out_dir) / (stem + (opt.format == "csv" ? ".csv" : ".md"));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f || !(f << text) || !f.flush()) {
        throw IoError("cannot write " + path.string());
    }
}

std::string sanitize(std::string s) {
    for (char& c : s) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') {
            c = '_';
        }
    }
    return s;
}

void write_rocs(const RunReport& report, const fs::path& dir) {
    fs::create_directories(dir);
    for (const auto& r : report.rows) {
        if (!r.metrics) {
            continue;
        }
        std::string name = "roc_" + sanitize(r.method) + "_" + sanitize(r.ood_set);
        if (!r.layer.empty()) {
            name += "_" + sanitize(r.layer);
        }
        name += "_run" + std::to_string(r.run) + ".csv";
        write_roc_csv(r.metrics->roc, dir / name);
    }
}

int finish_run_report(const RunReport& report, const ReportOptions& opt, std::ostream& out, std::ostream& err) {
    deliver(format_report(report, parse_report_format(opt.format)), opt, "report", out);
    if (opt.roc) {
        write_rocs(report, fs::path(opt.out_dir) / "roc");
    }
    if (!report.ok()) {
        for (const auto& a : report.aggregates) {
            if (!a.error.empty()) {
                err << "cell failed: " << (a.layer.empty() ? "" : a.layer + " / ") << a.method << " / "
                    << a.ood_set << ": " << a.error << '\n';
            }
        }
        return kExitCellFailed;
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct StatsOptions {
    std::string features;
    std::string labels;
    std::string out_dir;
    double eps_scale = 1e-6;
};

int cmd_stats(const StatsOptions& opt, std::ostream& out) {
    const MatrixXr train = read_array(opt.features);
    const LabelVector labels = read_labels(opt.labels);
    const auto stats = fit_class_stats(train, labels, opt.eps_scale);
    fs::create_directories(opt.out_dir);
    save_class_stats(stats, opt.out_dir);
    out << "fitted " << stats.num_classes() << " classes, dimension " << stats.dim() << ", ridge "
        << format_exact(stats.regularization_eps) << " -> " << opt.out_dir << '\n';
    return kExitOk;
}

struct ScoreOptions {
    std::string method;
    std::string features;
    std::string stats_dir;
    std::string train;
    std::string labels;
    std::string head_w;
    std::string head_b;
    std::string logits;
    std::optional<int> k;
    std::optional<double> temperature;
    std::string out;
    std::string format;
};

int cmd_score(const ScoreOptions& opt, std::ostream& out) {
    const MethodConfig method = parse_method_config(opt.method, opt.k, opt.temperature);
    const MatrixXr features = read_array(opt.features);

    ScoreInputs<double> in;
    in.features = &features;

    std::optional<MatrixXr> logits;
    if (!opt.logits.empty()) {
        logits = read_array(opt.logits);
        in.logits = &*logits;
    }
    std::optional<LinearHead<double>> head;
    if (!opt.head_w.empty() || !opt.head_b.empty()) {
        if (opt.head_w.empty() || opt.head_b.empty()) {
            throw ConfigError("--head-w and --head-b must be given together");
        }
        head.emplace();
        head->W = read_array(opt.head_w);
        head->b = read_array(opt.head_b).reshaped();
        in.head = &*head;
    }
    std::optional<ClassStats<double>> stats;
    std::optional<MatrixXr> train;
    if (!opt.stats_dir.empty()) {
        stats = load_class_stats(opt.stats_dir);
    } else if (!opt.train.empty() && !opt.labels.empty() &&
               (method.name == "ctm" || method.name == "mahalanobis")) {
        train = read_array(opt.train);
        stats = fit_class_stats(*train, read_labels(opt.labels));
    }
    if (stats) {
        in.stats = &*stats;
    }
    std::optional<KnnIndex<double>> knn;
    if (method.name == "knn") {
        if (opt.train.empty()) {
            throw ConfigError("method knn requires --train features");
        }
        if (!train) {
            train = read_array(opt.train);
        }
        knn = knn_fit(*train);
        in.knn = &*knn;
    }

    const auto scores = score(method, in);
    const ArrayFormat format = opt.format.empty() ? format_for_path(opt.out) : parse_array_format(opt.format);
    write_scores(scores.scores, opt.out, format);
    out << "scored " << scores.size() << " rows with " << scores.method;
    if (!scores.degenerate_rows.empty()) {
        out << " (" << scores.degenerate_rows.size() << " zero-norm rows)";
    }
    out << " -> " << opt.out << '\n';
    return kExitOk;
}

int cmd_eval(const ReportOptions& opt, std::ostream& out, std::ostream& err) {
    if (opt.roc && opt.out_dir.empty()) {
        throw ConfigError("--roc requires --out");
    }
    const auto manifest = load_with_overrides(opt, err);
    return finish_run_report(run_benchmark(manifest), opt, out, err);
}

int cmd_sweep(const ReportOptions& opt, std::ostream& out, std::ostream& err) {
    if (opt.roc && opt.out_dir.empty()) {
        throw ConfigError("--roc requires --out");
    }
    const auto manifest = load_with_overrides(opt, err);
    return finish_run_report(layer_sweep(manifest), opt, out, err);
}

int cmd_ablate(const ReportOptions& opt, std::ostream& out, std::ostream& err) {
    const auto manifest = load_with_overrides(opt, err);
    const auto report = head_ablation(manifest);
    deliver(format_report(report, parse_report_format(opt.format)), opt, "ablation", out);
    return report.ok() ? kExitOk : kExitCellFailed;
}

struct KernelOptions {
    std::string manifest;
    std::optional<int> cls;
    std::string out;
};

void kernel_rows(std::ostream& csv, const std::string& name, const MatrixXr& features, const MatrixXr& means,
                 const LinearHead<double>& head, std::optional<int> cls) {
    const MatrixXr logits = head_logits(features, head);
    for (Index i = 0; i < features.rows(); ++i) {
        const VectorXr p = softmax(logits.row(i).transpose());
        const Index predicted = argmax_first(p);
        if (cls && predicted != *cls) {
            continue;
        }
        const auto kg = kernel_vs_class_mean(features.row(i).transpose(), p, means, predicted);
        const auto cos = cosine_similarity(means.row(predicted), features.row(i));
        csv << name << ',' << i << ',' << predicted << ',' << format_exact(kg.value) << ','
            << format_exact(cos.value) << ',' << format_exact(p(predicted)) << ','
            << (kg.degenerate ? 1 : 0) << '\n';
    }
}

int cmd_kernel(const KernelOptions& opt, std::ostream& out, std::ostream& err) {
    auto manifest = load_manifest(opt.manifest);
    for (const auto& w : manifest.warnings) {
        err << "warning: " << w << '\n';
    }
    if (!manifest.head) {
        throw ConfigError("kernel requires a 'head' entry in the manifest");
    }
    const auto data = load_benchmark_data(manifest);
    if (!data.head) {
        throw ConfigError("cannot load head: " + data.head_error);
    }
    const auto& head = *data.head;
    const MatrixXr means = fit_class_means(data.id_train, data.train_labels).means;
    if (means.rows() != head.num_classes()) {
        throw ValidationError("head has " + std::to_string(head.num_classes()) + " classes but labels have " +
                              std::to_string(means.rows()));
    }
    if (opt.cls && (*opt.cls < 0 || *opt.cls >= head.num_classes())) {
        throw ValidationError("--class " + std::to_string(*opt.cls) + " is outside [0, " +
                              std::to_string(head.num_classes() - 1) + "]");
    }

    const auto onehot = onehot_check(means, head);
    err << "one-hot check: " << onehot.num_one_hot << "/" << onehot.classes.size()
        << " class means predicted as their own class with probability >= " << onehot.threshold << '\n';

    std::ostringstream csv;
    csv << "dataset,row,class,k_g,cos_mean,p_k,degenerate\n";
    kernel_rows(csv, "id_test", data.id_test, means, head, opt.cls);
    int status = kExitOk;
    for (const auto& ood : data.ood_sets) {
        if (!ood.load_error.empty()) {
            err << "skipping OOD set " << ood.name << ": " << ood.load_error << '\n';
            status = kExitCellFailed;
            continue;
        }
        kernel_rows(csv, ood.name, ood.features, means, head, opt.cls);
    }
    if (opt.out.empty()) {
        out << csv.str();
    } else {
        std::ofstream f(opt.out, std::ios::binary | std::ios::trunc);
        if (!f || !(f << csv.str()) || !f.flush()) {
            throw IoError("cannot write " + opt.out);
        }
    }
    return status;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Post hoc OOD detection: class-mean cosine scoring, baselines, metrics and benchmarks"};
    app.require_subcommand(1);

    StatsOptions stats_opt;
    auto* stats = app.add_subcommand("stats", "Fit class means and tied covariance and persist them");
    stats->add_option("--features", stats_opt.features, "ID training features (.npy/.csv)")->required();
    stats->add_option("--labels", stats_opt.labels, "ID training labels (.npy/.csv)")->required();
    stats->add_option("--out", stats_opt.out_dir, "Output directory")->required();
    stats->add_option("--eps", stats_opt.eps_scale, "Relative ridge added before inversion");

    ScoreOptions score_opt;
    auto* score_cmd = app.add_subcommand("score", "Score a feature file with one method");
    score_cmd->add_option("--method", score_opt.method, "msp, maxlogit, energy, mahalanobis, knn or ctm")->required();
    score_cmd->add_option("--features", score_opt.features, "Features to score")->required();
    score_cmd->add_option("--stats", score_opt.stats_dir, "Directory written by the stats command");
    score_cmd->add_option("--train", score_opt.train, "ID training features (knn index, or stats fit)");
    score_cmd->add_option("--labels", score_opt.labels, "ID training labels (stats fit)");
    score_cmd->add_option("--head-w", score_opt.head_w, "Head weights W (C x m)");
    score_cmd->add_option("--head-b", score_opt.head_b, "Head bias b (C)");
    score_cmd->add_option("--logits", score_opt.logits, "Precomputed logits (n x C)");
    score_cmd->add_option("--k", score_opt.k, "knn: neighbour rank");
    score_cmd->add_option("--temperature,-T", score_opt.temperature, "energy: temperature");
    score_cmd->add_option("--out", score_opt.out, "Output score file")->required();
    score_cmd->add_option("--format", score_opt.format, "npy or csv (default: from --out extension)")
        ->check(CLI::IsMember({"npy", "csv"}));

    ReportOptions eval_opt;
    auto* eval = app.add_subcommand("eval", "Run the benchmark described by a manifest");
    add_report_options(eval, eval_opt);
    eval->add_flag("--roc", eval_opt.roc, "Also write per-run ROC curves under <out>/roc");

    ReportOptions ablate_opt;
    auto* ablate = app.add_subcommand("ablate-head", "Accuracy and AUROC of the standard, cw and cm heads");
    add_report_options(ablate, ablate_opt);

    ReportOptions sweep_opt;
    auto* sweep = app.add_subcommand("sweep-layers", "Run the benchmark for every layer group");
    add_report_options(sweep, sweep_opt);
    sweep->add_flag("--roc", sweep_opt.roc, "Also write per-run ROC curves under <out>/roc");

    KernelOptions kernel_opt;
    auto* kernel = app.add_subcommand("kernel", "Per-sample influence kernel against the predicted class mean");
    kernel->add_option("--manifest", kernel_opt.manifest, "Benchmark manifest (JSON)")->required();
    kernel->add_option("--class", kernel_opt.cls, "Only samples predicted as this class");
    kernel->add_option("--out", kernel_opt.out, "Output CSV (default: stdout)");

    std::vector<std::string> reversed(args.begin() + (args.empty() ? 0 : 1), args.end());
    std::reverse(reversed.begin(), reversed.end());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kExitOk : kExitError;
    }

    try {
        if (*stats) {
            return cmd_stats(stats_opt, out);
        }
        if (*score_cmd) {
            return cmd_score(score_opt, out);
        }
        if (*eval) {
            return cmd_eval(eval_opt, out, err);
        }
        if (*ablate) {
            return cmd_ablate(ablate_opt, out, err);
        }
        if (*sweep) {
            return cmd_sweep(sweep_opt, out, err);
        }
        if (*kernel) {
            return cmd_kernel(kernel_opt, out, err);
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitError;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitError;
    }
    return kExitError;
}

}  // namespace ctm::cli
