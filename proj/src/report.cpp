#include "ctm/harness.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace ctm {

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (const char c : s) {
        if (c == '"') {
            out += "\"\"";
        } else if (c == '\n' || c == '\r') {
            out += ' ';
        } else {
            out += c;
        }
    }
    out += '"';
    return out;
}

std::string percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
    return buf;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

template <typename T>
std::vector<std::string> unique_in_order(const std::vector<T>& items, std::string T::*field) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& it : items) {
        if (seen.insert(it.*field).second) {
            out.push_back(it.*field);
        }
    }
    return out;
}

void write_text(const std::string& text, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << text;
    if (!out.flush()) {
        throw IoError("write failed for " + path.string());
    }
}

std::string run_report_csv(const RunReport& report) {
    std::ostringstream out;
    out << "kind,layer,method,ood_set,run,runs,n_id,n_ood,threshold,fpr95,auroc,aupr_in,aupr_out,"
           "fpr95_std,auroc_std,aupr_in_std,aupr_out_std,error\n";
    for (const auto& r : report.rows) {
        out << "run," << csv_field(r.layer) << ',' << csv_field(r.method) << ',' << csv_field(r.ood_set)
            << ',' << r.run << ",,";
        if (r.metrics) {
            const auto& m = *r.metrics;
            out << m.n_id << ',' << m.n_ood << ',' << format_exact(m.threshold_lambda) << ','
                << format_exact(m.fpr_at_tpr) << ',' << format_exact(m.auroc) << ','
                << format_exact(m.aupr_in) << ',' << format_exact(m.aupr_out);
        } else {
            out << ",,,,,,";
        }
        out << ",,,,," << csv_field(r.error) << '\n';
    }
    for (const auto& a : report.aggregates) {
        out << "aggregate," << csv_field(a.layer) << ',' << csv_field(a.method) << ','
            << csv_field(a.ood_set) << ",," << a.runs << ",,,,";
        if (a.runs > 0) {
            out << format_exact(a.fpr_mean) << ',' << format_exact(a.auroc_mean) << ','
                << format_exact(a.aupr_in_mean) << ',' << format_exact(a.aupr_out_mean) << ','
                << format_exact(a.fpr_std) << ',' << format_exact(a.auroc_std) << ','
                << format_exact(a.aupr_in_std) << ',' << format_exact(a.aupr_out_std);
        } else {
            out << ",,,,,,,";
        }
        out << ',' << csv_field(a.error) << '\n';
    }
    return out.str();
}

std::string run_report_markdown(const RunReport& report) {
    std::ostringstream out;
    const auto layers = unique_in_order(report.aggregates, &AggregateRow::layer);
    const auto methods = unique_in_order(report.aggregates, &AggregateRow::method);
    const auto sets = unique_in_order(report.aggregates, &AggregateRow::ood_set);

    out << "OOD detection results (seed " << report.seed << ", " << report.runs
        << (report.runs == 1 ? " run" : " runs") << "; values are percentages, averaged over runs)\n";
    for (const auto& layer : layers) {
        out << '\n';
        if (!layer.empty()) {
            out << "### Layer: " << layer << "\n\n";
        }
        out << "| Method |";
        for (const auto& s : sets) {
            out << ' ' << s << " FPR95↓ | " << s << " AUROC↑ |";
        }
        out << " Average FPR95↓ | Average AUROC↑ |\n|---|";
        for (std::size_t i = 0; i < sets.size() + 1; ++i) {
            out << "---:|---:|";
        }
        out << '\n';
        for (const auto& method : methods) {
            out << "| " << method << " |";
            double fpr_sum = 0.0;
            double auroc_sum = 0.0;
            bool complete = true;
            for (const auto& s : sets) {
                const auto it = std::find_if(report.aggregates.begin(), report.aggregates.end(),
                                             [&](const AggregateRow& a) {
                                                 return a.layer == layer && a.method == method && a.ood_set == s;
                                             });
                if (it == report.aggregates.end() || it->runs == 0) {
                    out << " error | error |";
                    complete = false;
                    continue;
                }
                out << ' ' << percent(it->fpr_mean) << " | " << percent(it->auroc_mean) << " |";
                fpr_sum += it->fpr_mean;
                auroc_sum += it->auroc_mean;
            }
            if (complete && !sets.empty()) {
                const auto n = static_cast<double>(sets.size());
                out << ' ' << percent(fpr_sum / n) << " | " << percent(auroc_sum / n) << " |\n";
            } else {
                out << " n/a | n/a |\n";
            }
        }
    }

    if (!report.norms.empty()) {
        out << "\nFeature norms\n\n| Layer | Dataset | n | mean | std | min | max |\n"
               "|---|---|---:|---:|---:|---:|---:|\n";
        for (const auto& n : report.norms) {
            out << "| " << (n.layer.empty() ? "-" : n.layer) << " | " << n.dataset << " | " << n.n << " | "
                << fixed(n.mean, 4) << " | " << fixed(n.stddev, 4) << " | " << fixed(n.min, 4) << " | "
                << fixed(n.max, 4) << " |\n";
        }
    }

    std::vector<std::string> errors;
    for (const auto& a : report.aggregates) {
        if (!a.error.empty()) {
            errors.push_back((a.layer.empty() ? "" : a.layer + " / ") + a.method + " / " + a.ood_set +
                             ": " + a.error);
        }
    }
    if (!errors.empty()) {
        out << "\nErrors\n\n";
        for (const auto& e : errors) {
            out << "- " << e << '\n';
        }
    }
    return out.str();
}

std::string accuracy_report_csv(const AccuracyReport& report) {
    std::ostringstream out;
    out << "kind,mode,ood_set,run,accuracy,auroc,auroc_std,error\n";
    for (const auto& m : report.modes) {
        out << "accuracy," << to_string(m.mode) << ",,," << format_exact(m.accuracy) << ",,,\n";
    }
    for (const auto& m : report.modes) {
        for (const auto& o : m.ood) {
            for (std::size_t r = 0; r < o.auroc_runs.size(); ++r) {
                out << "run," << to_string(m.mode) << ',' << csv_field(o.ood_set) << ',' << r << ",,"
                    << format_exact(o.auroc_runs[r]) << ",,\n";
            }
        }
    }
    for (const auto& m : report.modes) {
        for (const auto& o : m.ood) {
            out << "aggregate," << to_string(m.mode) << ',' << csv_field(o.ood_set) << ",,,";
            if (o.error.empty()) {
                out << format_exact(o.auroc_mean) << ',' << format_exact(o.auroc_std) << ',';
            } else {
                out << ",," << csv_field(o.error);
            }
            out << '\n';
        }
    }
    return out.str();
}

std::string accuracy_report_markdown(const AccuracyReport& report) {
    std::ostringstream out;
    out << "Test accuracy and OOD detection AUROC per prediction head (percentages)\n\n| Head | Accuracy |";
    std::vector<std::string> sets;
    if (!report.modes.empty()) {
        for (const auto& o : report.modes.front().ood) {
            sets.push_back(o.ood_set);
        }
    }
    for (const auto& s : sets) {
        out << ' ' << s << " AUROC↑ |";
    }
    out << " Average AUROC↑ |\n|---|---:|";
    for (std::size_t i = 0; i < sets.size() + 1; ++i) {
        out << "---:|";
    }
    out << '\n';
    for (const auto& m : report.modes) {
        out << "| " << to_string(m.mode) << " | " << percent(m.accuracy) << " |";
        double sum = 0.0;
        bool complete = true;
        for (const auto& o : m.ood) {
            if (!o.error.empty()) {
                out << " error |";
                complete = false;
            } else {
                out << ' ' << percent(o.auroc_mean) << " |";
                sum += o.auroc_mean;
            }
        }
        if (complete && !m.ood.empty()) {
            out << ' ' << percent(sum / static_cast<double>(m.ood.size())) << " |\n";
        } else {
            out << " n/a |\n";
        }
    }
    return out.str();
}

}  // namespace

std::string format_exact(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

ReportFormat parse_report_format(const std::string& name) {
    if (name == "csv") {
        return ReportFormat::csv;
    }
    if (name == "markdown" || name == "md") {
        return ReportFormat::markdown;
    }
    throw ValidationError("unknown report format '" + name + "' (expected csv or markdown)");
}

std::string format_report(const RunReport& report, ReportFormat format) {
    return format == ReportFormat::csv ? run_report_csv(report) : run_report_markdown(report);
}

std::string format_report(const AccuracyReport& report, ReportFormat format) {
    return format == ReportFormat::csv ? accuracy_report_csv(report) : accuracy_report_markdown(report);
}

void emit_report(const RunReport& report, ReportFormat format, const std::filesystem::path& path) {
    write_text(format_report(report, format), path);
}

void emit_report(const AccuracyReport& report, ReportFormat format, const std::filesystem::path& path) {
    write_text(format_report(report, format), path);
}

void write_roc_csv(const std::vector<std::pair<double, double>>& roc, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "fpr,tpr\n";
    for (const auto& [fpr, tpr] : roc) {
        out << format_exact(fpr) << ',' << format_exact(tpr) << '\n';
    }
    write_text(out.str(), path);
}

}  // namespace ctm
