#include "ctm/method.hpp"

#include "ctm/types.hpp"

#include <charconv>
#include <cmath>
#include <set>

namespace ctm {

namespace {

const std::set<std::string> kMethodNames = {"msp",         "maxlogit", "energy",
                                            "mahalanobis", "knn",      "ctm"};

std::string format_number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace

std::string MethodConfig::label() const {
    if (k) {
        return name + "(k=" + std::to_string(*k) + ")";
    }
    if (temperature) {
        return name + "(T=" + format_number(*temperature) + ")";
    }
    return name;
}

MethodConfig parse_method_config(const std::string& name, std::optional<int> k,
                                 std::optional<double> temperature) {
    if (!kMethodNames.contains(name)) {
        throw SchemaError("unknown method '" + name +
                          "' (expected msp, maxlogit, energy, mahalanobis, knn or ctm)");
    }
    MethodConfig cfg;
    cfg.name = name;
    if (name == "knn") {
        if (!k) {
            throw SchemaError("method knn requires hyperparameter k");
        }
        if (*k < 1) {
            throw ValidationError("method knn: k must be positive, got " + std::to_string(*k));
        }
        cfg.k = k;
    } else if (k) {
        throw SchemaError("method " + name + " does not take hyperparameter k");
    }
    if (name == "energy") {
        const double t = temperature.value_or(1.0);
        if (!(t > 0.0) || !std::isfinite(t)) {
            throw ValidationError("method energy: T must be positive");
        }
        cfg.temperature = t;
    } else if (temperature) {
        throw SchemaError("method " + name + " does not take hyperparameter T");
    }
    return cfg;
}

}  // namespace ctm
