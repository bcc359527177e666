#pragma once

#include <optional>
#include <string>

namespace ctm {

/// One scoring method and its hyperparameters. `k` is set only for knn and
/// `temperature` only for energy.
struct MethodConfig {
    std::string name;
    std::optional<int> k;
    std::optional<double> temperature;

    /// Stable display label, e.g. "ctm", "knn(k=50)", "energy(T=1)".
    std::string label() const;
};

MethodConfig parse_method_config(const std::string& name, std::optional<int> k = std::nullopt,
                                 std::optional<double> temperature = std::nullopt);

}  // namespace ctm
