#include "ctm/ingest.hpp"

#include <json.hpp>

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace ctm {

namespace {

using json = nlohmann::ordered_json;

const std::set<std::string> kTopLevelKeys = {"id_train", "id_test", "ood_sets", "head",
                                             "layers",   "methods", "seed",     "runs"};

class ManifestReader {
public:
    explicit ManifestReader(std::filesystem::path base) : base_(std::move(base)) {}

    std::filesystem::path path_at(const json& node, const std::string& key) const {
        if (!node.is_string()) {
            throw SchemaError("manifest: '" + key + "' must be a path string");
        }
        std::filesystem::path p = node.get<std::string>();
        if (p.is_relative()) {
            p = base_ / p;
        }
        p = p.lexically_normal();
        if (!std::filesystem::exists(p)) {
            throw ValidationError("manifest: '" + key + "' refers to missing file " + p.string());
        }
        return p;
    }

    const json& require(const json& obj, const std::string& key, const std::string& where) const {
        if (!obj.is_object() || !obj.contains(key)) {
            throw SchemaError("manifest: missing required key '" + where + key + "'");
        }
        return obj.at(key);
    }

    DatasetPaths dataset(const json& node, const std::string& key, bool labels_required) const {
        if (!node.is_object()) {
            throw SchemaError("manifest: '" + key + "' must be an object");
        }
        DatasetPaths out;
        out.features = path_at(require(node, "features", key + "."), key + ".features");
        if (node.contains("labels")) {
            out.labels = path_at(node.at("labels"), key + ".labels");
        } else if (labels_required) {
            throw SchemaError("manifest: missing required key '" + key + ".labels'");
        }
        if (node.contains("logits")) {
            out.logits = path_at(node.at("logits"), key + ".logits");
        }
        return out;
    }

    OodSetPaths ood_entry(const std::string& name, const json& node, const std::string& key) const {
        OodSetPaths out;
        out.name = name;
        if (node.is_string()) {
            out.features = path_at(node, key);
        } else if (node.is_object()) {
            out.features = path_at(require(node, "features", key + "."), key + ".features");
            if (node.contains("logits")) {
                out.logits = path_at(node.at("logits"), key + ".logits");
            }
        } else {
            throw SchemaError("manifest: '" + key + "' must be a path or an object");
        }
        return out;
    }

    /// Accepts {"name": path-or-object, ...} or [{"name": ..., "features": ...}, ...].
    std::vector<OodSetPaths> ood_sets(const json& node, const std::string& key) const {
        std::vector<OodSetPaths> out;
        if (node.is_object()) {
            for (const auto& [name, entry] : node.items()) {
                out.push_back(ood_entry(name, entry, key + "." + name));
            }
        } else if (node.is_array()) {
            for (std::size_t i = 0; i < node.size(); ++i) {
                const auto& entry = node[i];
                const auto& name = require(entry, "name", key + "[" + std::to_string(i) + "].");
                if (!name.is_string()) {
                    throw SchemaError("manifest: '" + key + "[" + std::to_string(i) +
                                      "].name' must be a string");
                }
                out.push_back(ood_entry(name.get<std::string>(), entry,
                                        key + "." + name.get<std::string>()));
            }
        } else {
            throw SchemaError("manifest: '" + key + "' must be an object or an array");
        }
        if (out.empty()) {
            throw SchemaError("manifest: '" + key + "' must name at least one OOD set");
        }
        std::set<std::string> seen;
        for (const auto& o : out) {
            if (!seen.insert(o.name).second) {
                throw SchemaError("manifest: duplicate OOD set name '" + o.name + "'");
            }
        }
        return out;
    }

    MethodConfig method(const json& node, std::size_t index) const {
        const std::string where = "methods[" + std::to_string(index) + "]";
        if (node.is_string()) {
            return parse_method_config(node.get<std::string>());
        }
        if (!node.is_object()) {
            throw SchemaError("manifest: '" + where + "' must be a string or an object");
        }
        const auto& name = require(node, "name", where + ".");
        if (!name.is_string()) {
            throw SchemaError("manifest: '" + where + ".name' must be a string");
        }
        std::optional<int> k;
        std::optional<double> temperature;
        for (const auto& [key, value] : node.items()) {
            if (key == "name") {
                continue;
            }
            if (key == "k") {
                if (!value.is_number_integer()) {
                    throw SchemaError("manifest: '" + where + ".k' must be an integer");
                }
                k = value.get<int>();
            } else if (key == "T" || key == "temperature") {
                if (!value.is_number()) {
                    throw SchemaError("manifest: '" + where + "." + key + "' must be a number");
                }
                temperature = value.get<double>();
            } else {
                throw SchemaError("manifest: unknown hyperparameter '" + where + "." + key + "'");
            }
        }
        return parse_method_config(name.get<std::string>(), k, temperature);
    }

private:
    std::filesystem::path base_;
};

}  // namespace

BenchmarkManifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("manifest: invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) {
        throw SchemaError("manifest: top level must be an object");
    }

    const ManifestReader reader(base_dir);
    BenchmarkManifest m;

    for (const auto& [key, value] : doc.items()) {
        if (!kTopLevelKeys.contains(key)) {
            m.warnings.push_back("manifest: ignoring unknown key '" + key + "'");
        }
    }

    m.id_train = reader.dataset(reader.require(doc, "id_train", ""), "id_train", true);
    m.id_test = reader.dataset(reader.require(doc, "id_test", ""), "id_test", false);
    m.ood_sets = reader.ood_sets(reader.require(doc, "ood_sets", ""), "ood_sets");

    if (doc.contains("head")) {
        const auto& head = doc.at("head");
        HeadPaths hp;
        hp.W = reader.path_at(reader.require(head, "W", "head."), "head.W");
        hp.b = reader.path_at(reader.require(head, "b", "head."), "head.b");
        m.head = hp;
    }

    if (doc.contains("layers")) {
        const auto& layers = doc.at("layers");
        if (!layers.is_object()) {
            throw SchemaError("manifest: 'layers' must be an object keyed by layer name");
        }
        for (const auto& [name, node] : layers.items()) {
            const std::string where = "layers." + name;
            LayerGroup g;
            g.name = name;
            g.id_train = reader.path_at(reader.require(node, "id_train", where + "."), where + ".id_train");
            g.id_test = reader.path_at(reader.require(node, "id_test", where + "."), where + ".id_test");
            g.ood_sets = reader.ood_sets(reader.require(node, "ood_sets", where + "."), where + ".ood_sets");
            m.layers.push_back(std::move(g));
        }
        for (const auto& g : m.layers) {
            if (g.ood_sets.size() != m.layers.front().ood_sets.size()) {
                throw ValidationError("manifest: layer '" + g.name + "' lists a different set of OOD sets than layer '" +
                                      m.layers.front().name + "'");
            }
            for (std::size_t i = 0; i < g.ood_sets.size(); ++i) {
                if (g.ood_sets[i].name != m.layers.front().ood_sets[i].name) {
                    throw ValidationError("manifest: layer '" + g.name + "' OOD set '" + g.ood_sets[i].name +
                                          "' does not match layer '" + m.layers.front().name + "'");
                }
            }
        }
    }

    if (doc.contains("methods")) {
        const auto& methods = doc.at("methods");
        if (!methods.is_array() || methods.empty()) {
            throw SchemaError("manifest: 'methods' must be a non-empty array");
        }
        for (std::size_t i = 0; i < methods.size(); ++i) {
            m.methods.push_back(reader.method(methods[i], i));
        }
        std::set<std::string> labels;
        for (const auto& cfg : m.methods) {
            if (!labels.insert(cfg.label()).second) {
                throw SchemaError("manifest: method '" + cfg.label() + "' is listed twice");
            }
        }
    } else {
        m.methods.push_back(parse_method_config("ctm"));
    }

    if (doc.contains("seed")) {
        const auto& seed = doc.at("seed");
        if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0)) {
            throw SchemaError("manifest: 'seed' must be a non-negative integer");
        }
        m.seed = seed.get<std::uint64_t>();
    }
    if (doc.contains("runs")) {
        const auto& runs = doc.at("runs");
        if (!runs.is_number_integer() || runs.get<std::int64_t>() < 1) {
            throw SchemaError("manifest: 'runs' must be a positive integer");
        }
        m.runs = runs.get<int>();
    }
    return m;
}

BenchmarkManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open manifest " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_manifest(buf.str(), path.parent_path());
}

}  // namespace ctm
