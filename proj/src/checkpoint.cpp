#include "prba/checkpoint.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace prba {

Json parameters_to_json(const ParameterSet& params) {
    Json tensors = Json::array();
    for (const auto& e : params.entries()) {
        tensors.push_back({{"name", e.name},
                           {"shape", {e.value.rows(), e.value.cols()}},
                           {"trainable", e.trainable},
                           {"values", std::vector<double>(e.value.data(), e.value.data() + e.value.size())}});
    }
    return tensors;
}

void load_parameters(ParameterSet& params, const Json& j) {
    if (!j.is_array()) throw IntegrityError("tensor list must be an array");
    std::set<std::string> seen;
    for (const auto& t : j) {
        const auto name = t.at("name").get<std::string>();
        if (!seen.insert(name).second) throw IntegrityError("duplicate tensor '" + name + "'");
        if (!params.contains(name)) throw IntegrityError("unexpected tensor '" + name + "'");
        auto& m = params.get_mutable(name);
        const auto shape = t.at("shape").get<std::vector<long>>();
        if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols())
            throw IntegrityError("tensor '" + name + "' has a shape that does not match the config");
        const auto values = t.at("values").get<std::vector<double>>();
        if (static_cast<long>(values.size()) != shape[0] * shape[1])
            throw IntegrityError("tensor '" + name + "' holds " + std::to_string(values.size()) +
                                 " values, expected " + std::to_string(shape[0] * shape[1]));
        std::copy(values.begin(), values.end(), m.data());
    }
    if (seen.size() != params.size()) throw IntegrityError("checkpoint is missing tensors");
}

Json checkpoint_to_json(const Checkpoint& c) {
    // artifacts must not depend on where they were written
    Json config_json = to_json(c.config);
    config_json.erase("output_dir");
    Json j{{"schema_version", kCheckpointSchemaVersion},
           {"kind", policy_kind_name(c.config.model.kind)},
           {"config", config_json},
           {"tx", parameters_to_json(c.policies.tx->parameters())},
           {"rx", parameters_to_json(c.policies.rx->parameters())},
           {"meta",
            {{"steps", c.meta.steps},
             {"best_loss", c.meta.best_loss},
             {"best_epoch", c.meta.best_epoch},
             {"epochs_run", c.meta.epochs_run}}}};
    if (c.adam_tx && c.adam_rx) j["adam"] = {{"tx", to_json(*c.adam_tx)}, {"rx", to_json(*c.adam_rx)}};
    return j;
}

Checkpoint checkpoint_from_json(const Json& j, std::optional<PolicyKind> expected) {
    if (!j.contains("schema_version") || !j.at("schema_version").is_number_integer())
        throw UnsupportedVersion("checkpoint has no schema_version");
    const int version = j.at("schema_version").get<int>();
    if (version != kCheckpointSchemaVersion)
        throw UnsupportedVersion("checkpoint schema_version " + std::to_string(version) +
                                 " is not supported (expected " +
                                 std::to_string(kCheckpointSchemaVersion) + ")");
    const PolicyKind kind = policy_kind_from_name(j.at("kind").get<std::string>());
    if (expected && *expected != kind)
        throw KindMismatch(std::string("checkpoint holds a ") + policy_kind_name(kind) +
                           " policy, expected " + policy_kind_name(*expected));
    Checkpoint c;
    c.config = experiment_config_from_json(j.at("config"));
    if (c.config.model.kind != kind) throw IntegrityError("checkpoint kind disagrees with its config");
    c.policies = make_policy_pair(c.config.model, static_cast<int>(c.config.channel.n_tx),
                                  static_cast<int>(c.config.channel.n_rx), c.config.seed);
    load_parameters(c.policies.tx->parameters(), j.at("tx"));
    load_parameters(c.policies.rx->parameters(), j.at("rx"));
    const auto& meta = j.at("meta");
    c.meta.steps = meta.at("steps").get<long>();
    c.meta.best_loss = meta.at("best_loss").get<double>();
    c.meta.best_epoch = meta.at("best_epoch").get<int>();
    c.meta.epochs_run = meta.at("epochs_run").get<int>();
    if (j.contains("adam")) {
        c.adam_tx = adam_state_from_json(j.at("adam").at("tx"));
        c.adam_rx = adam_state_from_json(j.at("adam").at("rx"));
    }
    return c;
}

Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    write_text_file(path, checkpoint_to_json(checkpoint).dump() + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<PolicyKind> expected) {
    return checkpoint_from_json(read_json_file(path), expected);
}

}  // namespace prba
