#include "prba/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace prba {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

long to_long(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    long out = 0;
    try {
        out = std::stol(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty()) throw ParseError(key + ": expected an integer, got '" + v + "'");
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty()) throw ParseError(key + ": expected a number, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ParseError(key + ": expected a boolean, got '" + v + "'");
}

std::size_t to_count(const std::string& key, const std::string& v) {
    const long n = to_long(key, v);
    if (n < 0) throw ValidationError(key + " must be >= 0");
    return static_cast<std::size_t>(n);
}

}  // namespace

void ExperimentConfig::validate() const {
    channel.validate();
    protocol.validate();
    model.validate();
    train.validate();
    if (model.max_stages < protocol.n_stages)
        throw ValidationError("model.max_stages (" + std::to_string(model.max_stages) +
                              ") is smaller than protocol.n_stages (" +
                              std::to_string(protocol.n_stages) + ")");
    if (model.kind == PolicyKind::nonadaptive && model.max_stages != protocol.n_stages)
        throw ValidationError("model.max_stages must equal protocol.n_stages for the non-adaptive policy");
}

ExperimentConfig preset_config(const std::string& name) {
    ExperimentConfig c;
    c.preset = name;
    if (name == "desk") {
        c.channel.n_tx = 16;
        c.channel.n_rx = 8;
        c.channel.n_paths = 1;
        c.protocol = ProtocolConfig::from_snr_db(0.0, 6);
        c.model.d_emb = 64;
        c.model.n_heads = 4;
        c.model.n_layers = 2;
        c.model.ffn_hidden = 128;
        c.model.mlp_hidden = 128;
        c.model.max_stages = 6;
        c.train.lr0 = 3e-4;
        c.train.gamma = 0.99995;
        c.train.batch_size = 64;
        c.train.batches_per_epoch = 100;
        c.train.patience_epochs = 50;
        c.train.max_epochs = 400;
    } else if (name == "paper") {
        c.channel.n_tx = 64;
        c.channel.n_rx = 32;
        c.channel.n_paths = 1;
        c.protocol = ProtocolConfig::from_snr_db(0.0, 10);
        c.model.d_emb = 320;
        c.model.n_heads = 5;
        c.model.n_layers = 2;
        c.model.ffn_hidden = 640;
        c.model.mlp_hidden = 512;
        c.model.max_stages = 10;
        c.train.lr0 = 1e-4;
        c.train.gamma = 0.9999;
        c.train.batch_size = 1024;
        c.train.batches_per_epoch = 100;
        c.train.patience_epochs = 25;
        c.train.max_epochs = 10000;
        c.train.eval_episodes = 10000;
    } else {
        throw ValidationError("unknown preset '" + name + "' (expected desk or paper)");
    }
    return c;
}

void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& v) {
    if (key == "seed") {
        c.seed = static_cast<std::uint64_t>(to_long(key, v));
        c.train.seed = c.seed;
    } else if (key == "output_dir") {
        c.output_dir = v;
    } else if (key == "channel.n_tx") {
        c.channel.n_tx = to_count(key, v);
    } else if (key == "channel.n_rx") {
        c.channel.n_rx = to_count(key, v);
    } else if (key == "channel.n_paths") {
        c.channel.n_paths = to_count(key, v);
    } else if (key == "channel.chi") {
        c.channel.chi = to_double(key, v);
    } else if (key == "channel.chi_ant") {
        c.channel.chi_ant = to_double(key, v);
    } else if (key == "channel.psi_mode") {
        if (v == "uniform") c.channel.psi_mode = PsiMode::uniform;
        else if (v == "fixed") c.channel.psi_mode = PsiMode::fixed;
        else throw ParseError(key + ": expected uniform or fixed");
    } else if (key == "channel.psi_value") {
        c.channel.psi_value = to_double(key, v);
    } else if (key == "channel.path_gain_normalization") {
        if (v == "none") c.channel.path_gain_normalization = PathGainNormalization::none;
        else if (v == "sqrt_paths") c.channel.path_gain_normalization = PathGainNormalization::sqrt_paths;
        else throw ParseError(key + ": expected none or sqrt_paths");
    } else if (key == "channel.antenna_gain") {
        if (v == "printed") c.channel.antenna_gain = AntennaGainForm::printed;
        else if (v == "symmetric") c.channel.antenna_gain = AntennaGainForm::symmetric;
        else throw ParseError(key + ": expected printed or symmetric");
    } else if (key == "protocol.n_stages") {
        const bool synced = c.model.max_stages == c.protocol.n_stages;
        c.protocol.n_stages = static_cast<int>(to_long(key, v));
        if (synced) c.model.max_stages = c.protocol.n_stages;
    } else if (key == "protocol.snr_db") {
        c.protocol.sigma2_tx = c.protocol.sigma2_rx = std::pow(10.0, -to_double(key, v) / 10.0);
    } else if (key == "protocol.rho_tx") {
        c.protocol.rho_tx = to_double(key, v);
    } else if (key == "protocol.rho_rx") {
        c.protocol.rho_rx = to_double(key, v);
    } else if (key == "protocol.sigma2_tx") {
        c.protocol.sigma2_tx = to_double(key, v);
    } else if (key == "protocol.sigma2_rx") {
        c.protocol.sigma2_rx = to_double(key, v);
    } else if (key == "protocol.pilot_noise") {
        c.protocol.pilot_noise = to_bool(key, v);
    } else if (key == "protocol.skip_final_uplink") {
        c.protocol.skip_final_uplink = to_bool(key, v);
    } else if (key == "model.kind") {
        c.model.kind = policy_kind_from_name(v);
    } else if (key == "model.d_emb") {
        c.model.d_emb = static_cast<int>(to_long(key, v));
    } else if (key == "model.n_heads") {
        c.model.n_heads = static_cast<int>(to_long(key, v));
    } else if (key == "model.n_layers") {
        c.model.n_layers = static_cast<int>(to_long(key, v));
    } else if (key == "model.ffn_hidden") {
        c.model.ffn_hidden = static_cast<int>(to_long(key, v));
    } else if (key == "model.mlp_hidden") {
        c.model.mlp_hidden = static_cast<int>(to_long(key, v));
    } else if (key == "model.gru_hidden") {
        c.model.gru_hidden = static_cast<int>(to_long(key, v));
    } else if (key == "model.gru_input") {
        c.model.gru_input = static_cast<int>(to_long(key, v));
    } else if (key == "model.max_stages") {
        c.model.max_stages = static_cast<int>(to_long(key, v));
    } else if (key == "model.attention_scale") {
        if (v == "sqrt_d_emb") c.model.attention_scale = AttentionScale::sqrt_d_emb;
        else if (v == "sqrt_d_head") c.model.attention_scale = AttentionScale::sqrt_d_head;
        else throw ParseError(key + ": expected sqrt_d_emb or sqrt_d_head");
    } else if (key == "model.causal_mask") {
        c.model.causal_mask = to_bool(key, v);
    } else if (key == "model.literal_sum_beamformer") {
        c.model.literal_sum_beamformer = to_bool(key, v);
    } else if (key == "train.lr0") {
        c.train.lr0 = to_double(key, v);
    } else if (key == "train.gamma") {
        c.train.gamma = to_double(key, v);
    } else if (key == "train.batch_size") {
        c.train.batch_size = static_cast<int>(to_long(key, v));
    } else if (key == "train.batches_per_epoch") {
        c.train.batches_per_epoch = static_cast<int>(to_long(key, v));
    } else if (key == "train.patience_epochs") {
        c.train.patience_epochs = static_cast<int>(to_long(key, v));
    } else if (key == "train.max_epochs") {
        c.train.max_epochs = static_cast<int>(to_long(key, v));
    } else if (key == "train.max_steps") {
        c.train.max_steps = to_long(key, v);
    } else if (key == "train.eval_episodes") {
        c.train.eval_episodes = static_cast<int>(to_long(key, v));
    } else if (key == "train.threads") {
        c.train.threads = static_cast<int>(to_long(key, v));
    } else if (key == "train.per_stage_mean") {
        c.train.per_stage_mean = to_bool(key, v);
    } else {
        throw ParseError("unknown key '" + key + "'");
    }
}

ExperimentConfig parse_config_text(const std::string& text) {
    struct Line {
        int number;
        std::string key, value;
    };
    std::vector<Line> lines;
    std::istringstream in(text);
    std::string raw;
    int number = 0;
    std::string preset = "desk";
    while (std::getline(in, raw)) {
        ++number;
        const auto hash = raw.find('#');
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("line " + std::to_string(number) + ": expected 'key = value'");
        Line l{number, trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
        if (l.key.empty() || l.value.empty())
            throw ParseError("line " + std::to_string(number) + ": empty key or value");
        if (l.key == "preset")
            preset = l.value;
        else
            lines.push_back(std::move(l));
    }
    ExperimentConfig c = preset_config(preset);
    for (const auto& l : lines) {
        try {
            set_config_value(c, l.key, l.value);
        } catch (const ParseError& e) {
            throw ParseError("line " + std::to_string(l.number) + ": " + e.what());
        }
    }
    c.validate();
    return c;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

Json to_json(const ExperimentConfig& c) {
    return Json{{"preset", c.preset},
                {"seed", c.seed},
                {"output_dir", c.output_dir},
                {"channel", to_json(c.channel)},
                {"protocol", to_json(c.protocol)},
                {"model", to_json(c.model)},
                {"train", to_json(c.train)}};
}

ExperimentConfig experiment_config_from_json(const Json& j) {
    ExperimentConfig c;
    c.preset = j.at("preset").get<std::string>();
    c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    c.channel = channel_config_from_json(j.at("channel"));
    c.protocol = protocol_config_from_json(j.at("protocol"));
    c.model = model_config_from_json(j.at("model"));
    c.train = train_config_from_json(j.at("train"));
    return c;
}

std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string config_hash(const ExperimentConfig& config) {
    Json j = to_json(config);
    j.erase("output_dir");
    return fnv1a_hex(j.dump());
}

}  // namespace prba
