#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "prba/experiments.hpp"

namespace {

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stoi(item));
    return out;
}

std::vector<std::string> parse_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

struct CommonFlags {
    std::string config_path;
    std::string preset;
    long long seed = -1;
    std::string out = "out";
    std::vector<std::string> checkpoints;
    std::string methods;
    long episodes = 0;
    int threads = 1;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "config file (key = value lines)");
    cmd->add_option("--preset", f.preset, "desk | paper");
    cmd->add_option("--seed", f.seed, "experiment seed");
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--checkpoint", f.checkpoints, "METHOD=PATH (repeatable)");
    cmd->add_option("--methods", f.methods, "comma list: transformer,gru,nonadaptive,perfect-csi");
    cmd->add_option("--episodes", f.episodes, "evaluation episodes");
    cmd->add_option("--threads", f.threads, "worker threads (0 = auto, 1 = reproducible)");
    cmd->add_option("--set", f.overrides, "KEY=VALUE config override (repeatable)");
}

prba::RunContext make_context(const CommonFlags& f) {
    std::string text;
    if (!f.config_path.empty()) {
        std::ifstream in(f.config_path);
        if (!in) throw prba::IoError("cannot open config file " + f.config_path);
        std::stringstream ss;
        ss << in.rdbuf();
        text = ss.str();
    }
    if (!f.preset.empty()) text += "\npreset = " + f.preset + "\n";
    prba::RunContext ctx;
    ctx.config = prba::parse_config_text(text);
    for (const auto& kv : f.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw prba::ParseError("--set expects KEY=VALUE, got '" + kv + "'");
        prba::set_config_value(ctx.config, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (f.seed >= 0) prba::set_config_value(ctx.config, "seed", std::to_string(f.seed));
    ctx.config.validate();
    ctx.out = f.out;
    ctx.config.output_dir = f.out;
    ctx.threads = f.threads;
    ctx.episodes = f.episodes;
    ctx.methods = parse_list(f.methods);
    for (const auto& c : f.checkpoints) {
        const auto eq = c.find('=');
        if (eq == std::string::npos) {
            const auto j = prba::read_json_file(c);
            ctx.checkpoints[j.at("kind").get<std::string>()] = c;
        } else {
            ctx.checkpoints[c.substr(0, eq)] = c.substr(eq + 1);
        }
    }
    ctx.log = &std::cerr;
    return ctx;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Polarization-reconfigurable beam alignment lab"};
    app.require_subcommand(1);

    CommonFlags flags;
    long count = 100;
    int grid = 32;
    std::string paths = "1,3,5";
    std::vector<std::string> matched;
    std::string heads;
    bool independent = false;

    auto* gen = app.add_subcommand("gen-channels", "write a channel corpus");
    add_common(gen, flags);
    gen->add_option("--count", count, "number of channels");

    auto* tr = app.add_subcommand("train", "train a policy pair (model.kind)");
    add_common(tr, flags);

    auto* ev = app.add_subcommand("eval", "per-stage average gain for several methods");
    add_common(ev, flags);
    ev->add_flag("--independent", independent, "independent noise/channels per method");

    auto* sw = app.add_subcommand("sweep-paths", "gain vs number of paths");
    add_common(sw, flags);
    sw->add_option("--paths", paths, "comma list of path counts");
    sw->add_option("--matched", matched, "P=PATH checkpoint trained at P paths (repeatable)");

    auto* in = app.add_subcommand("interpret", "array responses, attention, head ablation");
    add_common(in, flags);
    in->add_option("--heads", heads, "comma list of head counts (default 1..M)");

    auto* orc = app.add_subcommand("oracle", "IPO vs brute-force grid report");
    add_common(orc, flags);
    orc->add_option("--count", count, "number of channels");
    orc->add_option("--grid", grid, "grid points per angle");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        auto ctx = make_context(flags);
        ctx.independent_noise = independent;
        for (const auto& m : matched) {
            const auto eq = m.find('=');
            if (eq == std::string::npos) throw prba::ParseError("--matched expects P=PATH");
            ctx.checkpoints["P=" + m.substr(0, eq)] = m.substr(eq + 1);
        }
        if (*gen) prba::run_gen_channels(ctx, count);
        else if (*tr) prba::run_train(ctx);
        else if (*ev) prba::run_eval(ctx);
        else if (*sw) prba::run_sweep_paths(ctx, parse_int_list(paths));
        else if (*in) prba::run_interpret(ctx, parse_int_list(heads));
        else if (*orc) prba::run_oracle(ctx, count, grid);
    } catch (const prba::Error& e) {
        std::cerr << "error [" << e.category() << "]: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error [internal]: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
