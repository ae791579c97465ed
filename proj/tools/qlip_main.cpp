#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "qlip/config.hpp"
#include "qlip/errors.hpp"
#include "qlip/pipeline.hpp"

namespace {

const char* kUsage =
    "usage: qlip <subcommand> [options]\n"
    "\n"
    "subcommands:\n"
    "  calibrate    fit the quality oracle and activation clip ranges\n"
    "  train-t2q    train the prompt-to-quality predictor\n"
    "  train-q2b    train the quality-to-bits allocator\n"
    "  sample       generate samples (sample.mode: qlip | uniform | fp)\n"
    "  evaluate     compute FAB / BitOPs / MMD^2 for a sampling run\n"
    "  report       render report.md plus plot CSVs from an evaluated run\n"
    "  ablate       sweep one axis and collect a consolidated CSV\n"
    "\n"
    "options:\n"
    "  --config PATH        config file ([section] headers, key = value lines)\n"
    "  --SECTION.KEY VALUE  override one config value (e.g. --q2b.lambda-bit 0.5)\n"
    "  --force              recompute the requested stage even when cached\n"
    "  --batch N            shorthand for --sample.batch N\n"
    "  --axis NAME          ablate: lambda_bit | group_size | variant | menu |\n"
    "                       quality_metric\n"
    "  --out DIR            report: write into DIR instead of the cache\n"
    "\n"
    "exit codes: 0 ok, 2 config error, 3 missing prerequisite, 4 numeric failure,\n"
    "1 anything else\n";

struct CliArgs {
    std::string subcommand;
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> overrides;
    std::string axis;
    std::string out;
    bool force = false;
    bool help = false;
};

CliArgs parse_cli(const std::vector<std::string>& args) {
    CliArgs cli;
    size_t i = 0;
    if (i < args.size() && args[i][0] != '-') cli.subcommand = args[i++];
    auto value_of = [&](const std::string& flag) {
        if (i + 1 >= args.size()) throw qlip::ConfigError(flag + " needs a value");
        return args[++i];
    };
    for (; i < args.size(); ++i) {
        const std::string& arg = args[i];
        if (arg == "--help" || arg == "-h") {
            cli.help = true;
        } else if (arg == "--force") {
            cli.force = true;
        } else if (arg == "--config") {
            cli.config_path = value_of(arg);
        } else if (arg == "--axis") {
            cli.axis = value_of(arg);
        } else if (arg == "--out") {
            cli.out = value_of(arg);
        } else if (arg == "--batch") {
            cli.overrides.emplace_back("sample.batch", value_of(arg));
        } else if (arg.rfind("--", 0) == 0 && arg.find('.') != std::string::npos) {
            cli.overrides.emplace_back(arg.substr(2), value_of(arg));
        } else {
            throw qlip::ConfigError("unknown option '" + arg + "'");
        }
    }
    return cli;
}

int run(const std::vector<std::string>& args) {
    const CliArgs cli = parse_cli(args);
    if (cli.help || cli.subcommand.empty()) {
        std::fputs(kUsage, cli.help ? stdout : stderr);
        if (cli.help) return 0;
        throw qlip::ConfigError("missing subcommand");
    }

    qlip::RunConfig cfg;
    if (!cli.config_path.empty()) cfg = qlip::parse_config_file(cli.config_path);
    for (const auto& [key, value] : cli.overrides) qlip::apply_override(cfg, key, value);
    qlip::finalize_config(cfg);

    qlip::Pipeline pipeline(cfg, cli.force);
    const auto announce = [](const char* stage, const qlip::StageResult& r) {
        std::printf("%s: %s%s\n", stage, r.dir.c_str(), r.cached ? " (cached)" : "");
    };

    if (cli.subcommand == "calibrate") {
        announce("calibrate", pipeline.calibrate());
    } else if (cli.subcommand == "train-t2q") {
        announce("train-t2q", pipeline.train_t2q());
    } else if (cli.subcommand == "train-q2b") {
        announce("train-q2b", pipeline.train_q2b());
    } else if (cli.subcommand == "sample") {
        announce("sample", pipeline.sample());
    } else if (cli.subcommand == "evaluate") {
        const qlip::StageResult r = pipeline.evaluate();
        announce("evaluate", r);
        std::FILE* f = std::fopen((r.dir + "/metrics.csv").c_str(), "rb");
        if (f != nullptr) {
            char buf[4096];
            size_t n;
            while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) std::fwrite(buf, 1, n, stdout);
            std::fclose(f);
        }
    } else if (cli.subcommand == "report") {
        std::printf("report: %s\n", pipeline.report(cli.out).c_str());
    } else if (cli.subcommand == "ablate") {
        if (cli.axis.empty()) throw qlip::ConfigError("ablate needs --axis");
        std::printf("ablate: %s\n", pipeline.ablate(cli.axis).c_str());
    } else {
        throw qlip::ConfigError("unknown subcommand '" + cli.subcommand + "'");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(std::vector<std::string>(argv + 1, argv + argc));
    } catch (const qlip::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const qlip::PrereqError& e) {
        std::fprintf(stderr, "prerequisite error: %s\n", e.what());
        return 3;
    } catch (const qlip::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
