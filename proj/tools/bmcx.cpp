// Command-line front end: config-driven training runs, evaluation sweeps over
// the context parameter, and SVG rendering of sweep CSVs.
//
//   bmcx run <config.json>
//   bmcx eval <checkpoint> --model m.json --data d.json --context risk ...
//   bmcx plot <result.csv>
//
// Exit codes: 0 ok, 1 runtime failure, 2 config error.

#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bmcx/bmcx.hpp"

namespace {

bmcx::json load_json_file(const std::string& path, const char* what) {
    std::ifstream f(path);
    if (!f) throw bmcx::ConfigError(std::string("config: cannot open ") + what + " file " + path);
    bmcx::json j;
    try {
        f >> j;
    } catch (const bmcx::json::exception& e) {
        throw bmcx::ConfigError(std::string("config: ") + path + " is not valid JSON: " + e.what());
    }
    return j;
}

int cmd_run(const std::string& config_path) {
    const bmcx::ExperimentConfig cfg = bmcx::load_experiment_config(config_path);
    bmcx::run_experiment(cfg);
    std::cout << "run complete: " << bmcx::resolve_output_dir(cfg.output_dir).string() << "\n";
    return 0;
}

struct EvalArgs {
    std::string checkpoint;
    std::string model_path;
    std::string data_path;
    std::string context = "risk";
    double beta = 1.0;
    std::string corruption = "gaussian-noise";
    double gamma = 1.0;
    int64_t grid = 21;
    std::string out = "eval-out";
    uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& args) {
    bmcx::json j;
    j["experiment"] = "eval-sweep";
    j["seed"] = args.seed;
    j["output_dir"] = args.out;
    j["model"] = load_json_file(args.model_path, "model");
    j["dataset"] = load_json_file(args.data_path, "dataset");
    bmcx::json ctx;
    ctx["kind"] = args.context;
    if (args.context == "risk") ctx["beta"] = args.beta;
    if (args.context == "corruption") {
        ctx["corruption"] = args.corruption;
        ctx["gamma"] = args.gamma;
    }
    j["context"] = ctx;
    j["eval"] = {{"checkpoint", args.checkpoint}, {"grid", args.grid}};
    const bmcx::ExperimentConfig cfg = bmcx::parse_experiment_config(j);
    bmcx::run_experiment(cfg);
    std::cout << "sweep written under " << bmcx::resolve_output_dir(cfg.output_dir).string() << "\n";
    return 0;
}

int cmd_plot(const std::string& csv_path) {
    const auto files = bmcx::emit_plots(csv_path);
    for (const auto& f : files) std::cout << "wrote " << f << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"context-adaptive bridge-mode training harness"};
    app.require_subcommand(1);

    std::string config_path;
    CLI::App* run = app.add_subcommand("run", "execute an experiment config");
    run->add_option("config", config_path, "experiment config (strict JSON)")->required();

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "sweep a checkpoint across the context grid");
    eval->add_option("checkpoint", eval_args.checkpoint, "curve/model/planar checkpoint")->required();
    eval->add_option("--model", eval_args.model_path, "model spec JSON file")->required();
    eval->add_option("--data", eval_args.data_path, "dataset config JSON file")->required();
    eval->add_option("--context", eval_args.context, "risk | corruption | shift");
    eval->add_option("--beta", eval_args.beta, "risk up-weight");
    eval->add_option("--corruption", eval_args.corruption, "gaussian-noise | contrast");
    eval->add_option("--gamma", eval_args.gamma, "corruption severity scale");
    eval->add_option("--grid", eval_args.grid, "number of t grid points");
    eval->add_option("--out", eval_args.out, "output directory");
    eval->add_option("--seed", eval_args.seed, "evaluation seed");

    std::string csv_path;
    CLI::App* plot = app.add_subcommand("plot", "render sweep CSV as SVG line charts");
    plot->add_option("csv", csv_path, "sweep result CSV")->required();

    try {
        app.parse(argc, argv);
        if (run->parsed()) return cmd_run(config_path);
        if (eval->parsed()) return cmd_eval(eval_args);
        return cmd_plot(csv_path);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    } catch (const bmcx::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
