#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "permfm/permfm.hpp"

namespace {

struct Options {
    std::string config_path;
    std::string task;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out;
    std::string data;
    std::string checkpoint;
    std::size_t workers = 0;
    std::vector<std::size_t> k_sweep;
    std::string fault;
    bool resume = false;
};

permfm::RunConfig resolve(const Options& o) {
    permfm::RunConfig c;
    if (!o.config_path.empty()) c = permfm::load_config(o.config_path);
    else if (!o.task.empty()) c = permfm::RunConfig::defaults_for(permfm::parse_task(o.task));
    if (!o.task.empty() && !o.config_path.empty()) c.set("task", o.task);
    for (const auto& kv : o.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw permfm::ConfigError("--set expects key=value, got '" + kv + "'");
        c.set(permfm::detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
    }
    if (o.seed_set) c.seed = o.seed;
    if (!o.out.empty()) c.out_dir = o.out;
    if (!o.data.empty()) c.data_dir = o.data;
    if (!o.checkpoint.empty()) c.checkpoint = o.checkpoint;
    if (o.workers) c.workers = o.workers;
    if (!o.k_sweep.empty()) c.k_sweep = o.k_sweep;
    c.validate();
    return c;
}

void add_common(CLI::App* sub, Options& o) {
    sub->add_option("--config", o.config_path, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--task", o.task, "slap or sort (selects defaults when no config is given)");
    sub->add_option("--set", o.overrides, "override a config key (key=value), repeatable");
    sub->add_option_function<std::uint64_t>("--seed", [&o](const std::uint64_t& s) {
        o.seed = s;
        o.seed_set = true;
    }, "random seed");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--data", o.data, "dataset directory");
    sub->add_option("--checkpoint", o.checkpoint, "checkpoint path (default <out>/checkpoint.txt)");
    sub->add_option("--workers", o.workers, "instance-level worker threads");
    sub->add_option("--k-sweep", o.k_sweep, "sample counts K to evaluate")->delimiter(',');
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Flow matching over permutation matrices: data generation, training, evaluation, baselines."};
    app.require_subcommand(1);
    Options o;

    auto* gen = app.add_subcommand("gen", "generate train/val/test datasets and a manifest");
    auto* train = app.add_subcommand("train", "train the velocity network");
    auto* eval = app.add_subcommand("eval", "sample from a checkpoint and report metrics over the K sweep");
    auto* gs = app.add_subcommand("baseline-gs", "Gumbel-Sinkhorn baseline over the temperature sweep");
    auto* verify = app.add_subcommand("verify", "run the property suite");
    for (auto* s : {gen, train, eval, gs, verify}) add_common(s, o);
    train->add_flag("--resume", o.resume, "continue from the checkpoint");
    verify->add_option("--fault-inject", o.fault, "negative control (test only): center");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : permfm::exit_code::config;
    }

    try {
        const permfm::RunConfig c = resolve(o);
        if (gen->parsed()) permfm::cmd_gen(c);
        else if (train->parsed()) permfm::cmd_train(c, o.resume);
        else if (eval->parsed()) permfm::cmd_eval(c);
        else if (gs->parsed()) permfm::cmd_baseline_gs(c);
        else if (verify->parsed()) return permfm::cmd_verify(c, o.fault) ? permfm::exit_code::ok : permfm::exit_code::verification;
        return permfm::exit_code::ok;
    } catch (const permfm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return permfm::exit_code::config;
    } catch (const permfm::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return permfm::exit_code::data;
    } catch (const permfm::DimensionError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return permfm::exit_code::data;
    } catch (const permfm::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return permfm::exit_code::numeric;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return permfm::exit_code::data;
    }
}
