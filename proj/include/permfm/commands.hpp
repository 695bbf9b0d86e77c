#pragma once

#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "permfm/checkpoint.hpp"
#include "permfm/config.hpp"
#include "permfm/dataset_io.hpp"
#include "permfm/evalkit.hpp"
#include "permfm/flow.hpp"
#include "permfm/tasks.hpp"
#include "permfm/verify.hpp"

namespace permfm {

namespace fs = std::filesystem;

/// Runs body(i) for i in [0, count) on `workers` threads (interleaved). The
/// first exception by index is rethrown after all workers finish.
inline void parallel_for(std::size_t workers, std::size_t count, const std::function<void(std::size_t)>& body) {
    if (workers <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(count);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < count; i += workers) {
                try {
                    body(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline std::string comment_block(const std::string& text) {
    std::string out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) out += "# " + line + "\n";
    return out;
}

inline std::string split_path(const RunConfig& c, const std::string& split) { return c.data_dir + "/" + split + ".jsonl"; }

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

struct SplitSpec {
    std::string name;
    std::size_t clean = 0;
    std::size_t ambiguous = 0;
};

inline std::vector<SplitSpec> split_specs(const RunConfig& c) {
    auto frac_split = [&](const std::string& name, std::size_t count) {
        const auto amb = static_cast<std::size_t>(std::llround(c.ambiguous_fraction * static_cast<double>(count)));
        return SplitSpec{name, count - amb, amb};
    };
    return {frac_split("train", c.train_count), frac_split("val", c.val_count), {"test", c.test_clean, c.test_ambiguous}};
}

/// Instance i of a split is ambiguous iff i >= clean count. Each instance has
/// its own stream, so generation is independent of the worker count.
inline Dataset generate_split(const RunConfig& c, const SplitSpec& sp, nlohmann::json& stats_out) {
    Dataset ds;
    ds.task = c.task;
    ds.n = c.n;
    ds.seed = c.seed;
    const std::size_t total = sp.clean + sp.ambiguous;
    SlapGenConfig slap_cfg;
    slap_cfg.bimodal_retry = c.bimodal_retry;
    std::vector<SlapGenStats> stats(total);
    if (c.task == Task::slap) ds.slap.resize(total);
    else ds.sort.resize(total);
    parallel_for(c.workers, total, [&](std::size_t i) {
        Rng rng = make_stream(c.seed, "gen-" + sp.name, i);
        const bool amb = i >= sp.clean;
        if (c.task == Task::slap) {
            ds.slap[i] = amb ? gen_slap_bimodal(c.n, rng, slap_cfg, &stats[i]) : gen_slap_clean(c.n, rng, slap_cfg, &stats[i]);
        } else {
            ds.sort[i] = gen_sort_instance(c.n, amb, rng);
        }
    });
    SlapGenStats sum;
    for (const auto& s : stats) {
        sum.clean_attempts += s.clean_attempts;
        sum.clean_failures += s.clean_failures;
        sum.bimodal_attempts += s.bimodal_attempts;
        sum.bimodal_failures += s.bimodal_failures;
        sum.bimodal_fallbacks += s.bimodal_fallbacks;
    }
    stats_out = {{"requested_clean", sp.clean},
                 {"requested_ambiguous", sp.ambiguous},
                 {"clean", ds.size() - ds.ambiguous_count()},
                 {"ambiguous", ds.ambiguous_count()}};
    if (c.task == Task::slap) {
        stats_out["clean_attempts"] = sum.clean_attempts;
        stats_out["clean_failures"] = sum.clean_failures;
        stats_out["bimodal_attempts"] = sum.bimodal_attempts;
        stats_out["bimodal_failures"] = sum.bimodal_failures;
        stats_out["bimodal_fallbacks"] = sum.bimodal_fallbacks;
        stats_out["bimodal_failure_rate"] =
            sum.bimodal_attempts ? static_cast<double>(sum.bimodal_failures) / static_cast<double>(sum.bimodal_attempts) : 0.0;
    }
    ds.meta = {{"split", sp.name}, {"config", c.serialize()}, {"generation", stats_out}};
    return ds;
}

inline nlohmann::json cmd_gen(const RunConfig& c, std::ostream& log = std::cout) {
    c.validate();
    fs::create_directories(c.data_dir);
    nlohmann::json manifest{{"format", "permfm-manifest"},
                            {"schema_version", dataset_schema_version},
                            {"task", to_string(c.task)},
                            {"n", c.n},
                            {"seed", c.seed},
                            {"config", c.serialize()},
                            {"files", nlohmann::json::object()}};
    for (const auto& sp : split_specs(c)) {
        nlohmann::json stats;
        const Dataset ds = generate_split(c, sp, stats);
        const std::string text = serialize_dataset(ds);
        const std::string path = split_path(c, sp.name);
        write_file(path, text);
        manifest["files"][sp.name] = {{"path", sp.name + ".jsonl"}, {"fnv1a64", hex64(fnv1a64(text))}, {"bytes", text.size()}, {"stats", stats}};
        log << sp.name << ": " << ds.size() << " instances (" << ds.ambiguous_count() << " "
            << (c.task == Task::slap ? "bimodal" : "ambiguous") << ")";
        if (c.task == Task::slap && stats.contains("bimodal_attempts") && stats["bimodal_attempts"].get<std::size_t>() > 0)
            log << ", bimodal construction failure rate " << stats["bimodal_failure_rate"].get<double>()
                << ", fallbacks " << stats["bimodal_fallbacks"].get<std::size_t>();
        log << "\n";
    }
    write_file(c.data_dir + "/manifest.json", manifest.dump(2) + "\n");
    return manifest;
}

/// Re-reads every file named in the manifest and compares checksums.
inline bool verify_manifest(const std::string& data_dir, std::string* why = nullptr) {
    const auto manifest = nlohmann::json::parse(read_file(data_dir + "/manifest.json"));
    for (const auto& [name, entry] : manifest.at("files").items()) {
        const std::string text = read_file(data_dir + "/" + entry.at("path").get<std::string>());
        if (hex64(fnv1a64(text)) != entry.at("fnv1a64").get<std::string>()) {
            if (why) *why = name + ": checksum mismatch";
            return false;
        }
    }
    return true;
}

inline Dataset load_split(const RunConfig& c, const std::string& split) {
    Dataset ds = read_dataset(split_path(c, split));
    if (ds.task != c.task) throw ConfigError(split + " split holds task " + to_string(ds.task) + ", config says " + to_string(c.task));
    if (ds.n != c.n) throw DimensionError(split + " split has n = " + std::to_string(ds.n) + ", config says " + std::to_string(c.n));
    return ds;
}

// ---------------------------------------------------------------------------
// sampling helpers shared by train (validation) and eval
// ---------------------------------------------------------------------------

inline Sampler flow_sampler(const VelocityNet& net, const Dataset& ds, const FlowConfig& base, std::uint64_t seed,
                            const std::string& label, double* max_residual = nullptr, std::mutex* mu = nullptr) {
    return [&net, &ds, base, seed, label, max_residual, mu](const EvalItem& it, std::size_t k) {
        FlowConfig cfg = base;
        cfg.samples = static_cast<int>(k);
        Rng rng = make_stream(seed, label, it.id);
        SampleSet s = sample(net, observables(ds, it.id), cfg, rng, it.id);
        if (max_residual) {
            std::lock_guard<std::mutex> lock(*mu);
            *max_residual = std::max(*max_residual, s.max_residual());
        }
        return s.samples;
    };
}

inline std::function<void(std::size_t, const std::function<void(std::size_t)>&)> pool_for(std::size_t workers) {
    return [workers](std::size_t count, const std::function<void(std::size_t)>& body) { parallel_for(workers, count, body); };
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOutcome {
    std::vector<EpochLog> epochs;
    std::string log_csv;
    std::string checkpoint_path;
};

inline std::string train_log_header(const RunConfig& c) {
    return std::string("epoch,cfm_loss,clean_acc,coverage_at_10,") +
           (c.task == Task::slap ? "mode_balance" : "calibration_error") + ",opt_gap\n";
}

inline TrainOutcome cmd_train(const RunConfig& c, bool resume, std::ostream& log = std::cout) {
    c.validate();
    const Dataset train_ds = load_split(c, "train");
    const Dataset val_ds = load_split(c, "val");
    fs::create_directories(c.out_dir);
    const std::string ck_path = c.checkpoint_path();
    const std::string csv_path = c.out_dir + "/train_log.csv";
    const TrainConfig tc = c.train_config();

    Checkpoint ck{VelocityNet(c.arch()), OptimState(tc.adam, 0), {}};
    int start_epoch = 0;
    std::vector<std::string> kept_rows;
    if (resume) {
        ck = load_checkpoint(ck_path, c.n);
        if (!(ck.net.arch() == c.arch())) throw ConfigError("resume: checkpoint architecture differs from config");
        start_epoch = std::stoi(ck.meta.at("epoch"));
        ck.optim.cfg = tc.adam;
        if (fs::exists(csv_path)) {
            std::istringstream in(read_file(csv_path));
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty() || line[0] == '#' || line.rfind("epoch", 0) == 0) continue;
                if (std::stoi(line.substr(0, line.find(','))) <= start_epoch) kept_rows.push_back(line);
            }
        }
        log << "resuming at epoch " << start_epoch << ", step " << ck.optim.step << "\n";
    } else {
        Rng init_rng = make_stream(c.seed, "init");
        init_params(ck.net, init_rng, c.init_final_scale);
        ck.optim = OptimState(tc.adam, ck.net.param_count());
    }
    ck.meta["task"] = to_string(c.task);
    ck.meta["seed"] = std::to_string(c.seed);
    ck.meta["train_file_fnv1a64"] = hex64(fnv1a64(serialize_dataset(train_ds)));

    const std::vector<FlowItem> items = flow_items(train_ds);
    const std::vector<EvalItem> val_items = eval_items(val_ds);
    std::vector<std::string> rows = kept_rows;
    auto csv_text = [&] {
        std::string s = comment_block(c.serialize()) + train_log_header(c);
        for (const auto& r : rows) s += r + "\n";
        return s;
    };

    auto on_epoch = [&](const EpochLog& e) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%d,%.17g", e.epoch, e.cfm_loss);
        std::string row = buf;
        const bool validate = e.epoch % c.val_every == 0 || e.epoch == c.epochs;
        if (validate && !val_items.empty()) {
            const auto reps = evaluate(val_items, flow_sampler(ck.net, val_ds, c.flow(), c.seed, "val"), {c.val_k},
                                       c.task, pool_for(c.workers));
            const auto& r = reps.front();
            row += "," + detail::fmt_csv(r.clean_accuracy) + "," + detail::fmt_csv(r.coverage_at_k) + "," +
                   detail::fmt_csv(c.task == Task::slap ? r.mode_balance : r.calibration_error_mean) + "," +
                   detail::fmt_csv(r.optimality_gap_mean);
            log << "epoch " << e.epoch << "  loss " << e.cfm_loss << "  clean " << detail::fmt_opt(r.clean_accuracy)
                << "  coverage@" << c.val_k << " " << detail::fmt_opt(r.coverage_at_k) << "\n";
        } else {
            row += ",,,,";
            log << "epoch " << e.epoch << "  loss " << e.cfm_loss << "\n";
        }
        rows.push_back(row);
        if (validate) {
            ck.meta["epoch"] = std::to_string(e.epoch);
            save_checkpoint(ck, ck_path);
            write_file(csv_path, csv_text());
        }
        return true;
    };

    TrainOutcome out;
    out.epochs = train(ck.net, ck.optim, items, tc, start_epoch, on_epoch);
    ck.meta["epoch"] = std::to_string(out.epochs.empty() ? start_epoch : out.epochs.back().epoch);
    save_checkpoint(ck, ck_path);
    out.log_csv = csv_text();
    write_file(csv_path, out.log_csv);
    out.checkpoint_path = ck_path;
    return out;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOutcome {
    std::vector<MetricsReport> reports;
    double max_feasibility_residual = 0.0;
};

inline std::string artifact_header(const RunConfig& c, const std::string& extra) {
    return comment_block(c.serialize() + extra);
}

inline EvalOutcome cmd_eval(const RunConfig& c, std::ostream& log = std::cout) {
    c.validate();
    const Dataset test = load_split(c, "test");
    const std::string ck_text = read_file(c.checkpoint_path());
    const Checkpoint ck = parse_checkpoint(ck_text, c.n, c.checkpoint_path());
    if (ck.net.arch().ctx_dim != c.ctx_dim()) throw DimensionError("checkpoint observable width does not match task");
    fs::create_directories(c.out_dir);

    EvalOutcome out;
    std::mutex mu;
    out.reports = evaluate(eval_items(test), flow_sampler(ck.net, test, c.flow(), c.seed, "eval", &out.max_feasibility_residual, &mu),
                           c.k_sweep, c.task, pool_for(c.workers));
    char buf[128];
    std::snprintf(buf, sizeof buf, "max_feasibility_residual = %.3e", out.max_feasibility_residual);
    const std::string header = artifact_header(c, "checkpoint_fnv1a64 = " + hex64(fnv1a64(ck_text)) + "\n" + buf + "\n");
    write_file(c.out_dir + "/eval_report.txt", header + report_table(out.reports));
    write_file(c.out_dir + "/eval_report.csv", header + report_csv(out.reports));
    for (const auto& r : out.reports)
        if (r.k == 10 || &r == &out.reports.back())
            write_file(c.out_dir + "/eval_instances_k" + std::to_string(r.k) + ".csv", header + instances_csv(r));
    log << report_table(out.reports) << buf << "\n";
    return out;
}

// ---------------------------------------------------------------------------
// baseline-gs
// ---------------------------------------------------------------------------

struct GsOutcome {
    std::vector<double> taus;
    std::vector<std::vector<MetricsReport>> reports; // per tau, per K
};

/// Scores fed to Gumbel-Sinkhorn: the negated cost for SLAP; for sorting the
/// raw head output of the trained network at the uniform state.
inline std::vector<SquareMatrix> gs_scores(const RunConfig& c, const Dataset& test, std::string* provenance) {
    std::vector<SquareMatrix> scores;
    if (c.task == Task::slap) {
        for (const auto& s : test.slap) scores.push_back(-s.cost);
        *provenance = "score = -cost\n";
        return scores;
    }
    const std::string ck_text = read_file(c.checkpoint_path());
    const Checkpoint ck = parse_checkpoint(ck_text, c.n, c.checkpoint_path());
    const SquareMatrix j = SquareMatrix::uniform(c.n);
    for (std::size_t i = 0; i < test.size(); ++i) scores.push_back(raw_output(ck.net, j, encode_context(ck.net, observables(test, i)), 0.0));
    *provenance = "score = raw head output at uniform state\ncheckpoint_fnv1a64 = " + hex64(fnv1a64(ck_text)) + "\n";
    return scores;
}

inline GsOutcome cmd_baseline_gs(const RunConfig& c, std::ostream& log = std::cout) {
    c.validate();
    const Dataset test = load_split(c, "test");
    std::string provenance;
    const std::vector<SquareMatrix> scores = gs_scores(c, test, &provenance);
    fs::create_directories(c.out_dir);
    GsOutcome out;
    std::string csv, table;
    for (std::size_t q = 0; q < c.gs_taus.size(); ++q) {
        const double tau = c.gs_taus[q];
        const Sampler sampler = [&, q](const EvalItem& it, std::size_t k) {
            Rng rng = make_stream(c.seed, "gs-" + std::to_string(q), it.id);
            return gumbel_sinkhorn_sample(scores[it.id], tau, c.gs_iters, static_cast<int>(k), rng);
        };
        auto reps = evaluate(eval_items(test), sampler, c.k_sweep, c.task, pool_for(c.workers));
        const std::string tau_s = detail::fmt_double(tau);
        std::string rc = report_csv(reps);
        std::istringstream in(rc);
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
            if (first) {
                if (csv.empty()) csv = "tau," + line + "\n";
                first = false;
                continue;
            }
            csv += tau_s + "," + line + "\n";
        }
        table += "tau = " + tau_s + "\n" + report_table(reps) + "\n";
        out.taus.push_back(tau);
        out.reports.push_back(std::move(reps));
    }
    const std::string header = artifact_header(c, provenance + "gs_iters = " + std::to_string(c.gs_iters) + "\n");
    write_file(c.out_dir + "/gs_report.txt", header + table);
    write_file(c.out_dir + "/gs_report.csv", header + csv);
    log << table;
    return out;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

inline bool cmd_verify(const RunConfig& c, const std::string& fault, std::ostream& log = std::cout) {
    SuiteOptions opt;
    opt.seed = c.seed;
    if (fault == "center") opt.center_fn = broken_center;
    else if (!fault.empty()) throw ConfigError("unknown fault '" + fault + "' (known: center)");
    const auto results = run_property_suite(opt);
    bool all = true;
    std::string report;
    for (const auto& r : results) {
        all = all && r.passed;
        const std::string line = std::string(r.passed ? "PASS  " : "FAIL  ") + r.name + "  [" + r.detail + "]";
        report += line + "\n";
        char t[32];
        std::snprintf(t, sizeof t, "  (%.2fs)", r.seconds);
        log << line << t << "\n";
    }
    report += all ? "verdict: PASS\n" : "verdict: FAIL\n";
    log << (all ? "verdict: PASS" : "verdict: FAIL") << "\n";
    fs::create_directories(c.out_dir);
    write_file(c.out_dir + "/verify_report.txt",
               artifact_header(c, "fault_inject = " + (fault.empty() ? std::string("none") : fault) + "\n") + report);
    return all;
}

} // namespace permfm
