#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "permfm/errors.hpp"
#include "permfm/instances.hpp"
#include "permfm/matgeo.hpp"

namespace permfm {

inline bool exact_match(const PermMatrix& pred, const PermMatrix& target) {
    if (pred.n() != target.n()) throw DimensionError("exact_match: size mismatch");
    return pred == target;
}

inline std::size_t count_matches(std::span<const PermMatrix> samples, const PermMatrix& mode) {
    return static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [&](const PermMatrix& s) { return exact_match(s, mode); }));
}

inline bool coverage_at_k(std::span<const PermMatrix> samples, const std::vector<PermMatrix>& modes) {
    if (modes.size() != 2) throw ConfigError("coverage_at_k: needs exactly two modes");
    return count_matches(samples, modes[0]) > 0 && count_matches(samples, modes[1]) > 0;
}

inline bool any_correct_at_k(std::span<const PermMatrix> samples, const std::vector<PermMatrix>& modes) {
    for (const auto& m : modes)
        if (count_matches(samples, m) > 0) return true;
    return false;
}

/// |f_a - alpha| with f_a the exact-match frequency of mode_a. Samples that
/// match no mode lower f_a.
inline double calibration_error(std::span<const PermMatrix> samples, const PermMatrix& mode_a, double alpha) {
    if (samples.empty()) throw ConfigError("calibration_error: no samples");
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("calibration_error: alpha outside [0, 1]");
    const double f = static_cast<double>(count_matches(samples, mode_a)) / static_cast<double>(samples.size());
    return std::abs(f - alpha);
}

inline double optimality_gap(const PermMatrix& pred, const SquareMatrix& cost, double opt_cost) {
    if (opt_cost == 0.0) throw NumericError("optimality_gap: optimal cost is zero, relative gap undefined");
    return (assignment_cost(cost, pred) - opt_cost) / std::abs(opt_cost);
}

inline double mode_balance(std::span<const PermMatrix> samples, const PermMatrix& mode_a, const PermMatrix& mode_b) {
    if (samples.empty()) throw ConfigError("mode_balance: no samples");
    const double k = static_cast<double>(samples.size());
    return std::abs(static_cast<double>(count_matches(samples, mode_a)) - static_cast<double>(count_matches(samples, mode_b))) / k;
}

/// Instance view used by the evaluator.
struct EvalItem {
    std::size_t id = 0;
    bool ambiguous = false;
    std::vector<PermMatrix> modes;
    std::optional<SquareMatrix> cost; // SLAP
    double optimal_cost = 0.0;
    std::optional<double> alpha; // sorting
};

inline EvalItem eval_item(const SlapInstance& s, std::size_t id) {
    return {id, s.kind == SlapKind::bimodal, s.modes, s.cost, s.optimal_cost, std::nullopt};
}

inline EvalItem eval_item(const SortInstance& s, std::size_t id) {
    return {id, s.kind == SortKind::ambiguous, s.modes, std::nullopt, 0.0, s.alpha};
}

struct InstanceRow {
    std::size_t id = 0;
    bool ambiguous = false;
    std::size_t k = 0;
    std::size_t hits_a = 0;
    std::size_t hits_b = 0;
    bool first_correct = false;
    bool covered = false;
    bool any_correct = false;
    std::optional<double> calibration;
    std::optional<double> opt_gap;
    std::optional<double> balance;
};

struct MetricsReport {
    Task task = Task::slap;
    std::size_t k = 0;
    std::size_t clean_count = 0;
    std::size_t ambiguous_count = 0;
    std::optional<double> clean_accuracy;       // first sample, clean instances
    std::optional<double> clean_best_of_k;      // extra: any of K, clean instances
    std::optional<double> coverage_at_k;        // ambiguous instances
    std::optional<double> any_correct_at_k;     // ambiguous instances
    std::optional<double> calibration_error_mean; // sorting
    std::optional<double> optimality_gap_mean;  // SLAP, first sample, bimodal instances
    std::optional<double> mode_balance;         // SLAP, pooled over bimodal instances
    std::optional<double> mode_balance_per_instance;
    bool degenerate_balance = false;
    bool degenerate_calibration = false;
    bool zero_coverage = false;
    std::vector<InstanceRow> rows;
};

/// Mean computed over the sorted values, so the result does not depend on
/// instance order.
inline double order_free_mean(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline InstanceRow score_instance(const EvalItem& it, std::span<const PermMatrix> samples, Task task) {
    if (samples.empty()) throw ConfigError("evaluate: instance " + std::to_string(it.id) + " has no samples");
    InstanceRow row;
    row.id = it.id;
    row.ambiguous = it.ambiguous;
    row.k = samples.size();
    row.hits_a = count_matches(samples, it.modes.at(0));
    row.hits_b = it.modes.size() > 1 ? count_matches(samples, it.modes[1]) : 0;
    row.first_correct = std::any_of(it.modes.begin(), it.modes.end(), [&](const PermMatrix& m) { return exact_match(samples[0], m); });
    row.any_correct = any_correct_at_k(samples, it.modes);
    if (it.ambiguous) {
        row.covered = coverage_at_k(samples, it.modes);
        if (task == Task::slap) row.balance = mode_balance(samples, it.modes[0], it.modes[1]);
        if (task == Task::sort && it.alpha) row.calibration = calibration_error(samples, it.modes[0], *it.alpha);
    }
    if (task == Task::slap && it.cost) row.opt_gap = optimality_gap(samples[0], *it.cost, it.optimal_cost);
    return row;
}

inline MetricsReport aggregate(Task task, std::size_t k, std::vector<InstanceRow> rows) {
    std::sort(rows.begin(), rows.end(), [](const InstanceRow& a, const InstanceRow& b) { return a.id < b.id; });
    MetricsReport rep;
    rep.task = task;
    rep.k = k;
    std::vector<double> clean_first, clean_any, cover, anyc, calib, gap, bal;
    std::size_t pooled_a = 0, pooled_b = 0, pooled_k = 0, amb_hits = 0;
    for (const auto& r : rows) {
        if (!r.ambiguous) {
            ++rep.clean_count;
            clean_first.push_back(r.first_correct ? 1.0 : 0.0);
            clean_any.push_back(r.any_correct ? 1.0 : 0.0);
            continue;
        }
        ++rep.ambiguous_count;
        cover.push_back(r.covered ? 1.0 : 0.0);
        anyc.push_back(r.any_correct ? 1.0 : 0.0);
        if (r.calibration) calib.push_back(*r.calibration);
        if (r.opt_gap) gap.push_back(*r.opt_gap);
        if (r.balance) bal.push_back(*r.balance);
        pooled_a += r.hits_a;
        pooled_b += r.hits_b;
        pooled_k += r.k;
        amb_hits += r.hits_a + r.hits_b;
    }
    if (!clean_first.empty()) {
        rep.clean_accuracy = order_free_mean(clean_first);
        rep.clean_best_of_k = order_free_mean(clean_any);
    }
    if (!cover.empty()) {
        rep.coverage_at_k = order_free_mean(cover);
        rep.any_correct_at_k = order_free_mean(anyc);
        rep.zero_coverage = *rep.coverage_at_k == 0.0;
    }
    if (task == Task::sort && !calib.empty()) {
        rep.calibration_error_mean = order_free_mean(calib);
        rep.degenerate_calibration = amb_hits == 0;
    }
    if (task == Task::slap && !cover.empty()) {
        rep.optimality_gap_mean = order_free_mean(gap);
        rep.mode_balance = pooled_k ? std::abs(static_cast<double>(pooled_a) - static_cast<double>(pooled_b)) / static_cast<double>(pooled_k) : 0.0;
        rep.mode_balance_per_instance = order_free_mean(bal);
        rep.degenerate_balance = amb_hits == 0;
    }
    rep.rows = std::move(rows);
    return rep;
}

/// Sampler contract: return at least k samples for the given item.
using Sampler = std::function<std::vector<PermMatrix>(const EvalItem& item, std::size_t k)>;

/// Draws max(ks) samples per instance once and scores every prefix, so each K
/// in the sweep sees the same sample stream. `parallel_for` lets the caller
/// distribute instances over workers; results do not depend on how.
inline std::vector<MetricsReport> evaluate(
    const std::vector<EvalItem>& items, const Sampler& sampler, std::vector<std::size_t> ks, Task task,
    const std::function<void(std::size_t, const std::function<void(std::size_t)>&)>& parallel_for = {}) {
    if (ks.empty()) throw ConfigError("evaluate: empty K list");
    std::sort(ks.begin(), ks.end());
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
    if (ks.front() < 1) throw ConfigError("evaluate: K must be >= 1");
    const std::size_t kmax = ks.back();

    std::vector<std::vector<PermMatrix>> drawn(items.size());
    auto run_one = [&](std::size_t i) {
        try {
            drawn[i] = sampler(items[i], kmax);
        } catch (const Error& e) {
            throw NumericError("sampler failed on instance " + std::to_string(items[i].id) + ": " + e.what());
        }
        if (drawn[i].size() < kmax) throw ConfigError("sampler returned too few samples for instance " + std::to_string(items[i].id));
    };
    if (parallel_for) parallel_for(items.size(), run_one);
    else for (std::size_t i = 0; i < items.size(); ++i) run_one(i);

    std::vector<MetricsReport> out;
    for (std::size_t k : ks) {
        std::vector<InstanceRow> rows;
        rows.reserve(items.size());
        for (std::size_t i = 0; i < items.size(); ++i)
            rows.push_back(score_instance(items[i], std::span<const PermMatrix>(drawn[i].data(), k), task));
        out.push_back(aggregate(task, k, std::move(rows)));
    }
    return out;
}

namespace detail {
inline std::string fmt_opt(const std::optional<double>& v, int prec = 4) {
    if (!v) return "-";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, *v);
    return buf;
}
inline std::string fmt_csv(const std::optional<double>& v) {
    if (!v) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", *v);
    return buf;
}
} // namespace detail

/// One row per K, fixed column order.
inline std::string report_csv(const std::vector<MetricsReport>& reps) {
    std::string s = "task,k,clean_count,ambiguous_count,clean_accuracy,clean_best_of_k,coverage_at_k,any_correct_at_k,"
                    "calibration_error,optimality_gap,mode_balance,mode_balance_per_instance,degenerate_balance,"
                    "degenerate_calibration,zero_coverage\n";
    for (const auto& r : reps) {
        s += to_string(r.task) + "," + std::to_string(r.k) + "," + std::to_string(r.clean_count) + "," +
             std::to_string(r.ambiguous_count) + "," + detail::fmt_csv(r.clean_accuracy) + "," +
             detail::fmt_csv(r.clean_best_of_k) + "," + detail::fmt_csv(r.coverage_at_k) + "," +
             detail::fmt_csv(r.any_correct_at_k) + "," + detail::fmt_csv(r.calibration_error_mean) + "," +
             detail::fmt_csv(r.optimality_gap_mean) + "," + detail::fmt_csv(r.mode_balance) + "," +
             detail::fmt_csv(r.mode_balance_per_instance) + "," + std::to_string(r.degenerate_balance) + "," +
             std::to_string(r.degenerate_calibration) + "," + std::to_string(r.zero_coverage) + "\n";
    }
    return s;
}

inline std::string instances_csv(const MetricsReport& rep) {
    std::string s = "id,ambiguous,k,hits_a,hits_b,first_correct,covered,any_correct,calibration_error,opt_gap,mode_balance\n";
    for (const auto& r : rep.rows) {
        s += std::to_string(r.id) + "," + std::to_string(r.ambiguous) + "," + std::to_string(r.k) + "," +
             std::to_string(r.hits_a) + "," + std::to_string(r.hits_b) + "," + std::to_string(r.first_correct) + "," +
             std::to_string(r.covered) + "," + std::to_string(r.any_correct) + "," + detail::fmt_csv(r.calibration) +
             "," + detail::fmt_csv(r.opt_gap) + "," + detail::fmt_csv(r.balance) + "\n";
    }
    return s;
}

inline std::string report_table(const std::vector<MetricsReport>& reps) {
    std::string s;
    char buf[512];
    std::snprintf(buf, sizeof buf, "%5s  %9s  %9s  %11s  %11s  %11s  %9s  %9s  %s\n", "K", "clean", "clean@K",
                  "coverage@K", "any@K", "calibration", "opt_gap", "balance", "flags");
    s += buf;
    for (const auto& r : reps) {
        std::string flags;
        if (r.zero_coverage) flags += " zero-coverage";
        if (r.degenerate_balance) flags += " degenerate-balance";
        if (r.degenerate_calibration) flags += " degenerate-calibration";
        std::snprintf(buf, sizeof buf, "%5zu  %9s  %9s  %11s  %11s  %11s  %9s  %9s %s\n", r.k,
                      detail::fmt_opt(r.clean_accuracy).c_str(), detail::fmt_opt(r.clean_best_of_k).c_str(),
                      detail::fmt_opt(r.coverage_at_k).c_str(), detail::fmt_opt(r.any_correct_at_k).c_str(),
                      detail::fmt_opt(r.calibration_error_mean).c_str(), detail::fmt_opt(r.optimality_gap_mean).c_str(),
                      detail::fmt_opt(r.mode_balance).c_str(), flags.c_str());
        s += buf;
    }
    return s;
}

} // namespace permfm
