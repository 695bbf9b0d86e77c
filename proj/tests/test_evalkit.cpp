#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "permfm/assign.hpp"
#include "permfm/evalkit.hpp"
#include "permfm/flow.hpp"
#include "permfm/instances.hpp"

using namespace permfm;

namespace {

std::vector<PermMatrix> repeat(const PermMatrix& p, std::size_t k) { return std::vector<PermMatrix>(k, p); }

PermMatrix random_perm(std::size_t n, Rng& rng) {
    std::vector<int> a(n);
    std::iota(a.begin(), a.end(), 0);
    std::shuffle(a.begin(), a.end(), rng);
    return PermMatrix(a);
}

} // namespace

TEST(ExactMatch, NoPartialCredit) {
    const PermMatrix p({2, 0, 1, 3});
    EXPECT_TRUE(exact_match(p, p));
    EXPECT_FALSE(exact_match(PermMatrix::identity(4), PermMatrix({1, 0, 2, 3})));
    EXPECT_FALSE(exact_match(p, PermMatrix({2, 0, 3, 1})));
    EXPECT_THROW(exact_match(p, PermMatrix::identity(5)), DimensionError);
}

TEST(Coverage, Examples) {
    const PermMatrix a = PermMatrix::identity(4), b({1, 0, 2, 3});
    const std::vector<PermMatrix> modes{a, b};
    EXPECT_TRUE(coverage_at_k(std::vector<PermMatrix>{a, b}, modes));
    EXPECT_FALSE(coverage_at_k(repeat(a, 10), modes));
    EXPECT_FALSE(coverage_at_k(repeat(b, 1), modes));
    EXPECT_FALSE(coverage_at_k(repeat(a, 1), modes));
    EXPECT_THROW(coverage_at_k(repeat(a, 3), {a}), ConfigError);
    EXPECT_THROW(coverage_at_k(repeat(a, 3), {a, b, a}), ConfigError);
}

TEST(AnyCorrect, ExamplesAndImpliedByCoverage) {
    const PermMatrix a = PermMatrix::identity(5), b({0, 2, 1, 3, 4});
    const std::vector<PermMatrix> modes{a, b};
    std::vector<PermMatrix> s = repeat(PermMatrix({4, 3, 2, 1, 0}), 6);
    EXPECT_FALSE(any_correct_at_k(s, modes));
    s[3] = b;
    EXPECT_TRUE(any_correct_at_k(s, modes));

    Rng rng = make_stream(1, "imply");
    for (int t = 0; t < 2000; ++t) {
        std::vector<PermMatrix> draw;
        const std::size_t k = 1 + static_cast<std::size_t>(t % 12);
        for (std::size_t i = 0; i < k; ++i) {
            const double u = uniform01(rng);
            draw.push_back(u < 0.3 ? a : u < 0.6 ? b : random_perm(5, rng));
        }
        if (coverage_at_k(draw, modes)) {
            EXPECT_TRUE(any_correct_at_k(draw, modes));
        }
    }
}

TEST(Calibration, Examples) {
    const PermMatrix a = PermMatrix::identity(4), b({1, 0, 2, 3}), other({3, 2, 1, 0});
    EXPECT_DOUBLE_EQ(calibration_error(repeat(a, 8), a, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(calibration_error(repeat(other, 8), a, 0.5), 0.5);
    EXPECT_DOUBLE_EQ(calibration_error(std::vector<PermMatrix>{a, b, a, b}, a, 0.5), 0.0);
    // stray samples depress the frequency of mode a
    EXPECT_DOUBLE_EQ(calibration_error(std::vector<PermMatrix>{a, other, other, other}, a, 0.5), 0.25);
    EXPECT_THROW(calibration_error({}, a, 0.5), ConfigError);
    EXPECT_THROW(calibration_error(repeat(a, 2), a, 1.5), ConfigError);
}

TEST(OptimalityGap, ZeroAtOptimumPositiveForRandomAndErrorAtZeroCost) {
    Rng rng = make_stream(2, "gap");
    int positive = 0;
    for (int k = 0; k < 50; ++k) {
        const SlapInstance s = gen_slap_clean(8, rng);
        EXPECT_NEAR(optimality_gap(s.modes[0], s.cost, s.optimal_cost), 0.0, 1e-12);
        PermMatrix r = random_perm(8, rng);
        while (r == s.modes[0]) r = random_perm(8, rng);
        const double g = optimality_gap(r, s.cost, s.optimal_cost);
        EXPECT_GE(g, 0.0);
        positive += g > 0.0;
    }
    EXPECT_EQ(positive, 50);
    EXPECT_THROW(optimality_gap(PermMatrix::identity(4), SquareMatrix(4), 0.0), NumericError);
}

TEST(ModeBalance, Examples) {
    const PermMatrix a = PermMatrix::identity(4), b({1, 0, 2, 3}), other({3, 2, 1, 0});
    EXPECT_DOUBLE_EQ(mode_balance(std::vector<PermMatrix>{a, b, b, a}, a, b), 0.0);
    EXPECT_DOUBLE_EQ(mode_balance(repeat(a, 7), a, b), 1.0);
    EXPECT_DOUBLE_EQ(mode_balance(repeat(other, 7), a, b), 0.0);
    EXPECT_DOUBLE_EQ(mode_balance(std::vector<PermMatrix>{a, a, a, b}, a, b), 0.5);
}

TEST(Evaluate, PerfectOracleOnOneCleanInstance) {
    Rng rng = make_stream(3, "one");
    const SlapInstance s = gen_slap_clean(6, rng);
    const std::vector<EvalItem> items{eval_item(s, 0)};
    const Sampler perfect = [](const EvalItem& it, std::size_t k) { return repeat(it.modes[0], k); };
    const auto reps = evaluate(items, perfect, {1, 5}, Task::slap);
    ASSERT_EQ(reps.size(), 2u);
    for (const auto& r : reps) {
        EXPECT_EQ(r.clean_count, 1u);
        EXPECT_DOUBLE_EQ(*r.clean_accuracy, 1.0);
        EXPECT_FALSE(r.coverage_at_k.has_value());
        EXPECT_FALSE(r.calibration_error_mean.has_value());
        EXPECT_FALSE(r.mode_balance.has_value());
    }
}

TEST(Evaluate, OracleVelocityCoverageMatchesBinomial) {
    // Symmetric bimodal SLAP: each mode has Voronoi mass one half, so a K = 10
    // draw misses a mode with probability 2 * 2^-10.
    Rng rng = make_stream(4, "binom");
    std::vector<EvalItem> items;
    for (std::size_t i = 0; i < 400; ++i) items.push_back(eval_item(gen_slap_bimodal(8, rng), i));
    const Sampler oracle = [](const EvalItem& it, std::size_t k) {
        FlowConfig cfg;
        cfg.samples = static_cast<int>(k);
        Rng r = make_stream(5, "oracle", it.id);
        return oracle_velocity_sample(it.modes, cfg, r).samples;
    };
    const auto reps = evaluate(items, oracle, {1, 2, 10}, Task::slap);
    const double p10 = 1.0 - 2.0 * std::pow(0.5, 10);
    const double se10 = std::sqrt(p10 * (1 - p10) / 400.0);
    EXPECT_NEAR(*reps[2].coverage_at_k, p10, std::max(3 * se10, 1.0 / 400.0 + 1e-12));
    EXPECT_NEAR(*reps[1].coverage_at_k, 0.5, 3 * std::sqrt(0.25 / 400.0));
    EXPECT_DOUBLE_EQ(*reps[0].coverage_at_k, 0.0);
    EXPECT_DOUBLE_EQ(*reps[2].any_correct_at_k, 1.0);
    EXPECT_FALSE(reps[2].degenerate_balance);
    EXPECT_LE(*reps[2].mode_balance, 3 * std::sqrt(1.0 / 4000.0));
    EXPECT_NEAR(*reps[2].optimality_gap_mean, 0.0, 1e-12);
}

TEST(Evaluate, ZeroHitSamplerIsFlaggedDegenerate) {
    Rng rng = make_stream(6, "deg");
    std::vector<EvalItem> items;
    for (std::size_t i = 0; i < 30; ++i) items.push_back(eval_item(gen_slap_bimodal(8, rng), i));
    // The reversal, or a rotation when the reversal happens to be a mode.
    const Sampler miss = [](const EvalItem& it, std::size_t k) {
        std::vector<int> a(it.modes[0].n());
        std::iota(a.begin(), a.end(), 0);
        std::reverse(a.begin(), a.end());
        PermMatrix p(a);
        for (const auto& m : it.modes)
            if (m == p) std::rotate(a.begin(), a.begin() + 1, a.end()), p = PermMatrix(a);
        return repeat(p, k);
    };
    const auto rep = evaluate(items, miss, {100}, Task::slap).front();
    EXPECT_DOUBLE_EQ(*rep.coverage_at_k, 0.0);
    EXPECT_DOUBLE_EQ(*rep.any_correct_at_k, 0.0);
    EXPECT_DOUBLE_EQ(*rep.mode_balance, 0.0);
    EXPECT_TRUE(rep.zero_coverage);
    EXPECT_TRUE(rep.degenerate_balance);
    EXPECT_NE(report_table({rep}).find("degenerate-balance"), std::string::npos);

    const Sampler one_sided = [](const EvalItem& it, std::size_t k) { return repeat(it.modes[0], k); };
    const auto skew = evaluate(items, one_sided, {10}, Task::slap).front();
    EXPECT_TRUE(skew.zero_coverage);
    EXPECT_FALSE(skew.degenerate_balance);
    EXPECT_DOUBLE_EQ(*skew.mode_balance, 1.0);
}

TEST(Evaluate, SortingReportCarriesCalibrationOnly) {
    Rng rng = make_stream(8, "sortrep");
    std::vector<EvalItem> items;
    for (std::size_t i = 0; i < 20; ++i) items.push_back(eval_item(gen_sort_instance(8, i % 2 == 1, rng), i));
    const Sampler never = [](const EvalItem& it, std::size_t k) { return repeat(PermMatrix::identity(it.modes[0].n()), k); };
    const auto rep = evaluate(items, never, {10}, Task::sort).front();
    ASSERT_TRUE(rep.calibration_error_mean.has_value());
    EXPECT_FALSE(rep.mode_balance.has_value());
    EXPECT_FALSE(rep.optimality_gap_mean.has_value());
    EXPECT_EQ(rep.ambiguous_count, 10u);
    for (const auto& r : rep.rows) {
        if (!r.ambiguous || r.hits_a) continue;
        EXPECT_DOUBLE_EQ(*r.calibration, *items[r.id].alpha);
    }
}

TEST(Evaluate, AggregationIgnoresInstanceOrder) {
    Rng rng = make_stream(9, "order");
    std::vector<EvalItem> items;
    for (std::size_t i = 0; i < 60; ++i)
        items.push_back(eval_item(i % 3 ? gen_slap_bimodal(6, rng) : gen_slap_clean(6, rng), i));
    const Sampler noisy = [](const EvalItem& it, std::size_t k) {
        Rng r = make_stream(10, "noisy", it.id);
        std::vector<PermMatrix> out;
        for (std::size_t j = 0; j < k; ++j) {
            const double u = uniform01(r);
            out.push_back(u < 0.4 ? it.modes[0] : u < 0.7 ? it.modes.back() : random_perm(it.modes[0].n(), r));
        }
        return out;
    };
    const std::string base = report_csv(evaluate(items, noisy, {5, 10}, Task::slap));
    Rng shuf(11);
    for (int t = 0; t < 5; ++t) {
        std::shuffle(items.begin(), items.end(), shuf);
        EXPECT_EQ(report_csv(evaluate(items, noisy, {10, 5}, Task::slap)), base);
    }
}

TEST(Evaluate, RatesStayInUnitInterval) {
    Rng rng = make_stream(12, "unit");
    std::vector<EvalItem> items;
    for (std::size_t i = 0; i < 40; ++i) items.push_back(eval_item(gen_sort_instance(6, i % 2 == 0, rng), i));
    const Sampler rand = [](const EvalItem& it, std::size_t k) {
        Rng r = make_stream(13, "rand", it.id);
        std::vector<PermMatrix> out;
        for (std::size_t j = 0; j < k; ++j) out.push_back(uniform01(r) < 0.5 ? it.modes[j % it.modes.size()] : random_perm(6, r));
        return out;
    };
    for (const auto& r : evaluate(items, rand, {1, 3, 20}, Task::sort))
        for (const auto& v : {r.clean_accuracy, r.clean_best_of_k, r.coverage_at_k, r.any_correct_at_k, r.calibration_error_mean}) {
            ASSERT_TRUE(v.has_value());
            EXPECT_GE(*v, 0.0);
            EXPECT_LE(*v, 1.0);
        }
}

TEST(Evaluate, SamplerFailureNamesInstance) {
    Rng rng = make_stream(14, "fail");
    std::vector<EvalItem> items{eval_item(gen_slap_clean(5, rng), 0), eval_item(gen_slap_clean(5, rng), 7)};
    const Sampler bad = [](const EvalItem& it, std::size_t k) -> std::vector<PermMatrix> {
        if (it.id == 7) throw FeasibilityError("drifted");
        return repeat(it.modes[0], k);
    };
    try {
        evaluate(items, bad, {3}, Task::slap);
        FAIL() << "expected a NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("instance 7"), std::string::npos);
    }
    const Sampler shorty = [](const EvalItem& it, std::size_t) { return repeat(it.modes[0], 1); };
    EXPECT_THROW(evaluate(items, shorty, {3}, Task::slap), ConfigError);
    EXPECT_THROW(evaluate(items, shorty, {}, Task::slap), ConfigError);
}

TEST(Report, CsvColumnOrderIsStable) {
    const std::string csv = report_csv({});
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "task,k,clean_count,ambiguous_count,clean_accuracy,clean_best_of_k,coverage_at_k,any_correct_at_k,"
              "calibration_error,optimality_gap,mode_balance,mode_balance_per_instance,degenerate_balance,"
              "degenerate_calibration,zero_coverage");
}
