#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "support.hpp"
#include "tender/errors.hpp"
#include "tender/qgemm.hpp"
#include "tender/reference.hpp"

namespace tender {
namespace {

using test::make_instance;

GemmOptions wide()
{
    GemmOptions o;
    o.acc_bits = 64;
    return o;
}

// Hand-built plan over K channels: single chunk, given groups, unit bias.
std::shared_ptr<const DecompositionPlan> manual_plan(const std::vector<double>& cmax, int G, int bits = 8)
{
    PlanConfig cfg{bits, 2, G, 256};
    DecompositionPlan plan{cmax.size(), 256, bits, 2, G, {}};
    plan.chunks.push_back(make_chunk_plan(0, 1, std::vector<double>(cmax.size(), 0.0), cmax, cfg));
    return std::make_shared<const DecompositionPlan>(std::move(plan));
}

TEST(Implicit, ScalarHandTrace)
{
    // channel 0 in group 1, channel 1 in group 2
    auto plan = manual_plan({8.0, 4.0}, 2);
    ASSERT_EQ(plan->chunks[0].group_of, (std::vector<int>{1, 2}));
    const QuantizedActivation qa{IntMatrix(1, 2, 8, {1, 2}), plan};
    const QuantizedWeight qw{IntMatrix(2, 1, 8, {1, 1}), {1.0}};
    GemmOptions o;
    o.trace = true;
    const auto r = gemm_implicit(qa, qw, *plan, {}, o);
    EXPECT_EQ(r.accumulators(0, 0), 4);
    EXPECT_EQ(r.int_partials[0](0, 0), 1);
    EXPECT_EQ(r.int_partials[1](0, 0), 2);
    EXPECT_EQ(r.stats.rescales, 1u);
}

TEST(Implicit, TwoGroupIdentity)
{
    auto plan = manual_plan({8.0, 8.0, 3.0, 2.5}, 2);
    const QuantizedActivation qa{IntMatrix(1, 4, 8, {5, -3, 7, 11}), plan};
    const QuantizedWeight qw{IntMatrix(4, 1, 8, {2, 9, -4, 6}), {0.25}};
    const auto im = gemm_implicit(qa, qw, *plan);
    const auto ex = gemm_explicit(qa, qw, *plan);
    const std::int64_t p1 = 5 * 2 + -3 * 9, p2 = 7 * -4 + 11 * 6;
    EXPECT_EQ(im.accumulators(0, 0), 2 * p1 + p2);
    EXPECT_EQ(ex.accumulators(0, 0), 2 * p1 + p2);
    const double s1 = plan->chunks[0].ladder.scale(1), s2 = plan->chunks[0].ladder.scale(2);
    EXPECT_EQ(s1, 2 * s2);
    EXPECT_DOUBLE_EQ(im.output(0, 0), 0.25 * s2 * (2 * p1 + p2));
    EXPECT_DOUBLE_EQ(ex.output(0, 0), 0.25 * s1 * p1 + 0.25 * s2 * p2);
}

TEST(Explicit, SingleGroupIsPlainSymmetricGemm)
{
    std::mt19937_64 rng(1);
    const auto x = test::random_uniform(10, 16, rng, -3, 5);
    const auto w = test::random_gaussian(16, 6, rng);
    const auto in = make_instance(x, w, {8, 2, 1, 256});
    const auto r = gemm_explicit(in.prep.qa, in.prep.qw, *in.plan, in.prep.correction);

    // per-tensor quantization of the centered activation, per-column weights
    const auto bias = channel_bias(x);
    const auto xc = subtract_channel_bias(x, bias);
    const auto qx = quantize_symmetric(xc, 8, Granularity::per_tensor);
    const auto qw = quantize_symmetric(w, 8, Granularity::per_column);
    for (Index i = 0; i < 10; ++i)
        for (Index j = 0; j < 6; ++j) {
            std::int64_t acc = 0;
            double corr = 0, mag = 0;
            for (Index k = 0; k < 16; ++k) {
                acc += qx.values(i, k) * qw.values(k, j);
                corr += bias[k] * w(k, j);
                mag += std::fabs(bias[k] * w(k, j));
            }
            ASSERT_EQ(r.accumulators(i, j), acc);
            const double y = qx.params.scales[0] * qw.params.scales[j] * acc + corr;
            ASSERT_TRUE(test::close_rel(r.output(i, j), y, 1e-12, std::fabs(y) + mag));
        }
}

TEST(Paths, ZeroActivationGivesCorrectionExactly)
{
    std::mt19937_64 rng(2);
    FloatMatrix x(6, 8);
    for (Index c = 0; c < 8; ++c)
        for (Index r = 0; r < 6; ++r)
            x(r, c) = 0.5 * static_cast<double>(c) - 1.0;
    const auto w = test::random_gaussian(8, 5, rng);
    const auto in = make_instance(x, w, {8, 2, 4, 256});
    for (const auto& r : {gemm_explicit(in.prep.qa, in.prep.qw, *in.plan, in.prep.correction),
                          gemm_implicit(in.prep.qa, in.prep.qw, *in.plan, in.prep.correction)})
        for (Index i = 0; i < 6; ++i)
            for (Index j = 0; j < 5; ++j)
                EXPECT_EQ(r.output(i, j), in.prep.correction[0](0, j));

    const auto cmp = compare_paths(FloatMatrix(4, 4), FloatMatrix::identity(4), {8, 2, 8, 256});
    for (const auto& p : cmp.paths)
        EXPECT_EQ(p.metrics.mse, 0.0) << p.path;
}

// Independent oracle for the float output: every activation element
// quantized with the scale of its interval, computed here from scratch.
TEST(Paths, SmallRandomCaseMatchesScalarOracleAndBound)
{
    std::mt19937_64 rng(3);
    const auto x = test::random_spread(8, 12, 5, rng);
    const auto w = test::random_gaussian(12, 4, rng);
    const auto in = make_instance(x, w, {8, 2, 3, 256});
    const auto ex = gemm_explicit(in.prep.qa, in.prep.qw, *in.plan, in.prep.correction);
    const auto im = gemm_implicit(in.prep.qa, in.prep.qw, *in.plan, in.prep.correction);

    std::vector<double> bias(12), cmax(12), sg(12), sw(4, 0.0);
    double tmax = 0;
    for (Index k = 0; k < 12; ++k) {
        double lo = HUGE_VAL, hi = -HUGE_VAL;
        for (Index r = 0; r < 8; ++r) {
            lo = std::min(lo, x(r, k));
            hi = std::max(hi, x(r, k));
        }
        bias[k] = (lo + hi) / 2;
        cmax[k] = (hi - lo) / 2;
        tmax = std::max(tmax, cmax[k]);
    }
    for (Index k = 0; k < 12; ++k) {
        int g = 1;
        while (g < 3 && cmax[k] <= tmax / std::ldexp(1.0, g))
            ++g;
        sg[k] = tmax / 127 / std::ldexp(1.0, g - 1);
    }
    for (Index j = 0; j < 4; ++j) {
        for (Index k = 0; k < 12; ++k)
            sw[j] = std::max(sw[j], std::fabs(w(k, j)));
        sw[j] /= 127;
    }
    const auto ref = matmul_float(x, w);
    for (Index i = 0; i < 8; ++i)
        for (Index j = 0; j < 4; ++j) {
            double y = 0, mag = 0, bound = 0;
            for (Index k = 0; k < 12; ++k) {
                const double xq = std::round((x(i, k) - bias[k]) / sg[k]) * sg[k];
                const double wq = std::round(w(k, j) / sw[j]) * sw[j];
                y += xq * wq + bias[k] * w(k, j);
                mag += std::fabs(xq * wq) + std::fabs(bias[k] * w(k, j));
                bound += sg[k] / 2 * std::fabs(wq) + sw[j] / 2 * std::fabs(x(i, k) - bias[k]);
            }
            ASSERT_TRUE(test::close_rel(ex.output(i, j), y, 1e-9, mag));
            ASSERT_TRUE(test::close_rel(im.output(i, j), y, 1e-9, mag));
            ASSERT_LE(std::fabs(im.output(i, j) - ref(i, j)), bound * (1 + 1e-9));
        }
}

TEST(Paths, CoreIdentityAtScale)
{
    std::mt19937_64 rng(4);
    const auto x = test::random_spread(64, 128, 12, rng);
    const auto w = test::random_gaussian(128, 64, rng);
    const auto in = make_instance(x, w, {4, 2, 8, 256});
    GemmOptions o = wide();
    o.trace = true;
    const auto ex = gemm_explicit(in.prep.qa, in.prep.qw, *in.plan, in.prep.correction, o);
    const auto im = gemm_implicit(in.prep.qa, in.prep.qw, *in.plan, in.prep.correction, o);
    ASSERT_FALSE(im.overflow_flag);
    EXPECT_EQ(im.accumulators.data().size(), ex.accumulators.data().size());
    for (Index i = 0; i < im.accumulators.size(); ++i)
        ASSERT_EQ(im.accumulators.data()[i], ex.accumulators.data()[i]);
    for (Index i = 0; i < 64; ++i)
        for (Index j = 0; j < 64; ++j) {
            double mag = std::fabs(in.prep.correction[0](0, j));
            for (int g = 1; g <= 8; ++g)
                mag += std::fabs(in.plan->chunks[0].ladder.scale(g) * in.prep.qw.col_scales[j] *
                                 static_cast<double>(ex.int_partials[static_cast<Index>(g - 1)](i, j)));
            ASSERT_TRUE(test::close_rel(im.output(i, j), ex.output(i, j), 1e-9, mag));
        }
}

// Property: over random instances, implicit accumulators equal
// sum_g alpha^(G-g) P_g computed by the serial oracle in 128 bits.
TEST(Paths, AccumulatorIdentityProperty)
{
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> dim(1, 40), gpick(1, 16), apick(2, 3);
    for (int trial = 0; trial < 150; ++trial) {
        const int G = gpick(rng), alpha = apick(rng), bits = trial % 2 ? 4 : 8;
        const auto x = test::random_spread(dim(rng), dim(rng), 2.0 * G, rng);
        const auto w = test::random_gaussian(x.cols(), dim(rng), rng);
        const auto in = make_instance(x, w, {bits, alpha, G, Index(1 + trial % 17)});
        const auto im = gemm_implicit(in.prep.qa, in.prep.qw, *in.plan, in.prep.correction, wide());
        const auto ser = reference::gemm_implicit(in.prep.qa, in.prep.qw, *in.plan, in.prep.correction);
        const auto ser_ex = reference::gemm_explicit(in.prep.qa, in.prep.qw, *in.plan, in.prep.correction);
        for (Index i = 0; i < im.accumulators.size(); ++i) {
            ASSERT_EQ(static_cast<int128>(im.accumulators.data()[i]), ser.accumulators[i]);
            int128 acc = 0;
            for (int g = 1; g <= G; ++g)
                acc = acc * alpha + ser_ex.partials[static_cast<Index>(g - 1)][i];
            ASSERT_EQ(ser.accumulators[i], acc);
        }
    }
}

TEST(Paths, ParallelMatchesSerialReference)
{
    std::mt19937_64 rng(6);
    const auto x = test::random_spread(300, 48, 10, rng);
    const auto w = test::random_gaussian(48, 20, rng);
    const auto in = make_instance(x, w, {8, 2, 6, 64});
    const auto ex = gemm_explicit(in.prep.qa, in.prep.qw, *in.plan, in.prep.correction, wide());
    const auto im = gemm_implicit(in.prep.qa, in.prep.qw, *in.plan, in.prep.correction, wide());
    const auto sex = reference::gemm_explicit(in.prep.qa, in.prep.qw, *in.plan, in.prep.correction);
    const auto sim = reference::gemm_implicit(in.prep.qa, in.prep.qw, *in.plan, in.prep.correction);
    for (Index i = 0; i < ex.output.size(); ++i) {
        ASSERT_EQ(ex.output.data()[i], sex.output.data()[i]);
        ASSERT_EQ(im.output.data()[i], sim.output.data()[i]);
        ASSERT_EQ(static_cast<int128>(ex.accumulators.data()[i]), sex.accumulators[i]);
    }
}

TEST(Paths, GroupOrderMatters)
{
    std::mt19937_64 rng(7);
    const auto x = test::random_spread(16, 32, 8, rng);
    const auto w = test::random_gaussian(32, 8, rng);
    const auto in = make_instance(x, w, {8, 2, 4, 256});
    const auto im = gemm_implicit(in.prep.qa, in.prep.qw, *in.plan, in.prep.correction, wide());
    const auto& ch = in.plan->chunks[0];
    int differs = 0;
    for (Index i = 0; i < 16; ++i)
        for (Index j = 0; j < 8; ++j) {
            std::int64_t asc = 0, desc = 0;
            for (int g = 1; g <= 4; ++g) {
                asc *= 2;
                for (Index k : ch.group_channels(g))
                    asc += in.prep.qa.data(i, k) * in.prep.qw.data(k, j);
            }
            for (int g = 4; g >= 1; --g) {
                desc *= 2;
                for (Index k : ch.group_channels(g))
                    desc += in.prep.qa.data(i, k) * in.prep.qw.data(k, j);
            }
            ASSERT_EQ(im.accumulators(i, j), asc);
            differs += asc != desc;
        }
    EXPECT_GT(differs, 0);
}

TEST(Paths, ReductionAxisIsPreserved)
{
    std::mt19937_64 rng(8);
    const auto x = test::random_spread(5, 24, 8, rng);
    const auto w = test::random_gaussian(24, 3, rng);
    for (int G : {1, 4, 9}) {
        const auto in = make_instance(x, w, {8, 2, G, 256});
        const auto im = gemm_implicit(in.prep.qa, in.prep.qw, *in.plan, in.prep.correction);
        const auto ex = gemm_explicit(in.prep.qa, in.prep.qw, *in.plan, in.prep.correction);
        EXPECT_EQ(im.stats.reduction_passes, 15u);
        EXPECT_EQ(im.stats.macs, 15u * 24);
        EXPECT_EQ(im.stats.rescales, 15u * static_cast<unsigned>(G - 1));
        EXPECT_EQ(ex.stats.reduction_passes, 15u * static_cast<unsigned>(G));
        EXPECT_EQ(ex.stats.macs, 15u * 24);
    }
}

TEST(Paths, ChannelPermutationInvariance)
{
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = test::random_spread(20, 30, 10, rng);
        const auto w = test::random_gaussian(30, 7, rng);
        std::vector<Index> perm(30);
        std::iota(perm.begin(), perm.end(), Index{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        FloatMatrix xp(20, 30), wp(30, 7);
        for (Index k = 0; k < 30; ++k) {
            for (Index r = 0; r < 20; ++r)
                xp(r, k) = x(r, perm[k]);
            for (Index j = 0; j < 7; ++j)
                wp(k, j) = w(perm[k], j);
        }
        const PlanConfig cfg{8, 2, 5, 8};
        const auto a = make_instance(x, w, cfg);
        const auto b = make_instance(xp, wp, cfg);
        const auto ra = gemm_implicit(a.prep.qa, a.prep.qw, *a.plan, a.prep.correction, wide());
        const auto rb = gemm_implicit(b.prep.qa, b.prep.qw, *b.plan, b.prep.correction, wide());
        const auto ea = gemm_explicit(a.prep.qa, a.prep.qw, *a.plan, a.prep.correction, wide());
        const auto eb = gemm_explicit(b.prep.qa, b.prep.qw, *b.plan, b.prep.correction, wide());
        const auto fa = gemm_reference(x, w), fb = gemm_reference(xp, wp);
        ASSERT_EQ(ra.accumulators, rb.accumulators);
        for (Index i = 0; i < fa.size(); ++i) {
            const double scale = std::fabs(fa.data()[i]) + 10 * std::fabs(a.prep.correction[0].data()[i % 7]) + 1.0;
            ASSERT_TRUE(test::close_rel(ra.output.data()[i], rb.output.data()[i], 1e-9, scale));
            ASSERT_TRUE(test::close_rel(ea.output.data()[i], eb.output.data()[i], 1e-9, scale));
            ASSERT_TRUE(test::close_rel(fa.data()[i], fb.data()[i], 1e-9, scale));
        }
    }
}

// Oracle: replay the implicit accumulation in 128 bits and check that the
// flag is raised exactly when some intermediate leaves the declared width.
TEST(Overflow, FlagMatchesExactReplay)
{
    std::mt19937_64 rng(10);
    int raised = 0, clear = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int acc_bits = 10 + trial % 12;
        const auto x = test::random_spread(3, 16, 6, rng);
        const auto w = test::random_gaussian(16, 3, rng);
        const auto in = make_instance(x, w, {8, 2, 1 + trial % 6, 256});
        GemmOptions o;
        o.acc_bits = acc_bits;
        o.throw_on_overflow = false;
        const auto im = gemm_implicit(in.prep.qa, in.prep.qw, *in.plan, in.prep.correction, o);
        const int128 limit = (int128{1} << (acc_bits - 1)) - 1;
        bool expect = false;
        const auto& ch = in.plan->chunks[0];
        for (Index i = 0; i < 3; ++i)
            for (Index j = 0; j < 3; ++j) {
                int128 acc = 0;
                for (int g = 1; g <= in.plan->num_groups; ++g) {
                    if (g > 1) {
                        acc *= 2;
                        expect = expect || acc > limit || acc < -limit;
                    }
                    for (Index k : ch.group_channels(g)) {
                        acc += static_cast<int128>(in.prep.qa.data(i, k)) * in.prep.qw.data(k, j);
                        expect = expect || acc > limit || acc < -limit;
                    }
                }
            }
        ASSERT_EQ(im.overflow_flag, expect) << "trial " << trial;
        (expect ? raised : clear)++;
        if (expect) {
            o.throw_on_overflow = true;
            EXPECT_THROW(gemm_implicit(in.prep.qa, in.prep.qw, *in.plan, in.prep.correction, o), OverflowError);
        }
    }
    EXPECT_GT(raised, 10);
    EXPECT_GT(clear, 10);
}

TEST(Overflow, ExplicitPartialsChecked)
{
    auto plan = manual_plan({1.0}, 1, 16);
    const QuantizedActivation qa{IntMatrix(1, 1, 16, {32767}), plan};
    const QuantizedWeight qw{IntMatrix(1, 1, 16, {32767}), {1.0}};
    GemmOptions o;
    o.acc_bits = 16;
    EXPECT_THROW(gemm_explicit(qa, qw, *plan, {}, o), OverflowError);
    o.acc_bits = 64;
    EXPECT_EQ(gemm_explicit(qa, qw, *plan, {}, o).accumulators(0, 0), 32767LL * 32767);
    o.acc_bits = 1;
    EXPECT_THROW(gemm_explicit(qa, qw, *plan, {}, o), ConfigError);
}

TEST(Paths, ShapeErrors)
{
    const auto in = make_instance(test::walking_example(), FloatMatrix::identity(6), {8, 2, 3, 256});
    const QuantizedWeight bad{IntMatrix(5, 2, 8), {1.0, 1.0}};
    EXPECT_THROW(gemm_implicit(in.prep.qa, bad, *in.plan), ShapeError);
    const std::vector<FloatMatrix> two(2, FloatMatrix(1, 6));
    EXPECT_THROW(gemm_explicit(in.prep.qa, in.prep.qw, *in.plan, two), ShapeError);
    EXPECT_THROW(prepare_gemm(FloatMatrix(2, 6), FloatMatrix(5, 2), in.plan, 8), ShapeError);
}

TEST(Compare, CleanInputHighSqnr)
{
    std::mt19937_64 rng(11);
    const auto x = test::random_gaussian(64, 64, rng);
    const auto w = test::random_gaussian(64, 32, rng);
    const auto report = compare_paths(x, w, {8, 2, 8, 256});
    ASSERT_EQ(report.paths.size(), 3u);
    EXPECT_EQ(report.paths[0].path, "reference");
    EXPECT_TRUE(std::isinf(report.paths[0].metrics.sqnr_db));
    EXPECT_GT(report.paths[1].metrics.sqnr_db, 30.0);
    EXPECT_NEAR(report.paths[1].metrics.mse, report.paths[2].metrics.mse, 1e-12);
}

TEST(Compare, OutliersFavourMoreGroups)
{
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        auto x = test::random_gaussian(64, 64, rng);
        std::vector<Index> cols(64);
        std::iota(cols.begin(), cols.end(), Index{0});
        std::shuffle(cols.begin(), cols.end(), rng);
        for (Index c = 0; c < 2; ++c)
            for (Index r = 0; r < 64; ++r)
                x(r, cols[c]) *= 50.0;
        const auto w = test::random_gaussian(64, 32, rng);
        const double g1 = compare_paths(x, w, {4, 2, 1, 256}).paths[2].metrics.mse;
        const double g8 = compare_paths(x, w, {4, 2, 8, 256}).paths[2].metrics.mse;
        wins += g8 < g1;
    }
    EXPECT_GE(wins, 95);
}

} // namespace
} // namespace tender
