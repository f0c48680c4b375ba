#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "support.hpp"
#include "tender/errors.hpp"
#include "tender/transformer.hpp"

namespace tender::toy {
namespace {

// Straight-loop block used as an oracle for forward_float.
FloatMatrix naive_block(const FloatMatrix& x, const BlockWeights& w)
{
    const Index n = x.rows(), d = w.d_model(), dh = w.d_head();
    auto ln = [&](const FloatMatrix& in, const std::vector<double>& g, const std::vector<double>& b) {
        FloatMatrix out(n, d);
        for (Index r = 0; r < n; ++r) {
            double mean = 0, var = 0;
            for (Index c = 0; c < d; ++c)
                mean += in(r, c);
            mean /= static_cast<double>(d);
            for (Index c = 0; c < d; ++c)
                var += (in(r, c) - mean) * (in(r, c) - mean);
            var /= static_cast<double>(d);
            for (Index c = 0; c < d; ++c)
                out(r, c) = (in(r, c) - mean) / std::sqrt(var + 1e-5) * g[c] + b[c];
        }
        return out;
    };
    auto mm = [](const FloatMatrix& a, const FloatMatrix& b) {
        FloatMatrix out(a.rows(), b.cols());
        for (Index i = 0; i < a.rows(); ++i)
            for (Index j = 0; j < b.cols(); ++j)
                for (Index k = 0; k < a.cols(); ++k)
                    out(i, j) += a(i, k) * b(k, j);
        return out;
    };
    const auto h = ln(x, w.ln1_gain, w.ln1_bias);
    const auto q = mm(h, w.wq), k = mm(h, w.wk), v = mm(h, w.wv);
    FloatMatrix attn(n, d);
    for (Index head = 0; head < w.num_heads; ++head)
        for (Index i = 0; i < n; ++i) {
            std::vector<double> s(n);
            double mx = -HUGE_VAL, sum = 0;
            for (Index j = 0; j < n; ++j) {
                for (Index c = 0; c < dh; ++c)
                    s[j] += q(i, head * dh + c) * k(j, head * dh + c);
                s[j] /= std::sqrt(static_cast<double>(dh));
                mx = std::max(mx, s[j]);
            }
            for (double& e : s) {
                e = std::exp(e - mx);
                sum += e;
            }
            for (Index c = 0; c < dh; ++c)
                for (Index j = 0; j < n; ++j)
                    attn(i, head * dh + c) += s[j] / sum * v(j, head * dh + c);
        }
    auto x1 = mm(attn, w.wo);
    for (Index i = 0; i < x1.size(); ++i)
        x1.data()[i] += x.data()[i];
    auto f = mm(ln(x1, w.ln2_gain, w.ln2_bias), w.fc1);
    for (double& e : f.data())
        e = std::max(e, 0.0);
    auto out = mm(f, w.fc2);
    for (Index i = 0; i < out.size(); ++i)
        out.data()[i] += x1.data()[i];
    return out;
}

TEST(Block, DeterministicPerSeed)
{
    EXPECT_EQ(init_block(16, 32, 2, 5).wq, init_block(16, 32, 2, 5).wq);
    EXPECT_EQ(init_block(16, 32, 2, 5).fc2, init_block(16, 32, 2, 5).fc2);
    EXPECT_NE(init_block(16, 32, 2, 5).wq, init_block(16, 32, 2, 6).wq);
    EXPECT_THROW(init_block(15, 32, 2, 1), std::invalid_argument);
}

TEST(Block, WeightsHaveNoOutliers)
{
    const auto w = init_block(128, 512, 4, 1);
    for (const FloatMatrix* m : {&w.wq, &w.wk, &w.wv, &w.wo, &w.fc1, &w.fc2}) {
        std::vector<double> colmax(m->cols(), 0.0);
        for (Index r = 0; r < m->rows(); ++r)
            for (Index c = 0; c < m->cols(); ++c)
                colmax[c] = std::max(colmax[c], std::fabs((*m)(r, c)));
        std::sort(colmax.begin(), colmax.end());
        EXPECT_LT(colmax.back() / colmax[colmax.size() / 2], 2.5);
    }
}

TEST(Input, OutlierInjection)
{
    const auto plain = make_input(64, 32, {0.0, 50.0, 1}, 9);
    const auto unit = make_input(64, 32, {0.25, 1.0, 1}, 9);
    EXPECT_EQ(plain, unit);

    const OutlierSpec spec{0.125, 40.0, 3};
    const auto ch = outlier_channels(128, spec);
    EXPECT_EQ(ch.size(), 16u);
    EXPECT_TRUE(std::is_sorted(ch.begin(), ch.end()));
    EXPECT_EQ(outlier_channels(4, {0.01, 2.0, 0}).size(), 1u);
    EXPECT_EQ(outlier_channels(4, {0.99, 2.0, 0}).size(), 3u);
    EXPECT_THROW(outlier_channels(4, {1.0, 2.0, 0}), ConfigError);
    EXPECT_THROW(outlier_channels(4, {0.5, 0.5, 0}), ConfigError);

    const auto x = make_input(256, 128, spec, 4);
    std::vector<double> cmax(128, 0.0);
    for (Index r = 0; r < 256; ++r)
        for (Index c = 0; c < 128; ++c)
            cmax[c] = std::max(cmax[c], std::fabs(x(r, c)));
    std::vector<double> sorted = cmax;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[64];
    double mean_ratio = 0;
    for (Index c : ch)
        mean_ratio += cmax[c] / median;
    mean_ratio /= static_cast<double>(ch.size());
    EXPECT_NEAR(mean_ratio, 40.0, 40.0 * 0.25);
}

TEST(Forward, MatchesNaiveBlock)
{
    const auto w = init_block(16, 48, 4, 11);
    const auto x = make_input(10, 16, {0.125, 8.0, 2}, 12);
    const auto y = forward_float(x, w);
    const auto ref = naive_block(x, w);
    ASSERT_EQ(y.rows(), 10u);
    ASSERT_EQ(y.cols(), 16u);
    for (Index i = 0; i < y.size(); ++i)
        EXPECT_NEAR(y.data()[i], ref.data()[i], 1e-10 * (1 + std::fabs(ref.data()[i])));
}

TEST(Forward, ZeroInputStaysFinite)
{
    const auto w = init_block(16, 32, 2, 1);
    const auto y = forward_float(FloatMatrix(4, 16), w);
    for (double v : y.data())
        EXPECT_TRUE(std::isfinite(v));
    const auto q = forward_quant(FloatMatrix(4, 16), w, {});
    for (double v : q.output.data())
        EXPECT_TRUE(std::isfinite(v));
    EXPECT_THROW(forward_float(FloatMatrix(4, 8), w), ShapeError);
}

TEST(Forward, GoldenFixture)
{
    const auto w = init_block(16, 32, 2, 42);
    const auto x = make_input(8, 16, {0.125, 20.0, 7}, 43);
    const auto y = forward_float(x, w);
    const std::pair<Index, double> golden[] = {
        {0, 0.94086105215535243},
        {5, 0.062535683714197876},
        {17, -1.6084364126500814},
        {127, 8.7741724665044174},
    };
    for (const auto& [i, v] : golden)
        EXPECT_NEAR(y.data()[i], v, 1e-12 * (1 + std::fabs(v))) << "element " << i;
}

QuantConfig qconfig(int bits, int G, QuantPath path, bool act_act = false)
{
    QuantConfig c;
    c.bits = bits;
    c.num_groups = G;
    c.path = path;
    c.quantize_act_act = act_act;
    c.msa.pe_rows = 16;
    c.msa.pe_cols = 16;
    return c;
}

TEST(Quant, PathsAgreeOnEveryIntegerTensor)
{
    const auto w = init_block(32, 64, 2, 3);
    const auto x = make_input(40, 32, {0.0625, 30.0, 1}, 4);
    const auto ex = forward_quant(x, w, qconfig(8, 6, QuantPath::explicit_path, true));
    const auto im = forward_quant(x, w, qconfig(8, 6, QuantPath::implicit_path, true));
    const auto sim = forward_quant(x, w, qconfig(8, 6, QuantPath::sim, true));
    ASSERT_EQ(im.accumulators.size(), 6u + 2 * 2);
    for (const auto& [key, acc] : im.accumulators) {
        ASSERT_TRUE(ex.accumulators.contains(key));
        EXPECT_TRUE(std::equal(acc.data().begin(), acc.data().end(), ex.accumulators.at(key).data().begin()))
            << key;
        EXPECT_EQ(sim.accumulators.at(key), acc) << key;
    }
    EXPECT_EQ(sim.output, im.output);
    for (Index i = 0; i < im.output.size(); ++i)
        EXPECT_NEAR(im.output.data()[i], ex.output.data()[i], 1e-9 * (1 + std::fabs(ex.output.data()[i])));
}

TEST(Quant, ZeroWeightsLeaveResidualPath)
{
    auto w = init_block(16, 32, 2, 5);
    for (FloatMatrix* m : {&w.wq, &w.wk, &w.wv, &w.wo, &w.fc1, &w.fc2})
        *m = FloatMatrix(m->rows(), m->cols());
    const auto x = make_input(12, 16, {0.125, 10.0, 1}, 6);
    const auto y = forward_float(x, w);
    const auto q = forward_quant(x, w, qconfig(8, 4, QuantPath::implicit_path, true));
    EXPECT_EQ(y, x);
    EXPECT_EQ(q.output, x);
}

TEST(Quant, MoreGroupsReduceErrorOnOutliers)
{
    const auto w = init_block(64, 128, 4, 7);
    const auto x = make_input(128, 64, {0.03125, 50.0, 8}, 9);
    const auto ref = forward_float(x, w);
    const double e1 = relative_frobenius_error(ref, forward_quant(x, w, qconfig(8, 1, QuantPath::implicit_path)).output);
    const double e8 = relative_frobenius_error(ref, forward_quant(x, w, qconfig(8, 8, QuantPath::implicit_path)).output);
    EXPECT_LT(e8, e1);
}

TEST(Quant, ActActToggleOnlyTouchesAttentionMatmuls)
{
    const auto w = init_block(32, 64, 2, 13);
    const auto x = make_input(24, 32, {0.0625, 20.0, 2}, 14);
    const auto off = forward_quant(x, w, qconfig(8, 4, QuantPath::implicit_path, false));
    const auto on = forward_quant(x, w, qconfig(8, 4, QuantPath::implicit_path, true));
    ASSERT_EQ(off.reports.size(), 8u);
    ASSERT_EQ(on.reports.size(), 8u);
    for (Index i = 0; i < 8; ++i) {
        const auto& a = off.reports[i];
        const auto& b = on.reports[i];
        ASSERT_EQ(a.name, b.name);
        if (a.name == "qk" || a.name == "sv") {
            EXPECT_FALSE(a.quantized);
            EXPECT_TRUE(b.quantized);
            EXPECT_EQ(a.metrics.mse, 0.0);
            EXPECT_GT(b.metrics.mse, 0.0);
        } else if (a.name == "q_proj" || a.name == "k_proj" || a.name == "v_proj") {
            EXPECT_EQ(a.metrics.mse, b.metrics.mse) << a.name;
        }
    }
    EXPECT_EQ(off.accumulators.count("qk.h0"), 0u);
    EXPECT_EQ(on.accumulators.count("qk.h1"), 1u);
}

TEST(Quant, DeploymentCalibrationPlans)
{
    const auto w = init_block(32, 64, 2, 15);
    std::vector<FloatMatrix> samples;
    for (std::uint64_t s = 0; s < 3; ++s)
        samples.push_back(make_input(32, 32, {0.0625, 20.0, 1}, 100 + s));
    auto cfg = qconfig(8, 4, QuantPath::implicit_path, true);
    const auto plans = calibrate_block(samples, w, cfg);
    EXPECT_EQ(plans.size(), 6u + 2 * 2);
    EXPECT_TRUE(plans.contains("sv.h1"));
    const auto x = make_input(32, 32, {0.0625, 20.0, 1}, 200);
    const auto y = forward_quant(x, w, cfg, &plans);
    EXPECT_LT(relative_frobenius_error(forward_float(x, w), y.output), 0.1);
}

TEST(Quant, PathParsing)
{
    EXPECT_EQ(parse_path("sim"), QuantPath::sim);
    EXPECT_EQ(to_string(parse_path("explicit")), "explicit");
    EXPECT_THROW(parse_path("fast"), ConfigError);
    auto cfg = qconfig(8, 4, QuantPath::sim);
    cfg.alpha = 3;
    EXPECT_THROW(forward_quant(FloatMatrix(4, 16), init_block(16, 32, 2, 1), cfg), ConfigError);
}

} // namespace
} // namespace tender::toy
