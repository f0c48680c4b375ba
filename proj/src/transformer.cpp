#include "tender/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "tender/errors.hpp"
#include "tender/qgemm.hpp"

namespace tender::toy {

namespace {

constexpr double kLayerNormEps = 1e-5;

FloatMatrix gaussian(Index rows, Index cols, double stddev, std::mt19937_64& rng)
{
    std::normal_distribution<double> dist(0.0, stddev);
    FloatMatrix m(rows, cols);
    for (double& v : m.data())
        v = dist(rng);
    return m;
}

/// Called for every matmul of the block with its key and operands.
using MatmulHook = std::function<FloatMatrix(const std::string& key, const FloatMatrix& a, const FloatMatrix& b)>;

FloatMatrix run_block(const FloatMatrix& x, const BlockWeights& w, const MatmulHook& mm)
{
    if (x.cols() != w.d_model())
        throw ShapeError("transformer: input has " + std::to_string(x.cols()) + " features, block expects " +
                         std::to_string(w.d_model()));
    const Index n = x.rows(), d = w.d_model(), dh = w.d_head();

    const FloatMatrix h = layer_norm(x, w.ln1_gain, w.ln1_bias);
    const FloatMatrix q = mm("q_proj", h, w.wq);
    const FloatMatrix k = mm("k_proj", h, w.wk);
    const FloatMatrix v = mm("v_proj", h, w.wv);

    FloatMatrix attn(n, d);
    const double score_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (Index head = 0; head < w.num_heads; ++head) {
        const Index lo = head * dh, hi = lo + dh;
        const std::string tag = ".h" + std::to_string(head);
        FloatMatrix scores = mm("qk" + tag, q.col_slice(lo, hi), k.col_slice(lo, hi).transposed());
        for (double& s : scores.data())
            s *= score_scale;
        softmax_rows(scores);
        const FloatMatrix o = mm("sv" + tag, scores, v.col_slice(lo, hi));
        for (Index r = 0; r < n; ++r)
            for (Index c = 0; c < dh; ++c)
                attn(r, lo + c) = o(r, c);
    }

    FloatMatrix x1 = mm("o_proj", attn, w.wo);
    for (Index i = 0; i < x1.size(); ++i)
        x1.data()[i] += x.data()[i];

    const FloatMatrix h2 = layer_norm(x1, w.ln2_gain, w.ln2_bias);
    FloatMatrix f = mm("fc1", h2, w.fc1);
    for (double& v2 : f.data())
        v2 = std::max(v2, 0.0);
    FloatMatrix out = mm("fc2", f, w.fc2);
    for (Index i = 0; i < out.size(); ++i)
        out.data()[i] += x1.data()[i];
    return out;
}

bool is_act_act(const std::string& key) { return key.starts_with("qk.") || key.starts_with("sv."); }

std::string base_name(const std::string& key)
{
    const auto dot = key.find('.');
    return dot == std::string::npos ? key : key.substr(0, dot);
}

struct ErrorSums {
    double noise = 0.0, signal = 0.0, max_abs = 0.0;
    std::size_t count = 0;
    bool quantized = false;

    void add(const FloatMatrix& ref, const FloatMatrix& approx)
    {
        for (Index i = 0; i < ref.size(); ++i) {
            const double e = approx.data()[i] - ref.data()[i];
            noise += e * e;
            signal += ref.data()[i] * ref.data()[i];
            max_abs = std::max(max_abs, std::fabs(e));
        }
        count += ref.size();
    }

    ErrorMetrics metrics() const
    {
        ErrorMetrics m;
        m.mse = count ? noise / static_cast<double>(count) : 0.0;
        m.max_abs_err = max_abs;
        m.sqnr_db = noise == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(signal / noise);
        return m;
    }
};

} // namespace

FloatMatrix layer_norm(const FloatMatrix& x, std::span<const double> gain, std::span<const double> bias)
{
    if (gain.size() != x.cols() || bias.size() != x.cols())
        throw ShapeError("layer_norm: parameter length differs from feature count");
    FloatMatrix out(x.rows(), x.cols());
    const auto d = static_cast<double>(x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
        const auto row = x.row(r);
        const double mean = std::accumulate(row.begin(), row.end(), 0.0) / d;
        double var = 0.0;
        for (double v : row)
            var += (v - mean) * (v - mean);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        for (Index c = 0; c < x.cols(); ++c)
            out(r, c) = (row[c] - mean) * inv * gain[c] + bias[c];
    }
    return out;
}

void softmax_rows(FloatMatrix& x)
{
    for (Index r = 0; r < x.rows(); ++r) {
        auto row = x.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (double& v : row) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (double& v : row)
            v /= sum;
    }
}

BlockWeights init_block(Index d_model, Index d_ff, Index num_heads, std::uint64_t seed)
{
    if (d_model == 0 || d_ff == 0 || num_heads == 0 || d_model % num_heads != 0)
        throw ConfigError("init_block: need positive dims with d_model divisible by num_heads");
    std::mt19937_64 rng(seed);
    const double sd = 1.0 / std::sqrt(static_cast<double>(d_model));
    const double sd_ff = 1.0 / std::sqrt(static_cast<double>(d_ff));
    BlockWeights w;
    w.wq = gaussian(d_model, d_model, sd, rng);
    w.wk = gaussian(d_model, d_model, sd, rng);
    w.wv = gaussian(d_model, d_model, sd, rng);
    w.wo = gaussian(d_model, d_model, sd, rng);
    w.fc1 = gaussian(d_model, d_ff, sd, rng);
    w.fc2 = gaussian(d_ff, d_model, sd_ff, rng);
    w.ln1_gain.assign(d_model, 1.0);
    w.ln1_bias.assign(d_model, 0.0);
    w.ln2_gain.assign(d_model, 1.0);
    w.ln2_bias.assign(d_model, 0.0);
    w.num_heads = num_heads;
    w.seed = seed;
    return w;
}

std::vector<Index> outlier_channels(Index d_model, const OutlierSpec& spec)
{
    if (!(spec.fraction >= 0.0 && spec.fraction < 1.0))
        throw ConfigError("outlier fraction must be in [0, 1)");
    if (!(spec.magnitude >= 1.0))
        throw ConfigError("outlier magnitude must be >= 1");
    if (spec.fraction == 0.0 || d_model < 2)
        return {};
    auto count = static_cast<Index>(std::llround(spec.fraction * static_cast<double>(d_model)));
    count = std::clamp<Index>(count, 1, d_model - 1);

    std::vector<Index> idx(d_model);
    std::iota(idx.begin(), idx.end(), Index{0});
    std::mt19937_64 rng(spec.seed);
    // Partial Fisher-Yates; std::shuffle's draw pattern is implementation-defined.
    for (Index i = 0; i < count; ++i) {
        std::uniform_int_distribution<Index> pick(i, d_model - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return idx;
}

FloatMatrix make_input(Index n_tokens, Index d_model, const OutlierSpec& outliers, std::uint64_t seed)
{
    const auto channels = outlier_channels(d_model, outliers);
    std::mt19937_64 rng(seed);
    FloatMatrix x = gaussian(n_tokens, d_model, 1.0, rng);
    for (Index r = 0; r < n_tokens; ++r)
        for (Index c : channels)
            x(r, c) *= outliers.magnitude;
    return x;
}

FloatMatrix forward_float(const FloatMatrix& x, const BlockWeights& w)
{
    return run_block(x, w, [](const std::string&, const FloatMatrix& a, const FloatMatrix& b) {
        return matmul_float(a, b);
    });
}

QuantPath parse_path(const std::string& name)
{
    if (name == "explicit")
        return QuantPath::explicit_path;
    if (name == "implicit")
        return QuantPath::implicit_path;
    if (name == "sim")
        return QuantPath::sim;
    throw ConfigError("unknown path '" + name + "' (expected explicit, implicit or sim)");
}

std::string to_string(QuantPath path)
{
    switch (path) {
    case QuantPath::explicit_path: return "explicit";
    case QuantPath::implicit_path: return "implicit";
    case QuantPath::sim: return "sim";
    }
    return "?";
}

PlanSet calibrate_block(std::span<const FloatMatrix> samples, const BlockWeights& w, const QuantConfig& config)
{
    validate(config.plan_config());
    std::map<std::string, std::vector<FloatMatrix>> inputs;
    for (const auto& s : samples)
        run_block(s, w, [&](const std::string& key, const FloatMatrix& a, const FloatMatrix& b) {
            if (!is_act_act(key) || config.quantize_act_act)
                inputs[key].push_back(a);
            return matmul_float(a, b);
        });
    PlanSet plans;
    for (const auto& [key, acts] : inputs)
        plans[key] = std::make_shared<const DecompositionPlan>(build_plan(acts, config.plan_config()));
    return plans;
}

ForwardResult forward_quant(const FloatMatrix& x, const BlockWeights& w, const QuantConfig& config,
                            const PlanSet* plans)
{
    validate(config.plan_config());
    if (config.path == QuantPath::sim && config.alpha != 2)
        throw ConfigError("the simulator path requires alpha = 2");

    ForwardResult result;
    std::map<std::string, ErrorSums> sums;
    std::vector<std::string> order;
    GemmOptions gopts;
    gopts.acc_bits = config.acc_bits;
    msa::MSAConfig mcfg = config.msa;
    mcfg.acc_bits = config.acc_bits;
    mcfg.trace = false;

    auto hook = [&](const std::string& key, const FloatMatrix& a, const FloatMatrix& b) {
        const std::string name = base_name(key);
        if (!sums.contains(name))
            order.push_back(name);
        ErrorSums& es = sums[name];
        const FloatMatrix exact = matmul_float(a, b);
        if (is_act_act(key) && !config.quantize_act_act) {
            es.add(exact, exact);
            return exact;
        }

        std::shared_ptr<const DecompositionPlan> plan;
        if (plans)
            if (auto it = plans->find(key); it != plans->end())
                plan = it->second;
        if (!plan)
            plan = std::make_shared<const DecompositionPlan>(
                build_plan(std::span<const FloatMatrix>(&a, 1), config.plan_config()));

        const auto prep = prepare_gemm(a, b, plan, config.bits);
        FloatMatrix out;
        switch (config.path) {
        case QuantPath::explicit_path: {
            auto r = gemm_explicit(prep.qa, prep.qw, *plan, prep.correction, gopts);
            out = std::move(r.output);
            result.accumulators[key] = std::move(r.accumulators);
            break;
        }
        case QuantPath::implicit_path: {
            auto r = gemm_implicit(prep.qa, prep.qw, *plan, prep.correction, gopts);
            out = std::move(r.output);
            result.accumulators[key] = std::move(r.accumulators);
            break;
        }
        case QuantPath::sim: {
            auto r = msa::simulate_gemm(prep.qa, prep.qw, *plan, prep.correction, mcfg);
            out = std::move(r.output);
            result.accumulators[key] = std::move(r.accumulators);
            break;
        }
        }
        es.quantized = true;
        es.add(exact, out);
        return out;
    };

    result.output = run_block(x, w, hook);
    for (const auto& name : order)
        result.reports.push_back({name, sums[name].metrics(), sums[name].quantized});
    return result;
}

} // namespace tender::toy
