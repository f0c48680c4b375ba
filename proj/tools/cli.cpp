#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>

#include <omp.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "tender/calibrate.hpp"
#include "tender/errors.hpp"
#include "tender/msa_sim.hpp"
#include "tender/plan_io.hpp"
#include "tender/qgemm.hpp"
#include "tender/tnsr.hpp"
#include "tender/transformer.hpp"

namespace tender::cli {

namespace {

using json = nlohmann::ordered_json;

struct QuantFlags {
    int bits = 8;
    int alpha = 2;
    std::vector<int> groups{8};
    Index chunk = 256;
    std::string format = "text";
    int acc_bits = 32;
    Index pe_rows = 64;
    Index pe_cols = 64;
    int pe_bits = 4;
    int jobs = 0;
};

void add_quant_flags(CLI::App& cmd, QuantFlags& f, bool group_list)
{
    cmd.add_option("--bits", f.bits, "Quantization bit width (4, 8, 16)")->capture_default_str();
    cmd.add_option("--alpha", f.alpha, "Integer ratio between adjacent group scales")->capture_default_str();
    auto* g = cmd.add_option("--groups", f.groups, group_list ? "Group counts, comma separated" : "Group count")
                  ->capture_default_str();
    if (group_list)
        g->delimiter(',');
    else
        g->expected(1);
    cmd.add_option("--chunk", f.chunk, "Rows per calibration chunk")->capture_default_str();
    cmd.add_option("--format", f.format, "Report format")->check(CLI::IsMember({"text", "csv"}))->capture_default_str();
    cmd.add_option("--acc-bits", f.acc_bits, "Accumulator width")->capture_default_str();
    cmd.add_option("--pe-rows", f.pe_rows, "Systolic array rows")->capture_default_str();
    cmd.add_option("--pe-cols", f.pe_cols, "Systolic array columns")->capture_default_str();
    cmd.add_option("--pe-bits", f.pe_bits, "PE operand width (4 or 8)")->capture_default_str();
    cmd.add_option("--jobs", f.jobs, "Worker threads (0 = runtime default)");
}

PlanConfig plan_config(const QuantFlags& f, int groups) { return {f.bits, f.alpha, groups, f.chunk}; }

msa::MSAConfig msa_config(const QuantFlags& f)
{
    msa::MSAConfig cfg;
    cfg.pe_rows = f.pe_rows;
    cfg.pe_cols = f.pe_cols;
    cfg.pe_bits = f.pe_bits;
    cfg.acc_bits = f.acc_bits;
    return cfg;
}

json number(double v)
{
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    return v;
}

json metrics_json(const ErrorMetrics& m)
{
    return {{"mse", number(m.mse)}, {"max_abs_err", number(m.max_abs_err)}, {"sqnr_db", number(m.sqnr_db)}};
}

std::string fmt(double v)
{
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

FloatMatrix load_float(const std::string& path) { return tnsr::read_file(path).as_float(); }

// -- calibrate -------------------------------------------------------------

struct CalibrateArgs {
    std::vector<std::string> samples;
    std::string output;
};

int cmd_calibrate(const CalibrateArgs& a, const QuantFlags& f, std::ostream& out)
{
    std::vector<FloatMatrix> samples;
    for (const auto& p : a.samples)
        samples.push_back(load_float(p));
    const auto plan = build_plan(samples, plan_config(f, f.groups.front()));
    if (a.output.empty())
        out << plan_io::to_text(plan);
    else
        plan_io::write_file(a.output, plan);
    return kOk;
}

// -- gemm -------------------------------------------------------------------

struct GemmArgs {
    std::string x, w, plan, path = "all", trace;
};

int cmd_gemm(const GemmArgs& a, const QuantFlags& f, std::ostream& out)
{
    const FloatMatrix x = load_float(a.x);
    const FloatMatrix w = load_float(a.w);
    if (x.cols() != w.rows())
        throw ShapeError("gemm: X has " + std::to_string(x.cols()) + " columns, W has " + std::to_string(w.rows()) +
                         " rows");
    const bool want_ex = a.path == "all" || a.path == "explicit";
    const bool want_im = a.path == "all" || a.path == "implicit";
    const bool want_sim = a.path == "all" || a.path == "sim";

    std::vector<std::shared_ptr<const DecompositionPlan>> plans;
    if (!a.plan.empty())
        plans.push_back(std::make_shared<const DecompositionPlan>(plan_io::read_file(a.plan)));
    else
        for (int g : f.groups)
            plans.push_back(
                std::make_shared<const DecompositionPlan>(build_plan(std::span<const FloatMatrix>(&x, 1), plan_config(f, g))));
    if (want_sim && std::any_of(plans.begin(), plans.end(), [](const auto& p) { return p->alpha != 2; }))
        throw ConfigError("gemm: the sim path requires alpha = 2");
    if (!a.trace.empty() && (!want_sim || plans.size() != 1))
        throw ConfigError("gemm: --trace needs the sim path and a single group count");

    const FloatMatrix ref = gemm_reference(x, w);
    GemmOptions gopts;
    gopts.acc_bits = f.acc_bits;
    msa::MSAConfig mcfg = msa_config(f);
    mcfg.trace = !a.trace.empty();

    json runs = json::array();
    std::ostringstream csv;
    csv << "G,path,mse,max_abs_err,sqnr_db,total_cycles,bubble_cycles,tile_passes\n";
    for (const auto& plan : plans) {
        const auto prep = prepare_gemm(x, w, plan, plan->bits);
        json run;
        run["G"] = plan->num_groups;
        json paths;
        auto emit = [&](const std::string& name, const FloatMatrix& y, const msa::SimReport* sim) {
            const auto m = error_metrics(ref, y);
            json p = metrics_json(m);
            csv << plan->num_groups << ',' << name << ',' << fmt(m.mse) << ',' << fmt(m.max_abs_err) << ','
                << fmt(m.sqnr_db) << ',';
            if (sim) {
                p["cycles"] = json::parse(msa::report_to_text(*sim));
                csv << sim->total_cycles << ',' << sim->bubble_cycles << ',' << sim->tile_passes;
            } else {
                csv << ",,";
            }
            csv << '\n';
            paths[name] = std::move(p);
        };
        if (want_ex)
            emit("explicit", gemm_explicit(prep.qa, prep.qw, *plan, prep.correction, gopts).output, nullptr);
        if (want_im)
            emit("implicit", gemm_implicit(prep.qa, prep.qw, *plan, prep.correction, gopts).output, nullptr);
        if (want_sim) {
            const auto sim = msa::simulate_gemm(prep.qa, prep.qw, *plan, prep.correction, mcfg);
            emit("sim", sim.output, &sim);
            if (!a.trace.empty()) {
                std::ofstream tf(a.trace);
                if (!tf)
                    throw FormatError("cannot write " + a.trace);
                tf << msa::trace_to_csv(sim);
            }
        }
        run["paths"] = std::move(paths);
        runs.push_back(std::move(run));
    }

    if (f.format == "csv") {
        out << csv.str();
    } else {
        json doc;
        doc["command"] = "gemm";
        doc["shape"] = {{"M", x.rows()}, {"K", x.cols()}, {"N", w.cols()}};
        doc["plan_source"] = a.plan.empty() ? "self-calibrated" : a.plan;
        doc["runs"] = std::move(runs);
        out << doc.dump(2) << '\n';
    }
    return kOk;
}

// -- sweep-groups ------------------------------------------------------------

int cmd_sweep(const GemmArgs& a, const QuantFlags& f, std::ostream& out)
{
    if (f.alpha != 2)
        throw ConfigError("sweep-groups: cycle columns need alpha = 2");
    const FloatMatrix x = load_float(a.x);
    const FloatMatrix w = load_float(a.w);
    if (x.cols() != w.rows())
        throw ShapeError("sweep-groups: inner dimensions differ");
    const FloatMatrix ref = gemm_reference(x, w);
    GemmOptions gopts;
    gopts.acc_bits = f.acc_bits;
    const auto mcfg = msa_config(f);

    out << "G,mse,sqnr_db,cycles_implicit,cycles_explicit\n";
    for (int g : f.groups) {
        auto plan =
            std::make_shared<const DecompositionPlan>(build_plan(std::span<const FloatMatrix>(&x, 1), plan_config(f, g)));
        const auto prep = prepare_gemm(x, w, plan, plan->bits);
        const auto im = gemm_implicit(prep.qa, prep.qw, *plan, prep.correction, gopts);
        const auto m = error_metrics(ref, im.output);
        const auto si = msa::simulate_gemm(prep.qa, prep.qw, *plan, prep.correction, mcfg);
        const auto se = msa::simulate_explicit(prep.qa, prep.qw, *plan, prep.correction, mcfg);
        out << g << ',' << fmt(m.mse) << ',' << fmt(m.sqnr_db) << ',' << si.total_cycles << ',' << se.total_cycles
            << '\n';
    }
    return kOk;
}

// -- transformer ---------------------------------------------------------------

struct TransformerArgs {
    Index d_model = 128, d_ff = 512, heads = 4, tokens = 256;
    double outlier_frac = 0.0, outlier_mag = 1.0;
    bool act_act = false;
    std::string path = "implicit";
    std::string input;
    std::uint64_t seed = 0;
};

int cmd_transformer(const TransformerArgs& a, const QuantFlags& f, std::ostream& out)
{
    const auto w = toy::init_block(a.d_model, a.d_ff, a.heads, a.seed);
    const FloatMatrix x = a.input.empty()
                              ? toy::make_input(a.tokens, a.d_model, {a.outlier_frac, a.outlier_mag, a.seed + 2}, a.seed + 1)
                              : load_float(a.input);
    toy::QuantConfig cfg;
    cfg.bits = f.bits;
    cfg.alpha = f.alpha;
    cfg.num_groups = f.groups.front();
    cfg.chunk_rows = f.chunk;
    cfg.quantize_act_act = a.act_act;
    cfg.path = toy::parse_path(a.path);
    cfg.acc_bits = f.acc_bits;
    cfg.msa = msa_config(f);

    const FloatMatrix ref = toy::forward_float(x, w);
    const auto res = toy::forward_quant(x, w, cfg);
    const auto e2e = error_metrics(ref, res.output);
    const double rel = relative_frobenius_error(ref, res.output);

    if (f.format == "csv") {
        out << "name,quantized,mse,max_abs_err,sqnr_db\n";
        for (const auto& r : res.reports)
            out << r.name << ',' << (r.quantized ? 1 : 0) << ',' << fmt(r.metrics.mse) << ','
                << fmt(r.metrics.max_abs_err) << ',' << fmt(r.metrics.sqnr_db) << '\n';
        out << "end_to_end,1," << fmt(e2e.mse) << ',' << fmt(e2e.max_abs_err) << ',' << fmt(e2e.sqnr_db) << '\n';
        return kOk;
    }
    json doc;
    doc["command"] = "transformer";
    doc["config"] = {{"d_model", a.d_model}, {"d_ff", a.d_ff},         {"heads", a.heads},
                     {"tokens", x.rows()},   {"bits", cfg.bits},       {"alpha", cfg.alpha},
                     {"G", cfg.num_groups},  {"chunk_rows", cfg.chunk_rows}, {"act_act", cfg.quantize_act_act},
                     {"path", a.path},       {"seed", a.seed}};
    json mm = json::array();
    for (const auto& r : res.reports) {
        json j = metrics_json(r.metrics);
        j["name"] = r.name;
        j["quantized"] = r.quantized;
        mm.push_back(std::move(j));
    }
    doc["matmuls"] = std::move(mm);
    json e = metrics_json(e2e);
    e["relative_frobenius"] = number(rel);
    doc["end_to_end"] = std::move(e);
    out << doc.dump(2) << '\n';
    return kOk;
}

// -- gen ----------------------------------------------------------------------

struct GenArgs {
    Index rows = 256, cols = 128;
    double outlier_frac = 0.0, outlier_mag = 1.0;
    std::uint64_t seed = 0;
    std::string output;
};

int cmd_gen(const GenArgs& a)
{
    const auto x = toy::make_input(a.rows, a.cols, {a.outlier_frac, a.outlier_mag, a.seed + 1}, a.seed);
    tnsr::write_file(a.output, tnsr::from_float(x));
    return kOk;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Decomposed activation quantization with runtime requantization", "tender"};
    app.require_subcommand(1);

    QuantFlags qf;

    CalibrateArgs ca;
    auto* calibrate = app.add_subcommand("calibrate", "Build a decomposition plan from TNSR samples");
    calibrate->add_option("samples", ca.samples, "Calibration tensors")->required()->check(CLI::ExistingFile);
    calibrate->add_option("-o,--output", ca.output, "Plan file (stdout when omitted)");
    add_quant_flags(*calibrate, qf, false);

    GemmArgs ga;
    auto* gemm = app.add_subcommand("gemm", "Run quantized GEMM paths against the float reference");
    gemm->add_option("x", ga.x, "Activation tensor")->required();
    gemm->add_option("w", ga.w, "Weight tensor")->required();
    gemm->add_option("--plan", ga.plan, "Plan file (self-calibrate on X when omitted)");
    gemm->add_option("--path", ga.path, "Path to run")
        ->check(CLI::IsMember({"explicit", "implicit", "sim", "all"}))
        ->capture_default_str();
    gemm->add_option("--trace", ga.trace, "Write simulator rescale events as CSV");
    add_quant_flags(*gemm, qf, true);

    GemmArgs sa;
    auto* sweep = app.add_subcommand("sweep-groups", "CSV of error and cycles per group count");
    sweep->add_option("x", sa.x, "Activation tensor")->required();
    sweep->add_option("w", sa.w, "Weight tensor")->required();
    add_quant_flags(*sweep, qf, true);

    TransformerArgs ta;
    auto* tf = app.add_subcommand("transformer", "Run the toy Transformer block float vs quantized");
    tf->add_option("--d-model", ta.d_model)->capture_default_str();
    tf->add_option("--d-ff", ta.d_ff)->capture_default_str();
    tf->add_option("--heads", ta.heads)->capture_default_str();
    tf->add_option("--tokens", ta.tokens)->capture_default_str();
    tf->add_option("--outlier-frac", ta.outlier_frac)->capture_default_str();
    tf->add_option("--outlier-mag", ta.outlier_mag)->capture_default_str();
    tf->add_flag("--act-act", ta.act_act, "Also quantize Q*K^T and S*V");
    tf->add_option("--path", ta.path)->check(CLI::IsMember({"explicit", "implicit", "sim"}))->capture_default_str();
    tf->add_option("--input", ta.input, "Input tensor instead of a generated one");
    tf->add_option("--seed", ta.seed)->capture_default_str();
    add_quant_flags(*tf, qf, false);

    GenArgs gen_args;
    auto* gen = app.add_subcommand("gen", "Write a Gaussian tensor with outlier channels");
    gen->add_option("--rows", gen_args.rows)->capture_default_str();
    gen->add_option("--cols", gen_args.cols)->capture_default_str();
    gen->add_option("--outlier-frac", gen_args.outlier_frac)->capture_default_str();
    gen->add_option("--outlier-mag", gen_args.outlier_mag)->capture_default_str();
    gen->add_option("--seed", gen_args.seed)->capture_default_str();
    gen->add_option("-o,--output", gen_args.output)->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kOk : kUsage;
    }

    try {
        if (qf.groups.empty())
            throw ConfigError("--groups needs at least one value");
        if (qf.jobs > 0)
            omp_set_num_threads(qf.jobs);
        if (calibrate->parsed())
            return cmd_calibrate(ca, qf, out);
        if (gemm->parsed())
            return cmd_gemm(ga, qf, out);
        if (sweep->parsed())
            return cmd_sweep(sa, qf, out);
        if (tf->parsed())
            return cmd_transformer(ta, qf, out);
        if (gen->parsed())
            return cmd_gen(gen_args);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const OverflowError& e) {
        err << "overflow: " << e.what() << '\n';
        return kOverflow;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kData;
    }
    return kUsage;
}

} // namespace tender::cli
