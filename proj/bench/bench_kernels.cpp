// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <memory>
#include <random>

#include "tender/calibrate.hpp"
#include "tender/msa_sim.hpp"
#include "tender/qgemm.hpp"
#include "tender/reference.hpp"

namespace {

using namespace tender;

FloatMatrix gaussian(Index rows, Index cols, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d;
    FloatMatrix m(rows, cols);
    for (double& v : m.data())
        v = d(rng);
    for (Index r = 0; r < rows; ++r)
        m(r, 3) *= 40.0;
    return m;
}

struct Fixture {
    std::shared_ptr<const DecompositionPlan> plan;
    PreparedGemm prep;

    explicit Fixture(Index n, int groups)
    {
        const auto x = gaussian(n, n, 1);
        const auto w = gaussian(n, n, 2);
        plan = std::make_shared<const DecompositionPlan>(
            build_plan(std::span<const FloatMatrix>(&x, 1), PlanConfig{8, 2, groups, 256}));
        prep = prepare_gemm(x, w, plan, 8);
    }
};

void BM_MatmulIntSerial(benchmark::State& state)
{
    const Fixture f(Index(state.range(0)), 1);
    for (auto _ : state)
        benchmark::DoNotOptimize(reference::matmul_int(f.prep.qa.data, f.prep.qw.data));
}

void BM_MatmulIntParallel(benchmark::State& state)
{
    const Fixture f(Index(state.range(0)), 1);
    for (auto _ : state)
        benchmark::DoNotOptimize(matmul_int_wide(f.prep.qa.data, f.prep.qw.data, 64));
}

void BM_ImplicitSerial(benchmark::State& state)
{
    const Fixture f(Index(state.range(0)), 8);
    for (auto _ : state)
        benchmark::DoNotOptimize(reference::gemm_implicit(f.prep.qa, f.prep.qw, *f.plan, f.prep.correction));
}

void BM_ImplicitParallel(benchmark::State& state)
{
    const Fixture f(Index(state.range(0)), 8);
    for (auto _ : state)
        benchmark::DoNotOptimize(gemm_implicit(f.prep.qa, f.prep.qw, *f.plan, f.prep.correction));
}

void BM_ExplicitParallel(benchmark::State& state)
{
    const Fixture f(Index(state.range(0)), 8);
    for (auto _ : state)
        benchmark::DoNotOptimize(gemm_explicit(f.prep.qa, f.prep.qw, *f.plan, f.prep.correction));
}

void BM_SimulateImplicit(benchmark::State& state)
{
    const Fixture f(Index(state.range(0)), 8);
    msa::MSAConfig cfg;
    for (auto _ : state)
        benchmark::DoNotOptimize(msa::simulate_gemm(f.prep.qa, f.prep.qw, *f.plan, f.prep.correction, cfg));
}

BENCHMARK(BM_MatmulIntSerial)->Arg(64)->Arg(256);
BENCHMARK(BM_MatmulIntParallel)->Arg(64)->Arg(256);
BENCHMARK(BM_ImplicitSerial)->Arg(64)->Arg(256);
BENCHMARK(BM_ImplicitParallel)->Arg(64)->Arg(256);
BENCHMARK(BM_ExplicitParallel)->Arg(64)->Arg(256);
BENCHMARK(BM_SimulateImplicit)->Arg(64);

} // namespace

BENCHMARK_MAIN();
