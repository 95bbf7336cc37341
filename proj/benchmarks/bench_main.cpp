#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "sement/cluster.hpp"
#include "sement/entail.hpp"
#include "sement/eval.hpp"
#include "sement/metrics.hpp"

using namespace sement;

namespace {

struct Scored {
    std::vector<double> scores;
    std::vector<bool> labels;
};

Scored random_scored(std::size_t n) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> noise(0.0, 1.0);
    Scored s;
    for (std::size_t i = 0; i < n; ++i) {
        const bool y = (rng() & 1U) != 0;
        s.labels.push_back(y);
        s.scores.push_back(noise(rng) + (y ? 0.8 : 0.0));
    }
    return s;
}

std::vector<Generation> generations(int m, int meanings) {
    std::vector<Generation> out;
    for (int i = 0; i < m; ++i) {
        Generation g;
        g.question_id = "q";
        g.sample_index = i;
        g.text = "answer " + std::to_string(i % meanings);
        g.token_logprobs = {-0.1 * (i + 1), -0.2, -0.05};
        out.push_back(std::move(g));
    }
    return out;
}

}  // namespace

static void BM_Auroc(benchmark::State& state) {
    const auto s = random_scored(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(auroc(s.scores, s.labels));
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Auroc)->RangeMultiplier(4)->Range(64, 16384)->Complexity();

static void BM_AurocBootstrap(benchmark::State& state) {
    const auto s = random_scored(600);
    for (auto _ : state) benchmark::DoNotOptimize(auroc_ci(s.scores, s.labels, static_cast<int>(state.range(0)), 7));
}
BENCHMARK(BM_AurocBootstrap)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond)->UseRealTime();

static void BM_SemanticEntropy(benchmark::State& state) {
    ExactOracle oracle;
    EntailmentJudge judge(oracle);
    const auto gens = generations(10, 4);
    const auto c = cluster_generations(gens, "ctx", judge);
    for (auto _ : state) benchmark::DoNotOptimize(score_question(gens, c));
}
BENCHMARK(BM_SemanticEntropy);

static void BM_Clustering(benchmark::State& state) {
    const auto gens = generations(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
    NormalizedExactOracle oracle;
    for (auto _ : state) {
        // Fresh judge each time so memoisation does not hide the comparisons.
        EntailmentJudge judge(oracle);
        benchmark::DoNotOptimize(cluster_generations(gens, "ctx", judge));
    }
}
BENCHMARK(BM_Clustering)->Args({10, 1})->Args({10, 10})->Args({50, 25});
BENCHMARK_MAIN();
