// Serial reference kernels vs the OpenMP variants, plus one end-to-end
// training step. On a single hardware thread the pairs should tie; the gap
// appears with LAYTEXT_THREADS > 1 on multi-core hosts.

#include <benchmark/benchmark.h>

#include <cstdlib>

#include "laytext/kernels.hpp"
#include "laytext/model.hpp"
#include "laytext/optim.hpp"
#include "laytext/rng.hpp"
#include "laytext/training.hpp"

using namespace laytext;

namespace {

std::vector<double> random_matrix(int rows, int cols, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> m(static_cast<size_t>(rows) * cols);
    for (double& v : m) v = rng.normal();
    return m;
}

void bm_matmul_serial(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
    std::vector<double> c(static_cast<size_t>(n) * n);
    for (auto _ : state) {
        kernels::matmul_nn_serial(a.data(), b.data(), c.data(), n, n, n, false);
        benchmark::ClobberMemory();
    }
    state.SetItemsProcessed(state.iterations() * 2ll * n * n * n);
}

void bm_matmul_omp(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
    std::vector<double> c(static_cast<size_t>(n) * n);
    for (auto _ : state) {
        kernels::matmul_nn_omp(a.data(), b.data(), c.data(), n, n, n, false);
        benchmark::ClobberMemory();
    }
    state.SetItemsProcessed(state.iterations() * 2ll * n * n * n);
}

void bm_softmax_serial(benchmark::State& state) {
    const int t = static_cast<int>(state.range(0));
    auto s0 = random_matrix(t, t, 3);
    std::vector<double> s(s0.size());
    for (auto _ : state) {
        s = s0;
        kernels::causal_softmax_rows_serial(s.data(), t);
        benchmark::ClobberMemory();
    }
}

void bm_softmax_omp(benchmark::State& state) {
    const int t = static_cast<int>(state.range(0));
    auto s0 = random_matrix(t, t, 3);
    std::vector<double> s(s0.size());
    for (auto _ : state) {
        s = s0;
        kernels::causal_softmax_rows_omp(s.data(), t);
        benchmark::ClobberMemory();
    }
}

void bm_rmsnorm_serial(benchmark::State& state) {
    const int rows = static_cast<int>(state.range(0)), cols = 128;
    auto x = random_matrix(rows, cols, 4);
    std::vector<double> gain(cols, 1.0), y(x.size()), rms(static_cast<size_t>(rows));
    for (auto _ : state) {
        kernels::rmsnorm_rows_serial(x.data(), gain.data(), y.data(), rms.data(), rows, cols, 1e-5);
        benchmark::ClobberMemory();
    }
}

void bm_rmsnorm_omp(benchmark::State& state) {
    const int rows = static_cast<int>(state.range(0)), cols = 128;
    auto x = random_matrix(rows, cols, 4);
    std::vector<double> gain(cols, 1.0), y(x.size()), rms(static_cast<size_t>(rows));
    for (auto _ : state) {
        kernels::rmsnorm_rows_omp(x.data(), gain.data(), y.data(), rms.data(), rows, cols, 1e-5);
        benchmark::ClobberMemory();
    }
}

// Forward + backward + optimizer step on one interleaved sample.
void bm_training_step(benchmark::State& state) {
    ModelConfig mc;
    mc.d_model = 64;
    mc.n_layers = 4;
    mc.n_heads = 4;
    mc.vocab_size = 512;
    mc.plora_rank = 8;
    mc.max_seq_len = 256;
    ModelParams params = init_params(mc, 7);
    auto trainables = params.all_params();
    OptimState opt(trainables);

    InterleavedSample s;
    Rng rng(9);
    s.ids.push_back(1);
    s.modality_mask.push_back(0);
    s.loss_mask.push_back(0);
    for (int i = 0; i < 120; ++i) {
        const bool box = i % 4 == 0;
        s.ids.push_back(box ? 2 : static_cast<int>(3 + rng.below(500)));
        s.modality_mask.push_back(box);
        s.loss_mask.push_back(!box);
        if (box)
            s.box_values.emplace_back(static_cast<int>(s.ids.size()) - 1,
                                      BBox{rng.uniform(0, 0.5), rng.uniform(0, 0.5),
                                           rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0)});
    }

    for (auto _ : state) {
        zero_grads(trainables);
        Tensor loss = next_token_loss(s, params);
        backward(loss);
        clip_grad_norm(trainables, 1.0);
        adam_step(trainables, opt, {.lr = 1e-4});
        benchmark::DoNotOptimize(loss.item());
    }
}

}  // namespace

BENCHMARK(bm_matmul_serial)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_matmul_omp)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_softmax_serial)->Arg(128)->Arg(512);
BENCHMARK(bm_softmax_omp)->Arg(128)->Arg(512);
BENCHMARK(bm_rmsnorm_serial)->Arg(128)->Arg(512);
BENCHMARK(bm_rmsnorm_omp)->Arg(128)->Arg(512);
BENCHMARK(bm_training_step)->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
    if (const char* threads = std::getenv("LAYTEXT_THREADS")) {
        const int n = std::atoi(threads);
        if (n > 0) set_threads(n);
    }
    benchmark::Initialize(&argc, argv);
    benchmark::RunSpecifiedBenchmarks();
    return 0;
}
