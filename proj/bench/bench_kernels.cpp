// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <random>

#include "gdyna/kernels.hpp"

using namespace gdyna;

namespace {

Matrix random_matrix(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  Matrix m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = d(rng);
  return m;
}

// Dense vector, or a tile-coding style vector with `active` ones.
Vector probe(int n, int active, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Vector v = Vector::Zero(n);
  if (active <= 0) {
    std::normal_distribution<double> d;
    for (int i = 0; i < n; ++i) v(i) = d(rng);
  } else {
    std::uniform_int_distribution<int> pick(0, n - 1);
    for (int k = 0; k < active; ++k) v(pick(rng)) = 1.0;
  }
  return v;
}

template <void (*F)(const Matrix&, const Vector&, Vector&)>
void bm_matvec(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Matrix m = random_matrix(n, 1);
  const Vector x = probe(n, static_cast<int>(state.range(1)), 2);
  Vector y;
  for (auto _ : state) {
    F(m, x, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <void (*F)(Matrix&, const Vector&, const Vector&, double)>
void bm_rank1(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Matrix m = random_matrix(n, 1);
  const Vector u = probe(n, 0, 3);
  const Vector v = probe(n, static_cast<int>(state.range(1)), 4);
  for (auto _ : state) {
    F(m, u, v, 1e-9);
    benchmark::ClobberMemory();
  }
}

void sizes(benchmark::internal::Benchmark* b) {
  for (const int n : {16, 128, 512, 1024})
    for (const int active : {0, 8}) b->Args({n, active});
}

}  // namespace

BENCHMARK(bm_matvec<kernels::serial::matvec>)->Name("matvec/serial")->Apply(sizes);
BENCHMARK(bm_matvec<kernels::parallel::matvec>)->Name("matvec/parallel")->Apply(sizes);
BENCHMARK(bm_matvec<kernels::serial::matvec_transpose>)->Name("matvec_transpose/serial")->Apply(sizes);
BENCHMARK(bm_matvec<kernels::parallel::matvec_transpose>)->Name("matvec_transpose/parallel")->Apply(sizes);
BENCHMARK(bm_rank1<kernels::serial::rank1_update>)->Name("rank1/serial")->Apply(sizes);
BENCHMARK(bm_rank1<kernels::parallel::rank1_update>)->Name("rank1/parallel")->Apply(sizes);

BENCHMARK_MAIN();
