// Benchmark of the pairwise scoring kernel: serial reference vs the
// OpenMP worksharing version, on random embedding sets.

#include <chrono>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "otmatch/evalmod.hpp"
#include "otmatch/rng.hpp"

using namespace otmatch;

namespace {

std::vector<Matrix> random_sets(Rng& rng, std::size_t count,
                                std::size_t min_rows, std::size_t max_rows,
                                std::size_t d) {
  std::vector<Matrix> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t rows = min_rows + rng.below(max_rows - min_rows + 1);
    Matrix m(rows, d);
    for (double& x : m.data) x = rng.normal();
    out.push_back(std::move(m));
  }
  return out;
}

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

}  // namespace

int main(int argc, char** argv) {
  std::size_t n_shapes = 64, n_texts = 128, d = 64;
  if (argc > 1) n_shapes = std::strtoul(argv[1], nullptr, 10);
  if (argc > 2) n_texts = std::strtoul(argv[2], nullptr, 10);
  if (argc > 3) d = std::strtoul(argv[3], nullptr, 10);

  Rng rng(42);
  const std::vector<Matrix> parts = random_sets(rng, n_shapes, 2, 4, d);
  const std::vector<Matrix> words = random_sets(rng, n_texts, 6, 16, d);
  SinkhornConfig cfg;

  std::printf("scoring %zu x %zu pairs, d=%zu\n", n_shapes, n_texts, d);
#ifdef _OPENMP
  std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
  std::printf("built without openmp; parallel path runs serially\n");
#endif

  const double t0 = now_seconds();
  const Matrix serial = score_matrix_serial(parts, words, cfg, Matcher::Emd);
  const double t1 = now_seconds();
  const Matrix parallel =
      score_matrix_parallel(parts, words, cfg, Matcher::Emd);
  const double t2 = now_seconds();

  if (!(serial == parallel)) {
    std::printf("FAIL: kernels disagree\n");
    return 1;
  }
  const double ts = t1 - t0, tp = t2 - t1;
  std::printf("serial   %.3f s\n", ts);
  std::printf("parallel %.3f s\n", tp);
  std::printf("speedup  %.2fx\n", tp > 0 ? ts / tp : 0.0);
  return 0;
}
