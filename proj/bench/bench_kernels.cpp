// Timing comparison of the OpenMP kernels against their serial references:
// corpus encoding and exact top-k search. Sizes are chosen so a run finishes
// in a few seconds per configuration.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "prod/data_io.hpp"
#include "prod/encoder.hpp"
#include "prod/retrieval.hpp"

using namespace prod;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

template <typename Fn>
double time_best_of(int repeats, Fn&& fn) {
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto start = Clock::now();
    fn();
    best = std::min(best, seconds_since(start));
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  std::size_t passages = 4000;
  std::size_t queries = 256;
  std::size_t k = 100;
  if (argc > 1) passages = std::stoul(argv[1]);
  if (argc > 2) queries = std::stoul(argv[2]);

  SyntheticSpec spec;
  spec.num_clusters = 8;
  spec.passages_per_cluster = passages / 8;
  spec.queries_per_cluster = queries / 8;
  const SyntheticData data = generate_synthetic(spec);

  EncoderConfig cfg;
  cfg.num_layers = 3;
  cfg.seed = 7;
  const DualEncoder model(cfg);

  std::printf("threads=%d passages=%zu queries=%zu dim=%zu layers=%zu\n", omp_get_max_threads(),
              data.corpus.size(), data.train.size(), cfg.hidden_dim, cfg.num_layers);

  const double t_enc_serial =
      time_best_of(3, [&] { (void)encode_corpus_serial(model, data.corpus); });
  const double t_enc_parallel = time_best_of(3, [&] { (void)encode_corpus(model, data.corpus); });
  std::printf("encode_corpus   serial %8.3f ms   parallel %8.3f ms   speedup %.2fx\n",
              1e3 * t_enc_serial, 1e3 * t_enc_parallel, t_enc_serial / t_enc_parallel);

  const EmbeddingIndex index = build_index(model, data.corpus);
  const EmbeddingMatrix qmat = encode_queries(model, data.train);
  std::vector<std::string> qids;
  for (const Query& q : data.train.queries) qids.push_back(q.id);

  const double t_search_serial = time_best_of(3, [&] {
    for (std::size_t i = 0; i < qmat.rows; ++i) (void)search_topk(index, qmat.row(i), k, qids[i]);
  });
  const double t_search_parallel =
      time_best_of(3, [&] { (void)search_topk_batch(index, qmat, qids, k); });
  std::printf("search_topk     serial %8.3f ms   parallel %8.3f ms   speedup %.2fx\n",
              1e3 * t_search_serial, 1e3 * t_search_parallel,
              t_search_serial / t_search_parallel);

  // Sharded single-query search against the plain kernel.
  const double t_shard1 = time_best_of(3, [&] {
    for (std::size_t i = 0; i < std::min<std::size_t>(qmat.rows, 64); ++i) {
      (void)search_topk(index, qmat.row(i), k);
    }
  });
  const double t_shard8 = time_best_of(3, [&] {
    for (std::size_t i = 0; i < std::min<std::size_t>(qmat.rows, 64); ++i) {
      (void)search_topk_sharded(index, qmat.row(i), k, 8);
    }
  });
  std::printf("single query    unsharded %6.3f ms  8 shards %6.3f ms  speedup %.2fx\n",
              1e3 * t_shard1, 1e3 * t_shard8, t_shard1 / t_shard8);
  return 0;
}
