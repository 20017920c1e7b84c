#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "prod/common.hpp"
#include "prod/metrics.hpp"
#include "prod/retrieval.hpp"
#include "prod/rng.hpp"

using namespace prod;

namespace {

EmbeddingMatrix random_matrix(std::size_t rows, std::size_t dim, RngStream& rng) {
  EmbeddingMatrix m;
  m.rows = rows;
  m.dim = dim;
  m.data.resize(rows * dim);
  for (double& v : m.data) v = rng.next_gaussian(0.0, 1.0);
  return m;
}

std::vector<std::string> id_range(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) {
    std::string s = std::to_string(i);
    while (s.size() < 4) s.insert(s.begin(), '0');
    ids.push_back("p" + s);
  }
  return ids;
}

// Full-sort oracle with the same tie rule, built independently of the index.
std::vector<std::pair<std::string, double>> full_sort_oracle(const EmbeddingMatrix& mat,
                                                             const std::vector<std::string>& ids,
                                                             std::span<const double> query) {
  std::vector<std::pair<std::string, double>> scored;
  for (std::size_t i = 0; i < mat.rows; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < mat.dim; ++j) acc += mat.data[i * mat.dim + j] * query[j];
    scored.emplace_back(ids[i], acc);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return scored;
}

RankedList make_run(const std::string& qid,
                    const std::vector<std::pair<std::string, double>>& entries) {
  RankedList run;
  run.query_id = qid;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    run.entries.push_back(RankedEntry{entries[i].first, entries[i].second, i + 1});
  }
  return run;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("search_topk on a one-passage corpus") {
  EmbeddingMatrix m;
  m.rows = 1;
  m.dim = 2;
  m.data = {1.0, 2.0};
  EmbeddingIndex index({"only"}, m);
  const std::vector<double> q{0.5, 0.5};
  const RankedList run = search_topk(index, std::span<const double>(q), 5, "q");
  REQUIRE(run.entries.size() == 1);
  CHECK(run.entries[0].passage_id == "only");
  CHECK(run.entries[0].rank == 1);
}

TEST_CASE("search_topk ranks an orthonormal row first for itself") {
  // Orthonormal basis rows: query equal to one row must rank it first.
  EmbeddingMatrix m;
  m.rows = 4;
  m.dim = 4;
  m.data.assign(16, 0.0);
  for (std::size_t i = 0; i < 4; ++i) m.data[i * 4 + i] = 1.0;
  EmbeddingIndex index(id_range(4), m);
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> q(4, 0.0);
    q[i] = 1.0;
    const RankedList run = search_topk(index, std::span<const double>(q), 1, "q");
    CHECK(run.entries[0].passage_id == id_range(4)[i]);
  }
}

TEST_CASE("search_topk agrees with a full-sort oracle on random corpora") {
  RngStream rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 200;
    const std::size_t d = 8;
    const EmbeddingMatrix m = random_matrix(n, d, rng);
    const std::vector<std::string> ids = id_range(n);
    EmbeddingIndex index(ids, m);
    std::vector<double> q(d);
    for (double& v : q) v = rng.next_gaussian(0.0, 1.0);

    const auto oracle = full_sort_oracle(m, ids, q);
    const std::size_t k = 1 + rng.next_below(40);
    const RankedList run = search_topk(index, std::span<const double>(q), k, "q");
    REQUIRE(run.entries.size() == k);
    for (std::size_t i = 0; i < k; ++i) {
      CHECK(run.entries[i].passage_id == oracle[i].first);
      CHECK(run.entries[i].score == oracle[i].second);
    }
  }
}

TEST_CASE("search_topk with k = corpus size is a total ordering") {
  RngStream rng(11);
  const EmbeddingMatrix m = random_matrix(64, 4, rng);
  const std::vector<std::string> ids = id_range(64);
  EmbeddingIndex index(ids, m);
  std::vector<double> q(4);
  for (double& v : q) v = rng.next_gaussian(0.0, 1.0);
  const RankedList run = search_topk(index, std::span<const double>(q), 64, "q");
  const auto oracle = full_sort_oracle(m, ids, q);
  REQUIRE(run.entries.size() == 64);
  for (std::size_t i = 0; i < 64; ++i) CHECK(run.entries[i].passage_id == oracle[i].first);
}

TEST_CASE("search_topk breaks ties by ascending passage id") {
  EmbeddingMatrix m;
  m.rows = 3;
  m.dim = 1;
  m.data = {1.0, 1.0, 1.0};  // all scores equal
  EmbeddingIndex index({"pb", "pa", "pc"}, m);
  const std::vector<double> q{2.0};
  const RankedList run = search_topk(index, std::span<const double>(q), 3, "q");
  CHECK(run.entries[0].passage_id == "pa");
  CHECK(run.entries[1].passage_id == "pb");
  CHECK(run.entries[2].passage_id == "pc");
}

TEST_CASE("search_topk rejects dimension mismatch and zero k") {
  RngStream rng(13);
  EmbeddingIndex index(id_range(4), random_matrix(4, 3, rng));
  const std::vector<double> wrong{1.0, 2.0};
  CHECK_THROWS_AS(search_topk(index, std::span<const double>(wrong), 2, "q"), ShapeError);
  const std::vector<double> ok{1.0, 2.0, 3.0};
  CHECK_THROWS_AS(search_topk(index, std::span<const double>(ok), 0, "q"), ParameterError);
}

TEST_CASE("sharded search equals single-threaded search exactly") {
  RngStream rng(17);
  const EmbeddingMatrix m = random_matrix(333, 6, rng);
  const std::vector<std::string> ids = id_range(333);
  EmbeddingIndex index(ids, m);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> q(6);
    for (double& v : q) v = rng.next_gaussian(0.0, 1.0);
    const RankedList base = search_topk(index, std::span<const double>(q), 25, "q");
    for (std::size_t shards : {1, 2, 3, 7, 16}) {
      const RankedList sharded =
          search_topk_sharded(index, std::span<const double>(q), 25, shards, "q");
      REQUIRE(sharded.entries.size() == base.entries.size());
      for (std::size_t i = 0; i < base.entries.size(); ++i) {
        CHECK(sharded.entries[i].passage_id == base.entries[i].passage_id);
        CHECK(sharded.entries[i].score == base.entries[i].score);
      }
    }
  }
}

TEST_CASE("batch search equals per-query search") {
  RngStream rng(19);
  EmbeddingIndex index(id_range(100), random_matrix(100, 5, rng));
  const EmbeddingMatrix queries = random_matrix(32, 5, rng);
  std::vector<std::string> qids;
  for (std::size_t i = 0; i < 32; ++i) qids.push_back("q" + std::to_string(i));
  const std::vector<RankedList> batch = search_topk_batch(index, queries, qids, 10);
  for (std::size_t i = 0; i < 32; ++i) {
    const RankedList single = search_topk(index, queries.row(i), 10, qids[i]);
    REQUIRE(batch[i].entries.size() == single.entries.size());
    for (std::size_t j = 0; j < single.entries.size(); ++j) {
      CHECK(batch[i].entries[j].passage_id == single.entries[j].passage_id);
    }
  }
}

TEST_CASE("index construction validates ids") {
  RngStream rng(23);
  CHECK_THROWS_AS(EmbeddingIndex({"a", "a"}, random_matrix(2, 2, rng)), InputError);
  CHECK_THROWS_AS(EmbeddingIndex({"a"}, random_matrix(2, 2, rng)), ShapeError);
}

// ---- metrics ----------------------------------------------------------------

TEST_CASE("mrr examples") {
  Qrels qrels;
  qrels.add("q", "rel", 1);
  {
    const RankedList run = make_run("q", {{"rel", 3.0}, {"x", 2.0}});
    CHECK(mrr_at_k({&run, 1}, qrels, 10) == 1.0);
  }
  {
    const RankedList run = make_run("q", {{"a", 5.0}, {"b", 4.0}, {"rel", 3.0}});
    CHECK(mrr_at_k({&run, 1}, qrels, 10) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  }
  {
    std::vector<std::pair<std::string, double>> entries;
    for (int i = 0; i < 10; ++i) entries.emplace_back("x" + std::to_string(i), 20.0 - i);
    entries.emplace_back("rel", 1.0);  // rank 11
    const RankedList run = make_run("q", entries);
    CHECK(mrr_at_k({&run, 1}, qrels, 10) == 0.0);
  }
}

TEST_CASE("recall examples") {
  Qrels qrels;
  qrels.add("q", "r1", 1);
  qrels.add("q", "r2", 1);
  {
    const RankedList run = make_run("q", {{"r1", 3.0}, {"r2", 2.0}});
    CHECK(recall_at_k({&run, 1}, qrels, 5) == 1.0);
  }
  {
    const RankedList run = make_run("q", {{"r1", 3.0}, {"x", 2.0}});
    CHECK(recall_at_k({&run, 1}, qrels, 5) == 0.5);
  }
}

TEST_CASE("ndcg examples") {
  Qrels qrels;
  qrels.add("q", "rel", 1);
  {
    const RankedList run = make_run("q", {{"rel", 2.0}, {"x", 1.0}});
    CHECK(ndcg_at_k({&run, 1}, qrels, 10) == doctest::Approx(1.0).epsilon(1e-12));
  }
  {
    const RankedList run = make_run("q", {{"x", 2.0}, {"rel", 1.0}});
    CHECK(ndcg_at_k({&run, 1}, qrels, 10) ==
          doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-9));
  }
}

TEST_CASE("ndcg matches an exhaustive-permutation ideal oracle on small lists") {
  RngStream rng(29);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.next_below(5);  // up to 6
    Qrels qrels;
    std::vector<std::pair<std::string, double>> entries;
    std::vector<int> grades(n);
    bool any_positive = false;
    for (std::size_t i = 0; i < n; ++i) {
      grades[i] = static_cast<int>(rng.next_below(4));
      any_positive = any_positive || grades[i] > 0;
      const std::string pid = "p" + std::to_string(i);
      qrels.add("q", pid, grades[i]);
      entries.emplace_back(pid, 10.0 - static_cast<double>(i));
    }
    if (!any_positive) {
      grades[0] = 1;
      qrels.add("q", "p0", 1);
    }
    const std::size_t k = 1 + rng.next_below(n);
    const RankedList run = make_run("q", entries);

    // Oracle ideal DCG: maximize over all permutations of the judged set.
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    std::sort(perm.begin(), perm.end());
    double best = 0.0;
    do {
      double dcg = 0.0;
      for (std::size_t i = 0; i < k && i < n; ++i) {
        dcg += (std::pow(2.0, grades[perm[i]]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
      }
      best = std::max(best, dcg);
    } while (std::next_permutation(perm.begin(), perm.end()));

    double dcg = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      dcg += (std::pow(2.0, grades[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    }
    const double expected = best > 0.0 ? dcg / best : 0.0;
    CHECK(ndcg_at_k({&run, 1}, qrels, k) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("map examples") {
  Qrels qrels;
  qrels.add("q", "r1", 1);
  qrels.add("q", "r2", 1);
  {
    Qrels single;
    single.add("q", "rel", 1);
    const RankedList run = make_run("q", {{"rel", 2.0}, {"x", 1.0}});
    CHECK(map_at_k({&run, 1}, single, 10) == 1.0);
  }
  {
    const RankedList run = make_run("q", {{"r1", 4.0}, {"x", 3.0}, {"r2", 2.0}});
    CHECK(map_at_k({&run, 1}, qrels, 10) ==
          doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-9));
  }
}

TEST_CASE("metrics match brute-force oracles on random runs") {
  RngStream rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 5 + rng.next_below(30);
    Qrels qrels;
    std::set<std::string> relevant;
    std::vector<std::pair<std::string, double>> entries;
    for (std::size_t i = 0; i < n; ++i) {
      const std::string pid = "p" + std::to_string(i);
      if (rng.next_double() < 0.3) {
        qrels.add("q", pid, 1);
        relevant.insert(pid);
      }
      entries.emplace_back(pid, rng.next_gaussian(0.0, 1.0));
    }
    if (relevant.empty()) {
      qrels.add("q", "p0", 1);
      relevant.insert("p0");
    }
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.second > b.second; });
    const RankedList run = make_run("q", entries);
    const std::size_t k = 1 + rng.next_below(n);

    // Set-intersection oracle for recall.
    std::size_t hits = 0;
    for (std::size_t i = 0; i < k; ++i) {
      if (relevant.count(entries[i].first)) ++hits;
    }
    CHECK(recall_at_k({&run, 1}, qrels, k) ==
          doctest::Approx(double(hits) / double(relevant.size())).epsilon(1e-12));

    // First-relevant oracle for MRR.
    double mrr = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      if (relevant.count(entries[i].first)) {
        mrr = 1.0 / double(i + 1);
        break;
      }
    }
    CHECK(mrr_at_k({&run, 1}, qrels, k) == doctest::Approx(mrr).epsilon(1e-12));

    // Direct-summation oracle for MAP.
    double ap = 0.0;
    std::size_t seen = 0;
    for (std::size_t i = 0; i < k; ++i) {
      if (relevant.count(entries[i].first)) {
        ++seen;
        ap += double(seen) / double(i + 1);
      }
    }
    ap /= double(relevant.size());
    CHECK(map_at_k({&run, 1}, qrels, k) == doctest::Approx(ap).epsilon(1e-12));
  }
}

TEST_CASE("metrics ignore entries below the cutoff and score rescaling") {
  Qrels qrels;
  qrels.add("q", "rel", 1);
  RankedList run = make_run("q", {{"a", 5.0}, {"rel", 4.0}, {"b", 3.0}});
  const double before_mrr = mrr_at_k({&run, 1}, qrels, 2);
  const double before_ndcg = ndcg_at_k({&run, 1}, qrels, 2);

  RankedList longer = run;
  longer.entries.push_back(RankedEntry{"c", 1.0, 4});
  longer.entries.push_back(RankedEntry{"d", 0.5, 5});
  CHECK(mrr_at_k({&longer, 1}, qrels, 2) == before_mrr);
  CHECK(ndcg_at_k({&longer, 1}, qrels, 2) == before_ndcg);

  RankedList rescaled = run;
  for (RankedEntry& e : rescaled.entries) e.score *= 1234.5;
  CHECK(mrr_at_k({&rescaled, 1}, qrels, 2) == before_mrr);
  CHECK(ndcg_at_k({&rescaled, 1}, qrels, 2) == before_ndcg);
}

TEST_CASE("queries missing from qrels are skipped and counted") {
  Qrels qrels;
  qrels.add("q1", "rel", 1);
  std::vector<RankedList> runs;
  runs.push_back(make_run("q1", {{"rel", 2.0}}));
  runs.push_back(make_run("q-unjudged", {{"rel", 2.0}}));
  EvalCounters counters;
  const double mrr = mrr_at_k(runs, qrels, 10, &counters);
  CHECK(mrr == 1.0);
  CHECK(counters.queries_scored == 1);
  CHECK(counters.queries_missing_qrels == 1);
}

TEST_CASE("zero-grade queries contribute zero and are flagged") {
  Qrels qrels;
  qrels.add("q", "p", 0);
  const RankedList run = make_run("q", {{"p", 1.0}});
  EvalCounters counters;
  CHECK(ndcg_at_k({&run, 1}, qrels, 10, &counters) == 0.0);
  CHECK(counters.zero_grade_queries == 1);
}

TEST_CASE("run file round trip preserves content and formats scores") {
  std::vector<RankedList> runs;
  runs.push_back(make_run("q1", {{"p1", 1.25}, {"p2", 0.5}}));
  runs.push_back(make_run("q2", {{"p3", -0.125}}));
  const std::string path = temp_path("prod_test_run.trec");
  write_run_file(path, runs, "tag1");

  std::ifstream is(path);
  std::string first_line;
  std::getline(is, first_line);
  CHECK(first_line == "q1 Q0 p1 1 1.250000 tag1");

  const std::vector<RankedList> loaded = read_run_file(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].query_id == "q1");
  CHECK(loaded[0].entries.size() == 2);
  CHECK(loaded[1].entries[0].passage_id == "p3");
  std::filesystem::remove(path);
}

TEST_CASE("qrels file round trip") {
  Qrels qrels;
  qrels.add("q1", "p1", 2);
  qrels.add("q1", "p2", 0);
  qrels.add("q2", "p3", 1);
  const std::string path = temp_path("prod_test_qrels.txt");
  write_qrels_file(path, qrels);
  const Qrels loaded = read_qrels_file(path);
  CHECK(loaded.num_queries() == 2);
  CHECK(loaded.find("q1")->at("p1") == 2);
  CHECK(loaded.relevant_ids("q1") == std::vector<std::string>{"p1"});
  std::filesystem::remove(path);
}
