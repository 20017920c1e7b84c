#ifndef PROD_METRICS_HPP_
#define PROD_METRICS_HPP_

#include <span>
#include <string>
#include <vector>

#include "prod/data.hpp"
#include "prod/retrieval.hpp"

namespace prod {

struct EvalCounters {
  std::size_t queries_scored = 0;
  std::size_t queries_missing_qrels = 0;  // skipped, not errors
  std::size_t zero_grade_queries = 0;     // judged but nothing relevant (ndcg/map)
};

// Per-query values. Binary relevance (grade > 0) except ndcg, which uses
// graded gains 2^grade - 1 with 1/log2(rank+1) discounting.
double query_mrr(const RankedList& run, const std::map<std::string, int>& judged, std::size_t k);
double query_recall(const RankedList& run, const std::map<std::string, int>& judged,
                    std::size_t k);
double query_ndcg(const RankedList& run, const std::map<std::string, int>& judged, std::size_t k);
double query_map(const RankedList& run, const std::map<std::string, int>& judged, std::size_t k);

// Dataset-level means over queries present in the qrels; absent queries are
// counted in EvalCounters and excluded from the mean.
double mrr_at_k(std::span<const RankedList> runs, const Qrels& qrels, std::size_t k,
                EvalCounters* counters = nullptr);
double recall_at_k(std::span<const RankedList> runs, const Qrels& qrels, std::size_t k,
                   EvalCounters* counters = nullptr);
double ndcg_at_k(std::span<const RankedList> runs, const Qrels& qrels, std::size_t k,
                 EvalCounters* counters = nullptr);
double map_at_k(std::span<const RankedList> runs, const Qrels& qrels, std::size_t k,
                EvalCounters* counters = nullptr);

// TREC run format: `query_id Q0 passage_id rank score tag`, scores printed
// with 6 decimal places.
void write_run_file(const std::string& path, std::span<const RankedList> runs,
                    const std::string& tag = "prod");
std::vector<RankedList> read_run_file(const std::string& path);

// TREC qrels format: `query_id 0 passage_id grade`.
void write_qrels_file(const std::string& path, const Qrels& qrels);
Qrels read_qrels_file(const std::string& path);

}  // namespace prod

#endif  // PROD_METRICS_HPP_
