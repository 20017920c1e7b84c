#include "prod/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "prod/common.hpp"

namespace prod {

namespace {

bool is_relevant(const std::map<std::string, int>& judged, const std::string& pid) {
  auto it = judged.find(pid);
  return it != judged.end() && it->second > 0;
}

std::size_t num_relevant(const std::map<std::string, int>& judged) {
  std::size_t n = 0;
  for (const auto& [pid, grade] : judged) {
    if (grade > 0) ++n;
  }
  return n;
}

}  // namespace

double query_mrr(const RankedList& run, const std::map<std::string, int>& judged, std::size_t k) {
  for (const RankedEntry& e : run.entries) {
    if (e.rank > k) break;
    if (is_relevant(judged, e.passage_id)) return 1.0 / static_cast<double>(e.rank);
  }
  return 0.0;
}

double query_recall(const RankedList& run, const std::map<std::string, int>& judged,
                    std::size_t k) {
  const std::size_t total = num_relevant(judged);
  if (total == 0) return 0.0;
  std::size_t hits = 0;
  for (const RankedEntry& e : run.entries) {
    if (e.rank > k) break;
    if (is_relevant(judged, e.passage_id)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

double query_ndcg(const RankedList& run, const std::map<std::string, int>& judged, std::size_t k) {
  double dcg = 0.0;
  for (const RankedEntry& e : run.entries) {
    if (e.rank > k) break;
    auto it = judged.find(e.passage_id);
    if (it == judged.end() || it->second <= 0) continue;
    const double gain = std::pow(2.0, static_cast<double>(it->second)) - 1.0;
    dcg += gain / std::log2(static_cast<double>(e.rank) + 1.0);
  }
  std::vector<int> grades;
  for (const auto& [pid, grade] : judged) {
    if (grade > 0) grades.push_back(grade);
  }
  if (grades.empty()) return 0.0;
  std::sort(grades.begin(), grades.end(), std::greater<int>());
  double ideal = 0.0;
  for (std::size_t i = 0; i < grades.size() && i < k; ++i) {
    const double gain = std::pow(2.0, static_cast<double>(grades[i])) - 1.0;
    ideal += gain / std::log2(static_cast<double>(i + 1) + 1.0);
  }
  return ideal > 0.0 ? dcg / ideal : 0.0;
}

double query_map(const RankedList& run, const std::map<std::string, int>& judged, std::size_t k) {
  const std::size_t total = num_relevant(judged);
  if (total == 0) return 0.0;
  std::size_t hits = 0;
  double sum_precision = 0.0;
  for (const RankedEntry& e : run.entries) {
    if (e.rank > k) break;
    if (is_relevant(judged, e.passage_id)) {
      ++hits;
      sum_precision += static_cast<double>(hits) / static_cast<double>(e.rank);
    }
  }
  return sum_precision / static_cast<double>(total);
}

namespace {

using QueryMetric =
    double (*)(const RankedList&, const std::map<std::string, int>&, std::size_t);

double dataset_mean(std::span<const RankedList> runs, const Qrels& qrels, std::size_t k,
                    QueryMetric metric, bool track_zero_grade, EvalCounters* counters) {
  if (k == 0) throw ParameterError("metric cutoff k must be >= 1");
  EvalCounters local;
  double sum = 0.0;
  for (const RankedList& run : runs) {
    const auto* judged = qrels.find(run.query_id);
    if (judged == nullptr) {
      local.queries_missing_qrels += 1;
      continue;
    }
    if (track_zero_grade && num_relevant(*judged) == 0) local.zero_grade_queries += 1;
    sum += metric(run, *judged, k);
    local.queries_scored += 1;
  }
  if (counters != nullptr) *counters = local;
  return local.queries_scored == 0 ? 0.0 : sum / static_cast<double>(local.queries_scored);
}

}  // namespace

double mrr_at_k(std::span<const RankedList> runs, const Qrels& qrels, std::size_t k,
                EvalCounters* counters) {
  return dataset_mean(runs, qrels, k, &query_mrr, false, counters);
}

double recall_at_k(std::span<const RankedList> runs, const Qrels& qrels, std::size_t k,
                   EvalCounters* counters) {
  return dataset_mean(runs, qrels, k, &query_recall, false, counters);
}

double ndcg_at_k(std::span<const RankedList> runs, const Qrels& qrels, std::size_t k,
                 EvalCounters* counters) {
  return dataset_mean(runs, qrels, k, &query_ndcg, true, counters);
}

double map_at_k(std::span<const RankedList> runs, const Qrels& qrels, std::size_t k,
                EvalCounters* counters) {
  return dataset_mean(runs, qrels, k, &query_map, true, counters);
}

// ---- TREC files -------------------------------------------------------------

void write_run_file(const std::string& path, std::span<const RankedList> runs,
                    const std::string& tag) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open run file for writing: " + path);
  char score_buf[64];
  for (const RankedList& run : runs) {
    for (const RankedEntry& e : run.entries) {
      std::snprintf(score_buf, sizeof(score_buf), "%.6f", e.score);
      os << run.query_id << " Q0 " << e.passage_id << ' ' << e.rank << ' ' << score_buf << ' '
         << tag << '\n';
    }
  }
  if (!os) throw IoError("run file write failed: " + path);
}

std::vector<RankedList> read_run_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open run file: " + path);
  std::vector<RankedList> runs;
  std::map<std::string, std::size_t> index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string qid, q0, pid, tag;
    std::size_t rank = 0;
    double score = 0.0;
    if (!(ss >> qid >> q0 >> pid >> rank >> score >> tag)) {
      throw InputError("malformed run line " + std::to_string(line_no) + " in " + path);
    }
    auto [it, inserted] = index.emplace(qid, runs.size());
    if (inserted) runs.push_back(RankedList{qid, {}});
    runs[it->second].entries.push_back(RankedEntry{pid, score, rank});
  }
  for (RankedList& run : runs) {
    std::sort(run.entries.begin(), run.entries.end(),
              [](const RankedEntry& a, const RankedEntry& b) { return a.rank < b.rank; });
  }
  return runs;
}

void write_qrels_file(const std::string& path, const Qrels& qrels) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open qrels file for writing: " + path);
  for (const auto& [qid, judged] : qrels.entries()) {
    for (const auto& [pid, grade] : judged) {
      os << qid << " 0 " << pid << ' ' << grade << '\n';
    }
  }
  if (!os) throw IoError("qrels file write failed: " + path);
}

Qrels read_qrels_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open qrels file: " + path);
  Qrels qrels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string qid, iter, pid;
    int grade = 0;
    if (!(ss >> qid >> iter >> pid >> grade)) {
      throw InputError("malformed qrels line " + std::to_string(line_no) + " in " + path);
    }
    if (grade < 0) {
      throw InputError("negative grade on qrels line " + std::to_string(line_no) + " in " + path);
    }
    qrels.add(qid, pid, grade);
  }
  return qrels;
}

}  // namespace prod
