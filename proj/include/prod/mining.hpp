#ifndef PROD_MINING_HPP_
#define PROD_MINING_HPP_

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prod/data.hpp"
#include "prod/losses.hpp"
#include "prod/retrieval.hpp"

namespace prod {

// Sentinel rank for a positive that did not appear in a ranked pool.
inline constexpr std::size_t kRankAbsent = std::numeric_limits<std::size_t>::max();

struct MiningConfig {
  std::size_t depth_k = 100;  // retrieval depth
  std::size_t sample_m = 1;   // negatives retained per query
  std::uint64_t seed = 42;
  bool answer_filter = false;

  void validate() const;
};

struct MiningStats {
  std::size_t queries_in = 0;
  std::size_t groups_out = 0;
  std::size_t dropped_no_negatives = 0;
  std::size_t dropped_no_positive = 0;  // query has no qrels positive
  std::size_t answer_filtered = 0;      // candidates removed by answer match
};

using AnswerMap = std::map<std::string, std::vector<std::string>>;

// Per query: retrieve depth_k with the student, drop qrels positives (and
// answer matches when enabled), then sample sample_m negatives without
// replacement, seeded by (cfg.seed, query_id) via derive_seed. Queries with
// no surviving negative are dropped and counted. Output is ordered by the
// query order of `queries` regardless of execution order.
std::vector<CandidateGroup> mine_hard_negatives(const DualEncoder& student, const Corpus& corpus,
                                                const QuerySet& queries, const Qrels& qrels,
                                                const MiningConfig& cfg,
                                                MiningStats* stats = nullptr,
                                                const AnswerMap* answers = nullptr);

// Same, but reuses a prebuilt index over the corpus.
std::vector<CandidateGroup> mine_hard_negatives(const DualEncoder& student,
                                                const EmbeddingIndex& index, const Corpus& corpus,
                                                const QuerySet& queries, const Qrels& qrels,
                                                const MiningConfig& cfg,
                                                MiningStats* stats = nullptr,
                                                const AnswerMap* answers = nullptr);

// Removes candidates whose text contains any answer string under
// case-insensitive, whitespace-normalized substring match; ranks are
// recomputed. Requires a nonempty answer list.
RankedList filter_false_negatives(const RankedList& candidates,
                                  const std::vector<std::string>& answers, const Corpus& corpus);

struct PositiveRankInfo {
  std::size_t student_rank = kRankAbsent;  // rank of p+ in the student retrieval
  std::size_t teacher_rank = kRankAbsent;  // rank of p+ in the CE-rescored pool
  // Min-max normalized positive scores within each pool (score_dominance mode).
  double student_score_norm = 0.0;
  double teacher_score_norm = 0.0;
};

// student_rank comes from `retrieval` (the student's depth-k list for the
// query); teacher_rank from the CE teacher rescoring {p+} plus the retrieved
// candidates, sorted descending with the ascending-id tie rule. The corpus
// supplies candidate texts for the rescoring pass.
PositiveRankInfo positive_ranks(const DualEncoder& student, const CrossEncoder& teacher,
                                const CandidateGroup& group, const RankedList& retrieval,
                                const Corpus& corpus);

// Half-open rank interval (lo, hi].
struct RankWindow {
  std::size_t lo = 0;
  std::size_t hi = 1;

  bool contains(std::size_t rank) const { return rank > lo && rank <= hi; }
  void validate() const;
};

enum class ConfusionMode { kWindowIntersection, kScoreDominance };

struct ConfusionFilter {
  RankWindow student_window{1, 15};  // ST-(1,15]
  RankWindow teacher_window{0, 1};   // TT-(0,1]
  ConfusionMode mode = ConfusionMode::kWindowIntersection;

  void validate() const;
  bool selects(const PositiveRankInfo& info) const;
};

struct SelectionCounters {
  std::size_t queries_in = 0;
  std::size_t selected = 0;
  std::size_t rejected_student_window = 0;
  std::size_t rejected_teacher_window = 0;
  std::size_t rejected_score_dominance = 0;
  std::size_t positive_absent = 0;  // sentinel rank on either side
};

struct ConfusionDataset {
  std::size_t iteration = 0;
  std::vector<CandidateGroup> groups;
  SelectionCounters counters;
};

struct QueryRankRecord {
  CandidateGroup group;
  PositiveRankInfo info;
};

// Keeps the queries the filter selects; groups inherit their mined
// negatives. Output order follows input order.
ConfusionDataset select_confusing_queries(const std::vector<QueryRankRecord>& records,
                                          const ConfusionFilter& filter, std::size_t iteration);

// Line format: query_id<TAB>positive_id<TAB>neg_id_1,neg_id_2,...
void write_groups_file(const std::string& path, const std::vector<CandidateGroup>& groups);
// Rebuilds token sequences from the corpus/query texts.
std::vector<CandidateGroup> read_groups_file(const std::string& path, const Corpus& corpus,
                                             const QuerySet& queries, const EncoderConfig& cfg);

std::string selection_report(const SelectionCounters& counters);

}  // namespace prod

#endif  // PROD_MINING_HPP_
