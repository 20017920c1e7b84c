#include "prod/mining.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "prod/common.hpp"
#include "prod/rng.hpp"

namespace prod {

void MiningConfig::validate() const {
  if (depth_k == 0) throw ConfigError("mining: depth_k must be >= 1");
  if (sample_m == 0) throw ConfigError("mining: sample_m must be >= 1");
  if (sample_m > depth_k) throw ConfigError("mining: sample_m must not exceed depth_k");
}

namespace {

std::string normalize_for_match(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

bool matches_any_answer(const std::string& text, const std::vector<std::string>& normalized) {
  const std::string hay = normalize_for_match(text);
  for (const std::string& needle : normalized) {
    if (!needle.empty() && hay.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

RankedList filter_false_negatives(const RankedList& candidates,
                                  const std::vector<std::string>& answers, const Corpus& corpus) {
  if (answers.empty()) throw ContractError("filter_false_negatives: answers must be nonempty");
  std::vector<std::string> normalized;
  normalized.reserve(answers.size());
  for (const std::string& a : answers) normalized.push_back(normalize_for_match(a));

  RankedList out;
  out.query_id = candidates.query_id;
  for (const RankedEntry& e : candidates.entries) {
    const std::size_t row = corpus.find(e.passage_id);
    if (row != Corpus::npos && matches_any_answer(corpus.passages[row].text, normalized)) {
      continue;
    }
    RankedEntry kept = e;
    kept.rank = out.entries.size() + 1;
    out.entries.push_back(std::move(kept));
  }
  return out;
}

namespace {

struct MinedQuery {
  bool kept = false;
  CandidateGroup group;
  std::size_t answer_filtered = 0;
  bool no_positive = false;
};

MinedQuery mine_one_query(const Query& query, const RankedList& retrieved, const Corpus& corpus,
                          const Qrels& qrels, const MiningConfig& cfg, const AnswerMap* answers,
                          const EncoderConfig& enc_cfg) {
  MinedQuery result;
  const auto* judged = qrels.find(query.id);
  std::set<std::string> positives;
  if (judged != nullptr) {
    for (const auto& [pid, grade] : *judged) {
      if (grade > 0) positives.insert(pid);
    }
  }
  if (positives.empty()) {
    result.no_positive = true;
    return result;
  }

  RankedList pool = retrieved;
  if (cfg.answer_filter && answers != nullptr) {
    auto it = answers->find(query.id);
    if (it != answers->end() && !it->second.empty()) {
      const std::size_t before = pool.entries.size();
      pool = filter_false_negatives(pool, it->second, corpus);
      result.answer_filtered = before - pool.entries.size();
    }
  }

  std::vector<std::string> candidates;
  candidates.reserve(pool.entries.size());
  for (const RankedEntry& e : pool.entries) {
    if (positives.count(e.passage_id) == 0) candidates.push_back(e.passage_id);
  }
  if (candidates.empty()) return result;

  const std::size_t m = std::min(cfg.sample_m, candidates.size());
  RngStream rng(derive_seed(cfg.seed, query.id));
  const std::vector<std::size_t> picks = rng.sample_without_replacement(candidates.size(), m);

  // The labeled positive: smallest id among the highest-graded judgments.
  int best_grade = 0;
  for (const auto& [pid, grade] : *judged) best_grade = std::max(best_grade, grade);
  std::string positive_id;
  for (const auto& [pid, grade] : *judged) {
    if (grade == best_grade) {
      positive_id = pid;
      break;
    }
  }
  const std::size_t pos_row = corpus.find(positive_id);
  if (pos_row == Corpus::npos) return result;

  std::vector<std::string> neg_ids;
  std::vector<TokenSequence> negs;
  for (std::size_t pick : picks) {
    const std::string& pid = candidates[pick];
    const std::size_t row = corpus.find(pid);
    if (row == Corpus::npos) continue;
    neg_ids.push_back(pid);
    negs.push_back(tokenize(corpus.passages[row].text, enc_cfg.max_passage_len,
                            enc_cfg.vocab_size));
  }
  if (neg_ids.empty()) return result;

  result.group = make_candidate_group(
      query.id, tokenize(query.text, enc_cfg.max_query_len, enc_cfg.vocab_size), positive_id,
      tokenize(corpus.passages[pos_row].text, enc_cfg.max_passage_len, enc_cfg.vocab_size),
      std::move(neg_ids), std::move(negs));
  result.kept = true;
  return result;
}

}  // namespace

std::vector<CandidateGroup> mine_hard_negatives(const DualEncoder& student,
                                                const EmbeddingIndex& index, const Corpus& corpus,
                                                const QuerySet& queries, const Qrels& qrels,
                                                const MiningConfig& cfg, MiningStats* stats,
                                                const AnswerMap* answers) {
  cfg.validate();
  if (corpus.empty()) throw InputError("mine_hard_negatives: corpus is empty");

  const EmbeddingMatrix qmat = encode_queries(student, queries);
  std::vector<std::string> qids;
  qids.reserve(queries.size());
  for (const Query& q : queries.queries) qids.push_back(q.id);
  const std::vector<RankedList> retrieved = search_topk_batch(index, qmat, qids, cfg.depth_k);

  std::vector<MinedQuery> mined(queries.size());
  const std::int64_t n = static_cast<std::int64_t>(queries.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::int64_t i = 0; i < n; ++i) {
    const std::size_t qi = static_cast<std::size_t>(i);
    mined[qi] = mine_one_query(queries.queries[qi], retrieved[qi], corpus, qrels, cfg, answers,
                               student.config());
  }

  MiningStats local;
  local.queries_in = queries.size();
  std::vector<CandidateGroup> out;
  for (MinedQuery& m : mined) {
    local.answer_filtered += m.answer_filtered;
    if (m.no_positive) {
      local.dropped_no_positive += 1;
    } else if (!m.kept) {
      local.dropped_no_negatives += 1;
    } else {
      out.push_back(std::move(m.group));
    }
  }
  local.groups_out = out.size();
  if (stats != nullptr) *stats = local;
  return out;
}

std::vector<CandidateGroup> mine_hard_negatives(const DualEncoder& student, const Corpus& corpus,
                                                const QuerySet& queries, const Qrels& qrels,
                                                const MiningConfig& cfg, MiningStats* stats,
                                                const AnswerMap* answers) {
  const EmbeddingIndex index = build_index(student, corpus);
  return mine_hard_negatives(student, index, corpus, queries, qrels, cfg, stats, answers);
}

PositiveRankInfo positive_ranks(const DualEncoder& student, const CrossEncoder& teacher,
                                const CandidateGroup& group, const RankedList& retrieval,
                                const Corpus& corpus) {
  PositiveRankInfo info;

  // Student side: rank of the positive within the retrieval list, plus its
  // min-max normalized score over {p+} u retrieved.
  double pos_student_score = 0.0;
  bool have_pos_score = false;
  double min_s = 0.0, max_s = 0.0;
  bool first = true;
  for (const RankedEntry& e : retrieval.entries) {
    if (e.passage_id == group.positive_id) {
      info.student_rank = e.rank;
      pos_student_score = e.score;
      have_pos_score = true;
    }
    min_s = first ? e.score : std::min(min_s, e.score);
    max_s = first ? e.score : std::max(max_s, e.score);
    first = false;
  }
  if (!have_pos_score) {
    const std::vector<double> qv = student.encode_query_raw(group.query);
    const std::vector<double> pv = student.encode_passage_raw(group.positive);
    for (std::size_t i = 0; i < qv.size(); ++i) pos_student_score += qv[i] * pv[i];
    min_s = first ? pos_student_score : std::min(min_s, pos_student_score);
    max_s = first ? pos_student_score : std::max(max_s, pos_student_score);
    first = false;
  }
  info.student_score_norm = max_s > min_s ? (pos_student_score - min_s) / (max_s - min_s) : 0.5;

  // Teacher side: CE rescoring of {p+} u retrieved candidates, descending,
  // ascending-id tie rule.
  const EncoderConfig& tcfg = teacher.config();
  const TokenSequence& tq = group.query;
  const double pos_teacher_score = teacher.score_raw(tq, group.positive);

  std::vector<double> cand_scores(retrieval.entries.size(), 0.0);
  std::vector<bool> cand_valid(retrieval.entries.size(), false);
  const std::int64_t n = static_cast<std::int64_t>(retrieval.entries.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t i = 0; i < n; ++i) {
    const std::size_t ci = static_cast<std::size_t>(i);
    const RankedEntry& e = retrieval.entries[ci];
    if (e.passage_id == group.positive_id) continue;  // already scored
    const std::size_t row = corpus.find(e.passage_id);
    if (row == Corpus::npos) continue;
    const TokenSequence seq =
        tokenize(corpus.passages[row].text, tcfg.max_passage_len, tcfg.vocab_size);
    cand_scores[ci] = teacher.score_raw(tq, seq);
    cand_valid[ci] = true;
  }

  std::size_t rank = 1;
  double min_t = pos_teacher_score, max_t = pos_teacher_score;
  for (std::size_t i = 0; i < cand_scores.size(); ++i) {
    if (!cand_valid[i]) continue;
    const double s = cand_scores[i];
    min_t = std::min(min_t, s);
    max_t = std::max(max_t, s);
    if (s > pos_teacher_score ||
        (s == pos_teacher_score && retrieval.entries[i].passage_id < group.positive_id)) {
      ++rank;
    }
  }
  info.teacher_rank = rank;
  info.teacher_score_norm = max_t > min_t ? (pos_teacher_score - min_t) / (max_t - min_t) : 0.5;
  return info;
}

void RankWindow::validate() const {
  if (!(lo < hi)) throw ConfigError("rank window requires lo < hi");
}

void ConfusionFilter::validate() const {
  student_window.validate();
  teacher_window.validate();
}

bool ConfusionFilter::selects(const PositiveRankInfo& info) const {
  if (info.student_rank == kRankAbsent || info.teacher_rank == kRankAbsent) return false;
  if (mode == ConfusionMode::kWindowIntersection) {
    return student_window.contains(info.student_rank) &&
           teacher_window.contains(info.teacher_rank);
  }
  return info.teacher_score_norm > info.student_score_norm &&
         info.student_rank <= student_window.hi && info.teacher_rank <= teacher_window.hi;
}

ConfusionDataset select_confusing_queries(const std::vector<QueryRankRecord>& records,
                                          const ConfusionFilter& filter, std::size_t iteration) {
  filter.validate();
  ConfusionDataset out;
  out.iteration = iteration;
  out.counters.queries_in = records.size();
  for (const QueryRankRecord& rec : records) {
    const PositiveRankInfo& info = rec.info;
    if (info.student_rank == kRankAbsent || info.teacher_rank == kRankAbsent) {
      out.counters.positive_absent += 1;
      continue;
    }
    if (filter.selects(info)) {
      out.counters.selected += 1;
      out.groups.push_back(rec.group);
      continue;
    }
    if (filter.mode == ConfusionMode::kWindowIntersection) {
      if (!filter.student_window.contains(info.student_rank)) {
        out.counters.rejected_student_window += 1;
      } else {
        out.counters.rejected_teacher_window += 1;
      }
    } else {
      out.counters.rejected_score_dominance += 1;
    }
  }
  return out;
}

std::string selection_report(const SelectionCounters& c) {
  std::ostringstream os;
  os << "queries_in=" << c.queries_in << " selected=" << c.selected
     << " rejected_student_window=" << c.rejected_student_window
     << " rejected_teacher_window=" << c.rejected_teacher_window
     << " rejected_score_dominance=" << c.rejected_score_dominance
     << " positive_absent=" << c.positive_absent;
  return os.str();
}

void write_groups_file(const std::string& path, const std::vector<CandidateGroup>& groups) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open groups file for writing: " + path);
  for (const CandidateGroup& g : groups) {
    os << g.query_id << '\t' << g.positive_id << '\t';
    for (std::size_t i = 0; i < g.negative_ids.size(); ++i) {
      if (i > 0) os << ',';
      os << g.negative_ids[i];
    }
    os << '\n';
  }
  if (!os) throw IoError("groups file write failed: " + path);
}

std::vector<CandidateGroup> read_groups_file(const std::string& path, const Corpus& corpus,
                                             const QuerySet& queries, const EncoderConfig& cfg) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open groups file: " + path);
  std::map<std::string, const Query*> query_by_id;
  for (const Query& q : queries.queries) query_by_id.emplace(q.id, &q);

  std::vector<CandidateGroup> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string qid, pid, negs;
    if (!std::getline(ss, qid, '\t') || !std::getline(ss, pid, '\t') || !std::getline(ss, negs)) {
      throw InputError("malformed groups line " + std::to_string(line_no) + " in " + path);
    }
    auto qit = query_by_id.find(qid);
    if (qit == query_by_id.end()) {
      throw InputError("groups line " + std::to_string(line_no) + ": unknown query '" + qid + "'");
    }
    const std::size_t pos_row = corpus.find(pid);
    if (pos_row == Corpus::npos) {
      throw InputError("groups line " + std::to_string(line_no) + ": unknown passage '" + pid +
                       "'");
    }
    std::vector<std::string> neg_ids;
    std::vector<TokenSequence> neg_seqs;
    std::istringstream neg_ss(negs);
    std::string neg;
    while (std::getline(neg_ss, neg, ',')) {
      const std::size_t row = corpus.find(neg);
      if (row == Corpus::npos) {
        throw InputError("groups line " + std::to_string(line_no) + ": unknown passage '" + neg +
                         "'");
      }
      neg_ids.push_back(neg);
      neg_seqs.push_back(tokenize(corpus.passages[row].text, cfg.max_passage_len, cfg.vocab_size));
    }
    out.push_back(make_candidate_group(
        qid, tokenize(qit->second->text, cfg.max_query_len, cfg.vocab_size), pid,
        tokenize(corpus.passages[pos_row].text, cfg.max_passage_len, cfg.vocab_size),
        std::move(neg_ids), std::move(neg_seqs)));
  }
  return out;
}

}  // namespace prod
