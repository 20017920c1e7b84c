#include "prod/losses.hpp"

#include <algorithm>
#include <set>

#include "prod/common.hpp"

namespace prod {

CandidateGroup make_candidate_group(std::string query_id, TokenSequence query,
                                    std::string positive_id, TokenSequence positive,
                                    std::vector<std::string> negative_ids,
                                    std::vector<TokenSequence> negatives) {
  if (negative_ids.size() != negatives.size()) {
    throw ContractError("candidate group: negative id/sequence count mismatch");
  }
  CandidateGroup group;
  group.query_id = std::move(query_id);
  group.query = std::move(query);
  group.positive_id = std::move(positive_id);
  group.positive = std::move(positive);
  std::set<std::string> seen;
  for (std::size_t i = 0; i < negative_ids.size(); ++i) {
    if (negative_ids[i] == group.positive_id) {
      throw ContractError("candidate group: positive '" + group.positive_id +
                          "' listed among negatives");
    }
    if (!seen.insert(negative_ids[i]).second) continue;  // drop duplicate by id
    group.negative_ids.push_back(std::move(negative_ids[i]));
    group.negatives.push_back(std::move(negatives[i]));
  }
  if (group.negatives.empty()) {
    throw ContractError("candidate group for query '" + group.query_id + "' has no negatives");
  }
  return group;
}

std::vector<CandidateGroup> extend_in_batch(const std::vector<CandidateGroup>& batch) {
  std::vector<CandidateGroup> out;
  out.reserve(batch.size());
  for (std::size_t g = 0; g < batch.size(); ++g) {
    CandidateGroup ext = batch[g];
    std::set<std::string> seen(ext.negative_ids.begin(), ext.negative_ids.end());
    seen.insert(ext.positive_id);
    for (std::size_t other = 0; other < batch.size(); ++other) {
      if (other == g) continue;
      const CandidateGroup& o = batch[other];
      if (!seen.insert(o.positive_id).second) continue;
      ext.negative_ids.push_back(o.positive_id);
      ext.negatives.push_back(o.positive);
    }
    ext.in_batch_extension = true;
    out.push_back(std::move(ext));
  }
  return out;
}

void LossWeights::validate() const {
  if (!(tau > 0.0)) throw ConfigError("loss weights: tau must be positive");
  if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) {
    throw ConfigError("loss weights must be nonnegative");
  }
  if (alpha == 0.0 && beta == 0.0) {
    throw ConfigError("loss weights: at least one of alpha, beta must be positive");
  }
}

namespace {

void check_group(const CandidateGroup& group) {
  if (group.negatives.empty()) {
    throw ContractError("candidate group for query '" + group.query_id + "' has no negatives");
  }
}

}  // namespace

Tensor group_scores(Tape& tape, const DualEncoder& model, const CandidateGroup& group) {
  check_group(group);
  const Tensor q = model.encode_query(tape, group.query);
  std::vector<Tensor> rows;
  rows.reserve(1 + group.negatives.size());
  rows.push_back(model.encode_passage(tape, group.positive));
  for (const TokenSequence& neg : group.negatives) {
    rows.push_back(model.encode_passage(tape, neg));
  }
  return matvec(tape, stack_rows(tape, rows), q);
}

Tensor group_scores(Tape& tape, const CrossEncoder& model, const CandidateGroup& group) {
  check_group(group);
  std::vector<Tensor> scores;
  scores.reserve(1 + group.negatives.size());
  scores.push_back(model.score(tape, group.query, group.positive));
  for (const TokenSequence& neg : group.negatives) {
    scores.push_back(model.score(tape, group.query, neg));
  }
  return concat_scalars(tape, scores);
}

std::vector<double> group_scores_const(const DualEncoder& model, const CandidateGroup& group) {
  check_group(group);
  const std::vector<double> q = model.encode_query_raw(group.query);
  std::vector<double> out;
  out.reserve(1 + group.negatives.size());
  auto score_one = [&](const TokenSequence& p) {
    const std::vector<double> e = model.encode_passage_raw(p);
    double acc = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) acc += q[i] * e[i];
    return acc;
  };
  out.push_back(score_one(group.positive));
  for (const TokenSequence& neg : group.negatives) out.push_back(score_one(neg));
  return out;
}

std::vector<double> group_scores_const(const CrossEncoder& model, const CandidateGroup& group) {
  check_group(group);
  std::vector<double> out;
  out.reserve(1 + group.negatives.size());
  out.push_back(model.score_raw(group.query, group.positive));
  for (const TokenSequence& neg : group.negatives) {
    out.push_back(model.score_raw(group.query, neg));
  }
  return out;
}

Tensor hard_loss(Tape& tape, const DualEncoder& student, const CandidateGroup& group) {
  const Tensor scores = group_scores(tape, student, group);
  return neg_log_softmax_at(tape, scores, 0);
}

Distribution soft_distribution(Tape& tape, const DualEncoder& scorer, const CandidateGroup& group,
                               double tau) {
  return softmax_temp(tape, group_scores(tape, scorer, group), tau);
}

Distribution soft_distribution(Tape& tape, const CrossEncoder& scorer, const CandidateGroup& group,
                               double tau) {
  return softmax_temp(tape, group_scores(tape, scorer, group), tau);
}

namespace {

Distribution softmax_const(std::vector<double> scores, double tau) {
  Tape scratch;  // records nothing: the input tensor carries no gradient
  Tensor s({scores.size()}, std::move(scores), /*requires_grad=*/false);
  return softmax_temp(scratch, s, tau);
}

}  // namespace

Distribution soft_distribution(const DualEncoder& scorer, const CandidateGroup& group,
                               double tau) {
  return softmax_const(group_scores_const(scorer, group), tau);
}

Distribution soft_distribution(const CrossEncoder& scorer, const CandidateGroup& group,
                               double tau) {
  return softmax_const(group_scores_const(scorer, group), tau);
}

Tensor soft_loss(Tape& tape, const Distribution& teacher_dist, const Distribution& student_dist) {
  return kl_divergence(tape, teacher_dist, student_dist);
}

Tensor regularization_loss(Tape& tape, const DualEncoder& frozen, const DualEncoder& student,
                           const CandidateGroup& group, double tau) {
  const Distribution frozen_dist = soft_distribution(frozen, group, tau);
  const Distribution student_dist = soft_distribution(tape, student, group, tau);
  return kl_divergence(tape, frozen_dist, student_dist);
}

Tensor stage1_loss(Tape& tape, const DualEncoder& student, const DualEncoder& de_teacher,
                   const CandidateGroup& group, const LossWeights& weights) {
  weights.validate();
  if (weights.gamma != 0.0) {
    throw ConfigError("stage1_loss: gamma must be zero (stage I has no regularization term)");
  }
  const Tensor hard = hard_loss(tape, student, group);
  const Distribution teacher_dist = soft_distribution(de_teacher, group, weights.tau);
  const Distribution student_dist = soft_distribution(tape, student, group, weights.tau);
  const Tensor soft = soft_loss(tape, teacher_dist, student_dist);
  return weighted_sum(tape, {{weights.alpha, hard}, {weights.beta, soft}});
}

Tensor stage2_loss(Tape& tape, const DualEncoder& student, const CrossEncoder& ce_teacher,
                   const DualEncoder& frozen_student, const CandidateGroup& group,
                   const LossWeights& weights) {
  weights.validate();
  if (group.in_batch_extension) {
    throw ConfigError("stage2_loss: CE stages use mined hard negatives only, "
                      "in-batch extension is not allowed");
  }
  const Tensor hard = hard_loss(tape, student, group);
  const Distribution teacher_dist = soft_distribution(ce_teacher, group, weights.tau);
  const Distribution student_dist = soft_distribution(tape, student, group, weights.tau);
  const Tensor soft = soft_loss(tape, teacher_dist, student_dist);
  const Tensor reg = regularization_loss(tape, frozen_student, student, group, weights.tau);
  return weighted_sum(tape, {{weights.alpha, hard}, {weights.beta, soft}, {weights.gamma, reg}});
}

}  // namespace prod
