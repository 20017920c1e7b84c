#ifndef PROD_LOSSES_HPP_
#define PROD_LOSSES_HPP_

#include <string>
#include <variant>
#include <vector>

#include "prod/encoder.hpp"
#include "prod/tensor.hpp"

namespace prod {

// One query with its labeled positive and a negative pool: the unit of all
// loss computation. The candidate order is fixed as positive first, then
// negatives in pool order, so the hard-label index is always 0.
struct CandidateGroup {
  std::string query_id;
  TokenSequence query;
  std::string positive_id;
  TokenSequence positive;
  std::vector<std::string> negative_ids;
  std::vector<TokenSequence> negatives;
  bool in_batch_extension = false;
};

// Validating constructor: requires >= 1 negative, removes duplicate
// negatives by passage id, and rejects the positive appearing as a negative.
CandidateGroup make_candidate_group(std::string query_id, TokenSequence query,
                                    std::string positive_id, TokenSequence positive,
                                    std::vector<std::string> negative_ids,
                                    std::vector<TokenSequence> negatives);

// Extends every group's pool with the positives of the other groups in the
// batch (deduplicated by passage id). Used by DE-teacher training and
// stage-I distillation.
std::vector<CandidateGroup> extend_in_batch(const std::vector<CandidateGroup>& batch);

struct LossWeights {
  double alpha = 0.1;  // hard loss
  double beta = 0.9;   // soft loss
  double gamma = 0.0;  // regularization (zero in stage I)
  double tau = 4.0;

  void validate() const;
};

// Differentiable candidate scores [positive ; negatives] for the student.
Tensor group_scores(Tape& tape, const DualEncoder& model, const CandidateGroup& group);
Tensor group_scores(Tape& tape, const CrossEncoder& model, const CandidateGroup& group);

// Constant candidate scores (no tape) for teachers and frozen copies.
std::vector<double> group_scores_const(const DualEncoder& model, const CandidateGroup& group);
std::vector<double> group_scores_const(const CrossEncoder& model, const CandidateGroup& group);

// -log softmax over the candidate pool at the positive. No temperature.
Tensor hard_loss(Tape& tape, const DualEncoder& student, const CandidateGroup& group);

// Temperature softmax over the candidate pool (positive first). The taped
// overloads differentiate through the scorer; the const overloads detach.
Distribution soft_distribution(Tape& tape, const DualEncoder& scorer, const CandidateGroup& group,
                               double tau);
Distribution soft_distribution(Tape& tape, const CrossEncoder& scorer, const CandidateGroup& group,
                               double tau);
Distribution soft_distribution(const DualEncoder& scorer, const CandidateGroup& group, double tau);
Distribution soft_distribution(const CrossEncoder& scorer, const CandidateGroup& group,
                               double tau);

// KL(teacher || student); the teacher side is constant.
Tensor soft_loss(Tape& tape, const Distribution& teacher_dist, const Distribution& student_dist);

// KL(dist(frozen) || dist(student)); gradient flows only into the student.
Tensor regularization_loss(Tape& tape, const DualEncoder& frozen, const DualEncoder& student,
                           const CandidateGroup& group, double tau);

// alpha * hard + beta * KL(teacher DE dist || student dist). Stage I has no
// regularization term; weights.gamma must be zero.
Tensor stage1_loss(Tape& tape, const DualEncoder& student, const DualEncoder& de_teacher,
                   const CandidateGroup& group, const LossWeights& weights);

// alpha * hard + beta * KL(CE teacher dist || student dist)
// + gamma * regularization. Rejects in-batch-extended groups: CE stages use
// mined hard negatives only.
Tensor stage2_loss(Tape& tape, const DualEncoder& student, const CrossEncoder& ce_teacher,
                   const DualEncoder& frozen_student, const CandidateGroup& group,
                   const LossWeights& weights);

}  // namespace prod

#endif  // PROD_LOSSES_HPP_
