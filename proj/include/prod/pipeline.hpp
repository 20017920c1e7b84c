#ifndef PROD_PIPELINE_HPP_
#define PROD_PIPELINE_HPP_

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "prod/data_io.hpp"
#include "prod/losses.hpp"
#include "prod/mining.hpp"
#include "prod/optimizer.hpp"

namespace prod {

enum class TeacherKind { kDualEncoder, kCrossEncoder };

std::string teacher_kind_name(TeacherKind kind);
TeacherKind parse_teacher_kind(const std::string& name);

using TeacherModel = std::variant<DualEncoder, CrossEncoder>;

struct StageSpec {
  TeacherKind teacher_kind = TeacherKind::kDualEncoder;
  std::size_t teacher_layers = 3;
  std::size_t negatives_per_query = 1;
  LossWeights weights;
  std::size_t steps = 400;
  double learning_rate = 3e-3;
  std::size_t batch_size = 8;
  double warmup_ratio = 0.1;
  bool use_in_batch = true;
  bool use_regularization = false;
  // Budget for training this stage's teacher on the mined groups.
  std::size_t teacher_steps = 400;
  double teacher_learning_rate = 3e-3;

  void validate() const;
};

struct WarmupSpec {
  std::size_t steps = 300;          // phase 1: teacher and student, random negatives
  std::size_t retrain_steps = 300;  // phase 2: teacher retrained on mined negatives
  double learning_rate = 3e-3;
  std::size_t batch_size = 8;
  std::size_t negatives_per_query = 1;
  double warmup_ratio = 0.1;
};

struct DpdSpec {
  std::size_t steps = 200;  // distillation steps per iteration
  double learning_rate = 1e-5;
  std::size_t batch_size = 8;
  std::size_t negatives_per_query = 15;
  double warmup_ratio = 0.1;
  // CE teacher continuation runs this many epochs over each D^i.
  double teacher_epochs = 2.0;
  double teacher_learning_rate = 1e-5;
};

struct PipelineConfig {
  EncoderConfig encoder;  // base dims; per-model depth comes from the specs below
  std::size_t student_layers = 2;
  WarmupSpec warmup;
  std::vector<StageSpec> stages;
  std::size_t dpd_iterations = 1;  // N
  std::size_t dpd_kprime = 15;     // k'
  ConfusionFilter dpd_filter;      // default ST-(1,k'] & TT-(0,1]
  DpdSpec dpd;
  LossWeights dpd_weights;  // gamma > 0 by default
  MiningConfig mining;      // depth_k / answer_filter; sample_m comes from each stage
  std::size_t eval_depth = 100;
  std::uint64_t seed = 42;
  // Permits teacher schedules the default validation rejects (for ablation
  // runs like CE before DE). Structural invariants still hold.
  bool allow_nonstandard_order = false;

  // Canonical three-stage schedule (DE -> smaller CE -> larger CE).
  static PipelineConfig defaults();

  void validate() const;  // throws ConfigError naming the violated rule
};

// ---- reports ---------------------------------------------------------------

struct StageReport {
  std::string name;
  std::size_t steps = 0;
  double final_loss = 0.0;
  // Metric block: mrr@10 plus recall@{5,20,50,100} on the dev split.
  std::map<std::string, double> metrics;
};

struct DpdIterationReport {
  std::size_t iteration = 0;
  std::size_t dataset_size = 0;
  SelectionCounters counters;
  std::size_t steps = 0;
  double final_loss = 0.0;
  std::map<std::string, double> metrics;
  bool terminated_early = false;
};

struct PipelineReport {
  std::vector<StageReport> stages;
  std::vector<DpdIterationReport> dpd_iterations;

  std::string to_text() const;
};

std::map<std::string, double> evaluate_retrieval(const DualEncoder& model,
                                                 const RetrievalDataset& data,
                                                 const QuerySet& queries, std::size_t eval_depth);

// ---- training entry points ---------------------------------------------------

struct TrainTelemetry {
  std::size_t steps = 0;
  double final_loss = 0.0;
  double mean_loss = 0.0;
};

struct TrainHyper {
  std::size_t steps = 400;
  double learning_rate = 3e-3;
  std::size_t batch_size = 8;
  double warmup_ratio = 0.1;
  std::uint64_t seed = 42;
  bool use_in_batch = true;  // DE training extends pools in-batch
};

// Phase 1: teacher and student DEs trained on uniformly random negatives
// with in-batch positives. Phase 2: hard negatives mined with the phase-1
// teacher, teacher retrained on them.
struct WarmupResult {
  DualEncoder teacher;
  DualEncoder student;
  TrainTelemetry teacher_telemetry;
  TrainTelemetry student_telemetry;
};

WarmupResult warmup(const RetrievalDataset& data, const PipelineConfig& config);

// Pure-student baseline: hard loss only, random negatives + in-batch
// positives, no teacher.
TrainTelemetry train_pure_student(DualEncoder& student, const RetrievalDataset& data,
                                  const PipelineConfig& config, std::size_t steps);

// DE teachers train with the contrastive hard loss (in-batch extension on);
// CE teachers with listwise softmax cross-entropy over {p+} u negatives.
TeacherModel train_teacher(TeacherKind kind, std::size_t layers, const EncoderConfig& base,
                           const std::vector<CandidateGroup>& groups, const TrainHyper& hyper,
                           TrainTelemetry* telemetry = nullptr);

// Runs spec.steps optimizer updates of the stage loss. Teacher and frozen
// parameters are never touched. `frozen` is required iff
// spec.use_regularization.
TrainTelemetry distill_stage(DualEncoder& student, const TeacherModel& teacher,
                             const std::vector<CandidateGroup>& groups, const StageSpec& spec,
                             const DualEncoder* frozen, std::uint64_t seed);

// Full TPD over config.stages: per stage, re-mine with the current student,
// train the stage teacher, snapshot a frozen copy (CE stages), distill, and
// evaluate. Returns the last stage's teacher for DPD continuation.
std::optional<TeacherModel> run_tpd(DualEncoder& student, const PipelineConfig& config,
                                    const RetrievalDataset& data, PipelineReport& report,
                                    const std::string& checkpoint_dir = "");

// DPD iterations: mine -> rank -> select confusing queries -> continue the
// CE teacher on D^i -> snapshot -> distill with the stage-II loss. An empty
// D^i terminates early with a report entry.
void run_dpd(DualEncoder& student, CrossEncoder& ce_teacher, const PipelineConfig& config,
             const RetrievalDataset& data, PipelineReport& report,
             const std::string& checkpoint_dir = "");

// warmup + TPD + DPD + final evaluation, with checkpoints and the report
// written under out_dir (when nonempty).
struct PipelineRunResult {
  DualEncoder student;
  PipelineReport report;
};

PipelineRunResult run_pipeline(const PipelineConfig& config, const RetrievalDataset& data,
                               const std::string& out_dir = "");

// ---- multi-teacher baselines -------------------------------------------------

enum class MultiTeacherStrategy { kRandomBatch, kMergeScore, kMergeLoss };

std::string strategy_name(MultiTeacherStrategy s);
MultiTeacherStrategy parse_strategy(const std::string& name);

// Soft term for one group under the strategy. random_batch uses the teacher
// picked for the batch; merge_score averages teacher distributions
// (renormalized) before the KL; merge_loss averages the per-teacher KL
// terms so the total matches the single-teacher scale.
Tensor multi_teacher_loss(Tape& tape, MultiTeacherStrategy strategy,
                          const std::vector<TeacherModel>& teachers, const DualEncoder& student,
                          const CandidateGroup& group, const LossWeights& weights,
                          std::size_t random_batch_pick);

TrainTelemetry multi_teacher_baseline(MultiTeacherStrategy strategy,
                                      const std::vector<TeacherModel>& teachers,
                                      DualEncoder& student,
                                      const std::vector<CandidateGroup>& groups,
                                      const LossWeights& weights, const TrainHyper& hyper);

}  // namespace prod

#endif  // PROD_PIPELINE_HPP_
