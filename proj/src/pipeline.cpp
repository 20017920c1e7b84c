#include "prod/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "prod/checkpoint.hpp"
#include "prod/common.hpp"
#include "prod/log.hpp"
#include "prod/metrics.hpp"
#include "prod/rng.hpp"

namespace prod {

std::string teacher_kind_name(TeacherKind kind) {
  return kind == TeacherKind::kDualEncoder ? "dual_encoder" : "cross_encoder";
}

TeacherKind parse_teacher_kind(const std::string& name) {
  if (name == "dual_encoder") return TeacherKind::kDualEncoder;
  if (name == "cross_encoder") return TeacherKind::kCrossEncoder;
  throw ConfigError("unknown teacher kind '" + name + "'");
}

std::string strategy_name(MultiTeacherStrategy s) {
  switch (s) {
    case MultiTeacherStrategy::kRandomBatch: return "random_batch";
    case MultiTeacherStrategy::kMergeScore: return "merge_score";
    case MultiTeacherStrategy::kMergeLoss: return "merge_loss";
  }
  return "unknown";
}

MultiTeacherStrategy parse_strategy(const std::string& name) {
  if (name == "random_batch") return MultiTeacherStrategy::kRandomBatch;
  if (name == "merge_score") return MultiTeacherStrategy::kMergeScore;
  if (name == "merge_loss") return MultiTeacherStrategy::kMergeLoss;
  throw ConfigError("unknown multi-teacher strategy '" + name + "'");
}

void StageSpec::validate() const {
  weights.validate();
  if (teacher_layers == 0) throw ConfigError("stage: teacher_layers must be >= 1");
  if (negatives_per_query == 0) throw ConfigError("stage: negatives_per_query must be >= 1");
  if (batch_size == 0) throw ConfigError("stage: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("stage: learning_rate must be positive");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
    throw ConfigError("stage: warmup_ratio must lie in [0, 1)");
  }
  if (teacher_kind == TeacherKind::kDualEncoder) {
    if (use_regularization) {
      throw ConfigError("stage: dual_encoder stages do not use regularization (rule: DE stage "
                        "has no L_r term)");
    }
    if (weights.gamma != 0.0) {
      throw ConfigError("stage: dual_encoder stages require gamma = 0 (rule: DE stage has no "
                        "L_r term)");
    }
  } else {
    if (use_in_batch) {
      throw ConfigError("stage: cross_encoder stages use mined hard negatives only (rule: no "
                        "in-batch extension with a CE teacher)");
    }
  }
}

PipelineConfig PipelineConfig::defaults() {
  PipelineConfig cfg;
  cfg.encoder = EncoderConfig{};
  cfg.student_layers = 2;

  StageSpec de;
  de.teacher_kind = TeacherKind::kDualEncoder;
  de.teacher_layers = 3;
  de.negatives_per_query = 1;
  de.use_in_batch = true;
  de.use_regularization = false;
  de.weights = LossWeights{0.1, 0.9, 0.0, 4.0};

  StageSpec ce_small;
  ce_small.teacher_kind = TeacherKind::kCrossEncoder;
  ce_small.teacher_layers = 3;
  ce_small.negatives_per_query = 15;
  ce_small.use_in_batch = false;
  ce_small.use_regularization = true;
  ce_small.weights = LossWeights{0.1, 0.9, 0.1, 4.0};

  StageSpec ce_large = ce_small;
  ce_large.teacher_layers = 4;

  cfg.stages = {de, ce_small, ce_large};
  cfg.dpd_weights = LossWeights{0.1, 0.9, 0.1, 4.0};
  cfg.dpd_filter.student_window = RankWindow{1, cfg.dpd_kprime};
  cfg.dpd_filter.teacher_window = RankWindow{0, 1};
  cfg.mining.depth_k = 300;
  return cfg;
}

void PipelineConfig::validate() const {
  encoder.validate();
  if (student_layers == 0) throw ConfigError("pipeline: student_layers must be >= 1");
  if (stages.empty()) throw ConfigError("pipeline: at least one stage is required");
  for (const StageSpec& s : stages) s.validate();
  mining.validate();
  dpd_filter.validate();
  dpd_weights.validate();
  if (dpd_kprime == 0) throw ConfigError("pipeline: dpd.kprime must be >= 1");
  if (eval_depth == 0) throw ConfigError("pipeline: eval_depth must be >= 1");

  if (!allow_nonstandard_order) {
    // Progressive ordering: all DE stages precede CE stages and depth never
    // decreases within a teacher kind.
    bool seen_ce = false;
    std::size_t last_de = 0, last_ce = 0;
    for (const StageSpec& s : stages) {
      if (s.teacher_kind == TeacherKind::kCrossEncoder) {
        if (s.teacher_layers < last_ce) {
          throw ConfigError("pipeline: CE teacher depth must be non-decreasing across stages "
                            "(rule: progressive teacher ordering; set "
                            "pipeline.allow_nonstandard_order to override)");
        }
        last_ce = s.teacher_layers;
        seen_ce = true;
      } else {
        if (seen_ce) {
          throw ConfigError("pipeline: DE stages must precede CE stages (rule: progressive "
                            "teacher ordering; set pipeline.allow_nonstandard_order to "
                            "override)");
        }
        if (s.teacher_layers < last_de) {
          throw ConfigError("pipeline: DE teacher depth must be non-decreasing across stages "
                            "(rule: progressive teacher ordering; set "
                            "pipeline.allow_nonstandard_order to override)");
        }
        last_de = s.teacher_layers;
      }
    }
  }
  if (dpd_iterations > 0 &&
      stages.back().teacher_kind != TeacherKind::kCrossEncoder) {
    throw ConfigError("pipeline: DPD continues the final CE teacher, so the last stage must be "
                      "cross_encoder (rule: DPD requires a CE teacher)");
  }
}

// ---- shared trainer ---------------------------------------------------------

namespace {

using GroupLossFn = std::function<Tensor(Tape&, const CandidateGroup&)>;

TrainTelemetry run_training(const std::vector<Tensor>& params,
                            const std::vector<CandidateGroup>& groups, const TrainHyper& hyper,
                            const GroupLossFn& loss_fn, const std::string& tag) {
  TrainTelemetry telemetry;
  if (hyper.steps == 0 || groups.empty()) return telemetry;

  AdamWConfig opt_cfg;
  opt_cfg.learning_rate = hyper.learning_rate;
  opt_cfg.warmup_ratio = hyper.warmup_ratio;
  opt_cfg.total_steps = hyper.steps;
  AdamW optimizer(params, opt_cfg);

  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), 0);
  RngStream order_rng(derive_seed(hyper.seed, "batch_order"));
  std::size_t cursor = 0;

  double loss_sum = 0.0;
  for (std::size_t step = 0; step < hyper.steps; ++step) {
    if (cursor == 0) order_rng.shuffle(order);
    const std::size_t take = std::min(hyper.batch_size, groups.size() - cursor);
    std::vector<CandidateGroup> batch;
    batch.reserve(take);
    for (std::size_t i = 0; i < take; ++i) batch.push_back(groups[order[cursor + i]]);
    cursor += take;
    if (cursor >= groups.size()) cursor = 0;

    if (hyper.use_in_batch && batch.size() > 1) batch = extend_in_batch(batch);

    optimizer.zero_grad();
    Tape tape;
    double batch_loss_value = 0.0;
    try {
      std::vector<std::pair<double, Tensor>> terms;
      terms.reserve(batch.size());
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (const CandidateGroup& group : batch) {
        terms.emplace_back(inv, loss_fn(tape, group));
      }
      Tensor batch_loss = weighted_sum(tape, terms);
      batch_loss_value = batch_loss.item();
      backward(batch_loss, tape);
    } catch (const ContractError& e) {
      throw TrainingError(tag + ": training aborted at step " + std::to_string(step) + ": " +
                          e.what());
    }
    if (!std::isfinite(batch_loss_value)) {
      throw TrainingError(tag + ": non-finite loss at step " + std::to_string(step));
    }
    optimizer.step();

    loss_sum += batch_loss_value;
    telemetry.final_loss = batch_loss_value;
    if (log_level() >= LogLevel::kDebug && (step % 50 == 0 || step + 1 == hyper.steps)) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%s step %zu/%zu loss=%.6f", tag.c_str(), step + 1,
                    hyper.steps, batch_loss_value);
      log_debug(buf);
    }
  }
  telemetry.steps = hyper.steps;
  telemetry.mean_loss = loss_sum / static_cast<double>(hyper.steps);
  return telemetry;
}

// Random negatives with in-batch positives: the "original data" setting used
// by warm-up and the pure-student baseline.
std::vector<CandidateGroup> build_random_groups(const RetrievalDataset& data,
                                                const EncoderConfig& enc,
                                                std::size_t negatives_per_query,
                                                std::uint64_t seed) {
  std::vector<CandidateGroup> groups;
  for (const Query& query : data.train.queries) {
    const auto* judged = data.qrels.find(query.id);
    if (judged == nullptr) continue;
    std::set<std::string> positives;
    int best_grade = 0;
    for (const auto& [pid, grade] : *judged) {
      if (grade > 0) {
        positives.insert(pid);
        best_grade = std::max(best_grade, grade);
      }
    }
    if (positives.empty()) continue;
    std::string positive_id;
    for (const auto& [pid, grade] : *judged) {
      if (grade == best_grade) {
        positive_id = pid;
        break;
      }
    }
    const std::size_t pos_row = data.corpus.find(positive_id);
    if (pos_row == Corpus::npos) continue;

    RngStream rng(derive_seed(seed, "random_negatives:" + query.id));
    std::vector<std::string> neg_ids;
    std::vector<TokenSequence> negs;
    std::size_t guard = 0;
    while (neg_ids.size() < negatives_per_query && guard < 64 * (negatives_per_query + 1)) {
      ++guard;
      const std::size_t row = static_cast<std::size_t>(rng.next_below(data.corpus.size()));
      const std::string& pid = data.corpus.passages[row].id;
      if (positives.count(pid) != 0) continue;
      if (std::find(neg_ids.begin(), neg_ids.end(), pid) != neg_ids.end()) continue;
      neg_ids.push_back(pid);
      negs.push_back(tokenize(data.corpus.passages[row].text, enc.max_passage_len,
                              enc.vocab_size));
    }
    if (neg_ids.empty()) continue;
    groups.push_back(make_candidate_group(
        query.id, tokenize(query.text, enc.max_query_len, enc.vocab_size), positive_id,
        tokenize(data.corpus.passages[pos_row].text, enc.max_passage_len, enc.vocab_size),
        std::move(neg_ids), std::move(negs)));
  }
  return groups;
}

GroupLossFn hard_loss_fn(const DualEncoder& model) {
  return [&model](Tape& tape, const CandidateGroup& group) {
    return hard_loss(tape, model, group);
  };
}

GroupLossFn ce_listwise_loss_fn(const CrossEncoder& model) {
  return [&model](Tape& tape, const CandidateGroup& group) {
    return neg_log_softmax_at(tape, group_scores(tape, model, group), 0);
  };
}

}  // namespace

// ---- evaluation ---------------------------------------------------------------

std::map<std::string, double> evaluate_retrieval(const DualEncoder& model,
                                                 const RetrievalDataset& data,
                                                 const QuerySet& queries,
                                                 std::size_t eval_depth) {
  const EmbeddingIndex index = build_index(model, data.corpus);
  const EmbeddingMatrix qmat = encode_queries(model, queries);
  std::vector<std::string> qids;
  qids.reserve(queries.size());
  for (const Query& q : queries.queries) qids.push_back(q.id);
  const std::vector<RankedList> runs = search_topk_batch(index, qmat, qids, eval_depth);

  std::map<std::string, double> metrics;
  metrics["mrr@10"] = mrr_at_k(runs, data.qrels, 10);
  for (std::size_t k : {std::size_t(5), std::size_t(20), std::size_t(50), std::size_t(100)}) {
    metrics["recall@" + std::to_string(k)] = recall_at_k(runs, data.qrels, k);
  }
  return metrics;
}

// ---- report -------------------------------------------------------------------

namespace {

std::string format_metrics(const std::map<std::string, double>& metrics) {
  std::ostringstream os;
  char buf[64];
  for (const auto& [name, value] : metrics) {
    std::snprintf(buf, sizeof(buf), " %s=%.6f", name.c_str(), value);
    os << buf;
  }
  return os.str();
}

}  // namespace

std::string PipelineReport::to_text() const {
  std::ostringstream os;
  char buf[128];
  for (const StageReport& s : stages) {
    std::snprintf(buf, sizeof(buf), "stage=%s steps=%zu final_loss=%.6f", s.name.c_str(), s.steps,
                  s.final_loss);
    os << buf << format_metrics(s.metrics) << '\n';
  }
  for (const DpdIterationReport& d : dpd_iterations) {
    std::snprintf(buf, sizeof(buf), "dpd_iter=%zu dataset_size=%zu", d.iteration, d.dataset_size);
    os << buf << ' ' << selection_report(d.counters);
    std::snprintf(buf, sizeof(buf), " steps=%zu final_loss=%.6f", d.steps, d.final_loss);
    os << buf << format_metrics(d.metrics);
    if (d.terminated_early) os << " terminated_early=1";
    os << '\n';
  }
  return os.str();
}

// ---- warm-up ------------------------------------------------------------------

WarmupResult warmup(const RetrievalDataset& data, const PipelineConfig& config) {
  if (data.train.queries.empty() || data.corpus.empty()) {
    throw InputError("warmup: training data is empty");
  }
  EncoderConfig student_cfg = config.encoder;
  student_cfg.num_layers = config.student_layers;
  student_cfg.seed = derive_seed(config.seed, "model.student");

  std::size_t teacher_layers = config.student_layers + 1;
  for (const StageSpec& s : config.stages) {
    if (s.teacher_kind == TeacherKind::kDualEncoder) {
      teacher_layers = s.teacher_layers;
      break;
    }
  }
  EncoderConfig teacher_cfg = config.encoder;
  teacher_cfg.num_layers = teacher_layers;
  teacher_cfg.seed = derive_seed(config.seed, "model.warmup_teacher");

  WarmupResult result{DualEncoder(teacher_cfg), DualEncoder(student_cfg), {}, {}};

  const std::vector<CandidateGroup> random_groups = build_random_groups(
      data, config.encoder, config.warmup.negatives_per_query,
      derive_seed(config.seed, "warmup.negatives"));

  TrainHyper hyper;
  hyper.steps = config.warmup.steps;
  hyper.learning_rate = config.warmup.learning_rate;
  hyper.batch_size = config.warmup.batch_size;
  hyper.warmup_ratio = config.warmup.warmup_ratio;
  hyper.use_in_batch = true;

  log_info("warmup: phase 1, " + std::to_string(random_groups.size()) + " groups");
  hyper.seed = derive_seed(config.seed, "warmup.teacher_train");
  result.teacher_telemetry = run_training(result.teacher.parameters(), random_groups, hyper,
                                          hard_loss_fn(result.teacher), "warmup.teacher");
  hyper.seed = derive_seed(config.seed, "warmup.student_train");
  result.student_telemetry = run_training(result.student.parameters(), random_groups, hyper,
                                          hard_loss_fn(result.student), "warmup.student");

  if (config.warmup.retrain_steps > 0) {
    // Phase 2: mine with the phase-1 teacher and retrain it from scratch.
    MiningConfig mine_cfg = config.mining;
    mine_cfg.sample_m = config.warmup.negatives_per_query;
    mine_cfg.seed = derive_seed(config.seed, "warmup.mine");
    MiningStats stats;
    const std::vector<CandidateGroup> mined =
        mine_hard_negatives(result.teacher, data.corpus, data.train, data.qrels, mine_cfg, &stats);
    log_info("warmup: phase 2, mined " + std::to_string(mined.size()) + " groups");
    if (!mined.empty()) {
      EncoderConfig retrain_cfg = teacher_cfg;
      retrain_cfg.seed = derive_seed(config.seed, "model.warmup_teacher_retrain");
      DualEncoder retrained(retrain_cfg);
      TrainHyper retrain_hyper = hyper;
      retrain_hyper.steps = config.warmup.retrain_steps;
      retrain_hyper.seed = derive_seed(config.seed, "warmup.teacher_retrain");
      result.teacher_telemetry = run_training(retrained.parameters(), mined, retrain_hyper,
                                              hard_loss_fn(retrained), "warmup.teacher2");
      result.teacher = retrained;
    }
  }
  return result;
}

TrainTelemetry train_pure_student(DualEncoder& student, const RetrievalDataset& data,
                                  const PipelineConfig& config, std::size_t steps) {
  const std::vector<CandidateGroup> groups = build_random_groups(
      data, config.encoder, config.warmup.negatives_per_query,
      derive_seed(config.seed, "warmup.negatives"));
  TrainHyper hyper;
  hyper.steps = steps;
  hyper.learning_rate = config.warmup.learning_rate;
  hyper.batch_size = config.warmup.batch_size;
  hyper.warmup_ratio = config.warmup.warmup_ratio;
  hyper.use_in_batch = true;
  hyper.seed = derive_seed(config.seed, "pure_student");
  return run_training(student.parameters(), groups, hyper, hard_loss_fn(student), "pure_student");
}

// ---- teacher training ----------------------------------------------------------

TeacherModel train_teacher(TeacherKind kind, std::size_t layers, const EncoderConfig& base,
                           const std::vector<CandidateGroup>& groups, const TrainHyper& hyper,
                           TrainTelemetry* telemetry) {
  if (groups.empty()) throw ContractError("train_teacher: no training groups");
  EncoderConfig cfg = base;
  cfg.num_layers = layers;
  cfg.seed = derive_seed(hyper.seed, "teacher_init");

  TrainTelemetry local;
  if (kind == TeacherKind::kDualEncoder) {
    DualEncoder teacher(cfg);
    TrainHyper h = hyper;
    h.use_in_batch = true;
    local = run_training(teacher.parameters(), groups, h, hard_loss_fn(teacher), "teacher.de");
    if (telemetry != nullptr) *telemetry = local;
    return teacher;
  }
  CrossEncoder teacher(cfg);
  TrainHyper h = hyper;
  h.use_in_batch = false;
  local = run_training(teacher.parameters(), groups, h, ce_listwise_loss_fn(teacher),
                       "teacher.ce");
  if (telemetry != nullptr) *telemetry = local;
  return teacher;
}

// ---- distillation ---------------------------------------------------------------

TrainTelemetry distill_stage(DualEncoder& student, const TeacherModel& teacher,
                             const std::vector<CandidateGroup>& groups, const StageSpec& spec,
                             const DualEncoder* frozen, std::uint64_t seed) {
  spec.validate();
  if (spec.use_regularization && frozen == nullptr) {
    throw ConfigError("distill_stage: regularization requested but no frozen snapshot provided");
  }
  if (!spec.use_regularization && frozen != nullptr) {
    throw ConfigError("distill_stage: frozen snapshot provided but regularization is off");
  }
  const bool teacher_is_de = std::holds_alternative<DualEncoder>(teacher);
  if (teacher_is_de != (spec.teacher_kind == TeacherKind::kDualEncoder)) {
    throw ConfigError("distill_stage: teacher model kind does not match the stage spec");
  }

  GroupLossFn loss_fn;
  if (teacher_is_de) {
    const DualEncoder& de = std::get<DualEncoder>(teacher);
    loss_fn = [&student, &de, &spec](Tape& tape, const CandidateGroup& group) {
      return stage1_loss(tape, student, de, group, spec.weights);
    };
  } else {
    const CrossEncoder& ce = std::get<CrossEncoder>(teacher);
    loss_fn = [&student, &ce, frozen, &spec](Tape& tape, const CandidateGroup& group) {
      return stage2_loss(tape, student, ce, *frozen, group, spec.weights);
    };
  }

  TrainHyper hyper;
  hyper.steps = spec.steps;
  hyper.learning_rate = spec.learning_rate;
  hyper.batch_size = spec.batch_size;
  hyper.warmup_ratio = spec.warmup_ratio;
  hyper.seed = seed;
  hyper.use_in_batch = spec.use_in_batch;
  return run_training(student.parameters(), groups, hyper, loss_fn, "distill");
}

// ---- TPD -------------------------------------------------------------------------

namespace {

std::string stage_label(std::size_t index, const StageSpec& spec) {
  return std::to_string(index + 1) + ":" + std::to_string(spec.teacher_layers) +
         (spec.teacher_kind == TeacherKind::kDualEncoder ? "DE" : "CE");
}

void save_stage_checkpoints(const std::string& dir, const DualEncoder& student,
                            const TeacherModel& teacher) {
  std::filesystem::create_directories(dir);
  save_dual_encoder(dir + "/student.ckpt", student);
  if (std::holds_alternative<DualEncoder>(teacher)) {
    save_dual_encoder(dir + "/teacher.ckpt", std::get<DualEncoder>(teacher));
  } else {
    save_cross_encoder(dir + "/teacher.ckpt", std::get<CrossEncoder>(teacher));
  }
}

}  // namespace

std::optional<TeacherModel> run_tpd(DualEncoder& student, const PipelineConfig& config,
                                    const RetrievalDataset& data, PipelineReport& report,
                                    const std::string& checkpoint_dir) {
  config.validate();
  std::optional<TeacherModel> last_teacher;

  for (std::size_t si = 0; si < config.stages.size(); ++si) {
    const StageSpec& spec = config.stages[si];
    const std::string label = stage_label(si, spec);
    log_info("tpd " + label + ": mining negatives");

    MiningConfig mine_cfg = config.mining;
    mine_cfg.sample_m = spec.negatives_per_query;
    mine_cfg.seed = derive_seed(config.seed, "stage.mine", si);
    MiningStats mine_stats;
    const std::vector<CandidateGroup> groups =
        mine_hard_negatives(student, data.corpus, data.train, data.qrels, mine_cfg, &mine_stats);
    if (groups.empty()) {
      throw TrainingError("tpd " + label + ": mining produced no candidate groups");
    }

    log_info("tpd " + label + ": training teacher on " + std::to_string(groups.size()) +
             " groups");
    TrainHyper teacher_hyper;
    teacher_hyper.steps = spec.teacher_steps;
    teacher_hyper.learning_rate = spec.teacher_learning_rate;
    teacher_hyper.batch_size = spec.batch_size;
    teacher_hyper.warmup_ratio = spec.warmup_ratio;
    teacher_hyper.seed = derive_seed(config.seed, "stage.teacher", si);
    const TeacherModel teacher =
        train_teacher(spec.teacher_kind, spec.teacher_layers, config.encoder, groups,
                      teacher_hyper);

    std::optional<DualEncoder> frozen;
    if (spec.use_regularization) frozen = student.clone();

    log_info("tpd " + label + ": distilling");
    const TrainTelemetry telemetry =
        distill_stage(student, teacher, groups, spec, frozen ? &*frozen : nullptr,
                      derive_seed(config.seed, "stage.distill", si));

    StageReport stage_report;
    stage_report.name = label;
    stage_report.steps = telemetry.steps;
    stage_report.final_loss = telemetry.final_loss;
    stage_report.metrics = evaluate_retrieval(student, data, data.dev, config.eval_depth);
    report.stages.push_back(stage_report);
    log_info("tpd " + label + ": dev mrr@10=" + std::to_string(stage_report.metrics["mrr@10"]));

    if (!checkpoint_dir.empty()) {
      save_stage_checkpoints(checkpoint_dir + "/stage" + std::to_string(si + 1), student,
                             teacher);
    }
    last_teacher = teacher;
  }
  return last_teacher;
}

// ---- DPD -------------------------------------------------------------------------

void run_dpd(DualEncoder& student, CrossEncoder& ce_teacher, const PipelineConfig& config,
             const RetrievalDataset& data, PipelineReport& report,
             const std::string& checkpoint_dir) {
  for (std::size_t it = 1; it <= config.dpd_iterations; ++it) {
    log_info("dpd iteration " + std::to_string(it) + ": mining");

    // Step 1: retrieve top-k with the current student and mine negatives.
    MiningConfig mine_cfg = config.mining;
    mine_cfg.sample_m = config.dpd.negatives_per_query;
    mine_cfg.seed = derive_seed(config.seed, "dpd.mine", it);
    const EmbeddingIndex index = build_index(student, data.corpus);
    MiningStats mine_stats;
    const std::vector<CandidateGroup> mined = mine_hard_negatives(
        student, index, data.corpus, data.train, data.qrels, mine_cfg, &mine_stats);

    // Step 2: collect queries where the teacher ranks the positive first but
    // the student does not.
    const EmbeddingMatrix qmat = encode_queries(student, data.train);
    std::vector<std::string> qids;
    qids.reserve(data.train.size());
    for (const Query& q : data.train.queries) qids.push_back(q.id);
    const std::vector<RankedList> retrieved =
        search_topk_batch(index, qmat, qids, mine_cfg.depth_k);
    std::map<std::string, const RankedList*> retrieval_by_id;
    for (const RankedList& r : retrieved) retrieval_by_id.emplace(r.query_id, &r);

    std::vector<QueryRankRecord> records;
    records.reserve(mined.size());
    for (const CandidateGroup& group : mined) {
      auto rit = retrieval_by_id.find(group.query_id);
      if (rit == retrieval_by_id.end()) continue;
      QueryRankRecord rec;
      rec.group = group;
      rec.info = positive_ranks(student, ce_teacher, group, *rit->second, data.corpus);
      records.push_back(std::move(rec));
    }
    ConfusionDataset dataset = select_confusing_queries(records, config.dpd_filter, it);
    log_info("dpd iteration " + std::to_string(it) + ": |D^i|=" +
             std::to_string(dataset.groups.size()) + " (" + selection_report(dataset.counters) +
             ")");

    DpdIterationReport iter_report;
    iter_report.iteration = it;
    iter_report.dataset_size = dataset.groups.size();
    iter_report.counters = dataset.counters;

    if (dataset.groups.empty()) {
      iter_report.terminated_early = true;
      iter_report.metrics = evaluate_retrieval(student, data, data.dev, config.eval_depth);
      report.dpd_iterations.push_back(iter_report);
      log_info("dpd: empty confusing set, stopping early");
      return;
    }

    // Step 3: continue training the CE teacher on D^i.
    const std::size_t teacher_steps = static_cast<std::size_t>(
        std::ceil(config.dpd.teacher_epochs * static_cast<double>(dataset.groups.size()) /
                  static_cast<double>(config.dpd.batch_size)));
    TrainHyper teacher_hyper;
    teacher_hyper.steps = teacher_steps;
    teacher_hyper.learning_rate = config.dpd.teacher_learning_rate;
    teacher_hyper.batch_size = config.dpd.batch_size;
    teacher_hyper.warmup_ratio = config.dpd.warmup_ratio;
    teacher_hyper.seed = derive_seed(config.seed, "dpd.teacher", it);
    teacher_hyper.use_in_batch = false;
    run_training(ce_teacher.parameters(), dataset.groups, teacher_hyper,
                 [&ce_teacher](Tape& tape, const CandidateGroup& group) {
                   return neg_log_softmax_at(tape, group_scores(tape, ce_teacher, group), 0);
                 },
                 "dpd.teacher");

    // Step 4: distill on D^i with the stage-II loss against a fresh frozen copy.
    StageSpec dpd_spec;
    dpd_spec.teacher_kind = TeacherKind::kCrossEncoder;
    dpd_spec.teacher_layers = ce_teacher.config().num_layers;
    dpd_spec.negatives_per_query = config.dpd.negatives_per_query;
    dpd_spec.weights = config.dpd_weights;
    dpd_spec.steps = config.dpd.steps;
    dpd_spec.learning_rate = config.dpd.learning_rate;
    dpd_spec.batch_size = config.dpd.batch_size;
    dpd_spec.warmup_ratio = config.dpd.warmup_ratio;
    dpd_spec.use_in_batch = false;
    dpd_spec.use_regularization = config.dpd_weights.gamma > 0.0;
    if (!dpd_spec.use_regularization) dpd_spec.weights.gamma = 0.0;

    const DualEncoder frozen = student.clone();
    const TrainTelemetry telemetry = distill_stage(
        student, TeacherModel(ce_teacher), dataset.groups, dpd_spec,
        dpd_spec.use_regularization ? &frozen : nullptr, derive_seed(config.seed, "dpd.distill", it));

    iter_report.steps = telemetry.steps;
    iter_report.final_loss = telemetry.final_loss;
    iter_report.metrics = evaluate_retrieval(student, data, data.dev, config.eval_depth);
    report.dpd_iterations.push_back(iter_report);
    log_info("dpd iteration " + std::to_string(it) + ": dev mrr@10=" +
             std::to_string(iter_report.metrics["mrr@10"]));

    if (!checkpoint_dir.empty()) {
      const std::string dir = checkpoint_dir + "/dpd" + std::to_string(it);
      std::filesystem::create_directories(dir);
      save_dual_encoder(dir + "/student.ckpt", student);
      save_cross_encoder(dir + "/teacher.ckpt", ce_teacher);
    }
  }
}

// ---- full pipeline -----------------------------------------------------------------

PipelineRunResult run_pipeline(const PipelineConfig& config, const RetrievalDataset& data,
                               const std::string& out_dir) {
  config.validate();
  log_info("pipeline: warm-up");
  WarmupResult warm = warmup(data, config);
  DualEncoder student = warm.student;

  PipelineReport report;
  StageReport warm_report;
  warm_report.name = "warmup";
  warm_report.steps = warm.student_telemetry.steps;
  warm_report.final_loss = warm.student_telemetry.final_loss;
  warm_report.metrics = evaluate_retrieval(student, data, data.dev, config.eval_depth);
  report.stages.push_back(warm_report);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir + "/warmup");
    save_dual_encoder(out_dir + "/warmup/student.ckpt", student);
    save_dual_encoder(out_dir + "/warmup/teacher.ckpt", warm.teacher);
  }

  std::optional<TeacherModel> last_teacher = run_tpd(student, config, data, report, out_dir);

  if (config.dpd_iterations > 0 && last_teacher.has_value() &&
      std::holds_alternative<CrossEncoder>(*last_teacher)) {
    CrossEncoder ce_teacher = std::get<CrossEncoder>(*last_teacher);
    run_dpd(student, ce_teacher, config, data, report, out_dir);
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    save_dual_encoder(out_dir + "/student.ckpt", student);
    std::ofstream os(out_dir + "/report.txt", std::ios::trunc);
    if (!os) throw IoError("cannot write report: " + out_dir + "/report.txt");
    os << report.to_text();
  }
  return PipelineRunResult{std::move(student), std::move(report)};
}

// ---- multi-teacher baselines ---------------------------------------------------------

Tensor multi_teacher_loss(Tape& tape, MultiTeacherStrategy strategy,
                          const std::vector<TeacherModel>& teachers, const DualEncoder& student,
                          const CandidateGroup& group, const LossWeights& weights,
                          std::size_t random_batch_pick) {
  if (teachers.empty()) throw ConfigError("multi-teacher: teacher set is empty");
  weights.validate();

  const Tensor hard = hard_loss(tape, student, group);
  const Distribution student_dist = soft_distribution(tape, student, group, weights.tau);

  auto teacher_dist = [&](const TeacherModel& teacher) {
    if (std::holds_alternative<DualEncoder>(teacher)) {
      return soft_distribution(std::get<DualEncoder>(teacher), group, weights.tau);
    }
    return soft_distribution(std::get<CrossEncoder>(teacher), group, weights.tau);
  };

  switch (strategy) {
    case MultiTeacherStrategy::kRandomBatch: {
      const Distribution td = teacher_dist(teachers[random_batch_pick % teachers.size()]);
      const Tensor soft = soft_loss(tape, td, student_dist);
      return weighted_sum(tape, {{weights.alpha, hard}, {weights.beta, soft}});
    }
    case MultiTeacherStrategy::kMergeScore: {
      // Entrywise average of the teacher distributions, renormalized.
      std::vector<double> avg(1 + group.negatives.size(), 0.0);
      for (const TeacherModel& teacher : teachers) {
        const Distribution td = teacher_dist(teacher);
        const auto& pv = td.values();
        for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += pv[i];
      }
      double total = 0.0;
      for (double& v : avg) total += v;
      for (double& v : avg) v /= total;
      Distribution merged{Tensor({avg.size()}, std::move(avg))};
      const Tensor soft = soft_loss(tape, merged, student_dist);
      return weighted_sum(tape, {{weights.alpha, hard}, {weights.beta, soft}});
    }
    case MultiTeacherStrategy::kMergeLoss: {
      // Per-teacher KL terms, each weighted beta/T so the soft term stays on
      // the single-teacher scale.
      std::vector<std::pair<double, Tensor>> terms;
      terms.reserve(teachers.size() + 1);
      terms.emplace_back(weights.alpha, hard);
      const double w = weights.beta / static_cast<double>(teachers.size());
      for (const TeacherModel& teacher : teachers) {
        const Distribution td = teacher_dist(teacher);
        terms.emplace_back(w, soft_loss(tape, td, student_dist));
      }
      return weighted_sum(tape, terms);
    }
  }
  throw ConfigError("multi-teacher: unknown strategy");
}

TrainTelemetry multi_teacher_baseline(MultiTeacherStrategy strategy,
                                      const std::vector<TeacherModel>& teachers,
                                      DualEncoder& student,
                                      const std::vector<CandidateGroup>& groups,
                                      const LossWeights& weights, const TrainHyper& hyper) {
  if (teachers.size() < 2) {
    throw ConfigError("multi-teacher baseline requires at least two teachers");
  }
  RngStream pick_rng(derive_seed(hyper.seed, "mtb.pick"));
  std::size_t current_pick = 0;
  std::size_t seen_steps = 0;

  // One teacher pick per training step (batch); the loss closure reads the
  // pick chosen for the current batch.
  GroupLossFn loss_fn = [&](Tape& tape, const CandidateGroup& group) {
    return multi_teacher_loss(tape, strategy, teachers, student, group, weights, current_pick);
  };

  // run_training invokes the loss once per group; advance the pick at batch
  // boundaries by wrapping the function.
  TrainTelemetry telemetry;
  if (hyper.steps == 0 || groups.empty()) return telemetry;

  AdamWConfig opt_cfg;
  opt_cfg.learning_rate = hyper.learning_rate;
  opt_cfg.warmup_ratio = hyper.warmup_ratio;
  opt_cfg.total_steps = hyper.steps;
  AdamW optimizer(student.parameters(), opt_cfg);

  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), 0);
  RngStream order_rng(derive_seed(hyper.seed, "batch_order"));
  std::size_t cursor = 0;
  double loss_sum = 0.0;

  for (std::size_t step = 0; step < hyper.steps; ++step) {
    if (cursor == 0) order_rng.shuffle(order);
    const std::size_t take = std::min(hyper.batch_size, groups.size() - cursor);
    std::vector<CandidateGroup> batch;
    for (std::size_t i = 0; i < take; ++i) batch.push_back(groups[order[cursor + i]]);
    cursor += take;
    if (cursor >= groups.size()) cursor = 0;

    current_pick = static_cast<std::size_t>(pick_rng.next_below(teachers.size()));
    optimizer.zero_grad();
    Tape tape;
    std::vector<std::pair<double, Tensor>> terms;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const CandidateGroup& group : batch) terms.emplace_back(inv, loss_fn(tape, group));
    Tensor batch_loss = weighted_sum(tape, terms);
    const double value = batch_loss.item();
    if (!std::isfinite(value)) {
      throw TrainingError("multi-teacher baseline: non-finite loss at step " +
                          std::to_string(step));
    }
    backward(batch_loss, tape);
    optimizer.step();
    loss_sum += value;
    telemetry.final_loss = value;
    ++seen_steps;
  }
  telemetry.steps = seen_steps;
  telemetry.mean_loss = loss_sum / static_cast<double>(seen_steps);
  return telemetry;
}

}  // namespace prod
