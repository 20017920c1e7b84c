#include "prod/cli.hpp"

#include <omp.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "prod/checkpoint.hpp"
#include "prod/common.hpp"
#include "prod/config_io.hpp"
#include "prod/data_io.hpp"
#include "prod/log.hpp"
#include "prod/metrics.hpp"
#include "prod/pipeline.hpp"

namespace prod {

namespace {

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  std::size_t threads = 0;  // 0: all available cores
  std::string log_level = "info";
};

void apply_global(const GlobalOptions& g) {
  if (g.threads > 0) omp_set_num_threads(static_cast<int>(g.threads));
  if (g.log_level == "quiet") {
    set_log_level(LogLevel::kQuiet);
  } else if (g.log_level == "info") {
    set_log_level(LogLevel::kInfo);
  } else if (g.log_level == "debug") {
    set_log_level(LogLevel::kDebug);
  } else {
    throw ConfigError("unknown log level '" + g.log_level + "'");
  }
}

PipelineConfig load_config_or_default(const std::string& path, const GlobalOptions& g) {
  PipelineConfig cfg = path.empty() ? PipelineConfig::defaults() : load_config(path);
  if (g.seed.has_value()) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void print_metrics(std::ostream& out, const std::string& label,
                   const std::map<std::string, double>& metrics) {
  out << label;
  for (const auto& [name, value] : metrics) out << ' ' << name << '=' << format_metric(value);
  out << '\n';
}

// Parses "mrr@10" / "recall@50" / "ndcg@10" / "map@1000".
std::pair<std::string, std::size_t> parse_metric_spec(const std::string& spec) {
  const std::size_t at = spec.find('@');
  if (at == std::string::npos || at == 0 || at + 1 >= spec.size()) {
    throw ConfigError("metric must look like name@k, got '" + spec + "'");
  }
  const std::string name = spec.substr(0, at);
  if (name != "mrr" && name != "recall" && name != "ndcg" && name != "map") {
    throw ConfigError("unknown metric '" + name + "' (expected mrr, recall, ndcg, or map)");
  }
  std::size_t k = 0;
  try {
    k = static_cast<std::size_t>(std::stoull(spec.substr(at + 1)));
  } catch (...) {
    throw ConfigError("bad metric cutoff in '" + spec + "'");
  }
  if (k == 0) throw ConfigError("metric cutoff must be >= 1");
  return {name, k};
}

TeacherModel load_teacher_checkpoint(const std::string& path) {
  if (checkpoint_kind(path) == "dual_encoder") return load_dual_encoder(path);
  return load_cross_encoder(path);
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"PROD: progressive distillation for dense retrieval"};
  app.require_subcommand(1);

  GlobalOptions global;
  app.add_option("--seed", global.seed, "Override the config seed");
  app.add_option("--threads", global.threads, "OpenMP thread count (default: all cores)");
  app.add_option("--log-level", global.log_level, "quiet, info, or debug")
      ->default_str("info");

  // gen-synthetic
  auto* gen = app.add_subcommand("gen-synthetic", "Generate the synthetic benchmark dataset");
  SyntheticSpec synth;
  std::string gen_out;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--clusters", synth.num_clusters, "Cluster count");
  gen->add_option("--passages-per-cluster", synth.passages_per_cluster, "Passages per cluster");
  gen->add_option("--queries-per-cluster", synth.queries_per_cluster,
                  "Queries per cluster per split");
  gen->add_option("--tokens-per-cluster", synth.vocab_tokens_per_cluster,
                  "Vocabulary tokens per cluster");
  gen->add_option("--noise", synth.noise_token_rate, "Off-cluster token rate in passages");
  gen->add_option("--passage-tokens", synth.passage_tokens, "Tokens per passage");
  gen->add_option("--query-tokens", synth.query_tokens, "Tokens per query");
  gen->add_option("--gen-seed", synth.seed, "Generator seed");

  // warmup
  auto* warm = app.add_subcommand("warmup", "Warm up the first DE teacher and the student");
  std::string cfg_path, data_dir, out_dir;
  warm->add_option("--config", cfg_path, "Pipeline config file");
  warm->add_option("--data", data_dir, "Dataset directory")->required();
  warm->add_option("--out", out_dir, "Run directory")->required();

  // train-teacher
  auto* tt = app.add_subcommand("train-teacher", "Mine with a student and train a teacher");
  std::string tt_cfg, tt_data, tt_student, tt_kind = "dual_encoder", tt_out, tt_groups;
  std::size_t tt_layers = 3;
  tt->add_option("--config", tt_cfg, "Pipeline config file");
  tt->add_option("--data", tt_data, "Dataset directory")->required();
  tt->add_option("--student", tt_student, "Student checkpoint used for mining")->required();
  tt->add_option("--kind", tt_kind, "dual_encoder or cross_encoder");
  tt->add_option("--layers", tt_layers, "Teacher depth");
  tt->add_option("--groups", tt_groups, "Mined-groups file (skips mining)");
  tt->add_option("--out", tt_out, "Output teacher checkpoint")->required();

  // mine
  auto* mine_cmd = app.add_subcommand("mine", "Mine hard negatives with a student checkpoint");
  std::string mine_cfg, mine_data, mine_student, mine_out;
  std::size_t mine_depth = 0, mine_sample = 0;
  mine_cmd->add_option("--config", mine_cfg, "Pipeline config file");
  mine_cmd->add_option("--data", mine_data, "Dataset directory")->required();
  mine_cmd->add_option("--student", mine_student, "Student checkpoint")->required();
  mine_cmd->add_option("--depth", mine_depth, "Retrieval depth (default from config)");
  mine_cmd->add_option("--sample", mine_sample, "Negatives per query (default from config)");
  mine_cmd->add_option("--out", mine_out, "Output groups file")->required();

  // distill
  auto* dist = app.add_subcommand("distill", "Run one distillation stage");
  std::string d_cfg, d_data, d_student, d_teacher, d_groups, d_out;
  std::size_t d_stage = 1;
  dist->add_option("--config", d_cfg, "Pipeline config file");
  dist->add_option("--data", d_data, "Dataset directory")->required();
  dist->add_option("--student", d_student, "Student checkpoint")->required();
  dist->add_option("--teacher", d_teacher, "Teacher checkpoint")->required();
  dist->add_option("--stage", d_stage, "1-based stage index into the config")->required();
  dist->add_option("--groups", d_groups, "Mined-groups file (mined fresh when omitted)");
  dist->add_option("--out", d_out, "Output student checkpoint")->required();

  // dpd
  auto* dpd_cmd = app.add_subcommand("dpd", "Run DPD iterations after TPD");
  std::string p_cfg, p_data, p_student, p_teacher, p_out;
  dpd_cmd->add_option("--config", p_cfg, "Pipeline config file");
  dpd_cmd->add_option("--data", p_data, "Dataset directory")->required();
  dpd_cmd->add_option("--student", p_student, "Student checkpoint (after TPD)")->required();
  dpd_cmd->add_option("--teacher", p_teacher, "CE teacher checkpoint")->required();
  dpd_cmd->add_option("--out", p_out, "Run directory")->required();

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "Run warm-up, TPD, and DPD end to end");
  std::string pl_cfg, pl_data, pl_out;
  pipe->add_option("--config", pl_cfg, "Pipeline config file");
  pipe->add_option("--data", pl_data, "Dataset directory")->required();
  pipe->add_option("--out", pl_out, "Run directory")->required();

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Score a TREC run file against qrels");
  std::string e_run, e_qrels, e_metric;
  eval->add_option("--run", e_run, "TREC run file")->required();
  eval->add_option("--qrels", e_qrels, "TREC qrels file")->required();
  eval->add_option("--metric", e_metric, "Metric spec, e.g. mrr@10")->required();

  // baseline
  auto* base = app.add_subcommand("baseline", "Train a multi-teacher baseline");
  std::string b_cfg, b_data, b_out, b_strategy;
  base->add_option("--strategy", b_strategy, "random_batch, merge_score, or merge_loss")
      ->required();
  base->add_option("--config", b_cfg, "Pipeline config file");
  base->add_option("--data", b_data, "Dataset directory")->required();
  base->add_option("--out", b_out, "Run directory")->required();

  // effective-config
  auto* effective = app.add_subcommand("effective-config", "Print all resolved config values");
  std::string ec_cfg;
  effective->add_option("--config", ec_cfg, "Pipeline config file");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    err << app.help();
    return 1;
  }

  try {
    apply_global(global);

    if (gen->parsed()) {
      if (global.seed.has_value()) synth.seed = *global.seed;
      const SyntheticData data = generate_synthetic(synth);
      save_synthetic(gen_out, data);
      out << "corpus=" << data.corpus.size() << " train=" << data.train.size()
          << " dev=" << data.dev.size() << " test=" << data.test.size() << '\n';
      return 0;
    }

    if (warm->parsed()) {
      const PipelineConfig cfg = load_config_or_default(cfg_path, global);
      const RetrievalDataset data = load_dataset_dir(data_dir);
      WarmupResult result = warmup(data, cfg);
      std::filesystem::create_directories(out_dir + "/warmup");
      save_dual_encoder(out_dir + "/warmup/student.ckpt", result.student);
      save_dual_encoder(out_dir + "/warmup/teacher.ckpt", result.teacher);
      print_metrics(out, "warmup",
                    evaluate_retrieval(result.student, data, data.dev, cfg.eval_depth));
      return 0;
    }

    if (tt->parsed()) {
      const PipelineConfig cfg = load_config_or_default(tt_cfg, global);
      const RetrievalDataset data = load_dataset_dir(tt_data);
      const DualEncoder student = load_dual_encoder(tt_student);
      const TeacherKind kind = parse_teacher_kind(tt_kind);

      std::vector<CandidateGroup> groups;
      if (!tt_groups.empty()) {
        groups = read_groups_file(tt_groups, data.corpus, data.train, cfg.encoder);
      } else {
        MiningConfig mine = cfg.mining;
        mine.sample_m = kind == TeacherKind::kCrossEncoder ? 15 : 1;
        mine.seed = derive_seed(cfg.seed, "cli.mine");
        groups = mine_hard_negatives(student, data.corpus, data.train, data.qrels, mine);
      }
      TrainHyper hyper;
      hyper.seed = derive_seed(cfg.seed, "cli.teacher");
      if (!cfg.stages.empty()) {
        const StageSpec& s = cfg.stages.front();
        hyper.steps = s.teacher_steps;
        hyper.learning_rate = s.teacher_learning_rate;
        hyper.batch_size = s.batch_size;
        hyper.warmup_ratio = s.warmup_ratio;
      }
      TrainTelemetry telemetry;
      const TeacherModel teacher =
          train_teacher(kind, tt_layers, cfg.encoder, groups, hyper, &telemetry);
      if (std::holds_alternative<DualEncoder>(teacher)) {
        save_dual_encoder(tt_out, std::get<DualEncoder>(teacher));
      } else {
        save_cross_encoder(tt_out, std::get<CrossEncoder>(teacher));
      }
      out << "teacher kind=" << tt_kind << " layers=" << tt_layers << " steps=" << telemetry.steps
          << " final_loss=" << format_metric(telemetry.final_loss) << '\n';
      return 0;
    }

    if (mine_cmd->parsed()) {
      const PipelineConfig cfg = load_config_or_default(mine_cfg, global);
      const RetrievalDataset data = load_dataset_dir(mine_data);
      const DualEncoder student = load_dual_encoder(mine_student);
      MiningConfig mine = cfg.mining;
      if (mine_depth > 0) mine.depth_k = mine_depth;
      if (mine_sample > 0) mine.sample_m = mine_sample;
      mine.seed = derive_seed(cfg.seed, "cli.mine");
      MiningStats stats;
      const std::vector<CandidateGroup> groups =
          mine_hard_negatives(student, data.corpus, data.train, data.qrels, mine, &stats);
      write_groups_file(mine_out, groups);
      out << "queries_in=" << stats.queries_in << " groups_out=" << stats.groups_out
          << " dropped_no_negatives=" << stats.dropped_no_negatives
          << " dropped_no_positive=" << stats.dropped_no_positive << '\n';
      return 0;
    }

    if (dist->parsed()) {
      const PipelineConfig cfg = load_config_or_default(d_cfg, global);
      const RetrievalDataset data = load_dataset_dir(d_data);
      DualEncoder student = load_dual_encoder(d_student);
      if (d_stage == 0 || d_stage > cfg.stages.size()) {
        throw ConfigError("stage index out of range (config has " +
                          std::to_string(cfg.stages.size()) + " stages)");
      }
      const StageSpec& spec = cfg.stages[d_stage - 1];
      const TeacherModel teacher = load_teacher_checkpoint(d_teacher);

      std::vector<CandidateGroup> groups;
      if (!d_groups.empty()) {
        groups = read_groups_file(d_groups, data.corpus, data.train, cfg.encoder);
      } else {
        MiningConfig mine = cfg.mining;
        mine.sample_m = spec.negatives_per_query;
        mine.seed = derive_seed(cfg.seed, "stage.mine", d_stage - 1);
        groups = mine_hard_negatives(student, data.corpus, data.train, data.qrels, mine);
      }
      std::optional<DualEncoder> frozen;
      if (spec.use_regularization) frozen = student.clone();
      const TrainTelemetry telemetry =
          distill_stage(student, teacher, groups, spec, frozen ? &*frozen : nullptr,
                        derive_seed(cfg.seed, "stage.distill", d_stage - 1));
      save_dual_encoder(d_out, student);
      std::map<std::string, double> metrics =
          evaluate_retrieval(student, data, data.dev, cfg.eval_depth);
      out << "stage=" << d_stage << " steps=" << telemetry.steps
          << " final_loss=" << format_metric(telemetry.final_loss);
      for (const auto& [name, value] : metrics) out << ' ' << name << '=' << format_metric(value);
      out << '\n';
      return 0;
    }

    if (dpd_cmd->parsed()) {
      const PipelineConfig cfg = load_config_or_default(p_cfg, global);
      const RetrievalDataset data = load_dataset_dir(p_data);
      DualEncoder student = load_dual_encoder(p_student);
      CrossEncoder teacher = load_cross_encoder(p_teacher);
      PipelineReport report;
      run_dpd(student, teacher, cfg, data, report, p_out);
      std::filesystem::create_directories(p_out);
      save_dual_encoder(p_out + "/student.ckpt", student);
      std::ofstream os(p_out + "/report.txt", std::ios::trunc);
      os << report.to_text();
      out << report.to_text();
      return 0;
    }

    if (pipe->parsed()) {
      const PipelineConfig cfg = load_config_or_default(pl_cfg, global);
      const RetrievalDataset data = load_dataset_dir(pl_data);
      const PipelineRunResult result = run_pipeline(cfg, data, pl_out);
      out << result.report.to_text();
      return 0;
    }

    if (eval->parsed()) {
      const std::vector<RankedList> runs = read_run_file(e_run);
      const Qrels qrels = read_qrels_file(e_qrels);
      const auto [name, k] = parse_metric_spec(e_metric);
      double value = 0.0;
      if (name == "mrr") value = mrr_at_k(runs, qrels, k);
      if (name == "recall") value = recall_at_k(runs, qrels, k);
      if (name == "ndcg") value = ndcg_at_k(runs, qrels, k);
      if (name == "map") value = map_at_k(runs, qrels, k);
      out << format_metric(value) << '\n';
      return 0;
    }

    if (base->parsed()) {
      const PipelineConfig cfg = load_config_or_default(b_cfg, global);
      const RetrievalDataset data = load_dataset_dir(b_data);
      const MultiTeacherStrategy strategy = parse_strategy(b_strategy);

      WarmupResult warm_result = warmup(data, cfg);
      DualEncoder student = warm_result.student;

      // The PROD teacher set, trained on negatives mined with the warmed
      // student.
      MiningConfig mine = cfg.mining;
      mine.sample_m = 15;
      mine.seed = derive_seed(cfg.seed, "baseline.mine");
      const std::vector<CandidateGroup> groups =
          mine_hard_negatives(student, data.corpus, data.train, data.qrels, mine);

      std::vector<TeacherModel> teachers;
      for (std::size_t si = 0; si < cfg.stages.size(); ++si) {
        const StageSpec& s = cfg.stages[si];
        TrainHyper hyper;
        hyper.steps = s.teacher_steps;
        hyper.learning_rate = s.teacher_learning_rate;
        hyper.batch_size = s.batch_size;
        hyper.warmup_ratio = s.warmup_ratio;
        hyper.seed = derive_seed(cfg.seed, "baseline.teacher", si);
        teachers.push_back(
            train_teacher(s.teacher_kind, s.teacher_layers, cfg.encoder, groups, hyper));
      }

      TrainHyper hyper;
      std::size_t total_steps = 0;
      for (const StageSpec& s : cfg.stages) total_steps += s.steps;
      hyper.steps = total_steps;
      hyper.learning_rate = cfg.stages.front().learning_rate;
      hyper.batch_size = cfg.stages.front().batch_size;
      hyper.warmup_ratio = cfg.stages.front().warmup_ratio;
      hyper.seed = derive_seed(cfg.seed, "baseline.train");
      hyper.use_in_batch = false;
      const TrainTelemetry telemetry = multi_teacher_baseline(
          strategy, teachers, student, groups, cfg.stages.front().weights, hyper);

      std::filesystem::create_directories(b_out);
      save_dual_encoder(b_out + "/student.ckpt", student);
      std::map<std::string, double> metrics =
          evaluate_retrieval(student, data, data.dev, cfg.eval_depth);
      out << "strategy=" << b_strategy << " steps=" << telemetry.steps
          << " final_loss=" << format_metric(telemetry.final_loss);
      for (const auto& [name, value] : metrics) out << ' ' << name << '=' << format_metric(value);
      out << '\n';
      return 0;
    }

    if (effective->parsed()) {
      const PipelineConfig cfg = load_config_or_default(ec_cfg, global);
      out << dump_config(cfg);
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  err << app.help();
  return 1;
}

}  // namespace prod
