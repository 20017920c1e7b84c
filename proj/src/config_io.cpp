#include "prod/config_io.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "prod/common.hpp"

namespace prod {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

class KeyValueReader {
 public:
  explicit KeyValueReader(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) {
        throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
      }
      if (!values_.emplace(key, value).second) {
        throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key +
                          "'");
      }
    }
  }

  bool take_string(const std::string& key, std::string& out) {
    auto it = values_.find(key);
    if (it == values_.end()) return false;
    out = it->second;
    values_.erase(it);
    return true;
  }

  template <typename T>
  void take_number(const std::string& key, T& out) {
    std::string raw;
    if (!take_string(key, raw)) return;
    std::istringstream ss(raw);
    T value{};
    if (!(ss >> value) || !(ss >> std::ws).eof()) {
      throw ConfigError("config key '" + key + "': cannot parse '" + raw + "'");
    }
    out = value;
  }

  void take_bool(const std::string& key, bool& out) {
    std::string raw;
    if (!take_string(key, raw)) return;
    if (raw == "true" || raw == "1") {
      out = true;
    } else if (raw == "false" || raw == "0") {
      out = false;
    } else {
      throw ConfigError("config key '" + key + "': expected true/false, got '" + raw + "'");
    }
  }

  void reject_unknown() const {
    if (!values_.empty()) {
      throw ConfigError("unknown config key '" + values_.begin()->first + "'");
    }
  }

 private:
  std::map<std::string, std::string> values_;
};

void read_stage(KeyValueReader& reader, const std::string& prefix, StageSpec& stage) {
  std::string kind;
  if (reader.take_string(prefix + ".teacher_kind", kind)) {
    stage.teacher_kind = parse_teacher_kind(kind);
    // Kind-dependent defaults mirror the canonical schedule.
    if (stage.teacher_kind == TeacherKind::kCrossEncoder) {
      stage.negatives_per_query = 15;
      stage.use_in_batch = false;
      stage.use_regularization = true;
      stage.weights.gamma = 0.1;
    } else {
      stage.negatives_per_query = 1;
      stage.use_in_batch = true;
      stage.use_regularization = false;
      stage.weights.gamma = 0.0;
    }
  }
  reader.take_number(prefix + ".teacher_layers", stage.teacher_layers);
  reader.take_number(prefix + ".negatives_per_query", stage.negatives_per_query);
  reader.take_number(prefix + ".steps", stage.steps);
  reader.take_number(prefix + ".teacher_steps", stage.teacher_steps);
  reader.take_number(prefix + ".learning_rate", stage.learning_rate);
  reader.take_number(prefix + ".teacher_learning_rate", stage.teacher_learning_rate);
  reader.take_number(prefix + ".batch_size", stage.batch_size);
  reader.take_number(prefix + ".warmup_ratio", stage.warmup_ratio);
  reader.take_bool(prefix + ".use_in_batch", stage.use_in_batch);
  reader.take_bool(prefix + ".use_regularization", stage.use_regularization);
  reader.take_number(prefix + ".alpha", stage.weights.alpha);
  reader.take_number(prefix + ".beta", stage.weights.beta);
  reader.take_number(prefix + ".gamma", stage.weights.gamma);
  reader.take_number(prefix + ".tau", stage.weights.tau);
}

}  // namespace

PipelineConfig load_config_from_string(const std::string& text) {
  KeyValueReader reader(text);
  PipelineConfig cfg = PipelineConfig::defaults();

  reader.take_number("pipeline.seed", cfg.seed);
  reader.take_bool("pipeline.allow_nonstandard_order", cfg.allow_nonstandard_order);
  reader.take_number("pipeline.eval_depth", cfg.eval_depth);

  reader.take_number("encoder.hidden_dim", cfg.encoder.hidden_dim);
  reader.take_number("encoder.vocab_size", cfg.encoder.vocab_size);
  reader.take_number("encoder.max_query_len", cfg.encoder.max_query_len);
  reader.take_number("encoder.max_passage_len", cfg.encoder.max_passage_len);
  reader.take_bool("encoder.share_towers", cfg.encoder.share_towers);
  reader.take_number("student.num_layers", cfg.student_layers);

  // Global loss weights apply to every stage unless overridden per stage.
  LossWeights base;
  reader.take_number("loss.tau", base.tau);
  reader.take_number("loss.alpha", base.alpha);
  reader.take_number("loss.beta", base.beta);
  double base_gamma = 0.1;
  reader.take_number("loss.gamma", base_gamma);
  for (StageSpec& s : cfg.stages) {
    s.weights.tau = base.tau;
    s.weights.alpha = base.alpha;
    s.weights.beta = base.beta;
    if (s.teacher_kind == TeacherKind::kCrossEncoder) s.weights.gamma = base_gamma;
  }
  cfg.dpd_weights = LossWeights{base.alpha, base.beta, base_gamma, base.tau};

  reader.take_number("warmup.steps", cfg.warmup.steps);
  reader.take_number("warmup.retrain_steps", cfg.warmup.retrain_steps);
  reader.take_number("warmup.learning_rate", cfg.warmup.learning_rate);
  reader.take_number("warmup.batch_size", cfg.warmup.batch_size);
  reader.take_number("warmup.negatives_per_query", cfg.warmup.negatives_per_query);
  reader.take_number("warmup.warmup_ratio", cfg.warmup.warmup_ratio);

  std::size_t stage_count = cfg.stages.size();
  reader.take_number("stage.count", stage_count);
  if (stage_count == 0) throw ConfigError("config: stage.count must be >= 1");
  if (stage_count < cfg.stages.size()) {
    cfg.stages.resize(stage_count);
  } else {
    while (cfg.stages.size() < stage_count) cfg.stages.push_back(cfg.stages.back());
  }
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    read_stage(reader, "stage" + std::to_string(i + 1), cfg.stages[i]);
  }

  reader.take_number("mining.depth_k", cfg.mining.depth_k);
  reader.take_bool("mining.answer_filter", cfg.mining.answer_filter);

  reader.take_number("dpd.iterations", cfg.dpd_iterations);
  std::size_t kprime_before = cfg.dpd_kprime;
  reader.take_number("dpd.kprime", cfg.dpd_kprime);
  if (cfg.dpd_kprime != kprime_before) {
    cfg.dpd_filter.student_window.hi = cfg.dpd_kprime;
  }
  std::string mode;
  if (reader.take_string("dpd.filter_mode", mode)) {
    if (mode == "window_intersection") {
      cfg.dpd_filter.mode = ConfusionMode::kWindowIntersection;
    } else if (mode == "score_dominance") {
      cfg.dpd_filter.mode = ConfusionMode::kScoreDominance;
    } else {
      throw ConfigError("config key 'dpd.filter_mode': unknown mode '" + mode + "'");
    }
  }
  reader.take_number("dpd.student_window_lo", cfg.dpd_filter.student_window.lo);
  reader.take_number("dpd.student_window_hi", cfg.dpd_filter.student_window.hi);
  reader.take_number("dpd.teacher_window_lo", cfg.dpd_filter.teacher_window.lo);
  reader.take_number("dpd.teacher_window_hi", cfg.dpd_filter.teacher_window.hi);
  reader.take_number("dpd.steps", cfg.dpd.steps);
  reader.take_number("dpd.learning_rate", cfg.dpd.learning_rate);
  reader.take_number("dpd.batch_size", cfg.dpd.batch_size);
  reader.take_number("dpd.negatives_per_query", cfg.dpd.negatives_per_query);
  reader.take_number("dpd.warmup_ratio", cfg.dpd.warmup_ratio);
  reader.take_number("dpd.teacher_epochs", cfg.dpd.teacher_epochs);
  reader.take_number("dpd.teacher_learning_rate", cfg.dpd.teacher_learning_rate);
  reader.take_number("dpd.alpha", cfg.dpd_weights.alpha);
  reader.take_number("dpd.beta", cfg.dpd_weights.beta);
  reader.take_number("dpd.gamma", cfg.dpd_weights.gamma);
  reader.take_number("dpd.tau", cfg.dpd_weights.tau);

  reader.reject_unknown();
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path);
  std::ostringstream buffer;
  buffer << is.rdbuf();
  return load_config_from_string(buffer.str());
}

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

std::string dump_config(const PipelineConfig& cfg) {
  std::ostringstream os;
  os << "pipeline.seed = " << cfg.seed << '\n';
  os << "pipeline.allow_nonstandard_order = " << (cfg.allow_nonstandard_order ? "true" : "false")
     << '\n';
  os << "pipeline.eval_depth = " << cfg.eval_depth << '\n';

  os << "encoder.hidden_dim = " << cfg.encoder.hidden_dim << '\n';
  os << "encoder.vocab_size = " << cfg.encoder.vocab_size << '\n';
  os << "encoder.max_query_len = " << cfg.encoder.max_query_len << '\n';
  os << "encoder.max_passage_len = " << cfg.encoder.max_passage_len << '\n';
  os << "encoder.share_towers = " << (cfg.encoder.share_towers ? "true" : "false") << '\n';
  os << "student.num_layers = " << cfg.student_layers << '\n';

  os << "warmup.steps = " << cfg.warmup.steps << '\n';
  os << "warmup.retrain_steps = " << cfg.warmup.retrain_steps << '\n';
  os << "warmup.learning_rate = " << format_double(cfg.warmup.learning_rate) << '\n';
  os << "warmup.batch_size = " << cfg.warmup.batch_size << '\n';
  os << "warmup.negatives_per_query = " << cfg.warmup.negatives_per_query << '\n';
  os << "warmup.warmup_ratio = " << format_double(cfg.warmup.warmup_ratio) << '\n';

  os << "stage.count = " << cfg.stages.size() << '\n';
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const StageSpec& s = cfg.stages[i];
    const std::string p = "stage" + std::to_string(i + 1);
    os << p << ".teacher_kind = " << teacher_kind_name(s.teacher_kind) << '\n';
    os << p << ".teacher_layers = " << s.teacher_layers << '\n';
    os << p << ".negatives_per_query = " << s.negatives_per_query << '\n';
    os << p << ".steps = " << s.steps << '\n';
    os << p << ".teacher_steps = " << s.teacher_steps << '\n';
    os << p << ".learning_rate = " << format_double(s.learning_rate) << '\n';
    os << p << ".teacher_learning_rate = " << format_double(s.teacher_learning_rate) << '\n';
    os << p << ".batch_size = " << s.batch_size << '\n';
    os << p << ".warmup_ratio = " << format_double(s.warmup_ratio) << '\n';
    os << p << ".use_in_batch = " << (s.use_in_batch ? "true" : "false") << '\n';
    os << p << ".use_regularization = " << (s.use_regularization ? "true" : "false") << '\n';
    os << p << ".alpha = " << format_double(s.weights.alpha) << '\n';
    os << p << ".beta = " << format_double(s.weights.beta) << '\n';
    os << p << ".gamma = " << format_double(s.weights.gamma) << '\n';
    os << p << ".tau = " << format_double(s.weights.tau) << '\n';
  }

  os << "mining.depth_k = " << cfg.mining.depth_k << '\n';
  os << "mining.answer_filter = " << (cfg.mining.answer_filter ? "true" : "false") << '\n';

  os << "dpd.iterations = " << cfg.dpd_iterations << '\n';
  os << "dpd.kprime = " << cfg.dpd_kprime << '\n';
  os << "dpd.filter_mode = "
     << (cfg.dpd_filter.mode == ConfusionMode::kWindowIntersection ? "window_intersection"
                                                                   : "score_dominance")
     << '\n';
  os << "dpd.student_window_lo = " << cfg.dpd_filter.student_window.lo << '\n';
  os << "dpd.student_window_hi = " << cfg.dpd_filter.student_window.hi << '\n';
  os << "dpd.teacher_window_lo = " << cfg.dpd_filter.teacher_window.lo << '\n';
  os << "dpd.teacher_window_hi = " << cfg.dpd_filter.teacher_window.hi << '\n';
  os << "dpd.steps = " << cfg.dpd.steps << '\n';
  os << "dpd.learning_rate = " << format_double(cfg.dpd.learning_rate) << '\n';
  os << "dpd.batch_size = " << cfg.dpd.batch_size << '\n';
  os << "dpd.negatives_per_query = " << cfg.dpd.negatives_per_query << '\n';
  os << "dpd.warmup_ratio = " << format_double(cfg.dpd.warmup_ratio) << '\n';
  os << "dpd.teacher_epochs = " << format_double(cfg.dpd.teacher_epochs) << '\n';
  os << "dpd.teacher_learning_rate = " << format_double(cfg.dpd.teacher_learning_rate) << '\n';
  os << "dpd.alpha = " << format_double(cfg.dpd_weights.alpha) << '\n';
  os << "dpd.beta = " << format_double(cfg.dpd_weights.beta) << '\n';
  os << "dpd.gamma = " << format_double(cfg.dpd_weights.gamma) << '\n';
  os << "dpd.tau = " << format_double(cfg.dpd_weights.tau) << '\n';
  return os.str();
}

}  // namespace prod
