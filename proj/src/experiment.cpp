#include "tokenguide/experiment.hpp"

#include "tokenguide/oracle.hpp"

#include <boost/algorithm/string.hpp>
#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace tokenguide {

namespace pt = boost::property_tree;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"task",
       {"kind", "vocab_size", "horizon", "keyword", "bonus", "quality", "noise_rate", "num_inputs",
        "num_informative", "num_noise", "pattern_length", "num_records", "num_classes",
        "num_observations", "seed"}},
      {"model", {"embed_dim", "hidden", "window", "init_scale"}},
      {"reward",
       {"steps", "k", "agg", "beta", "loss", "lr", "clip_norm", "patience", "eval_interval",
        "holdout_fraction", "holdout_max", "group_batch", "temperature"}},
      {"policy",
       {"mode", "estimator", "m_lm", "m_re", "m_rew_init", "alpha", "retrain", "baseline",
        "baseline_decay", "batch_size", "lr", "clip_norm", "temperature", "eval_interval",
        "eval_samples", "eval_budget", "kl_gamma", "kl_c", "kl_prior"}},
      {"run", {"seeds", "out", "checkpoints"}},
      {"sweep", {"name", "values"}},
  };
  return keys;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> parts;
  boost::split(parts, text, boost::is_any_of(","));
  std::vector<std::string> out;
  for (auto& p : parts) {
    boost::trim(p);
    if (!p.empty()) out.push_back(p);
  }
  return out;
}

template <typename T>
T get(const pt::ptree& tree, const std::string& key, T fallback) {
  const auto node = tree.get_optional<std::string>(key);
  if (!node) return fallback;
  try {
    if constexpr (std::is_same_v<T, std::string>) {
      return *node;
    } else {
      return boost::lexical_cast<T>(boost::trim_copy(*node));
    }
  } catch (const boost::bad_lexical_cast&) {
    throw Error(ErrorCode::config, "invalid value for " + key + ": '" + *node + "'");
  }
}

bool get_bool(const pt::ptree& tree, const std::string& key, bool fallback) {
  const auto node = tree.get_optional<std::string>(key);
  if (!node) return fallback;
  const std::string v = boost::to_lower_copy(boost::trim_copy(*node));
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw Error(ErrorCode::config, "invalid boolean for " + key + ": '" + *node + "'");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    stream};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

Estimator parse_estimator(const std::string& name) {
  if (name == "exact") return Estimator::exact;
  if (name == "sampled") return Estimator::sampled;
  throw Error(ErrorCode::config, "unknown estimator '" + name + "'");
}

std::string to_string(Estimator e) { return e == Estimator::exact ? "exact" : "sampled"; }

std::string join(const std::vector<std::string>& v) { return boost::join(v, ", "); }

double last_evaluated(const std::vector<RewardHistoryRow>& rows, double RewardHistoryRow::*field) {
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
    if (!std::isnan((*it).*field)) return (*it).*field;
  }
  return kNaN;
}

std::unique_ptr<PreferenceSource> build_task(const ExperimentConfig& cfg, ModelShape& shape) {
  auto task = make_task(cfg.task);
  shape.vocab_size = task->vocab().size;
  shape.num_inputs = task->num_inputs();
  return task;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::io, "cannot write " + path.string());
  }
  out << text;
}

const char* kSummaryHeader =
    "exact_metric,sampled_metric,optimal_metric,policy_loss,holdout_loss,rank_accuracy,retrains";

std::string summary_fields(const SeedSummary& s) {
  return fmt(s.exact_metric) + "," + fmt(s.sampled_metric) + "," + fmt(s.optimal_metric) + "," +
         fmt(s.policy_loss) + "," + fmt(s.holdout_loss) + "," + fmt(s.rank_accuracy) + "," +
         std::to_string(s.retrains);
}

// Mean and standard deviation rows over the per-seed summaries.
std::pair<std::string, std::string> aggregate_fields(const std::vector<SeedSummary>& rows) {
  std::vector<double SeedSummary::*> fields{
      &SeedSummary::exact_metric, &SeedSummary::sampled_metric, &SeedSummary::optimal_metric,
      &SeedSummary::policy_loss,  &SeedSummary::holdout_loss,   &SeedSummary::rank_accuracy};
  std::string mean_line, std_line;
  for (auto field : fields) {
    std::vector<double> values;
    for (const auto& r : rows) values.push_back(r.*field);
    const auto [m, s] = mean_std(values);
    mean_line += fmt(m) + ",";
    std_line += fmt(s) + ",";
  }
  std::vector<double> retrains;
  for (const auto& r : rows) retrains.push_back(r.retrains);
  const auto [m, s] = mean_std(retrains);
  return {mean_line + fmt(m), std_line + fmt(s)};
}

}  // namespace

// ---------------------------------------------------------------- config

void ExperimentConfig::validate() const {
  if (version != kConfigVersion) {
    throw Error(ErrorCode::config, "unsupported config version " + std::to_string(version));
  }
  if (seeds.empty()) {
    throw Error(ErrorCode::config, "run.seeds must list at least one seed");
  }
  if (!(init_scale > 0.0)) {
    throw Error(ErrorCode::config, "model.init_scale must be positive");
  }
  ModelShape shape = model;
  shape.vocab_size = std::max(shape.vocab_size, 2);
  shape.validate();
  reward.validate();
  policy.validate();
  kl.validate();
  // builds the task once so that invalid ids surface here
  make_task(task);
}

ExperimentConfig parse_config(std::istream& in) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorCode::config, std::string("cannot parse config: ") + e.what());
  }
  ExperimentConfig cfg;
  for (const auto& [section, node] : tree) {
    if (node.empty()) {
      if (section != "version") {
        throw Error(ErrorCode::config, "unknown top-level key '" + section + "'");
      }
      continue;
    }
    const auto known = known_keys().find(section);
    if (known == known_keys().end()) {
      throw Error(ErrorCode::config, "unknown section [" + section + "]");
    }
    for (const auto& [key, value] : node) {
      if (!known->second.count(key)) {
        throw Error(ErrorCode::config, "unknown key " + section + "." + key);
      }
    }
  }
  cfg.version = get<int>(tree, "version", kConfigVersion);

  if (!tree.get_optional<std::string>("task.kind")) {
    throw Error(ErrorCode::config, "missing required key task.kind");
  }
  TaskConfig& t = cfg.task;
  t.kind = boost::trim_copy(tree.get<std::string>("task.kind"));
  t.vocab_size = get(tree, "task.vocab_size", t.vocab_size);
  t.horizon = get(tree, "task.horizon", t.horizon);
  t.keyword = get(tree, "task.keyword", t.keyword);
  t.bonus = get(tree, "task.bonus", t.bonus);
  for (const auto& q : split_list(get<std::string>(tree, "task.quality", ""))) {
    try {
      t.quality.push_back(std::stod(q));
    } catch (const std::exception&) {
      throw Error(ErrorCode::config, "invalid value in task.quality: '" + q + "'");
    }
  }
  t.noise_rate = get(tree, "task.noise_rate", t.noise_rate);
  t.num_inputs = get(tree, "task.num_inputs", t.num_inputs);
  t.num_informative = get(tree, "task.num_informative", t.num_informative);
  t.num_noise = get(tree, "task.num_noise", t.num_noise);
  t.pattern_length = get(tree, "task.pattern_length", t.pattern_length);
  t.num_records = get(tree, "task.num_records", t.num_records);
  t.num_classes = get(tree, "task.num_classes", t.num_classes);
  t.num_observations = get(tree, "task.num_observations", t.num_observations);
  t.seed = get(tree, "task.seed", t.seed);

  cfg.model.embed_dim = get(tree, "model.embed_dim", cfg.model.embed_dim);
  cfg.model.hidden = get(tree, "model.hidden", cfg.model.hidden);
  cfg.model.window = get(tree, "model.window", cfg.model.window);
  cfg.init_scale = get(tree, "model.init_scale", cfg.init_scale);

  RewardTrainConfig& r = cfg.reward;
  r.max_steps = get(tree, "reward.steps", r.max_steps);
  r.k = get(tree, "reward.k", r.k);
  const double beta = get(tree, "reward.beta", 2.0);
  r.agg = parse_aggregation(get<std::string>(tree, "reward.agg", "max"), beta);
  const std::string loss = get<std::string>(tree, "reward.loss", "listwise");
  if (loss == "listwise") {
    r.loss = RewardTrainConfig::Loss::listwise;
  } else if (loss == "pairwise") {
    r.loss = RewardTrainConfig::Loss::pairwise;
  } else {
    throw Error(ErrorCode::config, "unknown reward.loss '" + loss + "'");
  }
  r.adam.lr = get(tree, "reward.lr", r.adam.lr);
  r.adam.clip_norm = get(tree, "reward.clip_norm", r.adam.clip_norm);
  r.early_stop_patience = get(tree, "reward.patience", r.early_stop_patience);
  r.eval_interval = get(tree, "reward.eval_interval", r.eval_interval);
  r.holdout_fraction = get(tree, "reward.holdout_fraction", r.holdout_fraction);
  r.holdout_max = get(tree, "reward.holdout_max", r.holdout_max);
  r.group_batch = get(tree, "reward.group_batch", r.group_batch);
  r.temperature = get(tree, "reward.temperature", r.temperature);

  PolicyTrainConfig& p = cfg.policy;
  const std::string mode = get<std::string>(tree, "policy.mode", "reinforce");
  if (mode == "kl_baseline") {
    cfg.kl_baseline = true;
  } else {
    p.mode = parse_train_mode(mode);
  }
  p.estimator = parse_estimator(get<std::string>(tree, "policy.estimator", "exact"));
  p.m_lm = get(tree, "policy.m_lm", p.m_lm);
  p.m_re = get(tree, "policy.m_re", p.m_re);
  if (tree.get_optional<std::string>("policy.m_rew_init")) {
    p.m_rew_init = get(tree, "policy.m_rew_init", 0);
  }
  p.alpha = get(tree, "policy.alpha", p.alpha);
  p.retrain = get_bool(tree, "policy.retrain", p.retrain);
  p.baseline = get_bool(tree, "policy.baseline", p.baseline);
  p.baseline_decay = get(tree, "policy.baseline_decay", p.baseline_decay);
  p.batch_size = get(tree, "policy.batch_size", p.batch_size);
  p.adam.lr = get(tree, "policy.lr", p.adam.lr);
  p.adam.clip_norm = get(tree, "policy.clip_norm", p.adam.clip_norm);
  p.temperature = get(tree, "policy.temperature", p.temperature);
  p.eval_interval = get(tree, "policy.eval_interval", p.eval_interval);
  p.eval_samples = get(tree, "policy.eval_samples", p.eval_samples);
  p.eval_budget = get(tree, "policy.eval_budget", p.eval_budget);
  cfg.kl.gamma = get(tree, "policy.kl_gamma", cfg.kl.gamma);
  cfg.kl.c = get(tree, "policy.kl_c", cfg.kl.c);
  cfg.kl.batch_size = p.batch_size;
  const std::string prior = get<std::string>(tree, "policy.kl_prior", "uniform");
  if (prior == "uniform") {
    cfg.kl.prior = KLBaselineConfig::PriorKind::uniform;
  } else if (prior == "initial_policy") {
    cfg.kl.prior = KLBaselineConfig::PriorKind::initial_policy;
  } else {
    throw Error(ErrorCode::config, "unknown policy.kl_prior '" + prior + "'");
  }

  const auto seeds = split_list(get<std::string>(tree, "run.seeds", "0"));
  cfg.seeds.clear();
  for (const auto& s : seeds) {
    try {
      std::size_t used = 0;
      cfg.seeds.push_back(std::stoull(s, &used));
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw Error(ErrorCode::config, "invalid seed in run.seeds: '" + s + "'");
    }
  }
  cfg.out_dir = get<std::string>(tree, "run.out", "");
  cfg.save_checkpoints = get_bool(tree, "run.checkpoints", cfg.save_checkpoints);
  cfg.sweep_name = get<std::string>(tree, "sweep.name", "");
  cfg.sweep_values = split_list(get<std::string>(tree, "sweep.values", ""));
  cfg.reward.seed = 0;
  cfg.policy.seed = 0;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::io, "cannot read config " + path.string());
  }
  return parse_config(in);
}

void write_config(std::ostream& out, const ExperimentConfig& cfg) {
  const TaskConfig& t = cfg.task;
  const RewardTrainConfig& r = cfg.reward;
  const PolicyTrainConfig& p = cfg.policy;
  std::vector<std::string> quality, seeds;
  for (double q : t.quality) quality.push_back(fmt(q));
  for (auto s : cfg.seeds) seeds.push_back(std::to_string(s));
  const bool soft = r.agg.needs_beta();
  std::string agg_name = soft ? (r.agg.kind == Aggregation::Kind::soft_max ? "max" : "min")
                              : to_string(r.agg);
  out << "version = " << cfg.version << "\n\n"
      << "[task]\n"
      << "kind = " << t.kind << "\nvocab_size = " << t.vocab_size << "\nhorizon = " << t.horizon
      << "\nkeyword = " << t.keyword << "\nbonus = " << fmt(t.bonus)
      << "\nquality = " << join(quality) << "\nnoise_rate = " << fmt(t.noise_rate)
      << "\nnum_inputs = " << t.num_inputs << "\nnum_informative = " << t.num_informative
      << "\nnum_noise = " << t.num_noise << "\npattern_length = " << t.pattern_length
      << "\nnum_records = " << t.num_records << "\nnum_classes = " << t.num_classes
      << "\nnum_observations = " << t.num_observations << "\nseed = " << t.seed << "\n\n"
      << "[model]\n"
      << "embed_dim = " << cfg.model.embed_dim << "\nhidden = " << cfg.model.hidden
      << "\nwindow = " << cfg.model.window << "\ninit_scale = " << fmt(cfg.init_scale) << "\n\n"
      << "[reward]\n"
      << "steps = " << r.max_steps << "\nk = " << r.k << "\nagg = " << agg_name
      << "\nbeta = " << fmt(r.agg.beta)
      << "\nloss = " << (r.loss == RewardTrainConfig::Loss::listwise ? "listwise" : "pairwise")
      << "\nlr = " << fmt(r.adam.lr) << "\nclip_norm = " << fmt(r.adam.clip_norm)
      << "\npatience = " << r.early_stop_patience << "\neval_interval = " << r.eval_interval
      << "\nholdout_fraction = " << fmt(r.holdout_fraction) << "\nholdout_max = " << r.holdout_max
      << "\ngroup_batch = " << r.group_batch << "\ntemperature = " << fmt(r.temperature) << "\n\n"
      << "[policy]\n"
      << "mode = " << (cfg.kl_baseline ? std::string("kl_baseline") : to_string(p.mode))
      << "\nestimator = " << to_string(p.estimator) << "\nm_lm = " << p.m_lm
      << "\nm_re = " << p.m_re << "\nm_rew_init = " << p.m_rew_init.value_or(r.max_steps)
      << "\nalpha = " << fmt(p.alpha) << "\nretrain = " << (p.retrain ? "true" : "false")
      << "\nbaseline = " << (p.baseline ? "true" : "false")
      << "\nbaseline_decay = " << fmt(p.baseline_decay) << "\nbatch_size = " << p.batch_size
      << "\nlr = " << fmt(p.adam.lr) << "\nclip_norm = " << fmt(p.adam.clip_norm)
      << "\ntemperature = " << fmt(p.temperature) << "\neval_interval = " << p.eval_interval
      << "\neval_samples = " << p.eval_samples << "\neval_budget = " << p.eval_budget
      << "\nkl_gamma = " << fmt(cfg.kl.gamma) << "\nkl_c = " << fmt(cfg.kl.c) << "\nkl_prior = "
      << (cfg.kl.prior == KLBaselineConfig::PriorKind::uniform ? "uniform" : "initial_policy")
      << "\n\n"
      << "[run]\n"
      << "seeds = " << join(seeds) << "\nout = " << cfg.out_dir.string()
      << "\ncheckpoints = " << (cfg.save_checkpoints ? "true" : "false") << "\n";
  if (!cfg.sweep_name.empty()) {
    out << "\n[sweep]\nname = " << cfg.sweep_name << "\nvalues = " << join(cfg.sweep_values)
        << "\n";
  }
}

std::filesystem::path default_output_root() {
  if (const char* env = std::getenv("TOKENGUIDE_OUT"); env && *env) {
    return env;
  }
  return "runs";
}

// ---------------------------------------------------------------- CSV

void write_policy_history(std::ostream& out, const std::vector<PolicyHistoryRow>& rows) {
  out << "iter,mode,policy_loss,exact_metric,sampled_metric,retrain_flag\n";
  for (const auto& r : rows) {
    out << r.iter << "," << to_string(r.mode) << "," << fmt(r.policy_loss) << ","
        << fmt(r.exact_metric) << "," << fmt(r.sampled_metric) << "," << (r.retrain ? 1 : 0)
        << "\n";
  }
}

void write_reward_history(std::ostream& out, const std::vector<RewardHistoryRow>& rows) {
  out << "step,train_loss,holdout_loss,rank_accuracy\n";
  for (const auto& r : rows) {
    out << r.step << "," << fmt(r.train_loss) << "," << fmt(r.holdout_loss) << ","
        << fmt(r.rank_accuracy) << "\n";
  }
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  double sum = 0.0;
  int n = 0;
  for (double v : values) {
    if (!std::isnan(v)) {
      sum += v;
      ++n;
    }
  }
  if (n == 0) return {kNaN, kNaN};
  const double mean = sum / n;
  if (n == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) {
    if (!std::isnan(v)) ss += (v - mean) * (v - mean);
  }
  return {mean, std::sqrt(ss / (n - 1))};
}

// ---------------------------------------------------------------- runs

namespace {

std::vector<PolicyHistoryRow> kl_baseline_train(PolicyModel& policy, const PreferenceSource& task,
                                                const ExperimentConfig& cfg, std::uint64_t seed) {
  const PolicyTrainConfig& pc = cfg.policy;
  const KlPrior prior = cfg.kl.prior == KLBaselineConfig::PriorKind::uniform
                            ? KlPrior::uniform()
                            : KlPrior::snapshot(policy);
  Adam optimizer(policy.param_count(), pc.adam);
  Rng rng(derive_seed(seed, 3));
  const bool enumerable = oracle::sequence_space_size(task.vocab(), task.horizon()) <=
                          static_cast<double>(pc.eval_budget);
  std::vector<PolicyHistoryRow> rows;
  for (int iter = 1; iter <= pc.m_lm; ++iter) {
    GradBuffer g = sparse_kl_reinforce_step(policy, task, prior, cfg.kl, rng);
    g *= -1.0;
    optimizer.step(policy.params(), g);
    PolicyHistoryRow row{iter, pc.mode, kNaN, kNaN, kNaN, false};
    if (iter % pc.eval_interval == 0 || iter == pc.m_lm) {
      if (enumerable) {
        row.exact_metric =
            oracle::exact_expected_metric(policy, task, oracle::EnumerationBudget{pc.eval_budget});
      }
      Rng eval_rng(derive_seed(seed, 4));
      row.sampled_metric = sampled_metric(policy, task, pc.eval_samples, eval_rng);
    }
    rows.push_back(row);
  }
  return rows;
}

std::string mode_label(const ExperimentConfig& cfg) {
  return cfg.kl_baseline ? "kl_baseline" : to_string(cfg.policy.mode);
}

}  // namespace

SeedSummary run_seed(const ExperimentConfig& cfg, std::uint64_t seed, Command command,
                     const std::filesystem::path& dir) {
  ModelShape shape = cfg.model;
  const auto task = build_task(cfg, shape);
  PolicyModel policy = PolicyModel::random(shape, derive_seed(seed, 0), cfg.init_scale);
  RewardModel reward = RewardModel::random(shape, derive_seed(seed, 1), cfg.init_scale);
  RewardTrainConfig rc = cfg.reward;
  rc.seed = derive_seed(seed, 2);
  PolicyTrainConfig pc = cfg.policy;
  pc.seed = derive_seed(seed, 3);
  std::span<const SupervisedRecord> records;
  if (const auto* data = task->supervised_data()) {
    records = *data;
  }

  std::filesystem::create_directories(dir);
  SeedSummary summary;
  summary.seed = seed;
  std::vector<PolicyHistoryRow> policy_rows;
  std::vector<RewardHistoryRow> reward_rows;

  if (command == Command::train_reward) {
    RewardLearner learner(std::move(reward), rc);
    reward_rows = train_reward(learner, policy, *task);
    reward = std::move(learner.model);
  } else if (cfg.kl_baseline) {
    policy_rows = kl_baseline_train(policy, *task, cfg, seed);
  } else {
    if (command == Command::train_lm) {
      pc.retrain = false;
    }
    AlternateResult out = alternate_train(std::move(policy), std::move(reward), *task, rc, pc,
                                          records);
    policy = std::move(out.policy);
    reward = std::move(out.reward);
    policy_rows = std::move(out.history);
    reward_rows = std::move(out.reward_history);
    summary.retrains = static_cast<int>(out.retrain_iters.size());
  }

  const oracle::EnumerationBudget budget{cfg.policy.eval_budget};
  const bool enumerable = oracle::sequence_space_size(task->vocab(), task->horizon()) <=
                          static_cast<double>(budget.max_states);
  summary.exact_metric = enumerable ? oracle::exact_expected_metric(policy, *task, budget) : kNaN;
  summary.optimal_metric = enumerable ? oracle::optimal_expected_metric(*task, budget) : kNaN;
  Rng eval_rng(derive_seed(seed, 4));
  summary.sampled_metric = sampled_metric(policy, *task, cfg.policy.eval_samples, eval_rng);
  summary.policy_loss = policy_rows.empty() ? kNaN : policy_rows.back().policy_loss;
  summary.holdout_loss = last_evaluated(reward_rows, &RewardHistoryRow::holdout_loss);
  summary.rank_accuracy = last_evaluated(reward_rows, &RewardHistoryRow::rank_accuracy);

  if (command != Command::train_reward) {
    std::ostringstream os;
    write_policy_history(os, policy_rows);
    std::string text = os.str();
    if (cfg.kl_baseline) {
      boost::replace_all(text, "," + to_string(cfg.policy.mode) + ",", ",kl_baseline,");
    }
    write_file(dir / "policy_history.csv", text);
  }
  if (!reward_rows.empty() || command == Command::train_reward) {
    std::ostringstream os;
    write_reward_history(os, reward_rows);
    write_file(dir / "reward_history.csv", os.str());
  }
  if (cfg.save_checkpoints) {
    save_checkpoint(dir / "policy.ckpt", policy);
    if (!cfg.kl_baseline && cfg.policy.mode != TrainMode::vanilla_mle) {
      save_checkpoint(dir / "reward.ckpt", reward);
    }
  }
  return summary;
}

std::vector<SeedSummary> run(const ExperimentConfig& cfg, Command command) {
  cfg.validate();
  std::filesystem::create_directories(cfg.out_dir);
  std::vector<SeedSummary> rows;
  for (auto seed : cfg.seeds) {
    rows.push_back(run_seed(cfg, seed, command, cfg.out_dir / ("seed_" + std::to_string(seed))));
  }
  std::ostringstream os;
  os << "seed,mode," << kSummaryHeader << "\n";
  for (const auto& r : rows) {
    os << r.seed << "," << mode_label(cfg) << "," << summary_fields(r) << "\n";
  }
  const auto [mean_line, std_line] = aggregate_fields(rows);
  os << "mean," << mode_label(cfg) << "," << mean_line << "\n";
  os << "std," << mode_label(cfg) << "," << std_line << "\n";
  write_file(cfg.out_dir / "summary.csv", os.str());
  std::ostringstream resolved;
  write_config(resolved, cfg);
  write_file(cfg.out_dir / "config.ini", resolved.str());
  return rows;
}

std::vector<std::string> default_sweep_values(const std::string& sweep) {
  if (sweep == "K") return {"2", "3", "5", "7", "9"};
  if (sweep == "beta") return {"0.25", "0.5", "1", "2", "4"};
  if (sweep == "alpha") return {"0.03125", "0.0625", "0.125", "0.25", "0.5"};
  if (sweep == "agg") return {"sum", "avg", "max", "min"};
  if (sweep == "retrain") return {"on", "off"};
  if (sweep == "seq_vs_token") return {"token", "sequence"};
  throw Error(ErrorCode::config, "unknown sweep '" + sweep +
                                     "' (expected K, beta, alpha, agg, retrain or seq_vs_token)");
}

ExperimentConfig apply_sweep(const ExperimentConfig& base, const std::string& sweep,
                             const std::string& value) {
  default_sweep_values(sweep);
  ExperimentConfig cfg = base;
  auto number = [&](const std::string& v) {
    try {
      std::size_t used = 0;
      const double x = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw Error(ErrorCode::config, "invalid " + sweep + " value '" + v + "'");
    }
  };
  if (sweep == "K") {
    cfg.reward.k = static_cast<int>(number(value));
  } else if (sweep == "beta") {
    cfg.reward.agg.beta = number(value);
  } else if (sweep == "alpha") {
    cfg.policy.alpha = number(value);
  } else if (sweep == "agg") {
    cfg.reward.agg = parse_aggregation(value, base.reward.agg.beta);
  } else if (sweep == "retrain") {
    if (value == "on" || value == "true") {
      cfg.policy.retrain = true;
    } else if (value == "off" || value == "false") {
      cfg.policy.retrain = false;
    } else {
      throw Error(ErrorCode::config, "retrain values are on/off, got '" + value + "'");
    }
  } else if (sweep == "seq_vs_token") {
    const TrainMode mode = base.policy.mode;
    const bool weighted = mode == TrainMode::weighted_mle || mode == TrainMode::seq_weighted_mle;
    if (value == "token") {
      cfg.policy.mode = weighted ? TrainMode::weighted_mle : TrainMode::reinforce;
    } else if (value == "sequence") {
      cfg.policy.mode = weighted ? TrainMode::seq_weighted_mle : TrainMode::seq_reinforce;
    } else {
      throw Error(ErrorCode::config, "seq_vs_token values are token/sequence, got '" + value + "'");
    }
  }
  cfg.validate();
  return cfg;
}

std::vector<SweepRow> ablate(const ExperimentConfig& cfg, const std::string& sweep) {
  const std::vector<std::string> values =
      cfg.sweep_values.empty() || cfg.sweep_name != sweep ? default_sweep_values(sweep)
                                                          : cfg.sweep_values;
  std::filesystem::create_directories(cfg.out_dir);
  std::vector<SweepRow> out;
  std::ostringstream os;
  os << "sweep,value,seed," << kSummaryHeader << "\n";
  std::ostringstream agg;
  for (const auto& value : values) {
    ExperimentConfig variant = apply_sweep(cfg, sweep, value);
    SweepRow row{value, {}};
    for (auto seed : cfg.seeds) {
      const auto dir = cfg.out_dir / (sweep + "_" + value) / ("seed_" + std::to_string(seed));
      row.seeds.push_back(run_seed(variant, seed, Command::alternate, dir));
      os << sweep << "," << value << "," << seed << "," << summary_fields(row.seeds.back())
         << "\n";
    }
    const auto [mean_line, std_line] = aggregate_fields(row.seeds);
    agg << sweep << "," << value << ",mean," << mean_line << "\n";
    agg << sweep << "," << value << ",std," << std_line << "\n";
    out.push_back(std::move(row));
  }
  os << agg.str();
  write_file(cfg.out_dir / "summary.csv", os.str());
  ExperimentConfig resolved = cfg;
  resolved.sweep_name = sweep;
  resolved.sweep_values = values;
  std::ostringstream text;
  write_config(text, resolved);
  write_file(cfg.out_dir / "config.ini", text.str());
  return out;
}

}  // namespace tokenguide
