#include "tokenguide/models.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <string>

namespace tokenguide {

void ModelShape::validate() const {
  if (vocab_size < 2 || num_inputs < 1 || embed_dim < 1 || hidden < 1 || window < 0) {
    throw Error(ErrorCode::parameter, "invalid model shape");
  }
}

namespace {

using MatMap = Eigen::Map<Matrix>;
using ConstMatMap = Eigen::Map<const Matrix>;
using ConstVecMap = Eigen::Map<const Vector>;

void check_state(const ModelShape& shape, const State& s) {
  if (s.input_id < 0 || s.input_id >= shape.num_inputs) {
    throw Error(ErrorCode::shape, "input id " + std::to_string(s.input_id) + " out of range");
  }
  for (TokenId token : s.prefix) {
    if (token < 0 || token >= shape.vocab_size) {
      throw Error(ErrorCode::shape, "prefix token " + std::to_string(token) + " out of range");
    }
  }
}

void check_token(const ModelShape& shape, TokenId token) {
  if (token < 0 || token >= shape.vocab_size) {
    throw Error(ErrorCode::shape, "token " + std::to_string(token) + " out of range");
  }
}

// Context slot j holds the (j+1)-th most recent prefix token, or -1 (zero padding).
TokenId window_token(const State& s, int j) {
  const auto n = static_cast<long>(s.prefix.size());
  const long idx = n - 1 - j;
  return idx >= 0 ? s.prefix[static_cast<std::size_t>(idx)] : TokenId{-1};
}

Vector random_params(Eigen::Index n, std::uint64_t seed, double scale) {
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  Vector p(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p[i] = dist(rng);
  }
  return p;
}

}  // namespace

// ---------------------------------------------------------------- reward

struct RewardModel::Layout {
  int d, V, n_in, H, W, in_dim;
  Eigen::Index emb, input_emb, A, b, v, c, total;
};

RewardModel::Layout RewardModel::layout() const {
  Layout l{};
  l.d = shape_.embed_dim;
  l.V = shape_.vocab_size;
  l.n_in = shape_.num_inputs;
  l.H = shape_.hidden;
  l.W = shape_.window;
  l.in_dim = (l.W + 2) * l.d;
  l.emb = 0;
  l.input_emb = l.emb + Eigen::Index{l.d} * l.V;
  l.A = l.input_emb + Eigen::Index{l.d} * l.n_in;
  l.b = l.A + Eigen::Index{l.H} * l.in_dim;
  l.v = l.b + l.H;
  l.c = l.v + l.H;
  l.total = l.c + 1;
  return l;
}

RewardModel::RewardModel(const ModelShape& shape) : shape_(shape) {
  shape_.validate();
  params_ = Vector::Zero(layout().total);
}

RewardModel RewardModel::random(const ModelShape& shape, std::uint64_t seed, double scale) {
  RewardModel model(shape);
  model.params_ = random_params(model.params_.size(), seed, scale);
  return model;
}

// Features after the action slot: [emb(window_0..W-1); emb(input)].
Vector RewardModel::context_features(const State& s) const {
  const Layout l = layout();
  const ConstMatMap emb(params_.data() + l.emb, l.d, l.V);
  const ConstMatMap input_emb(params_.data() + l.input_emb, l.d, l.n_in);
  Vector x = Vector::Zero((l.W + 1) * l.d);
  for (int j = 0; j < l.W; ++j) {
    const TokenId tok = window_token(s, j);
    if (tok >= 0) {
      x.segment(j * l.d, l.d) = emb.col(tok);
    }
  }
  x.segment(l.W * l.d, l.d) = input_emb.col(s.input_id);
  return x;
}

double RewardModel::forward(const State& s, TokenId token) const {
  check_state(shape_, s);
  check_token(shape_, token);
  const Layout l = layout();
  const ConstMatMap emb(params_.data() + l.emb, l.d, l.V);
  const ConstMatMap A(params_.data() + l.A, l.H, l.in_dim);
  const ConstVecMap b(params_.data() + l.b, l.H);
  const ConstVecMap v(params_.data() + l.v, l.H);
  const double c = params_[l.c];

  const Vector ctx = context_features(s);
  const Vector z = A.leftCols(l.d) * emb.col(token) + A.rightCols(l.in_dim - l.d) * ctx + b;
  const Vector h = z.array().tanh().matrix();
  return sigmoid(v.dot(h) + c);
}

Vector RewardModel::forward_all(const State& s) const {
  check_state(shape_, s);
  const Layout l = layout();
  const ConstMatMap emb(params_.data() + l.emb, l.d, l.V);
  const ConstMatMap A(params_.data() + l.A, l.H, l.in_dim);
  const ConstVecMap b(params_.data() + l.b, l.H);
  const ConstVecMap v(params_.data() + l.v, l.H);
  const double c = params_[l.c];

  const Vector shared = A.rightCols(l.in_dim - l.d) * context_features(s) + b;
  const Matrix z = (A.leftCols(l.d) * emb).colwise() + shared;  // H x V
  const Vector u = (v.transpose() * z.array().tanh().matrix()).transpose();
  Vector r(l.V);
  for (int a = 0; a < l.V; ++a) {
    r[a] = sigmoid(u[a] + c);
  }
  return r;
}

void RewardModel::backward(const State& s, TokenId token, double adjoint,
                           GradBuffer& grad) const {
  check_state(shape_, s);
  check_token(shape_, token);
  if (grad.size() != params_.size()) {
    throw Error(ErrorCode::shape, "gradient buffer does not match reward parameters");
  }
  const Layout l = layout();
  const ConstMatMap emb(params_.data() + l.emb, l.d, l.V);
  const ConstMatMap A(params_.data() + l.A, l.H, l.in_dim);
  const ConstVecMap b(params_.data() + l.b, l.H);
  const ConstVecMap v(params_.data() + l.v, l.H);
  const double c = params_[l.c];

  Vector x(l.in_dim);
  x.head(l.d) = emb.col(token);
  x.tail(l.in_dim - l.d) = context_features(s);
  const Vector h = (A * x + b).array().tanh().matrix();
  const double r = sigmoid(v.dot(h) + c);

  const double g_u = adjoint * r * (1.0 - r);
  double* g = grad.values.data();
  Eigen::Map<Vector>(g + l.v, l.H) += g_u * h;
  g[l.c] += g_u;
  const Vector g_z = (g_u * v).cwiseProduct((1.0 - h.array().square()).matrix());
  MatMap(g + l.A, l.H, l.in_dim).noalias() += g_z * x.transpose();
  Eigen::Map<Vector>(g + l.b, l.H) += g_z;

  const Vector g_x = A.transpose() * g_z;
  MatMap g_emb(g + l.emb, l.d, l.V);
  g_emb.col(token) += g_x.head(l.d);
  for (int j = 0; j < l.W; ++j) {
    const TokenId tok = window_token(s, j);
    if (tok >= 0) {
      g_emb.col(tok) += g_x.segment((j + 1) * l.d, l.d);
    }
  }
  MatMap(g + l.input_emb, l.d, l.n_in).col(s.input_id) += g_x.tail(l.d);
}

// ---------------------------------------------------------------- policy

struct PolicyModel::Layout {
  int d, V, n_in, H, W, in_dim;
  Eigen::Index emb, input_emb, A, b, out_w, out_b, total;
};

PolicyModel::Layout PolicyModel::layout() const {
  Layout l{};
  l.d = shape_.embed_dim;
  l.V = shape_.vocab_size;
  l.n_in = shape_.num_inputs;
  l.H = shape_.hidden;
  l.W = shape_.window;
  l.in_dim = (l.W + 1) * l.d;
  l.emb = 0;
  l.input_emb = l.emb + Eigen::Index{l.d} * l.V;
  l.A = l.input_emb + Eigen::Index{l.d} * l.n_in;
  l.b = l.A + Eigen::Index{l.H} * l.in_dim;
  l.out_w = l.b + l.H;
  l.out_b = l.out_w + Eigen::Index{l.V} * l.H;
  l.total = l.out_b + l.V;
  return l;
}

PolicyModel::PolicyModel(const ModelShape& shape) : shape_(shape) {
  shape_.validate();
  params_ = Vector::Zero(layout().total);
}

PolicyModel PolicyModel::random(const ModelShape& shape, std::uint64_t seed, double scale) {
  PolicyModel model(shape);
  model.params_ = random_params(model.params_.size(), seed, scale);
  return model;
}

Vector PolicyModel::features(const State& s) const {
  const Layout l = layout();
  const ConstMatMap emb(params_.data() + l.emb, l.d, l.V);
  const ConstMatMap input_emb(params_.data() + l.input_emb, l.d, l.n_in);
  Vector x = Vector::Zero(l.in_dim);
  for (int j = 0; j < l.W; ++j) {
    const TokenId tok = window_token(s, j);
    if (tok >= 0) {
      x.segment(j * l.d, l.d) = emb.col(tok);
    }
  }
  x.tail(l.d) = input_emb.col(s.input_id);
  return x;
}

Vector PolicyModel::logits(const State& s) const {
  check_state(shape_, s);
  const Layout l = layout();
  const ConstMatMap A(params_.data() + l.A, l.H, l.in_dim);
  const ConstVecMap b(params_.data() + l.b, l.H);
  const ConstMatMap out_w(params_.data() + l.out_w, l.V, l.H);
  const ConstVecMap out_b(params_.data() + l.out_b, l.V);
  const Vector h = (A * features(s) + b).array().tanh().matrix();
  return out_w * h + out_b;
}

void PolicyModel::backward(const State& s, const Vector& logit_adjoint, GradBuffer& grad) const {
  check_state(shape_, s);
  const Layout l = layout();
  if (grad.size() != params_.size() || logit_adjoint.size() != l.V) {
    throw Error(ErrorCode::shape, "gradient buffer does not match policy parameters");
  }
  const ConstMatMap A(params_.data() + l.A, l.H, l.in_dim);
  const ConstVecMap b(params_.data() + l.b, l.H);
  const ConstMatMap out_w(params_.data() + l.out_w, l.V, l.H);

  const Vector x = features(s);
  const Vector h = (A * x + b).array().tanh().matrix();

  double* g = grad.values.data();
  MatMap(g + l.out_w, l.V, l.H).noalias() += logit_adjoint * h.transpose();
  Eigen::Map<Vector>(g + l.out_b, l.V) += logit_adjoint;
  const Vector g_z =
      (out_w.transpose() * logit_adjoint).cwiseProduct((1.0 - h.array().square()).matrix());
  MatMap(g + l.A, l.H, l.in_dim).noalias() += g_z * x.transpose();
  Eigen::Map<Vector>(g + l.b, l.H) += g_z;

  const Vector g_x = A.transpose() * g_z;
  MatMap g_emb(g + l.emb, l.d, l.V);
  for (int j = 0; j < l.W; ++j) {
    const TokenId tok = window_token(s, j);
    if (tok >= 0) {
      g_emb.col(tok) += g_x.segment(j * l.d, l.d);
    }
  }
  MatMap(g + l.input_emb, l.d, l.n_in).col(s.input_id) += g_x.tail(l.d);
}

// ---------------------------------------------------------------- free functions

double reward_step(const RewardModel& model, int input_id, std::span<const TokenId> prefix,
                   TokenId token) {
  return model.forward(State{input_id, prefix}, token);
}

Vector reward_trajectory(const RewardModel& model, const Trajectory& traj) {
  Vector r(traj.length());
  for (int t = 0; t < traj.length(); ++t) {
    r[t] = model.forward(state_at(traj, t), traj.tokens[static_cast<std::size_t>(t)]);
  }
  return r;
}

Vector policy_logits(const PolicyModel& model, int input_id, std::span<const TokenId> prefix) {
  return model.logits(State{input_id, prefix});
}

Vector policy_probs(const PolicyModel& model, const State& s) { return softmax(model.logits(s)); }

int sample_categorical(const Vector& probs, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng) * probs.sum();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) {
      return static_cast<int>(i);
    }
  }
  // Round-off can leave u == sum; take the last token with mass.
  for (Eigen::Index i = probs.size() - 1; i >= 0; --i) {
    if (probs[i] > 0.0) {
      return static_cast<int>(i);
    }
  }
  throw Error(ErrorCode::numeric, "categorical distribution has no mass");
}

Trajectory sample_trajectory(const PolicyModel& model, const Vocab& vocab, int input_id,
                             int horizon, double temperature, Rng& rng) {
  if (horizon < 1) {
    throw Error(ErrorCode::parameter, "horizon must be >= 1");
  }
  if (!(temperature > 0.0)) {
    throw Error(ErrorCode::parameter, "temperature must be > 0");
  }
  if (vocab.size != model.shape().vocab_size) {
    throw Error(ErrorCode::shape, "vocabulary does not match the policy");
  }
  Trajectory traj;
  traj.input_id = input_id;
  traj.tokens.reserve(static_cast<std::size_t>(horizon));
  for (int t = 0; t < horizon; ++t) {
    const Vector logits = model.logits(state_at(traj, t));
    if (!logits.allFinite()) {
      throw Error(ErrorCode::numeric, "non-finite policy logits");
    }
    const TokenId token = sample_categorical(softmax(Vector(logits / temperature)), rng);
    traj.tokens.push_back(token);
    if (vocab.is_eos(token)) {
      break;
    }
  }
  return traj;
}

Trajectory policy_sample(const PolicyModel& model, const Vocab& vocab, int input_id, int horizon,
                         double temperature, std::uint64_t seed) {
  Rng rng(seed);
  return sample_trajectory(model, vocab, input_id, horizon, temperature, rng);
}

// ---------------------------------------------------------------- backprop

namespace {

void add_direct_terms(const LossGraph& graph, GradBuffer& grad) {
  for (const auto& [index, adjoint] : graph.direct_terms) {
    if (index < 0 || index >= grad.size()) {
      throw Error(ErrorCode::shape, "direct term outside the parameter vector");
    }
    grad.values[index] += adjoint;
  }
}

}  // namespace

GradBuffer backprop_scalar(const RewardModel& model, const LossGraph& graph) {
  if (!std::isfinite(graph.value)) {
    throw Error(ErrorCode::numeric, "non-finite loss");
  }
  GradBuffer grad(model.param_count());
  for (const auto& term : graph.reward_terms) {
    model.backward(term.state, term.token, term.adjoint, grad);
  }
  add_direct_terms(graph, grad);
  return grad;
}

GradBuffer backprop_scalar(const PolicyModel& model, const LossGraph& graph) {
  if (!std::isfinite(graph.value)) {
    throw Error(ErrorCode::numeric, "non-finite loss");
  }
  GradBuffer grad(model.param_count());
  for (const auto& term : graph.policy_terms) {
    model.backward(term.state, term.logit_adjoint, grad);
  }
  add_direct_terms(graph, grad);
  return grad;
}

// ---------------------------------------------------------------- optimizer

Adam::Adam(Eigen::Index n, AdamConfig config)
    : config_(config), m_(Vector::Zero(n)), v_(Vector::Zero(n)) {
  if (!(config_.lr > 0.0) || config_.beta1 < 0.0 || config_.beta1 >= 1.0 ||
      config_.beta2 < 0.0 || config_.beta2 >= 1.0 || !(config_.eps > 0.0)) {
    throw Error(ErrorCode::parameter, "invalid Adam settings");
  }
}

void Adam::step(Vector& params, const GradBuffer& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw Error(ErrorCode::shape, "optimizer state does not match parameters");
  }
  if (!grad.values.allFinite()) {
    throw Error(ErrorCode::numeric, "non-finite gradient");
  }
  Vector g = grad.values;
  const double norm = g.norm();
  if (config_.clip_norm > 0.0 && norm > config_.clip_norm) {
    g *= config_.clip_norm / norm;
  }
  ++t_;
  m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * g;
  v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * g.cwiseProduct(g);
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  params.array() -=
      config_.lr * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + config_.eps);
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr const char* kMagic = "tokenguide-checkpoint";
constexpr int kVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const char* kind,
                      const ModelShape& shape, const Vector& params) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::io, "cannot write " + path.string());
  }
  out << kMagic << ' ' << kVersion << '\n'
      << "kind " << kind << '\n'
      << "shape " << shape.vocab_size << ' ' << shape.num_inputs << ' ' << shape.embed_dim << ' '
      << shape.hidden << ' ' << shape.window << '\n'
      << "count " << params.size() << '\n'
      << std::setprecision(17);
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    out << params[i] << '\n';
  }
  if (!out) {
    throw Error(ErrorCode::io, "failed writing " + path.string());
  }
}

std::pair<ModelShape, Vector> read_checkpoint(const std::filesystem::path& path,
                                              const std::string& expected_kind) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::io, "cannot read " + path.string());
  }
  std::string magic, key, kind;
  int version = 0;
  ModelShape shape;
  Eigen::Index count = 0;
  in >> magic >> version;
  if (magic != kMagic || version != kVersion) {
    throw Error(ErrorCode::io, path.string() + " is not a version-1 checkpoint");
  }
  in >> key >> kind;
  if (key != "kind" || kind != expected_kind) {
    throw Error(ErrorCode::io, path.string() + " holds a " + kind + " model, expected " +
                                   expected_kind);
  }
  in >> key >> shape.vocab_size >> shape.num_inputs >> shape.embed_dim >> shape.hidden >>
      shape.window;
  if (key != "shape" || !in) {
    throw Error(ErrorCode::io, "malformed shape header in " + path.string());
  }
  in >> key >> count;
  if (key != "count" || !in || count < 0) {
    throw Error(ErrorCode::io, "malformed count header in " + path.string());
  }
  Vector params(count);
  for (Eigen::Index i = 0; i < count; ++i) {
    if (!(in >> params[i])) {
      throw Error(ErrorCode::io, "truncated parameter list in " + path.string());
    }
  }
  return {shape, params};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const RewardModel& model) {
  write_checkpoint(path, "reward", model.shape(), model.params());
}

void save_checkpoint(const std::filesystem::path& path, const PolicyModel& model) {
  write_checkpoint(path, "policy", model.shape(), model.params());
}

RewardModel load_reward_checkpoint(const std::filesystem::path& path) {
  auto [shape, params] = read_checkpoint(path, "reward");
  RewardModel model(shape);
  if (params.size() != model.param_count()) {
    throw Error(ErrorCode::io, "parameter count does not match shape in " + path.string());
  }
  model.params() = std::move(params);
  return model;
}

PolicyModel load_policy_checkpoint(const std::filesystem::path& path) {
  auto [shape, params] = read_checkpoint(path, "policy");
  PolicyModel model(shape);
  if (params.size() != model.param_count()) {
    throw Error(ErrorCode::io, "parameter count does not match shape in " + path.string());
  }
  model.params() = std::move(params);
  return model;
}

}  // namespace tokenguide
