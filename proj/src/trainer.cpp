#include "diprl/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "diprl/kernels.hpp"

namespace diprl {

namespace {

using nlohmann::json;

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kSampleStream = 2;
constexpr std::uint64_t kShuffleStream = 3;
constexpr std::uint64_t kResetStream = 4;
constexpr std::uint64_t kEvalStream = 5;

constexpr int kEvalCadence = 10;        // metrics/eval every N rollout batches
constexpr int kCheckpointCadence = 50;  // checkpoints every N rollout batches
constexpr double kMaxGradNorm = 0.5;

std::string fmt_value(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void reject_unknown_keys(const json& j, std::initializer_list<const char*> known,
                         const std::string& scope) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw ConfigError("unknown config key '" + scope + it.key() + "'");
    }
  }
}

template <class T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

// ------------------------------------------------------------------ config

void TrainConfig::validate() const {
  make_env(env);  // throws on unknown env names
  if (total_steps < 0) throw ConfigError("total_steps must be >= 0");
  if (rollout_length < 1) throw ConfigError("rollout_length must be >= 1");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must be in (0, 1)");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) {
    throw ConfigError("gae_lambda must be in [0, 1]");
  }
  if (ppo.epochs < 1) throw ConfigError("ppo.epochs must be >= 1");
  if (ppo.minibatch < 1) throw ConfigError("ppo.minibatch must be >= 1");
  if (!(ppo.clip > 0.0)) throw ConfigError("ppo.clip must be > 0");
  if (!(ppo.lr > 0.0)) throw ConfigError("ppo.lr must be > 0");
  if (policy.max_depth < 1) throw ConfigError("policy.max_depth must be >= 1");
  if (policy.head != "auto" && policy.head != "discrete" &&
      policy.head != "gaussian") {
    throw ConfigError("policy.head must be auto, discrete, or gaussian");
  }
  if (regularizer.mode != "auto" && regularizer.mode != "fixed" &&
      regularizer.mode != "off") {
    throw ConfigError("regularizer.mode must be auto, fixed, or off");
  }
  if (regularizer.alpha_fixed < 0.0) {
    throw ConfigError("regularizer.alpha_fixed must be >= 0");
  }
  if (regularizer.target_fraction < 0.0 || regularizer.target_fraction > 1.0) {
    throw ConfigError("regularizer.target_fraction must be in [0, 1]");
  }
  if (baseline_mode.enabled && (baseline_mode.extract_fraction <= 0.0 ||
                                baseline_mode.extract_fraction >= 1.0)) {
    throw ConfigError("baseline_mode.extract_fraction must be in (0, 1)");
  }
  if (eval.episodes < 1) throw ConfigError("eval.episodes must be >= 1");
}

std::string TrainConfig::to_json() const {
  json j;
  j["env"] = env;
  j["seed"] = seed;
  j["total_steps"] = total_steps;
  j["rollout_length"] = rollout_length;
  j["gamma"] = gamma;
  j["gae_lambda"] = gae_lambda;
  j["shaping_coef"] = shaping_coef;
  j["normalize_advantages"] = normalize_advantages;
  j["ppo"] = {{"epochs", ppo.epochs},
              {"minibatch", ppo.minibatch},
              {"clip", ppo.clip},
              {"lr", ppo.lr}};
  j["policy"] = {{"max_depth", policy.max_depth}, {"head", policy.head}};
  j["regularizer"] = {{"mode", regularizer.mode},
                      {"alpha_fixed", regularizer.alpha_fixed},
                      {"target_fraction", regularizer.target_fraction}};
  j["baseline_mode"] = {{"enabled", baseline_mode.enabled},
                        {"extract_fraction", baseline_mode.extract_fraction},
                        {"finetune", baseline_mode.finetune}};
  j["eval"] = {{"episodes", eval.episodes}};
  return j.dump(2) + "\n";
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  TrainConfig cfg;
  try {
    reject_unknown_keys(j,
                        {"env", "seed", "total_steps", "rollout_length", "gamma",
                         "gae_lambda", "shaping_coef", "normalize_advantages",
                         "ppo", "policy", "regularizer", "baseline_mode", "eval"},
                        "");
    read_field(j, "env", cfg.env);
    read_field(j, "seed", cfg.seed);
    read_field(j, "total_steps", cfg.total_steps);
    read_field(j, "rollout_length", cfg.rollout_length);
    read_field(j, "gamma", cfg.gamma);
    read_field(j, "gae_lambda", cfg.gae_lambda);
    read_field(j, "shaping_coef", cfg.shaping_coef);
    read_field(j, "normalize_advantages", cfg.normalize_advantages);
    if (j.contains("ppo")) {
      const json& p = j.at("ppo");
      reject_unknown_keys(p, {"epochs", "minibatch", "clip", "lr"}, "ppo.");
      read_field(p, "epochs", cfg.ppo.epochs);
      read_field(p, "minibatch", cfg.ppo.minibatch);
      read_field(p, "clip", cfg.ppo.clip);
      read_field(p, "lr", cfg.ppo.lr);
    }
    if (j.contains("policy")) {
      const json& p = j.at("policy");
      reject_unknown_keys(p, {"max_depth", "head"}, "policy.");
      read_field(p, "max_depth", cfg.policy.max_depth);
      read_field(p, "head", cfg.policy.head);
    }
    if (j.contains("regularizer")) {
      const json& p = j.at("regularizer");
      reject_unknown_keys(p, {"mode", "alpha_fixed", "target_fraction"},
                          "regularizer.");
      read_field(p, "mode", cfg.regularizer.mode);
      read_field(p, "alpha_fixed", cfg.regularizer.alpha_fixed);
      read_field(p, "target_fraction", cfg.regularizer.target_fraction);
    }
    if (j.contains("baseline_mode")) {
      const json& p = j.at("baseline_mode");
      reject_unknown_keys(p, {"enabled", "extract_fraction", "finetune"},
                          "baseline_mode.");
      read_field(p, "enabled", cfg.baseline_mode.enabled);
      read_field(p, "extract_fraction", cfg.baseline_mode.extract_fraction);
      read_field(p, "finetune", cfg.baseline_mode.finetune);
    }
    if (j.contains("eval")) {
      const json& p = j.at("eval");
      reject_unknown_keys(p, {"episodes"}, "eval.");
      read_field(p, "episodes", cfg.eval.episodes);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config type error: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

PolicyShape policy_shape_for(const TrainConfig& cfg, const Env& env) {
  const ActionSpace& space = env.action_space();
  bool env_discrete = space.kind == ActionSpace::Kind::discrete;
  if (cfg.policy.head == "discrete" && !env_discrete) {
    throw ConfigError("policy.head=discrete but env has continuous actions");
  }
  if (cfg.policy.head == "gaussian" && env_discrete) {
    throw ConfigError("policy.head=gaussian but env has discrete actions");
  }
  PolicyShape shape;
  shape.max_depth = cfg.policy.max_depth;
  shape.feature_dim = env.feature_dim();
  shape.head = env_discrete ? HeadKind::discrete : HeadKind::gaussian;
  shape.n_actions = env_discrete ? space.n : 0;
  shape.action_dim = env_discrete ? 0 : space.dim;
  return shape;
}

// --------------------------------------------------------------- dual state

double DualState::alpha() const { return std::exp(beta); }

void DualState::update(double h_current) {
  beta = std::clamp(beta + lr * (h_current - target), beta_min, beta_max);
}

// ----------------------------------------------------------------- rollouts

RolloutBatch collect_rollouts(const RelaxedPolicy& policy, const Critic& critic,
                              std::span<RolloutContext> contexts, int n_steps,
                              Rng& rng) {
  if (contexts.empty()) throw ContractError("collect_rollouts: no environments");
  RolloutBatch batch;
  batch.feature_dim = policy.shape().feature_dim;
  batch.features.reserve(static_cast<std::size_t>(n_steps) * batch.feature_dim);

  int per_env = n_steps / static_cast<int>(contexts.size());
  int extra = n_steps % static_cast<int>(contexts.size());

  const ActionSpace& space = contexts.front().env->action_space();
  auto clamp_for_env = [&space](Action a) {
    if (auto* v = std::get_if<std::vector<double>>(&a)) {
      for (std::size_t i = 0; i < v->size(); ++i) {
        (*v)[i] = std::clamp((*v)[i], space.low[i], space.high[i]);
      }
    }
    return a;
  };

  for (std::size_t c = 0; c < contexts.size(); ++c) {
    RolloutContext& ctx = contexts[c];
    int quota = per_env + (static_cast<int>(c) < extra ? 1 : 0);
    // A context continuing its episode still begins a fresh GAE segment.
    if (!ctx.need_reset && quota > 0) batch.episode_starts.push_back(batch.size());
    for (int t = 0; t < quota; ++t) {
      if (ctx.need_reset) {
        ctx.obs = ctx.env->reset(ctx.reset_rng.next_u64());
        ctx.need_reset = false;
        ctx.episode_task_return = 0.0;
        batch.episode_starts.push_back(batch.size());
      }
      auto [action, logp] = policy.sample_action(ctx.obs, rng);
      double v = critic.value(ctx.obs);

      StepResult r = ctx.env->step(clamp_for_env(action));
      double task_reward = ctx.shaped != nullptr ? ctx.shaped->last_task_reward()
                                                 : r.reward;
      ctx.episode_task_return += task_reward;

      batch.features.insert(batch.features.end(), ctx.obs.begin(), ctx.obs.end());
      batch.actions.push_back(std::move(action));
      batch.rewards.push_back(r.reward);
      batch.values.push_back(v);
      batch.log_probs.push_back(logp);
      batch.terminated.push_back(r.terminated ? 1 : 0);
      batch.truncated.push_back(r.truncated ? 1 : 0);
      // Bootstrap value of the successor state; zeroed at termination inside
      // the GAE delta.
      batch.next_values.push_back(r.terminated ? 0.0 : critic.value(r.observation));

      if (r.done()) {
        ctx.completed_returns.push_back(ctx.episode_task_return);
        ctx.need_reset = true;
      } else {
        ctx.obs = std::move(r.observation);
      }
    }
    // The trailing episode continues into the next batch.
  }
  return batch;
}

void compute_gae(RolloutBatch& batch, double gamma, double lambda) {
  std::size_t n = batch.size();
  batch.advantages.assign(n, 0.0);
  batch.returns.assign(n, 0.0);
  double carry = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    bool ep_end = batch.terminated[t] != 0 || batch.truncated[t] != 0;
    // Also a boundary when the next index begins a new episode (env switch).
    if (!ep_end && t + 1 < n) {
      for (std::size_t s : batch.episode_starts) {
        if (s == t + 1) {
          ep_end = true;
          break;
        }
      }
    }
    if (ep_end || t + 1 == n) carry = 0.0;
    double not_terminated = batch.terminated[t] != 0 ? 0.0 : 1.0;
    double delta = batch.rewards[t] + gamma * batch.next_values[t] * not_terminated -
                   batch.values[t];
    carry = delta + gamma * lambda * (ep_end ? 0.0 : 1.0) * carry;
    batch.advantages[t] = carry;
    batch.returns[t] = carry + batch.values[t];
  }
}

void normalize_advantages(RolloutBatch& batch) {
  std::size_t n = batch.size();
  if (n == 0) return;
  double mean = kernels::active().sum(batch.advantages.data(), n) / double(n);
  double var = 0.0;
  for (double a : batch.advantages) var += (a - mean) * (a - mean);
  double std = std::sqrt(var / double(n));
  for (double& a : batch.advantages) a = (a - mean) / (std + 1e-8);
}

// ------------------------------------------------------------ optimization

Adam::Adam(std::size_t n, double lr) : lr_(lr), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw ContractError("Adam: size mismatch");
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++t_;
  double c1 = 1.0 - std::pow(b1, double(t_));
  double c2 = 1.0 - std::pow(b2, double(t_));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
  }
}

namespace {

void dump_params(const ad::ParamSet& ps, const std::string& why) {
  json j;
  j["reason"] = why;
  for (std::size_t i = 0; i < ps.entry_count(); ++i) {
    const auto& e = ps.entry(i);
    j["params"][e.name] = std::vector<double>(ps.values(i).begin(), ps.values(i).end());
  }
  std::filesystem::path path =
      std::filesystem::temp_directory_path() / "diprl_param_dump.json";
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  throw NumericalError(why + "; parameter snapshot dumped to " + path.string());
}

double grad_norm(std::span<const double> a, std::span<const double> b) {
  double acc = kernels::active().dot(a.data(), a.data(), a.size());
  if (!b.empty()) acc += kernels::active().dot(b.data(), b.data(), b.size());
  return std::sqrt(acc);
}

}  // namespace

SurrogateResult grad_surrogate(const RelaxedPolicy& policy,
                               const RolloutBatch& batch,
                               std::span<const std::size_t> indices, double alpha,
                               double target, double clip) {
  if (indices.empty()) throw ContractError("grad_surrogate: empty minibatch");
  ad::Tape tape;
  PolicyGraph pg = PolicyGraph::build(tape, policy);

  double inv_m = 1.0 / double(indices.size());
  ad::NodeId obj_sum;
  double kl_acc = 0.0;
  for (std::size_t idx : indices) {
    ad::NodeId lp = pg.log_prob(tape, batch.features_at(idx), batch.actions[idx]);
    ad::NodeId log_ratio = tape.sub(lp, tape.constant(batch.log_probs[idx]));
    ad::NodeId ratio = tape.exp(log_ratio);
    ad::NodeId adv = tape.constant(batch.advantages[idx]);
    ad::NodeId unclipped = tape.mul(ratio, adv);
    ad::NodeId clipped = tape.mul(tape.clamp(ratio, 1.0 - clip, 1.0 + clip), adv);
    ad::NodeId obj = tape.min(unclipped, clipped);
    obj_sum = obj_sum.valid() ? tape.add(obj_sum, obj) : obj;

    double lr_val = tape.value_scalar(log_ratio);
    kl_acc += (std::exp(lr_val) - 1.0) - lr_val;
  }
  ad::NodeId policy_loss = tape.neg(tape.mul(tape.constant(inv_m), obj_sum));
  ad::NodeId loss = policy_loss;
  if (alpha != 0.0) {
    loss = tape.add(loss, tape.mul(tape.constant(alpha),
                                   tape.sub(pg.arch_entropy, tape.constant(target))));
  }

  SurrogateResult out;
  out.policy_loss = tape.value_scalar(policy_loss);
  out.arch_entropy = tape.value_scalar(pg.arch_entropy);
  out.total_loss = tape.value_scalar(loss);
  out.approx_kl = kl_acc * inv_m;
  if (!std::isfinite(out.total_loss)) {
    dump_params(policy.params(), "non-finite policy loss");
  }
  tape.backward(loss);
  out.grad.assign(policy.params().size(), 0.0);
  pg.bound.collect(tape, out.grad);

  // Gradient norm of the entropy term alone (diagnostic); a second backward
  // pass seeded at H(T).
  if (!policy.frozen_depth().has_value()) {
    tape.backward(pg.arch_entropy);
    std::span<const double> g = tape.grad(pg.bound.node("depth_logits"));
    double acc = 0.0;
    for (double v : g) acc += v * v;
    out.entropy_grad_norm = std::sqrt(acc);
  }
  return out;
}

CriticGradResult critic_grad(const Critic& critic, const RolloutBatch& batch,
                             std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("critic_grad: empty minibatch");
  ad::Tape tape;
  CriticGraph cg = CriticGraph::build(tape, critic);
  ad::NodeId sq_sum;
  for (std::size_t idx : indices) {
    ad::NodeId v = cg.value(tape, batch.features_at(idx));
    ad::NodeId diff = tape.sub(v, tape.constant(batch.returns[idx]));
    ad::NodeId sq = tape.square(diff);
    sq_sum = sq_sum.valid() ? tape.add(sq_sum, sq) : sq;
  }
  ad::NodeId loss = tape.mul(tape.constant(0.5 / double(indices.size())), sq_sum);
  CriticGradResult out;
  out.value_loss = tape.value_scalar(loss);
  if (!std::isfinite(out.value_loss)) {
    dump_params(critic.params(), "non-finite value loss");
  }
  tape.backward(loss);
  out.grad.assign(critic.params().size(), 0.0);
  cg.bound.collect(tape, out.grad);
  return out;
}

EpochMetrics ppo_epoch(RelaxedPolicy& policy, Critic& critic, RolloutBatch& batch,
                       DualState& dual, const TrainConfig& cfg, Rng& shuffle_rng,
                       Adam& policy_opt, Adam& critic_opt) {
  EpochMetrics em;
  std::size_t n = batch.size();
  std::size_t mb = static_cast<std::size_t>(cfg.ppo.minibatch);
  if (n == 0) return em;
  mb = std::min(mb, n);

  std::vector<double> policy_snapshot = policy.params().flatten();
  std::vector<double> critic_snapshot = critic.params().flatten();

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  shuffle_rng.shuffle(perm);

  bool reg_off = cfg.regularizer.mode == "off" || policy.frozen_depth().has_value();
  int updates = 0;
  try {
    for (std::size_t start = 0; start + mb <= n; start += mb) {
      std::span<const std::size_t> indices(perm.data() + start, mb);
      double alpha = reg_off ? 0.0
                             : (cfg.regularizer.mode == "fixed"
                                    ? cfg.regularizer.alpha_fixed
                                    : dual.alpha());
      SurrogateResult sr =
          grad_surrogate(policy, batch, indices, alpha, dual.target, cfg.ppo.clip);
      CriticGradResult cr = critic_grad(critic, batch, indices);

      double norm = grad_norm(sr.grad, cr.grad);
      if (norm > kMaxGradNorm) {
        double scale = kMaxGradNorm / norm;
        kernels::active().scale(scale, sr.grad.data(), sr.grad.data(), sr.grad.size());
        kernels::active().scale(scale, cr.grad.data(), cr.grad.data(), cr.grad.size());
      }
      policy_opt.step(policy.params().flat(), sr.grad);
      critic_opt.step(critic.params().flat(), cr.grad);

      if (cfg.regularizer.mode == "auto" && !policy.frozen_depth().has_value()) {
        dual.update(sr.arch_entropy);
      }

      em.policy_loss += sr.policy_loss;
      em.value_loss += cr.value_loss;
      em.approx_kl += sr.approx_kl;
      em.arch_entropy = sr.arch_entropy;
      em.alpha = alpha;
      ++updates;
    }
  } catch (const NumericalError&) {
    policy.params().unflatten(policy_snapshot);
    critic.params().unflatten(critic_snapshot);
    em.aborted = true;
    return em;
  }
  if (updates > 0) {
    em.policy_loss /= updates;
    em.value_loss /= updates;
    em.approx_kl /= updates;
  }
  return em;
}

// ------------------------------------------------------------------ metrics

std::string metrics_csv_header() {
  return "step,mean_return,eval_return_greedy,arch_entropy,norm_entropy,alpha,"
         "p_max,mass_deleted,depth_argmax,policy_loss,value_loss,approx_kl";
}

std::string metrics_csv_row(const MetricsRow& r) {
  std::string out = std::to_string(r.step);
  auto push = [&out](double v) {
    out += ",";
    out += fmt_value(v);
  };
  push(r.mean_return);
  push(r.eval_return_greedy);
  push(r.arch_entropy);
  push(r.norm_entropy);
  push(r.alpha);
  push(r.p_max);
  push(r.mass_deleted);
  out += "," + std::to_string(r.depth_argmax);
  push(r.policy_loss);
  push(r.value_loss);
  push(r.approx_kl);
  return out;
}

// -------------------------------------------------------------------- train

TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();

  std::unique_ptr<Env> base_env = make_env(cfg.env);
  std::unique_ptr<ShapedMountainCar> shaped;
  Env* train_env = base_env.get();
  if (cfg.env == "mountaincar" && cfg.shaping_coef != 0.0) {
    shaped = std::make_unique<ShapedMountainCar>(std::move(base_env), cfg.shaping_coef);
    train_env = shaped.get();
  }
  std::unique_ptr<Env> eval_env = make_env(cfg.env);

  PolicyShape shape = policy_shape_for(cfg, *eval_env);
  Rng init_rng = Rng::fold(cfg.seed, kInitStream);
  RelaxedPolicy policy = RelaxedPolicy::init(shape, init_rng);
  Critic critic = Critic::init(shape.feature_dim, init_rng);

  DualState dual;
  dual.target = cfg.regularizer.target_fraction *
                (shape.max_depth > 1 ? std::log(double(shape.max_depth)) : 1.0);

  Rng sample_rng = Rng::fold(cfg.seed, kSampleStream);
  Rng shuffle_rng = Rng::fold(cfg.seed, kShuffleStream);

  Adam policy_opt(policy.params().size(), cfg.ppo.lr);
  Adam critic_opt(critic.params().size(), cfg.ppo.lr);

  RolloutContext ctx;
  ctx.env = train_env;
  ctx.shaped = shaped.get();
  ctx.reset_rng = Rng::fold(cfg.seed, kResetStream);

  auto log = [&hooks](const std::string& msg) {
    if (hooks.on_log) hooks.on_log(msg);
  };
  auto emit_checkpoint = [&](long step) {
    if (!hooks.on_checkpoint) return;
    TrainSnapshot snap;
    snap.step = step;
    snap.config = &cfg;
    snap.policy = &policy;
    snap.critic = &critic;
    snap.dual = &dual;
    snap.sample_key = sample_rng.key();
    snap.sample_counter = sample_rng.counter();
    snap.shuffle_key = shuffle_rng.key();
    snap.shuffle_counter = shuffle_rng.counter();
    hooks.on_checkpoint(snap);
  };

  TrainResult result{policy, critic, {}, {}, {}, {}, {}, {}, {}, dual, 0};

  long steps_done = 0;
  long iter = 0;
  bool baseline_extracted = false;
  bool stop = false;
  EpochMetrics last_em;
  std::size_t return_cursor = 0;

  while (steps_done < cfg.total_steps && !stop) {
    RolloutBatch batch = collect_rollouts(policy, critic, {&ctx, 1},
                                          cfg.rollout_length, sample_rng);
    steps_done += static_cast<long>(batch.size());
    compute_gae(batch, cfg.gamma, cfg.gae_lambda);
    if (cfg.normalize_advantages) normalize_advantages(batch);

    EpochMetrics acc;
    int aborted = 0;
    for (int e = 0; e < cfg.ppo.epochs; ++e) {
      EpochMetrics em = ppo_epoch(policy, critic, batch, dual, cfg, shuffle_rng,
                                  policy_opt, critic_opt);
      if (em.aborted) {
        ++aborted;
        log("epoch aborted at step " + std::to_string(steps_done) +
            ": non-finite loss, parameters restored");
        continue;
      }
      acc.policy_loss += em.policy_loss;
      acc.value_loss += em.value_loss;
      acc.approx_kl += em.approx_kl;
      acc.arch_entropy = em.arch_entropy;
      acc.alpha = em.alpha;
    }
    int ok_epochs = cfg.ppo.epochs - aborted;
    if (ok_epochs > 0) {
      acc.policy_loss /= ok_epochs;
      acc.value_loss /= ok_epochs;
      acc.approx_kl /= ok_epochs;
    }
    last_em = acc;
    ++iter;

    if (cfg.baseline_mode.enabled && !baseline_extracted &&
        steps_done >=
            static_cast<long>(cfg.baseline_mode.extract_fraction * cfg.total_steps)) {
      EvalResult rel = evaluate_policy(policy, *eval_env, cfg.eval.episodes,
                                       cfg.seed, EvalMode::sampled);
      auto [prog, rep] = discretize(policy);
      EvalResult ext =
          evaluate_program(prog, *eval_env, cfg.eval.episodes, cfg.seed);
      BaselineExtraction be;
      be.step = steps_done;
      be.chosen_depth = rep.chosen_depth;
      be.j_relaxed_sampled = rel.mean;
      be.j_extracted = ext.mean;
      be.drop = rel.mean - ext.mean;
      result.baseline = be;
      policy.freeze_depth(rep.chosen_depth);
      baseline_extracted = true;
      log("baseline extraction at step " + std::to_string(be.step) + ": depth " +
          std::to_string(be.chosen_depth) + ", relaxed " + fmt_value(rel.mean) +
          " -> extracted " + fmt_value(ext.mean));
      if (!cfg.baseline_mode.finetune) stop = true;
    }

    bool last_iter = steps_done >= cfg.total_steps || stop;
    if (iter % kEvalCadence == 0 || last_iter) {
      EvalResult greedy =
          evaluate_policy(policy, *eval_env, cfg.eval.episodes,
                          Rng::mix(cfg.seed ^ Rng::mix(kEvalStream + iter)),
                          EvalMode::greedy);
      DepthDistribution dist = policy.depth_distribution();
      MetricsRow row;
      row.step = steps_done;
      double ret_mean = 0.0;
      std::size_t n_ret = ctx.completed_returns.size() - return_cursor;
      if (n_ret > 0) {
        for (std::size_t i = return_cursor; i < ctx.completed_returns.size(); ++i) {
          ret_mean += ctx.completed_returns[i];
        }
        ret_mean /= double(n_ret);
        return_cursor = ctx.completed_returns.size();
      } else if (!ctx.completed_returns.empty()) {
        ret_mean = ctx.completed_returns.back();
      }
      row.mean_return = ret_mean;
      row.eval_return_greedy = greedy.mean;
      row.arch_entropy = dist.entropy;
      row.norm_entropy = dist.normalized_entropy;
      row.alpha = cfg.regularizer.mode == "fixed" ? cfg.regularizer.alpha_fixed
                  : cfg.regularizer.mode == "off" ? 0.0
                                                  : dual.alpha();
      row.p_max = dist.p_max;
      row.mass_deleted = dist.deleted_mass;
      row.depth_argmax = dist.argmax_depth;
      row.policy_loss = acc.policy_loss;
      row.value_loss = acc.value_loss;
      row.approx_kl = acc.approx_kl;
      result.metrics.push_back(row);
      if (hooks.on_metrics) hooks.on_metrics(row);
      log("step " + std::to_string(steps_done) + " eval " + fmt_value(greedy.mean) +
          " H " + fmt_value(dist.entropy) + " alpha " + fmt_value(row.alpha));
    }
    if (iter % kCheckpointCadence == 0) emit_checkpoint(steps_done);
  }

  result.policy = policy;
  result.critic = critic;
  result.dual = dual;
  result.steps = steps_done;

  auto [prog, rep] = discretize(policy);
  result.program = std::move(prog);
  result.report = std::move(rep);
  result.final_greedy = evaluate_policy(policy, *eval_env, cfg.eval.episodes,
                                        cfg.seed, EvalMode::greedy);
  result.final_sampled = evaluate_policy(policy, *eval_env, cfg.eval.episodes,
                                         cfg.seed, EvalMode::sampled);
  result.final_gap = extraction_gap(policy, result.program, *eval_env,
                                    cfg.eval.episodes, cfg.seed);
  emit_checkpoint(steps_done);
  return result;
}

}  // namespace diprl
