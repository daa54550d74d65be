#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "diprl/critic.hpp"
#include "diprl/envs.hpp"
#include "diprl/extract.hpp"
#include "diprl/program.hpp"
#include "diprl/relaxed_policy.hpp"
#include "diprl/rng.hpp"
#include "diprl/trainer_eval.hpp"

namespace diprl {

// ------------------------------------------------------------------ config

struct PpoConfig {
  int epochs = 10;
  int minibatch = 64;
  double clip = 0.2;
  double lr = 1e-3;
};

struct PolicyConfig {
  int max_depth = 6;
  std::string head = "auto";  // auto | discrete | gaussian
};

struct RegularizerConfig {
  std::string mode = "auto";  // auto | fixed | off
  double alpha_fixed = 0.0;
  double target_fraction = 0.1;  // target entropy = fraction * ln(D_m)
};

struct BaselineConfig {
  bool enabled = false;
  double extract_fraction = 0.2;
  bool finetune = true;
};

struct EvalConfig {
  int episodes = 30;
};

struct TrainConfig {
  std::string env = "cartpole";
  std::uint64_t seed = 0;
  long total_steps = 300000;
  int rollout_length = 2048;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double shaping_coef = 100.0;  // mountaincar training shaping; 0 disables
  bool normalize_advantages = true;
  PpoConfig ppo;
  PolicyConfig policy;
  RegularizerConfig regularizer;
  BaselineConfig baseline_mode;
  EvalConfig eval;

  void validate() const;  // throws ConfigError
  std::string to_json() const;
  // Strict parse: unknown keys anywhere are rejected.
  static TrainConfig from_json(const std::string& text);
};

// --------------------------------------------------------------- dual state

// Lagrange multiplier in log space; alpha = exp(beta).
struct DualState {
  double beta = -10.0;
  double target = 0.0;  // target entropy H-bar
  double lr = 1e-4;
  double beta_min = -10.0;
  double beta_max = 10.0;

  double alpha() const;
  // beta <- clamp(beta + lr*(h - target)); alpha rises while entropy sits
  // above the target and falls once it drops below.
  void update(double h_current);
};

// ----------------------------------------------------------------- rollouts

struct RolloutBatch {
  int feature_dim = 0;
  std::vector<double> features;  // size() * feature_dim
  std::vector<Action> actions;
  std::vector<double> rewards;
  std::vector<double> values;       // V(s_t)
  std::vector<double> next_values;  // V(s_{t+1})
  std::vector<double> log_probs;    // behavior log-probs at sampling time
  std::vector<std::uint8_t> terminated;
  std::vector<std::uint8_t> truncated;
  std::vector<double> advantages;
  std::vector<double> returns;
  std::vector<std::size_t> episode_starts;

  std::size_t size() const { return actions.size(); }
  std::span<const double> features_at(std::size_t i) const {
    return {features.data() + i * feature_dim, static_cast<std::size_t>(feature_dim)};
  }
};

// Owns per-environment episode state between collect calls.
struct RolloutContext {
  Env* env = nullptr;
  ShapedMountainCar* shaped = nullptr;  // set when env is the shaping wrapper
  Rng reset_rng{0};
  std::vector<double> obs;
  bool need_reset = true;
  double episode_task_return = 0.0;
  std::vector<double> completed_returns;  // task returns of finished episodes
};

RolloutBatch collect_rollouts(const RelaxedPolicy& policy, const Critic& critic,
                              std::span<RolloutContext> contexts, int n_steps,
                              Rng& rng);

// GAE(gamma, lambda) with resets at episode boundaries; returns = A + V.
void compute_gae(RolloutBatch& batch, double gamma, double lambda);
void normalize_advantages(RolloutBatch& batch);

// ------------------------------------------------------------ optimization

class Adam {
 public:
  Adam(std::size_t n, double lr);
  void step(std::span<double> params, std::span<const double> grad);

 private:
  double lr_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

// Policy-side loss for one minibatch: mean clipped surrogate (minimization
// sign) plus alpha * (H(T) - target).
struct SurrogateResult {
  std::vector<double> grad;  // over policy parameters
  double policy_loss = 0.0;
  double arch_entropy = 0.0;
  double entropy_grad_norm = 0.0;
  double total_loss = 0.0;
  double approx_kl = 0.0;
};

SurrogateResult grad_surrogate(const RelaxedPolicy& policy,
                               const RolloutBatch& batch,
                               std::span<const std::size_t> indices, double alpha,
                               double target, double clip);

struct CriticGradResult {
  std::vector<double> grad;
  double value_loss = 0.0;
};

CriticGradResult critic_grad(const Critic& critic, const RolloutBatch& batch,
                             std::span<const std::size_t> indices);

struct EpochMetrics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double approx_kl = 0.0;
  double arch_entropy = 0.0;
  double alpha = 0.0;
  bool aborted = false;
};

// One shuffled pass of minibatch updates. Updates the dual multiplier after
// every minibatch when mode is "auto". A non-finite loss aborts the epoch and
// restores the pre-epoch parameters.
EpochMetrics ppo_epoch(RelaxedPolicy& policy, Critic& critic, RolloutBatch& batch,
                       DualState& dual, const TrainConfig& cfg, Rng& shuffle_rng,
                       Adam& policy_opt, Adam& critic_opt);

// ------------------------------------------------------------------- train

struct MetricsRow {
  long step = 0;
  double mean_return = 0.0;
  double eval_return_greedy = 0.0;
  double arch_entropy = 0.0;
  double norm_entropy = 0.0;
  double alpha = 0.0;
  double p_max = 0.0;
  double mass_deleted = 0.0;
  long depth_argmax = 1;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double approx_kl = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRow& row);

struct BaselineExtraction {
  long step = 0;
  int chosen_depth = 1;
  double j_relaxed_sampled = 0.0;
  double j_extracted = 0.0;
  double drop = 0.0;  // relaxed minus extracted
};

struct TrainSnapshot {
  long step = 0;
  const TrainConfig* config = nullptr;
  const RelaxedPolicy* policy = nullptr;
  const Critic* critic = nullptr;
  const DualState* dual = nullptr;
  std::uint64_t sample_key = 0, sample_counter = 0;
  std::uint64_t shuffle_key = 0, shuffle_counter = 0;
};

struct TrainHooks {
  std::function<void(const MetricsRow&)> on_metrics;
  std::function<void(const TrainSnapshot&)> on_checkpoint;
  std::function<void(const std::string&)> on_log;
};

struct TrainResult {
  RelaxedPolicy policy;
  Critic critic;
  DiscreteProgram program;
  ExtractionReport report;
  GapResult final_gap;
  EvalResult final_greedy;
  EvalResult final_sampled;
  std::optional<BaselineExtraction> baseline;
  std::vector<MetricsRow> metrics;
  DualState dual;
  long steps = 0;
};

TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks = {});

// Resolves the policy shape for an env + config (head kind validation).
PolicyShape policy_shape_for(const TrainConfig& cfg, const Env& env);

}  // namespace diprl
