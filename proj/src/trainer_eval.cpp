#include "diprl/trainer_eval.hpp"

#include <cmath>

namespace diprl {

namespace {

constexpr std::uint64_t kEpisodeStream = 0x45564150u;  // per-episode seeds

template <class ActFn>
double run_episode(Env& env, std::uint64_t episode_seed, double discount,
                   ActFn&& act) {
  std::vector<double> obs = env.reset(episode_seed);
  double ret = 0.0;
  double disc = 1.0;
  for (;;) {
    StepResult r = env.step(act(obs));
    ret += disc * r.reward;
    disc *= discount;
    if (r.done()) break;
    obs = std::move(r.observation);
  }
  return ret;
}

template <class ActFn>
EvalResult run_eval(Env& env, int episodes, std::uint64_t seed, double discount,
                    ActFn&& act) {
  if (episodes < 1) throw ContractError("evaluate: episodes must be >= 1");
  EvalResult out;
  out.returns.reserve(episodes);
  for (int e = 0; e < episodes; ++e) {
    std::uint64_t ep_seed =
        Rng::fold(seed, kEpisodeStream + static_cast<std::uint64_t>(e)).next_u64();
    out.returns.push_back(run_episode(env, ep_seed, discount, act));
  }
  double mean = 0.0;
  for (double r : out.returns) mean += r;
  mean /= episodes;
  double var = 0.0;
  for (double r : out.returns) var += (r - mean) * (r - mean);
  out.mean = mean;
  out.stddev = episodes > 1 ? std::sqrt(var / episodes) : 0.0;
  return out;
}

}  // namespace

EvalResult evaluate_policy(const RelaxedPolicy& policy, Env& env, int episodes,
                           std::uint64_t seed, EvalMode mode, double discount) {
  const ActionSpace& space = env.action_space();
  auto clamp_continuous = [&space](Action a) {
    if (auto* v = std::get_if<std::vector<double>>(&a)) {
      for (std::size_t i = 0; i < v->size(); ++i) {
        (*v)[i] = std::clamp((*v)[i], space.low[i], space.high[i]);
      }
    }
    return a;
  };
  if (mode == EvalMode::greedy) {
    return run_eval(env, episodes, seed, discount, [&](const std::vector<double>& obs) {
      return clamp_continuous(policy.greedy_action(obs));
    });
  }
  Rng rng = Rng::fold(seed, 0x53414d50u);
  return run_eval(env, episodes, seed, discount, [&](const std::vector<double>& obs) {
    return clamp_continuous(policy.sample_action(obs, rng).first);
  });
}

EvalResult evaluate_program(const DiscreteProgram& program, Env& env,
                            int episodes, std::uint64_t seed, double discount) {
  const ActionSpace& space = env.action_space();
  return run_eval(env, episodes, seed, discount, [&](const std::vector<double>& obs) {
    return evaluate(program, obs, &space);
  });
}

}  // namespace diprl
