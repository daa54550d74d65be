#pragma once

#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "diprl/errors.hpp"
#include "diprl/rng.hpp"
#include "diprl/tabular.hpp"

namespace diprl {

struct ActionSpace {
  enum class Kind { discrete, continuous };
  Kind kind = Kind::discrete;
  int n = 0;    // discrete
  int dim = 0;  // continuous
  std::vector<double> low, high;

  static ActionSpace make_discrete(int n_actions) {
    ActionSpace s;
    s.kind = Kind::discrete;
    s.n = n_actions;
    return s;
  }
  static ActionSpace make_continuous(int dim, std::vector<double> low,
                                     std::vector<double> high) {
    ActionSpace s;
    s.kind = Kind::continuous;
    s.dim = dim;
    s.low = std::move(low);
    s.high = std::move(high);
    return s;
  }
};

using Action = std::variant<int, std::vector<double>>;

struct StepResult {
  std::vector<double> observation;
  double reward = 0.0;
  bool terminated = false;
  bool truncated = false;
  bool done() const { return terminated || truncated; }
};

class Env {
 public:
  virtual ~Env() = default;

  virtual const std::string& name() const = 0;
  virtual int feature_dim() const = 0;
  virtual const ActionSpace& action_space() const = 0;
  virtual int time_limit() const = 0;

  virtual std::vector<double> reset(std::uint64_t seed) = 0;
  virtual StepResult step(const Action& action) = 0;

  virtual std::vector<std::string> feature_names() const;
  virtual std::vector<std::string> action_names() const;

  virtual bool is_tabular() const { return false; }
  virtual TabularMDP as_tabular(double gamma) const;
};

// Registry keyed by name: cartpole, mountaincar, acrobot, gridworld4x4,
// pointmass1d.
std::unique_ptr<Env> make_env(const std::string& name);
std::vector<std::string> env_names();

// Potential-based shaping for mountaincar: adds coef * (phi(s') - phi(s))
// with phi(s) = -|position - goal| on top of the task reward. Training-only;
// evaluation uses the raw env.
class ShapedMountainCar : public Env {
 public:
  ShapedMountainCar(std::unique_ptr<Env> inner, double coef);

  const std::string& name() const override { return inner_->name(); }
  int feature_dim() const override { return inner_->feature_dim(); }
  const ActionSpace& action_space() const override {
    return inner_->action_space();
  }
  int time_limit() const override { return inner_->time_limit(); }
  std::vector<double> reset(std::uint64_t seed) override;
  StepResult step(const Action& action) override;
  std::vector<std::string> feature_names() const override {
    return inner_->feature_names();
  }
  std::vector<std::string> action_names() const override {
    return inner_->action_names();
  }

  double last_task_reward() const { return last_task_reward_; }

 private:
  double potential(double position) const;

  std::unique_ptr<Env> inner_;
  double coef_;
  double prev_position_ = 0.0;
  double last_task_reward_ = 0.0;
};

}  // namespace diprl
