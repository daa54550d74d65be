#include "diprl/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace diprl {

namespace {

constexpr double kPi = std::numbers::pi;

int discrete_action(const Action& a, const ActionSpace& space,
                    const std::string& env_name) {
  const int* idx = std::get_if<int>(&a);
  if (idx == nullptr) {
    throw ContractError(env_name + ": expected a discrete action");
  }
  if (*idx < 0 || *idx >= space.n) {
    throw ContractError(env_name + ": action index " + std::to_string(*idx) +
                        " out of range [0, " + std::to_string(space.n) + ")");
  }
  return *idx;
}

const std::vector<double>& continuous_action(const Action& a,
                                             const ActionSpace& space,
                                             const std::string& env_name) {
  const auto* v = std::get_if<std::vector<double>>(&a);
  if (v == nullptr) {
    throw ContractError(env_name + ": expected a continuous action");
  }
  if (static_cast<int>(v->size()) != space.dim) {
    throw ContractError(env_name + ": action has dim " +
                        std::to_string(v->size()) + ", expected " +
                        std::to_string(space.dim));
  }
  for (int i = 0; i < space.dim; ++i) {
    if ((*v)[i] < space.low[i] || (*v)[i] > space.high[i]) {
      throw ContractError(env_name + ": action component " +
                          std::to_string(i) + " out of bounds");
    }
  }
  return *v;
}

class EpisodicEnv : public Env {
 public:
  int time_limit() const override { return limit_; }

 protected:
  EpisodicEnv(std::string name, int limit) : name_(std::move(name)), limit_(limit) {}

  void begin_episode() {
    steps_ = 0;
    finished_ = false;
  }
  // Applies the time limit and tracks episode state; call once per step.
  void finish_step(StepResult& r) {
    ++steps_;
    if (!r.terminated && steps_ >= limit_) r.truncated = true;
    finished_ = r.done();
  }
  void require_active() const {
    if (finished_) {
      throw ContractError(name_ + ": step() after episode end; call reset()");
    }
  }

  const std::string& name() const override { return name_; }

 private:
  std::string name_;
  int limit_;
  int steps_ = 0;
  bool finished_ = true;
};

// ----------------------------------------------------------------- CartPole

class CartPoleEnv final : public EpisodicEnv {
 public:
  CartPoleEnv() : EpisodicEnv("cartpole", 500), space_(ActionSpace::make_discrete(2)) {}

  int feature_dim() const override { return 4; }
  const ActionSpace& action_space() const override { return space_; }

  std::vector<double> reset(std::uint64_t seed) override {
    Rng rng = Rng::fold(seed, 0x9d2c5680);
    for (double& v : s_) v = rng.uniform(-0.05, 0.05);
    begin_episode();
    return obs();
  }

  StepResult step(const Action& action) override {
    require_active();
    int a = discrete_action(action, space_, name());
    double force = a == 1 ? kForceMag : -kForceMag;
    double x = s_[0], x_dot = s_[1], theta = s_[2], theta_dot = s_[3];
    double cos_t = std::cos(theta), sin_t = std::sin(theta);

    double temp =
        (force + kPoleMassLength * theta_dot * theta_dot * sin_t) / kTotalMass;
    double theta_acc =
        (kGravity * sin_t - cos_t * temp) /
        (kLength * (4.0 / 3.0 - kMassPole * cos_t * cos_t / kTotalMass));
    double x_acc = temp - kPoleMassLength * theta_acc * cos_t / kTotalMass;

    s_[0] = x + kTau * x_dot;
    s_[1] = x_dot + kTau * x_acc;
    s_[2] = theta + kTau * theta_dot;
    s_[3] = theta_dot + kTau * theta_acc;

    StepResult r;
    r.observation = obs();
    r.terminated = s_[0] < -kXThreshold || s_[0] > kXThreshold ||
                   s_[2] < -kThetaThreshold || s_[2] > kThetaThreshold;
    r.reward = 1.0;
    finish_step(r);
    return r;
  }

  std::vector<std::string> feature_names() const override {
    return {"f0", "f1", "f2", "f3"};
  }
  std::vector<std::string> action_names() const override {
    return {"Left", "Right"};
  }

 private:
  static constexpr double kGravity = 9.8;
  static constexpr double kMassCart = 1.0;
  static constexpr double kMassPole = 0.1;
  static constexpr double kTotalMass = kMassCart + kMassPole;
  static constexpr double kLength = 0.5;  // half pole length
  static constexpr double kPoleMassLength = kMassPole * kLength;
  static constexpr double kForceMag = 10.0;
  static constexpr double kTau = 0.02;
  static constexpr double kThetaThreshold = 12.0 * 2.0 * kPi / 360.0;
  static constexpr double kXThreshold = 2.4;

  std::vector<double> obs() const { return {s_[0], s_[1], s_[2], s_[3]}; }

  ActionSpace space_;
  double s_[4] = {0, 0, 0, 0};
};

// -------------------------------------------------------------- MountainCar

class MountainCarEnv final : public EpisodicEnv {
 public:
  MountainCarEnv()
      : EpisodicEnv("mountaincar", 200), space_(ActionSpace::make_discrete(3)) {}

  int feature_dim() const override { return 2; }
  const ActionSpace& action_space() const override { return space_; }

  std::vector<double> reset(std::uint64_t seed) override {
    Rng rng = Rng::fold(seed, 0x6c078965);
    position_ = rng.uniform(-0.6, -0.4);
    velocity_ = 0.0;
    begin_episode();
    return {position_, velocity_};
  }

  StepResult step(const Action& action) override {
    require_active();
    int a = discrete_action(action, space_, name());
    velocity_ += (a - 1) * kForce + std::cos(3.0 * position_) * (-kGravity);
    velocity_ = std::clamp(velocity_, -kMaxSpeed, kMaxSpeed);
    position_ += velocity_;
    position_ = std::clamp(position_, kMinPosition, kMaxPosition);
    if (position_ == kMinPosition && velocity_ < 0.0) velocity_ = 0.0;

    StepResult r;
    r.observation = {position_, velocity_};
    r.terminated = position_ >= kGoalPosition;
    r.reward = -1.0;
    finish_step(r);
    return r;
  }

  std::vector<std::string> action_names() const override {
    return {"Left", "Coast", "Right"};
  }

  static constexpr double kGoalPosition = 0.5;

 private:
  static constexpr double kMinPosition = -1.2;
  static constexpr double kMaxPosition = 0.6;
  static constexpr double kMaxSpeed = 0.07;
  static constexpr double kForce = 0.001;
  static constexpr double kGravity = 0.0025;

  ActionSpace space_;
  double position_ = 0.0;
  double velocity_ = 0.0;
};

// ------------------------------------------------------------------ Acrobot

class AcrobotEnv final : public EpisodicEnv {
 public:
  AcrobotEnv() : EpisodicEnv("acrobot", 500), space_(ActionSpace::make_discrete(3)) {}

  int feature_dim() const override { return 6; }
  const ActionSpace& action_space() const override { return space_; }

  std::vector<double> reset(std::uint64_t seed) override {
    Rng rng = Rng::fold(seed, 0xb5026f5a);
    for (double& v : s_) v = rng.uniform(-0.1, 0.1);
    begin_episode();
    return obs();
  }

  StepResult step(const Action& action) override {
    require_active();
    int a = discrete_action(action, space_, name());
    double torque = static_cast<double>(a - 1);

    // One RK4 step of the two-link dynamics over dt.
    double y[4] = {s_[0], s_[1], s_[2], s_[3]};
    double k1[4], k2[4], k3[4], k4[4], tmp[4];
    dsdt(y, torque, k1);
    for (int i = 0; i < 4; ++i) tmp[i] = y[i] + 0.5 * kDt * k1[i];
    dsdt(tmp, torque, k2);
    for (int i = 0; i < 4; ++i) tmp[i] = y[i] + 0.5 * kDt * k2[i];
    dsdt(tmp, torque, k3);
    for (int i = 0; i < 4; ++i) tmp[i] = y[i] + kDt * k3[i];
    dsdt(tmp, torque, k4);
    for (int i = 0; i < 4; ++i) {
      s_[i] = y[i] + kDt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    s_[0] = wrap(s_[0]);
    s_[1] = wrap(s_[1]);
    s_[2] = std::clamp(s_[2], -kMaxVel1, kMaxVel1);
    s_[3] = std::clamp(s_[3], -kMaxVel2, kMaxVel2);

    StepResult r;
    r.observation = obs();
    r.terminated = -std::cos(s_[0]) - std::cos(s_[1] + s_[0]) > 1.0;
    r.reward = r.terminated ? 0.0 : -1.0;
    finish_step(r);
    return r;
  }

  std::vector<std::string> action_names() const override {
    return {"NegTorque", "NoTorque", "PosTorque"};
  }

 private:
  static constexpr double kDt = 0.2;
  static constexpr double kLink1 = 1.0;
  static constexpr double kLinkMass1 = 1.0;
  static constexpr double kLinkMass2 = 1.0;
  static constexpr double kCom1 = 0.5;
  static constexpr double kCom2 = 0.5;
  static constexpr double kMoi = 1.0;
  static constexpr double kMaxVel1 = 4.0 * kPi;
  static constexpr double kMaxVel2 = 9.0 * kPi;
  static constexpr double kG = 9.8;

  static double wrap(double x) {
    while (x > kPi) x -= 2.0 * kPi;
    while (x < -kPi) x += 2.0 * kPi;
    return x;
  }

  static void dsdt(const double* s, double torque, double* out) {
    double theta1 = s[0], theta2 = s[1], dtheta1 = s[2], dtheta2 = s[3];
    double d1 = kLinkMass1 * kCom1 * kCom1 +
                kLinkMass2 * (kLink1 * kLink1 + kCom2 * kCom2 +
                              2.0 * kLink1 * kCom2 * std::cos(theta2)) +
                2.0 * kMoi;
    double d2 =
        kLinkMass2 * (kCom2 * kCom2 + kLink1 * kCom2 * std::cos(theta2)) + kMoi;
    double phi2 = kLinkMass2 * kCom2 * kG * std::cos(theta1 + theta2 - kPi / 2.0);
    double phi1 = -kLinkMass2 * kLink1 * kCom2 * dtheta2 * dtheta2 *
                      std::sin(theta2) -
                  2.0 * kLinkMass2 * kLink1 * kCom2 * dtheta2 * dtheta1 *
                      std::sin(theta2) +
                  (kLinkMass1 * kCom1 + kLinkMass2 * kLink1) * kG *
                      std::cos(theta1 - kPi / 2.0) +
                  phi2;
    // "book" variant of the accelerations
    double ddtheta2 =
        (torque + d2 / d1 * phi1 -
         kLinkMass2 * kLink1 * kCom2 * dtheta1 * dtheta1 * std::sin(theta2) -
         phi2) /
        (kLinkMass2 * kCom2 * kCom2 + kMoi - d2 * d2 / d1);
    double ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
    out[0] = dtheta1;
    out[1] = dtheta2;
    out[2] = ddtheta1;
    out[3] = ddtheta2;
  }

  std::vector<double> obs() const {
    return {std::cos(s_[0]), std::sin(s_[0]), std::cos(s_[1]),
            std::sin(s_[1]), s_[2],           s_[3]};
  }

  ActionSpace space_;
  double s_[4] = {0, 0, 0, 0};
};

// ---------------------------------------------------------------- GridWorld

// 4x4 deterministic grid: start at (0,0), terminal goal at (3,3) worth +1,
// step reward 0, moves into walls stay in place. One-hot observations.
class GridWorldEnv final : public EpisodicEnv {
 public:
  GridWorldEnv()
      : EpisodicEnv("gridworld4x4", 100), space_(ActionSpace::make_discrete(4)) {}

  int feature_dim() const override { return kStates; }
  const ActionSpace& action_space() const override { return space_; }

  std::vector<double> reset(std::uint64_t /*seed*/) override {
    state_ = 0;
    begin_episode();
    return one_hot(state_);
  }

  StepResult step(const Action& action) override {
    require_active();
    int a = discrete_action(action, space_, name());
    state_ = next_state(state_, a);
    StepResult r;
    r.observation = one_hot(state_);
    r.terminated = state_ == kGoal;
    r.reward = r.terminated ? 1.0 : 0.0;
    finish_step(r);
    return r;
  }

  std::vector<std::string> action_names() const override {
    return {"Up", "Down", "Left", "Right"};
  }

  bool is_tabular() const override { return true; }

  TabularMDP as_tabular(double gamma) const override {
    TabularMDP m = TabularMDP::zeros(kStates, 4, gamma);
    for (int s = 0; s < kStates; ++s) {
      for (int a = 0; a < 4; ++a) {
        if (s == kGoal) {
          m.P(s, a, s) = 1.0;  // absorbing, no further reward
          continue;
        }
        int s2 = next_state(s, a);
        m.P(s, a, s2) = 1.0;
        m.R(s, a, s2) = s2 == kGoal ? 1.0 : 0.0;
      }
    }
    m.mu0.assign(kStates, 0.0);
    m.mu0[0] = 1.0;
    return m;
  }

 private:
  static constexpr int kSide = 4;
  static constexpr int kStates = kSide * kSide;
  static constexpr int kGoal = kStates - 1;

  static int next_state(int s, int a) {
    int row = s / kSide, col = s % kSide;
    switch (a) {
      case 0: row = std::max(0, row - 1); break;          // up
      case 1: row = std::min(kSide - 1, row + 1); break;  // down
      case 2: col = std::max(0, col - 1); break;          // left
      case 3: col = std::min(kSide - 1, col + 1); break;  // right
      default: break;
    }
    return row * kSide + col;
  }

  static std::vector<double> one_hot(int s) {
    std::vector<double> v(kStates, 0.0);
    v[s] = 1.0;
    return v;
  }

  ActionSpace space_;
  int state_ = 0;
};

// -------------------------------------------------------------- PointMass1D

// Minimal continuous-action task for the Gaussian heads: push a point mass
// toward a goal position with bounded force.
class PointMassEnv final : public EpisodicEnv {
 public:
  PointMassEnv()
      : EpisodicEnv("pointmass1d", 100),
        space_(ActionSpace::make_continuous(1, {-1.0}, {1.0})) {}

  int feature_dim() const override { return 2; }
  const ActionSpace& action_space() const override { return space_; }

  std::vector<double> reset(std::uint64_t seed) override {
    Rng rng = Rng::fold(seed, 0xef7d8a3c);
    position_ = rng.uniform(-0.5, 0.5);
    velocity_ = 0.0;
    begin_episode();
    return {position_, velocity_};
  }

  StepResult step(const Action& action) override {
    require_active();
    const auto& f = continuous_action(action, space_, name());
    velocity_ += kTau * f[0];
    position_ += kTau * velocity_;
    StepResult r;
    r.observation = {position_, velocity_};
    r.reward = -std::abs(position_ - kGoal);
    r.terminated = false;
    finish_step(r);
    return r;
  }

 private:
  static constexpr double kTau = 0.1;
  static constexpr double kGoal = 1.0;

  ActionSpace space_;
  double position_ = 0.0;
  double velocity_ = 0.0;
};

}  // namespace

// ---------------------------------------------------------------- Env base

std::vector<std::string> Env::feature_names() const {
  std::vector<std::string> names;
  names.reserve(feature_dim());
  for (int i = 0; i < feature_dim(); ++i) names.push_back("f" + std::to_string(i));
  return names;
}

std::vector<std::string> Env::action_names() const {
  std::vector<std::string> names;
  const ActionSpace& s = action_space();
  int n = s.kind == ActionSpace::Kind::discrete ? s.n : 0;
  for (int i = 0; i < n; ++i) names.push_back("a" + std::to_string(i));
  return names;
}

TabularMDP Env::as_tabular(double /*gamma*/) const {
  throw ContractError(name() + ": as_tabular is only supported for finite-state envs");
}

// ----------------------------------------------------------------- Registry

std::unique_ptr<Env> make_env(const std::string& env_name) {
  if (env_name == "cartpole") return std::make_unique<CartPoleEnv>();
  if (env_name == "mountaincar") return std::make_unique<MountainCarEnv>();
  if (env_name == "acrobot") return std::make_unique<AcrobotEnv>();
  if (env_name == "gridworld4x4") return std::make_unique<GridWorldEnv>();
  if (env_name == "pointmass1d") return std::make_unique<PointMassEnv>();
  throw ConfigError("unknown environment: " + env_name);
}

std::vector<std::string> env_names() {
  return {"cartpole", "mountaincar", "acrobot", "gridworld4x4", "pointmass1d"};
}

// --------------------------------------------------------- ShapedMountainCar

ShapedMountainCar::ShapedMountainCar(std::unique_ptr<Env> inner, double coef)
    : inner_(std::move(inner)), coef_(coef) {
  if (inner_->name() != "mountaincar") {
    throw ContractError("shaping wrapper only applies to mountaincar");
  }
}

double ShapedMountainCar::potential(double position) const {
  return -std::abs(position - MountainCarEnv::kGoalPosition);
}

std::vector<double> ShapedMountainCar::reset(std::uint64_t seed) {
  std::vector<double> obs = inner_->reset(seed);
  prev_position_ = obs[0];
  return obs;
}

StepResult ShapedMountainCar::step(const Action& action) {
  StepResult r = inner_->step(action);
  last_task_reward_ = r.reward;
  double pos = r.observation[0];
  r.reward += coef_ * (potential(pos) - potential(prev_position_));
  prev_position_ = pos;
  return r;
}

// ----------------------------------------------------------------- Tabular

TabularMDP TabularMDP::zeros(int n_states, int n_actions, double gamma) {
  TabularMDP m;
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.gamma = gamma;
  m.p.assign(static_cast<std::size_t>(n_states) * n_actions * n_states, 0.0);
  m.r.assign(m.p.size(), 0.0);
  m.mu0.assign(n_states, 0.0);
  if (n_states > 0) m.mu0[0] = 1.0;
  return m;
}

void TabularMDP::validate(double tol) const {
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw NumericalError("TabularMDP: gamma must be in (0, 1)");
  }
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      double total = 0.0;
      for (int s2 = 0; s2 < n_states; ++s2) {
        double pr = P(s, a, s2);
        if (pr < 0.0) throw NumericalError("TabularMDP: negative probability");
        total += pr;
      }
      if (std::abs(total - 1.0) > tol) {
        throw NumericalError("TabularMDP: row (" + std::to_string(s) + "," +
                             std::to_string(a) + ") sums to " +
                             std::to_string(total));
      }
    }
  }
  double mu_total = 0.0;
  for (double m : mu0) {
    if (m < 0.0) throw NumericalError("TabularMDP: negative mu0 entry");
    mu_total += m;
  }
  if (std::abs(mu_total - 1.0) > tol) {
    throw NumericalError("TabularMDP: mu0 is not a distribution");
  }
}

std::vector<double> TabularMDP::one_hot(int s) const {
  std::vector<double> v(n_states, 0.0);
  v[s] = 1.0;
  return v;
}

}  // namespace diprl
