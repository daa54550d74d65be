#pragma once

#include <span>

#include "diprl/autodiff.hpp"
#include "diprl/rng.hpp"

namespace diprl {

// Tanh MLP value function: F -> 64 -> 64 -> 1.
class Critic {
 public:
  static constexpr int kHidden = 64;

  static Critic init(int feature_dim, Rng& rng);
  static Critic from_params(int feature_dim, ad::ParamSet params);

  int feature_dim() const { return feature_dim_; }
  const ad::ParamSet& params() const { return params_; }
  ad::ParamSet& params() { return params_; }

  double value(std::span<const double> features) const;

 private:
  explicit Critic(int feature_dim);

  int feature_dim_ = 0;
  ad::ParamSet params_;

  friend struct CriticGraph;
};

struct CriticGraph {
  const Critic* critic = nullptr;
  ad::BoundParams bound;

  static CriticGraph build(ad::Tape& tape, const Critic& critic);
  ad::NodeId value(ad::Tape& tape, std::span<const double> features) const;
};

}  // namespace diprl
