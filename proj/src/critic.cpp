#include "diprl/critic.hpp"

#include <cmath>

#include "diprl/kernels.hpp"

namespace diprl {

Critic::Critic(int feature_dim) : feature_dim_(feature_dim) {
  if (feature_dim < 1) throw ContractError("critic: feature_dim must be >= 1");
  std::size_t f = static_cast<std::size_t>(feature_dim);
  std::size_t h = kHidden;
  params_.add("l1.W", {h, f});
  params_.add("l1.b", {h});
  params_.add("l2.W", {h, h});
  params_.add("l2.b", {h});
  params_.add("out.w", {h});
  params_.add("out.b", {1});
}

Critic Critic::init(int feature_dim, Rng& rng) {
  Critic c(feature_dim);
  double s1 = 1.0 / std::sqrt(double(feature_dim));
  double s2 = 1.0 / std::sqrt(double(kHidden));
  for (double& w : c.params_.values("l1.W")) w = rng.normal(0.0, s1);
  for (double& w : c.params_.values("l2.W")) w = rng.normal(0.0, s2);
  // Small output layer so initial values sit near zero.
  for (double& w : c.params_.values("out.w")) w = rng.normal(0.0, 0.01);
  return c;
}

Critic Critic::from_params(int feature_dim, ad::ParamSet params) {
  Critic c(feature_dim);
  if (params.size() != c.params_.size()) {
    throw ContractError("critic from_params: parameter count mismatch");
  }
  c.params_.unflatten(params.flat());
  return c;
}

double Critic::value(std::span<const double> features) const {
  if (static_cast<int>(features.size()) != feature_dim_) {
    throw ContractError("critic: feature length mismatch");
  }
  const auto& k = kernels::active();
  double h1[kHidden], h2[kHidden];
  k.gemv(params_.values("l1.W").data(), kHidden, feature_dim_, features.data(), h1);
  k.add(h1, params_.values("l1.b").data(), h1, kHidden);
  for (double& v : h1) v = std::tanh(v);
  k.gemv(params_.values("l2.W").data(), kHidden, kHidden, h1, h2);
  k.add(h2, params_.values("l2.b").data(), h2, kHidden);
  for (double& v : h2) v = std::tanh(v);
  return params_.values("out.b")[0] +
         k.dot(params_.values("out.w").data(), h2, kHidden);
}

CriticGraph CriticGraph::build(ad::Tape& tape, const Critic& critic) {
  CriticGraph g;
  g.critic = &critic;
  g.bound = ad::BoundParams::bind(tape, critic.params());
  return g;
}

ad::NodeId CriticGraph::value(ad::Tape& tape,
                              std::span<const double> features) const {
  int f = critic->feature_dim();
  ad::NodeId x = tape.constant(features);
  ad::NodeId h1 = tape.tanh(tape.add(
      tape.matvec(bound.node("l1.W"), x, Critic::kHidden, f), bound.node("l1.b")));
  ad::NodeId h2 = tape.tanh(
      tape.add(tape.matvec(bound.node("l2.W"), h1, Critic::kHidden, Critic::kHidden),
               bound.node("l2.b")));
  return tape.add(tape.dot(bound.node("out.w"), h2), bound.node("out.b"));
}

}  // namespace diprl
