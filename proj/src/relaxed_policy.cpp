#include "diprl/relaxed_policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "diprl/kernels.hpp"

namespace diprl {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * ln(2*pi)

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

std::string pred_w(int k) { return "pred" + std::to_string(k) + ".w"; }
std::string pred_b(int k) { return "pred" + std::to_string(k) + ".b"; }
std::string head_name(int k, const char* field) {
  return "head" + std::to_string(k) + "." + field;
}

}  // namespace

RelaxedPolicy::RelaxedPolicy(const PolicyShape& shape) : shape_(shape) {
  if (shape.max_depth < 1) throw ContractError("policy: max_depth must be >= 1");
  if (shape.feature_dim < 1) throw ContractError("policy: feature_dim must be >= 1");
  if (shape.head == HeadKind::discrete && shape.n_actions < 2) {
    throw ContractError("policy: discrete head needs n_actions >= 2");
  }
  if (shape.head == HeadKind::gaussian && shape.action_dim < 1) {
    throw ContractError("policy: gaussian head needs action_dim >= 1");
  }
  std::size_t f = static_cast<std::size_t>(shape.feature_dim);
  params_.add("depth_logits", {static_cast<std::size_t>(shape.max_depth)});
  for (int k = 0; k < shape.max_depth - 1; ++k) {
    params_.add(pred_w(k), {f});
    params_.add(pred_b(k), {1});
  }
  for (int k = 0; k < shape.max_depth; ++k) {
    if (shape.head == HeadKind::discrete) {
      params_.add(head_name(k, "logits"), {static_cast<std::size_t>(shape.n_actions)});
    } else {
      params_.add(head_name(k, "W"),
                  {static_cast<std::size_t>(shape.action_dim), f});
      params_.add(head_name(k, "b"), {static_cast<std::size_t>(shape.action_dim)});
      params_.add(head_name(k, "log_std"),
                  {static_cast<std::size_t>(shape.action_dim)});
    }
  }
}

RelaxedPolicy RelaxedPolicy::init(const PolicyShape& shape, Rng& rng) {
  RelaxedPolicy p(shape);
  // Depth logits and head logits start at zero (uniform); predicate weights
  // get a small random break of symmetry.
  for (int k = 0; k < shape.max_depth - 1; ++k) {
    for (double& w : p.params_.values(pred_w(k))) w = rng.normal(0.0, 0.1);
  }
  if (shape.head == HeadKind::gaussian) {
    for (int k = 0; k < shape.max_depth; ++k) {
      for (double& w : p.params_.values(head_name(k, "W"))) {
        w = rng.normal(0.0, 0.1);
      }
      for (double& v : p.params_.values(head_name(k, "log_std"))) v = -0.5;
    }
  }
  return p;
}

RelaxedPolicy RelaxedPolicy::from_params(const PolicyShape& shape,
                                         ad::ParamSet params,
                                         std::optional<int> frozen_depth) {
  RelaxedPolicy p(shape);
  if (params.size() != p.params_.size()) {
    throw ContractError("from_params: parameter count mismatch");
  }
  p.params_.unflatten(params.flat());
  if (frozen_depth.has_value()) p.freeze_depth(*frozen_depth);
  return p;
}

void RelaxedPolicy::freeze_depth(int depth) {
  if (depth < 1 || depth > shape_.max_depth) {
    throw ContractError("freeze_depth: depth out of range");
  }
  frozen_depth_ = depth;
}

DepthDistribution RelaxedPolicy::depth_distribution() const {
  int d_m = shape_.max_depth;
  DepthDistribution out;
  out.p.assign(d_m, 0.0);
  if (frozen_depth_.has_value()) {
    out.p[*frozen_depth_ - 1] = 1.0;
    out.entropy = 0.0;
    out.normalized_entropy = 0.0;
    out.p_max = 1.0;
    out.argmax_depth = *frozen_depth_;
    out.deleted_mass = 0.0;
    return out;
  }
  std::span<const double> logits = params_.values("depth_logits");
  double m = kernels::active().max(logits.data(), logits.size());
  double z = 0.0;
  for (int i = 0; i < d_m; ++i) {
    out.p[i] = std::exp(logits[i] - m);
    z += out.p[i];
  }
  double entropy = 0.0;
  int arg = 0;
  for (int i = 0; i < d_m; ++i) {
    out.p[i] /= z;
    if (out.p[i] > 0.0) entropy -= out.p[i] * std::log(out.p[i]);
    if (out.p[i] > out.p[arg]) arg = i;
  }
  out.entropy = entropy;
  out.normalized_entropy = d_m > 1 ? entropy / std::log(double(d_m)) : 0.0;
  out.argmax_depth = arg + 1;
  out.p_max = out.p[arg];
  out.deleted_mass = 1.0 - out.p_max;
  return out;
}

std::vector<double> RelaxedPolicy::sigmoids(std::span<const double> features,
                                            GateMode mode) const {
  if (static_cast<int>(features.size()) != shape_.feature_dim) {
    throw ContractError("policy: feature length " +
                        std::to_string(features.size()) + " != " +
                        std::to_string(shape_.feature_dim));
  }
  std::vector<double> sig(shape_.max_depth - 1, 0.0);
  for (int k = 0; k < shape_.max_depth - 1; ++k) {
    std::span<const double> w = params_.values(pred_w(k));
    double phi = params_.values(pred_b(k))[0] +
                 kernels::active().dot(w.data(), features.data(), w.size());
    sig[k] = mode == GateMode::soft ? stable_sigmoid(phi) : (phi > 0.0 ? 1.0 : 0.0);
  }
  return sig;
}

std::vector<double> RelaxedPolicy::gate_weights(std::span<const double> features,
                                                int depth, GateMode mode) const {
  if (depth < 1 || depth > shape_.max_depth) {
    throw ContractError("gate_weights: depth out of range");
  }
  std::vector<double> sig = sigmoids(features, mode);
  std::vector<double> g(depth, 0.0);
  double prefix = 1.0;
  for (int k = 0; k < depth - 1; ++k) {
    g[k] = sig[k] * prefix;
    prefix *= 1.0 - sig[k];
  }
  g[depth - 1] = prefix;
  return g;
}

std::vector<double> RelaxedPolicy::leaf_weights(std::span<const double> features,
                                                GateMode mode) const {
  int d_m = shape_.max_depth;
  std::vector<double> sig = sigmoids(features, mode);
  DepthDistribution dist = depth_distribution();

  std::vector<double> lam(d_m, 0.0);
  double prefix = 1.0;
  double tail = 1.0;  // sum of p_d for depths > k
  for (int k = 0; k < d_m - 1; ++k) {
    tail -= dist.p[k];
    lam[k] = prefix * (dist.p[k] + tail * sig[k]);
    prefix *= 1.0 - sig[k];
  }
  lam[d_m - 1] = prefix * dist.p[d_m - 1];
  return lam;
}

std::vector<double> RelaxedPolicy::head_distribution(int k) const {
  if (shape_.head != HeadKind::discrete) {
    throw ContractError("head_distribution: not a discrete-head policy");
  }
  std::span<const double> logits = params_.values(head_name(k, "logits"));
  std::vector<double> p(logits.begin(), logits.end());
  double m = kernels::active().max(p.data(), p.size());
  double z = 0.0;
  for (double& v : p) {
    v = std::exp(v - m);
    z += v;
  }
  for (double& v : p) v /= z;
  return p;
}

std::vector<double> RelaxedPolicy::action_distribution(
    std::span<const double> features, GateMode mode) const {
  if (shape_.head != HeadKind::discrete) {
    throw ContractError("action_distribution: not a discrete-head policy");
  }
  std::vector<double> lam = leaf_weights(features, mode);
  std::vector<double> pi(shape_.n_actions, 0.0);
  for (int k = 0; k < shape_.max_depth; ++k) {
    if (lam[k] == 0.0) continue;
    std::vector<double> h = head_distribution(k);
    kernels::active().axpy(lam[k], h.data(), pi.data(), pi.size());
  }
  return pi;
}

std::vector<double> RelaxedPolicy::depth_action_distribution(
    std::span<const double> features, int depth, GateMode mode) const {
  if (shape_.head != HeadKind::discrete) {
    throw ContractError("depth_action_distribution: not a discrete-head policy");
  }
  std::vector<double> g = gate_weights(features, depth, mode);
  std::vector<double> pi(shape_.n_actions, 0.0);
  for (int k = 0; k < depth; ++k) {
    if (g[k] == 0.0) continue;
    std::vector<double> h = head_distribution(k);
    kernels::active().axpy(g[k], h.data(), pi.data(), pi.size());
  }
  return pi;
}

std::vector<double> RelaxedPolicy::head_mean(int k,
                                             std::span<const double> features) const {
  if (shape_.head != HeadKind::gaussian) {
    throw ContractError("head_mean: not a gaussian-head policy");
  }
  std::span<const double> w = params_.values(head_name(k, "W"));
  std::span<const double> b = params_.values(head_name(k, "b"));
  std::vector<double> mean(shape_.action_dim, 0.0);
  kernels::active().gemv(w.data(), shape_.action_dim, shape_.feature_dim,
                         features.data(), mean.data());
  kernels::active().add(mean.data(), b.data(), mean.data(), mean.size());
  return mean;
}

std::span<const double> RelaxedPolicy::head_log_std(int k) const {
  if (shape_.head != HeadKind::gaussian) {
    throw ContractError("head_log_std: not a gaussian-head policy");
  }
  return params_.values(head_name(k, "log_std"));
}

std::pair<Action, double> RelaxedPolicy::sample_action(
    std::span<const double> features, Rng& rng) const {
  if (shape_.head == HeadKind::discrete) {
    std::vector<double> pi = action_distribution(features);
    int a = rng.categorical(pi);
    double p = pi[a];
    return {Action{a}, p > 0.0 ? std::log(p) : kNegInf};
  }
  // Gaussian mixture: pick a leaf by weight, then sample its head.
  std::vector<double> lam = leaf_weights(features, GateMode::soft);
  int leaf = rng.categorical(lam);
  std::vector<double> mean = head_mean(leaf, features);
  std::span<const double> log_std = head_log_std(leaf);
  std::vector<double> a(shape_.action_dim, 0.0);
  for (int i = 0; i < shape_.action_dim; ++i) {
    a[i] = mean[i] + std::exp(log_std[i]) * rng.normal();
  }
  Action act{a};
  return {act, log_prob(features, act)};
}

double RelaxedPolicy::log_prob(std::span<const double> features,
                               const Action& action) const {
  if (shape_.head == HeadKind::discrete) {
    const int* idx = std::get_if<int>(&action);
    if (idx == nullptr) throw ContractError("log_prob: expected discrete action");
    if (*idx < 0 || *idx >= shape_.n_actions) {
      throw ContractError("log_prob: action index out of range");
    }
    std::vector<double> pi = action_distribution(features);
    return pi[*idx] > 0.0 ? std::log(pi[*idx]) : kNegInf;
  }
  const auto* a = std::get_if<std::vector<double>>(&action);
  if (a == nullptr) throw ContractError("log_prob: expected continuous action");
  if (static_cast<int>(a->size()) != shape_.action_dim) {
    throw ContractError("log_prob: action dim mismatch");
  }
  std::vector<double> lam = leaf_weights(features, GateMode::soft);
  // log sum_k lam_k N(a; mu_k, sigma_k), stabilized by the max exponent.
  std::vector<double> logpdf(shape_.max_depth, kNegInf);
  double m = kNegInf;
  for (int k = 0; k < shape_.max_depth; ++k) {
    if (lam[k] <= 0.0) continue;
    std::vector<double> mean = head_mean(k, features);
    std::span<const double> log_std = head_log_std(k);
    double lp = 0.0;
    for (int i = 0; i < shape_.action_dim; ++i) {
      double z = ((*a)[i] - mean[i]) / std::exp(log_std[i]);
      lp += -0.5 * z * z - log_std[i] - kHalfLog2Pi;
    }
    logpdf[k] = lp;
    m = std::max(m, lp);
  }
  if (m == kNegInf) return kNegInf;
  double total = 0.0;
  for (int k = 0; k < shape_.max_depth; ++k) {
    if (lam[k] <= 0.0) continue;
    total += lam[k] * std::exp(logpdf[k] - m);
  }
  return m + std::log(total);
}

Action RelaxedPolicy::greedy_action(std::span<const double> features) const {
  if (shape_.head == HeadKind::discrete) {
    std::vector<double> pi = action_distribution(features);
    int best = 0;
    for (int i = 1; i < shape_.n_actions; ++i) {
      if (pi[i] > pi[best]) best = i;
    }
    return best;
  }
  std::vector<double> lam = leaf_weights(features, GateMode::soft);
  int best = 0;
  for (int k = 1; k < shape_.max_depth; ++k) {
    if (lam[k] > lam[best]) best = k;
  }
  return head_mean(best, features);
}

// ------------------------------------------------------------- PolicyGraph

PolicyGraph PolicyGraph::build(ad::Tape& tape, const RelaxedPolicy& policy) {
  const PolicyShape& shape = policy.shape();
  PolicyGraph g;
  g.policy = &policy;
  g.bound = ad::BoundParams::bind(tape, policy.params());
  g.one = tape.constant(1.0);

  int d_m = shape.max_depth;
  if (policy.frozen_depth().has_value()) {
    std::vector<double> onehot(d_m, 0.0);
    onehot[*policy.frozen_depth() - 1] = 1.0;
    g.depth_probs = tape.constant(onehot);
    g.arch_entropy = tape.constant(0.0);
  } else {
    ad::NodeId logits = g.bound.node("depth_logits");
    g.depth_probs = tape.softmax(logits);
    ad::NodeId logp = tape.log_softmax(logits);
    g.arch_entropy = tape.neg(tape.dot(g.depth_probs, logp));
  }

  g.depth_prob.resize(d_m);
  for (int k = 0; k < d_m; ++k) g.depth_prob[k] = tape.pick(g.depth_probs, k);
  g.tail_mass.resize(d_m);
  ad::NodeId tail = tape.constant(0.0);
  g.tail_mass[d_m - 1] = tail;
  for (int k = d_m - 2; k >= 0; --k) {
    tail = tape.add(g.depth_prob[k + 1], tail);
    g.tail_mass[k] = tail;
  }

  if (shape.head == HeadKind::discrete) {
    g.head_dist.resize(d_m);
    for (int k = 0; k < d_m; ++k) {
      g.head_dist[k] =
          tape.softmax(g.bound.node("head" + std::to_string(k) + ".logits"));
    }
  }
  return g;
}

std::vector<ad::NodeId> PolicyGraph::leaf_weight_nodes(
    ad::Tape& tape, std::span<const double> features) const {
  const PolicyShape& shape = policy->shape();
  int d_m = shape.max_depth;
  ad::NodeId feats = tape.constant(features);

  std::vector<ad::NodeId> lam(d_m);
  ad::NodeId prefix = one;
  for (int k = 0; k < d_m - 1; ++k) {
    ad::NodeId w = bound.node(pred_w(k));
    ad::NodeId b = bound.node(pred_b(k));
    ad::NodeId sig = tape.sigmoid(tape.add(tape.dot(w, feats), b));
    // lam_k = prefix * (p_k + tail_k * sig_k)
    lam[k] = tape.mul(prefix, tape.add(depth_prob[k], tape.mul(tail_mass[k], sig)));
    prefix = tape.mul(prefix, tape.sub(one, sig));
  }
  lam[d_m - 1] = tape.mul(prefix, depth_prob[d_m - 1]);
  return lam;
}

ad::NodeId PolicyGraph::log_prob(ad::Tape& tape,
                                 std::span<const double> features,
                                 const Action& action) const {
  const PolicyShape& shape = policy->shape();
  int d_m = shape.max_depth;
  std::vector<ad::NodeId> lam = leaf_weight_nodes(tape, features);

  if (shape.head == HeadKind::discrete) {
    const int a = std::get<int>(action);
    ad::NodeId pi;
    for (int k = 0; k < d_m; ++k) {
      ad::NodeId term = tape.mul(lam[k], head_dist[k]);
      pi = k == 0 ? term : tape.add(pi, term);
    }
    return tape.log(tape.pick(pi, a));
  }

  // Gaussian mixture density via stabilized log-sum-exp over leaves with
  // nonzero mixture weight.
  const auto& a = std::get<std::vector<double>>(action);
  ad::NodeId act = tape.constant(a);
  ad::NodeId feats = tape.constant(features);
  ad::NodeId half = tape.constant(0.5);
  ad::NodeId norm_const =
      tape.constant(shape.action_dim * kHalfLog2Pi);

  std::vector<int> live;
  std::vector<ad::NodeId> logpdf(d_m);
  ad::NodeId max_node;
  for (int k = 0; k < d_m; ++k) {
    if (tape.value_scalar(lam[k]) <= 0.0) continue;
    ad::NodeId w = bound.node(head_name(k, "W"));
    ad::NodeId b = bound.node(head_name(k, "b"));
    ad::NodeId log_std = bound.node(head_name(k, "log_std"));
    ad::NodeId mean = tape.add(
        tape.matvec(w, feats, shape.action_dim, shape.feature_dim), b);
    ad::NodeId z = tape.div(tape.sub(act, mean), tape.exp(log_std));
    ad::NodeId quad = tape.mul(half, tape.sum(tape.square(z)));
    ad::NodeId lp = tape.neg(tape.add(tape.add(quad, tape.sum(log_std)), norm_const));
    logpdf[k] = lp;
    max_node = live.empty() ? lp : tape.max(max_node, lp);
    live.push_back(k);
  }
  ad::NodeId total;
  for (std::size_t i = 0; i < live.size(); ++i) {
    int k = live[i];
    ad::NodeId term = tape.mul(lam[k], tape.exp(tape.sub(logpdf[k], max_node)));
    total = i == 0 ? term : tape.add(total, term);
  }
  return tape.add(max_node, tape.log(total));
}

}  // namespace diprl
