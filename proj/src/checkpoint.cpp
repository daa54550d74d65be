#include "diprl/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

namespace diprl {

namespace {

using nlohmann::json;

constexpr int kVersion = 1;

json params_to_json(const ad::ParamSet& ps) {
  json out = json::object();
  for (std::size_t i = 0; i < ps.entry_count(); ++i) {
    const auto& e = ps.entry(i);
    json entry;
    entry["shape"] = e.shape;
    entry["data"] = std::vector<double>(ps.values(i).begin(), ps.values(i).end());
    out[e.name] = entry;
  }
  return out;
}

void params_from_json(const json& j, ad::ParamSet& ps) {
  for (std::size_t i = 0; i < ps.entry_count(); ++i) {
    const auto& e = ps.entry(i);
    if (!j.contains(e.name)) {
      throw ConfigError("checkpoint missing parameter '" + e.name + "'");
    }
    const json& entry = j.at(e.name);
    std::vector<std::size_t> shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape != e.shape) {
      throw ConfigError("checkpoint parameter '" + e.name + "' has wrong shape");
    }
    std::vector<double> data = entry.at("data").get<std::vector<double>>();
    if (data.size() != e.size) {
      throw ConfigError("checkpoint parameter '" + e.name + "' has wrong size");
    }
    std::copy(data.begin(), data.end(), ps.values(i).begin());
  }
}

}  // namespace

std::string checkpoint_to_json(const TrainSnapshot& snap) {
  const PolicyShape& shape = snap.policy->shape();
  json j;
  j["version"] = kVersion;
  j["kind"] = "diprl-checkpoint";
  j["step"] = snap.step;
  j["config"] = json::parse(snap.config->to_json());
  j["policy_shape"] = {
      {"max_depth", shape.max_depth},
      {"feature_dim", shape.feature_dim},
      {"head", shape.head == HeadKind::discrete ? "discrete" : "gaussian"},
      {"n_actions", shape.n_actions},
      {"action_dim", shape.action_dim}};
  if (snap.policy->frozen_depth().has_value()) {
    j["frozen_depth"] = *snap.policy->frozen_depth();
  } else {
    j["frozen_depth"] = nullptr;
  }
  j["policy_params"] = params_to_json(snap.policy->params());
  j["critic_params"] = params_to_json(snap.critic->params());
  j["dual"] = {{"beta", snap.dual->beta},
               {"target", snap.dual->target},
               {"lr", snap.dual->lr},
               {"beta_min", snap.dual->beta_min},
               {"beta_max", snap.dual->beta_max}};
  j["rng"] = {{"sample_key", snap.sample_key},
              {"sample_counter", snap.sample_counter},
              {"shuffle_key", snap.shuffle_key},
              {"shuffle_counter", snap.shuffle_counter}};
  return j.dump(2) + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("checkpoint parse error: ") + e.what());
  }
  try {
    if (!j.contains("kind") || j.at("kind").get<std::string>() != "diprl-checkpoint") {
      throw ConfigError("not a diprl checkpoint file");
    }
    if (j.at("version").get<int>() != kVersion) {
      throw ConfigError("unsupported checkpoint version " +
                        std::to_string(j.at("version").get<int>()));
    }

    TrainConfig cfg = TrainConfig::from_json(j.at("config").dump());

    const json& js = j.at("policy_shape");
    PolicyShape shape;
    shape.max_depth = js.at("max_depth").get<int>();
    shape.feature_dim = js.at("feature_dim").get<int>();
    shape.head = js.at("head").get<std::string>() == "discrete"
                     ? HeadKind::discrete
                     : HeadKind::gaussian;
    shape.n_actions = js.at("n_actions").get<int>();
    shape.action_dim = js.at("action_dim").get<int>();

    std::optional<int> frozen;
    if (j.contains("frozen_depth") && !j.at("frozen_depth").is_null()) {
      frozen = j.at("frozen_depth").get<int>();
    }

    Rng dummy(0);
    RelaxedPolicy policy = RelaxedPolicy::init(shape, dummy);
    params_from_json(j.at("policy_params"), policy.params());
    if (frozen.has_value()) policy.freeze_depth(*frozen);

    Critic critic = Critic::init(shape.feature_dim, dummy);
    params_from_json(j.at("critic_params"), critic.params());

    DualState dual;
    const json& jd = j.at("dual");
    dual.beta = jd.at("beta").get<double>();
    dual.target = jd.at("target").get<double>();
    dual.lr = jd.at("lr").get<double>();
    dual.beta_min = jd.at("beta_min").get<double>();
    dual.beta_max = jd.at("beta_max").get<double>();

    Checkpoint ck{std::move(cfg), shape,         std::move(policy),
                  std::move(critic), dual,       j.at("step").get<long>(),
                  0,                0,           0,
                  0};
    const json& jr = j.at("rng");
    ck.sample_key = jr.at("sample_key").get<std::uint64_t>();
    ck.sample_counter = jr.at("sample_counter").get<std::uint64_t>();
    ck.shuffle_key = jr.at("shuffle_key").get<std::uint64_t>();
    ck.shuffle_counter = jr.at("shuffle_counter").get<std::uint64_t>();
    return ck;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("corrupt checkpoint: ") + e.what());
  }
}

void save_checkpoint_file(const std::string& path, const TrainSnapshot& snap) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint to " + path);
  out << checkpoint_to_json(snap);
}

Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint from " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return checkpoint_from_json(text);
}

}  // namespace diprl
