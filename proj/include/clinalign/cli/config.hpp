#pragma once

// Run configuration shared by every subcommand. Values are layered:
// defaults < JSON config file < environment < command-line flags.

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "clinalign/cas_engine.hpp"
#include "clinalign/common.hpp"
#include "clinalign/datastore.hpp"
#include "clinalign/rewardlab.hpp"
#include "clinalign/rng.hpp"

namespace clinalign::cli {

inline constexpr const char* kEnvSeed = "CLINALIGN_SEED";
inline constexpr const char* kEnvOut = "CLINALIGN_OUT";
inline constexpr const char* kEnvGenerator = "CLINALIGN_GENERATOR_URL";

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline std::optional<std::string> process_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

struct RunConfig {
  std::string manifest;
  std::map<std::string, std::string> encoders;  // role name -> encoder id
  RewardWeights weights;
  std::uint64_t seed = 0;
  std::string out_dir = "clinalign-out";
  std::string generator_url;

  std::optional<std::string> encoder(Role r) const {
    if (auto it = encoders.find(std::string(to_string(r))); it != encoders.end() && !it->second.empty())
      return it->second;
    return std::nullopt;
  }

  RoleBindings roles() const {
    RoleBindings b;
    for (const auto& [role, enc] : encoders) b.bindings.push_back({parse_role(role), enc});
    return b;
  }

  // The critic may never double as an evaluator. Checked for every
  // subcommand as soon as the layers are merged.
  void check_roles() const {
    for (const auto& [role, _] : encoders) parse_role(role);
    const auto critic = encoder(Role::kTrainingCritic);
    if (!critic) return;
    if (encoder(Role::kMetricEvaluator) == critic)
      throw BindingError("encoder '" + *critic + "' is bound as both training-critic and metric-evaluator");
    if (encoder(Role::kOutOfFamilyEvaluator) == critic)
      throw BindingError("encoder '" + *critic + "' is bound as both training-critic and out-of-family-evaluator");
  }

  std::string require_encoder(Role r) const {
    auto e = encoder(r);
    if (!e) throw BindingError("no " + std::string(to_string(r)) + " encoder configured");
    return *e;
  }

  fs::path out() const { return fs::path(out_dir); }

  std::uint64_t substream(std::string_view name) const { return substream_seed(seed, name); }
};

inline RewardWeights weights_from_json(const json& j, RewardWeights w = {}) {
  w.lambda_diff = j.value("lambda_diff", w.lambda_diff);
  w.lambda_cam = j.value("lambda_cam", w.lambda_cam);
  w.w_vdc = j.value("w_vdc", w.w_vdc);
  w.w_ccs = j.value("w_ccs", w.w_ccs);
  w.w_dd = j.value("w_dd", w.w_dd);
  w.w_sfs = j.value("w_sfs", w.w_sfs);
  w.K = j.value("K", w.K);
  w.M = j.value("M", w.M);
  w.T_train = j.value("T_train", w.T_train);
  w.eta = j.value("eta", w.eta);
  return w;
}

inline json to_json(const RunConfig& c) {
  return {{"manifest", c.manifest}, {"encoders", c.encoders}, {"weights", to_json(c.weights)},
          {"seed", c.seed},         {"out_dir", c.out_dir},   {"generator_url", c.generator_url}};
}

// A run manifest is accepted as a config file too: its "config" member is
// the snapshot written by an earlier run.
inline void apply_json(RunConfig& c, const json& root) {
  const json& j = root.contains("config") && root["config"].is_object() ? root["config"] : root;
  static const std::set<std::string> known{"manifest", "encoders", "weights", "seed", "out_dir", "generator_url"};
  for (const auto& [k, _] : j.items())
    if (!known.count(k)) throw LoadError("config: unknown key '" + k + "'");
  try {
    c.manifest = j.value("manifest", c.manifest);
    if (j.contains("encoders"))
      for (const auto& [role, enc] : j["encoders"].items()) c.encoders[role] = enc.get<std::string>();
    if (j.contains("weights")) c.weights = weights_from_json(j["weights"], c.weights);
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.generator_url = j.value("generator_url", c.generator_url);
  } catch (const json::exception& e) {
    throw LoadError(std::string("config: ") + e.what());
  }
}

inline std::uint64_t parse_seed(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || s.front() == '-')
    throw LoadError(where + ": seed must be a non-negative integer, got '" + s + "'");
  return v;
}

inline void apply_env(RunConfig& c, const EnvLookup& env) {
  if (auto v = env(kEnvSeed)) c.seed = parse_seed(*v, kEnvSeed);
  if (auto v = env(kEnvOut); v && !v->empty()) c.out_dir = *v;
  if (auto v = env(kEnvGenerator); v && !v->empty()) c.generator_url = *v;
}

// Flags set on the command line; unset members leave lower layers alone.
struct FlagLayer {
  std::optional<std::string> manifest, out_dir, generator_url;
  std::optional<std::string> critic, evaluator, oof_evaluator;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda_diff, lambda_cam, w_vdc, w_ccs, w_dd, w_sfs, eta;
  std::optional<std::size_t> K, M, T_train;
};

inline void apply_flags(RunConfig& c, const FlagLayer& f) {
  if (f.manifest) c.manifest = *f.manifest;
  if (f.out_dir) c.out_dir = *f.out_dir;
  if (f.generator_url) c.generator_url = *f.generator_url;
  if (f.seed) c.seed = *f.seed;
  if (f.critic) c.encoders[std::string(to_string(Role::kTrainingCritic))] = *f.critic;
  if (f.evaluator) c.encoders[std::string(to_string(Role::kMetricEvaluator))] = *f.evaluator;
  if (f.oof_evaluator) c.encoders[std::string(to_string(Role::kOutOfFamilyEvaluator))] = *f.oof_evaluator;
  auto& w = c.weights;
  if (f.lambda_diff) w.lambda_diff = *f.lambda_diff;
  if (f.lambda_cam) w.lambda_cam = *f.lambda_cam;
  if (f.w_vdc) w.w_vdc = *f.w_vdc;
  if (f.w_ccs) w.w_ccs = *f.w_ccs;
  if (f.w_dd) w.w_dd = *f.w_dd;
  if (f.w_sfs) w.w_sfs = *f.w_sfs;
  if (f.eta) w.eta = *f.eta;
  if (f.K) w.K = *f.K;
  if (f.M) w.M = *f.M;
  if (f.T_train) w.T_train = *f.T_train;
}

inline RunConfig resolve_config(const std::optional<std::string>& config_file, const EnvLookup& env,
                                const FlagLayer& flags) {
  RunConfig c;
  if (config_file) {
    try {
      apply_json(c, json::parse(read_file(*config_file)));
    } catch (const json::exception& e) {
      throw LoadError(*config_file + ": " + e.what());
    }
  }
  apply_env(c, env);
  apply_flags(c, flags);
  c.check_roles();
  return c;
}

// ---------------------------------------------------------------------------
// Run manifest

struct RunRecord {
  std::string subcommand;
  json options = json::object();
  std::map<std::string, std::uint64_t> substreams;
  std::vector<fs::path> outputs;
};

// Written next to the outputs as <subcommand>.run.json. Holds no clock
// values, so identical runs write identical manifests.
inline fs::path write_run_manifest(const RunConfig& c, const RunRecord& r, const std::vector<std::string>& args) {
  json outs = json::array();
  for (const auto& p : r.outputs) outs.push_back(p.lexically_relative(c.out()).generic_string());
  const json m = {{"tool", "clinalign"},
                  {"version", std::string(kVersion)},
                  {"subcommand", r.subcommand},
                  {"args", args},
                  {"config", to_json(c)},
                  {"options", r.options},
                  {"seeds", {{"root", c.seed}, {"substreams", r.substreams}}},
                  {"outputs", outs}};
  const fs::path path = c.out() / (r.subcommand + ".run.json");
  write_file(path, m.dump(2) + "\n");
  return path;
}

}  // namespace clinalign::cli
