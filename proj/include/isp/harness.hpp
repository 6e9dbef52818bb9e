#pragma once

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "isp/bo.hpp"
#include "isp/env.hpp"
#include "isp/errors.hpp"
#include "isp/expert.hpp"
#include "isp/fem.hpp"
#include "isp/mesh.hpp"
#include "isp/mlp.hpp"
#include "isp/sac.hpp"

namespace isp {

using json = nlohmann::ordered_json;

/// Every tunable of a run. Field defaults are the documented defaults.
struct RunConfig {
  int version = 0;  // config.version, required
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  double mesh_side_mm = 100.0;
  int mesh_resolution = 21;
  MaterialParams material;
  SolverConfig solver;
  EnvConfig env;
  SacConfig sac;
  PlanConfig plan;
  BoConfig bo;
  ExpertConfig expert;
  int evaluate_episodes = 10;
  int rollout_steps = 30;
};

inline constexpr int kConfigVersion = 1;

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

struct Key {
  std::string name;
  std::function<bool(const std::string&)> set;
  std::function<std::string()> get;
};

inline Key int_key(std::string name, int& ref) {
  return {std::move(name), [&ref](const std::string& v) { return parse_number(v, ref); },
          [&ref] { return std::to_string(ref); }};
}

inline Key u64_key(std::string name, std::uint64_t& ref) {
  return {std::move(name), [&ref](const std::string& v) { return parse_number(v, ref); },
          [&ref] { return std::to_string(ref); }};
}

inline Key double_key(std::string name, double& ref) {
  return {std::move(name), [&ref](const std::string& v) { return parse_number(v, ref); },
          [&ref] { return format_double(ref); }};
}

inline Key bool_key(std::string name, bool& ref) {
  return {std::move(name),
          [&ref](const std::string& v) {
            if (v == "true") return ref = true, true;
            if (v == "false") return ref = false, true;
            return false;
          },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}

inline Key string_key(std::string name, std::string& ref) {
  return {std::move(name),
          [&ref](const std::string& v) {
            ref = v;
            return !v.empty();
          },
          [&ref] { return ref; }};
}

inline Key optional_double_key(std::string name, std::optional<double>& ref) {
  return {std::move(name),
          [&ref](const std::string& v) {
            if (v == "auto") {
              ref.reset();
              return true;
            }
            double d;
            if (!parse_number(v, d)) return false;
            ref = d;
            return true;
          },
          [&ref] { return ref ? format_double(*ref) : std::string("auto"); }};
}

/// Key table bound to `c`, in snapshot order.
inline std::vector<Key> config_keys(RunConfig& c) {
  return {
      int_key("config.version", c.version),
      u64_key("seed", c.seed),
      string_key("output_dir", c.output_dir),
      double_key("mesh.side_length_mm", c.mesh_side_mm),
      int_key("mesh.resolution", c.mesh_resolution),
      double_key("material.thickness_mm", c.material.thickness),
      double_key("material.density_t_per_mm2", c.material.density),
      double_key("material.rayleigh_mass", c.material.rayleigh_mass),
      double_key("material.rayleigh_stiffness", c.material.rayleigh_stiffness),
      double_key("material.spring_stiffness", c.material.spring_stiffness_ks),
      double_key("solver.dt", c.solver.dt),
      int_key("solver.substeps_per_control", c.solver.substeps_per_control),
      int_key("solver.max_cg_iterations", c.solver.max_cg_iterations),
      double_key("solver.cg_tolerance", c.solver.cg_tolerance),
      int_key("env.n_controlled", c.env.n_controlled),
      int_key("env.n_grasped", c.env.n_grasped),
      int_key("env.dimension", c.env.dimension),
      int_key("env.episode_length", c.env.episode_length),
      double_key("env.max_action_mm", c.env.max_action_per_axis),
      double_key("env.reward_lambda", c.env.reward_scale_lambda),
      double_key("env.young_min_mpa", c.env.young_min),
      double_key("env.young_max_mpa", c.env.young_max),
      double_key("env.poisson_ratio", c.env.poisson_fixed),
      double_key("env.desired_distance_mm", c.env.desired_distance),
      double_key("env.min_desired_separation_mm", c.env.min_desired_separation),
      int_key("env.augmentation_k", c.env.augmentation_k),
      double_key("sac.gamma", c.sac.gamma),
      double_key("sac.polyak_tau", c.sac.polyak_tau),
      double_key("sac.learning_rate", c.sac.learning_rate),
      int_key("sac.batch_size", c.sac.batch_size),
      int_key("sac.buffer_capacity", c.sac.buffer_capacity),
      int_key("sac.total_steps", c.sac.total_steps),
      int_key("sac.warmup_steps", c.sac.warmup_steps),
      optional_double_key("sac.target_entropy", c.sac.target_entropy),
      int_key("sac.eval_interval", c.sac.eval_interval),
      int_key("sac.eval_episodes", c.sac.eval_episodes),
      bool_key("sac.auto_temperature", c.sac.auto_temperature),
      double_key("sac.initial_alpha", c.sac.initial_alpha),
      int_key("sac.hidden_width", c.sac.hidden_width),
      int_key("plan.n_initial", c.plan.n_initial),
      int_key("plan.n_total", c.plan.n_total),
      double_key("plan.early_stop_reward", c.plan.early_stop_reward),
      int_key("plan.rollout_cap", c.plan.rollout_cap),
      int_key("plan.acquisition_starts", c.bo.acquisition_starts),
      int_key("plan.refine_iterations", c.bo.refine_iterations),
      double_key("plan.length_scale", c.bo.gp.length_scale),
      double_key("expert.step_gain", c.expert.step_gain),
      int_key("evaluate.episodes", c.evaluate_episodes),
      int_key("rollout.steps", c.rollout_steps),
  };
}

}  // namespace detail

/// Checks every section; errors are reported as configuration errors.
inline void validate_config(const RunConfig& c, const std::string& source) {
  try {
    if (c.version != kConfigVersion) {
      throw ConfigurationError("config.version must be " + std::to_string(kConfigVersion));
    }
    if (!(c.mesh_side_mm > 0.0)) throw ParameterError("mesh.side_length_mm must be > 0");
    if (c.mesh_resolution < 3) throw ParameterError("mesh.resolution must be >= 3");
    c.material.validate();
    c.solver.validate();
    c.env.validate();
    c.sac.validate();
    c.plan.validate();
    c.expert.validate();
    if (c.bo.acquisition_starts < 1 || c.bo.refine_iterations < 0) {
      throw ParameterError("plan acquisition search sizes must be positive");
    }
    if (!(c.bo.gp.length_scale > 0.0)) throw ParameterError("plan.length_scale must be > 0");
    if (c.evaluate_episodes < 1) throw ParameterError("evaluate.episodes must be >= 1");
    if (c.rollout_steps < 1) throw ParameterError("rollout.steps must be >= 1");
  } catch (const Error& e) {
    throw ConfigurationError(source + ": " + e.what());
  }
}

/// Flat "key = value" format; '#' starts a comment line. `config.version` is
/// required and unknown or repeated keys are rejected.
inline RunConfig parse_config(std::istream& in, const std::string& source) {
  RunConfig c;
  auto keys = detail::config_keys(c);
  std::map<std::string, std::size_t> index;
  for (std::size_t k = 0; k < keys.size(); ++k) index[keys[k].name] = k;
  std::map<std::string, int> seen;

  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigurationError(where + "expected 'key = value'");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    const auto it = index.find(key);
    if (it == index.end()) throw ConfigurationError(where + "unknown key '" + key + "'");
    if (auto s = seen.find(key); s != seen.end()) {
      throw ConfigurationError(where + "duplicate key '" + key + "' (first set on line " +
                               std::to_string(s->second) + ")");
    }
    seen[key] = lineno;
    if (!keys[it->second].set(value)) {
      throw ConfigurationError(where + "invalid value '" + value + "' for '" + key + "'");
    }
  }
  if (!seen.count("config.version")) {
    throw ConfigurationError(source + ": missing required key 'config.version'");
  }
  validate_config(c, source);
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError(path + ": cannot open config file");
  return parse_config(in, path);
}

/// Resolved snapshot: every key with its effective value.
inline std::string resolved_config(const RunConfig& c) {
  RunConfig copy = c;
  std::ostringstream os;
  for (const auto& k : detail::config_keys(copy)) os << k.name << " = " << k.get() << '\n';
  return os.str();
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Hash of the resolved config excluding seed and output_dir.
inline std::string config_hash(const RunConfig& c) {
  RunConfig copy = c;
  copy.seed = 0;
  copy.output_dir.clear();
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(resolved_config(copy))));
  return buf;
}

/// Hash of the settings that define the environment a policy acts in.
inline std::string env_hash(const RunConfig& c) {
  RunConfig copy = c;
  std::ostringstream os;
  for (const auto& k : detail::config_keys(copy)) {
    if (k.name.rfind("mesh.", 0) == 0 || k.name.rfind("material.", 0) == 0 ||
        k.name.rfind("solver.", 0) == 0 || k.name.rfind("env.", 0) == 0) {
      os << k.name << " = " << k.get() << '\n';
    }
  }
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(os.str())));
  return buf;
}

enum class Variant { augmented, plain };

inline Variant parse_variant(const std::string& s) {
  if (s == "augmented") return Variant::augmented;
  if (s == "plain") return Variant::plain;
  throw ConfigurationError("variant must be 'augmented' or 'plain', got '" + s + "'");
}

inline const char* variant_name(Variant v) { return v == Variant::augmented ? "augmented" : "plain"; }

/// K for the chosen variant: the configured value when augmented, 1 when plain.
inline RunConfig with_variant(RunConfig c, Variant v) {
  if (v == Variant::plain) c.env.augmentation_k = 1;
  return c;
}

inline std::shared_ptr<const TissueMesh> build_mesh(const RunConfig& c) {
  return std::make_shared<const TissueMesh>(build_square_mesh(c.mesh_side_mm, c.mesh_resolution));
}

inline IspEnv make_env(const RunConfig& c, std::shared_ptr<const TissueMesh> mesh) {
  return IspEnv(std::move(mesh), c.material, c.solver, c.env);
}

struct OutputDir {
  std::filesystem::path root;

  explicit OutputDir(const std::string& dir) : root(dir) { std::filesystem::create_directories(root); }

  std::ofstream open(const std::string& name, bool binary = false) const {
    std::ofstream os(root / name, binary ? std::ios::binary : std::ios::out);
    if (!os) throw Error("cannot write " + (root / name).string());
    return os;
  }
};

inline void write_snapshot(const OutputDir& out, const RunConfig& c) {
  auto os = out.open("config.resolved");
  os << "# config_hash=" << config_hash(c) << " seed=" << c.seed << '\n' << resolved_config(c);
}

inline std::string output_banner(const RunConfig& c) {
  return "# config_hash=" + config_hash(c) + " seed=" + std::to_string(c.seed) + "\n";
}

/// Writes policy.bin (weights) and policy.json (manifest) into `out`.
inline void save_policy(const OutputDir& out, const Policy& policy, const RunConfig& c) {
  {
    auto os = out.open("policy.bin", true);
    write_checkpoint(os, policy.actor);
  }
  json m;
  m["format"] = "ISPMLP01";
  m["config_hash"] = config_hash(c);
  m["seed"] = c.seed;
  m["env_hash"] = env_hash(c);
  m["observation_dim"] = policy.observation_dim();
  m["action_dim"] = policy.action_dim();
  m["augmentation_k"] = c.env.augmentation_k;
  m["action_scale"] = policy.action_scale;
  m["observation_scale"] = std::vector<double>(policy.observation_scale.data(),
                                               policy.observation_scale.data() +
                                                   policy.observation_scale.size());
  m["widths"] = policy.actor.widths;
  json idx = json::array();
  for (const auto& e : index_map(policy.actor)) {
    idx.push_back({{"name", e.name}, {"offset", e.offset}, {"rows", e.rows}, {"cols", e.cols}});
  }
  m["index_map"] = idx;
  auto os = out.open("policy.json");
  os << m.dump(2) << '\n';
}

struct LoadedPolicy {
  Policy policy;
  int augmentation_k = 1;
};

/// Loads `path` (policy.bin) and its manifest (same stem, .json).
inline LoadedPolicy load_policy(const std::string& path) {
  std::ifstream bin(path, std::ios::binary);
  if (!bin) throw ConfigurationError(path + ": cannot open checkpoint");
  std::filesystem::path mp(path);
  mp.replace_extension(".json");
  std::ifstream mf(mp);
  if (!mf) throw ConfigurationError(mp.string() + ": cannot open checkpoint manifest");
  json m;
  try {
    m = json::parse(mf);
  } catch (const json::exception& e) {
    throw ConfigurationError(mp.string() + ": " + e.what());
  }
  LoadedPolicy lp;
  lp.policy.actor = read_checkpoint(bin);
  try {
    lp.augmentation_k = m.at("augmentation_k").get<int>();
    lp.policy.action_scale = m.at("action_scale").get<double>();
    const auto scale = m.at("observation_scale").get<std::vector<double>>();
    lp.policy.observation_scale = Eigen::Map<const VectorXd>(scale.data(), static_cast<Eigen::Index>(scale.size()));
    if (m.at("observation_dim").get<int>() != lp.policy.observation_dim() ||
        m.at("action_dim").get<int>() != lp.policy.action_dim() ||
        lp.policy.observation_scale.size() != lp.policy.observation_dim()) {
      throw ConfigurationError(mp.string() + ": manifest does not match checkpoint shapes");
    }
  } catch (const json::exception& e) {
    throw ConfigurationError(mp.string() + ": " + e.what());
  }
  return lp;
}

/// Either the expert or a checkpointed policy, with the K it expects.
struct PolicySource {
  std::string label;
  PolicyFn act;
  std::optional<int> augmentation_k;
};

inline PolicyFn policy_fn(const Policy& p) {
  return [p](const IspEnv&, const Observation& obs) {
    Rng unused(0);
    return sample_action(p, obs.flat(), unused, true).action;
  };
}

inline PolicyFn expert_fn(const ExpertConfig& cfg) {
  return [cfg](const IspEnv& env, const Observation&) { return expert_action(env, cfg); };
}

inline PolicySource resolve_policy(const std::string& spec, const RunConfig& c) {
  if (spec == "expert") return {"expert", expert_fn(c.expert), std::nullopt};
  LoadedPolicy lp = load_policy(spec);
  return {spec, policy_fn(lp.policy), lp.augmentation_k};
}

/// Adopts the policy's K and checks dimensions against the environment.
inline RunConfig config_for_policy(RunConfig c, const PolicySource& src) {
  if (src.augmentation_k) c.env.augmentation_k = *src.augmentation_k;
  validate_config(c, "config");
  return c;
}

struct CommandResult {
  std::vector<std::string> files;
};

// ---- train -----------------------------------------------------------------

inline void write_curve(std::ostream& os, const RunConfig& c, Variant v,
                        const std::vector<CurvePoint>& curve) {
  os << output_banner(c) << "step,mean_return,std_return,seed,variant\n";
  for (const auto& p : curve) {
    os << p.step << ',' << detail::format_double(p.mean_return) << ','
       << detail::format_double(p.std_return) << ',' << c.seed << ',' << variant_name(v) << '\n';
  }
}

inline TrainResult cmd_train(const RunConfig& base, Variant variant, const std::string& out_dir,
                             const std::function<void(const CurvePoint&)>& progress = {}) {
  const RunConfig c = with_variant(base, variant);
  validate_config(c, "config");
  const auto mesh = build_mesh(c);
  const AgentDims dims = agent_dims(c.env);
  TrainResult r = train([&] { return make_env(c, mesh); }, dims, c.sac, c.seed,
                        [&](const CurvePoint& p, const Policy&) {
                          if (progress) progress(p);
                        });
  if (!r.stats.losses_finite) throw NumericalError("train: non-finite loss or return");
  OutputDir out(out_dir);
  write_snapshot(out, c);
  {
    auto os = out.open("learning_curve.csv");
    write_curve(os, c, variant, r.curve);
  }
  save_policy(out, r.policy, c);
  return r;
}

// ---- spec files --------------------------------------------------------------

inline std::vector<Vec2> read_points(const json& j, const std::string& key, const std::string& path) {
  std::vector<Vec2> pts;
  try {
    for (const auto& p : j.at(key)) {
      if (p.size() != 2) throw ConfigurationError(path + ": '" + key + "' entries must be [x, y]");
      pts.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    }
  } catch (const json::exception& e) {
    throw ConfigurationError(path + ": " + e.what());
  }
  return pts;
}

/// Spec file (JSON, mm): controlled_points, desired_positions, optional
/// young_modulus (MPa) and grasp_points. Points are snapped to mesh nodes.
struct SpecFile {
  EpisodeSpec spec;
  std::vector<Vec2> controlled_points;
  std::vector<Vec2> grasp_points;
};

inline SpecFile load_spec_file(const std::string& path, const TissueMesh& mesh, const RunConfig& c) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError(path + ": cannot open spec file");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigurationError(path + ": " + e.what());
  }
  SpecFile sf;
  sf.controlled_points = read_points(j, "controlled_points", path);
  sf.spec.desired_positions = read_points(j, "desired_positions", path);
  if (static_cast<int>(sf.controlled_points.size()) != c.env.n_controlled ||
      sf.spec.desired_positions.size() != sf.controlled_points.size()) {
    throw ConfigurationError(path + ": expected " + std::to_string(c.env.n_controlled) +
                             " controlled points and desired positions");
  }
  sf.spec.young_modulus_drawn =
      j.contains("young_modulus") ? j["young_modulus"].get<double>()
                                  : 0.5 * (c.env.young_min + c.env.young_max);
  for (const Vec2& p : sf.controlled_points) sf.spec.controlled_nodes.push_back(nearest_node(mesh, p));
  if (j.contains("grasp_points")) {
    sf.grasp_points = read_points(j, "grasp_points", path);
    for (const Vec2& p : sf.grasp_points) sf.spec.grasp_nodes.push_back(nearest_node(mesh, p));
  } else {
    // Mid-edge grasps; the planner replaces them.
    sf.spec.grasp_nodes = {candidate_at(mesh, Side::left, 0.5), candidate_at(mesh, Side::right, 0.5)};
  }
  validate_spec(sf.spec, mesh, c.env);
  return sf;
}

inline json points_json(const std::vector<Vec2>& pts) {
  json a = json::array();
  for (const Vec2& p : pts) a.push_back({p.x(), p.y()});
  return a;
}

inline json spec_json(const EpisodeSpec& s, const TissueMesh& mesh) {
  std::vector<Vec2> cp;
  for (NodeIndex n : s.controlled_nodes) cp.push_back(mesh.node_positions[n]);
  std::vector<Vec2> gp;
  for (NodeIndex n : s.grasp_nodes) gp.push_back(mesh.node_positions[n]);
  return {{"controlled_nodes", s.controlled_nodes},
          {"controlled_points", points_json(cp)},
          {"desired_positions", points_json(s.desired_positions)},
          {"grasp_nodes", s.grasp_nodes},
          {"grasp_points", points_json(gp)},
          {"young_modulus", s.young_modulus_drawn}};
}

// ---- evaluate ----------------------------------------------------------------

inline json cmd_evaluate(const RunConfig& base, const std::string& policy_spec,
                         const std::string& out_dir) {
  const PolicySource src = resolve_policy(policy_spec, base);
  const RunConfig c = config_for_policy(base, src);
  const auto mesh = build_mesh(c);
  IspEnv env = make_env(c, mesh);
  Rng rng(derive_seed(c.seed, 31));

  json episodes = json::array();
  std::vector<double> returns;
  for (int ep = 0; ep < c.evaluate_episodes; ++ep) {
    Observation obs = env.reset(rng);
    const EpisodeSpec spec = env.spec();
    const double initial_error = env.error_norm();
    double ret = 0.0;
    int steps = 0;
    bool diverged = false;
    for (;;) {
      StepResult r = env.step(src.act(env, obs));
      ret += r.reward;
      ++steps;
      diverged = diverged || r.diverged;
      obs = std::move(r.observation);
      if (r.done) break;
    }
    returns.push_back(ret);
    episodes.push_back({{"episode", ep},
                        {"spec", spec_json(spec, *mesh)},
                        {"return", ret},
                        {"steps", steps},
                        {"diverged", diverged},
                        {"initial_error_mm", initial_error},
                        {"final_error_mm", env.error_norm()}});
  }
  double mean = 0.0;
  for (double r : returns) mean += r;
  mean /= static_cast<double>(returns.size());
  double var = 0.0;
  for (double r : returns) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / static_cast<double>(returns.size()));

  json report;
  report["config_hash"] = config_hash(c);
  report["seed"] = c.seed;
  report["policy"] = src.label;
  report["augmentation_k"] = c.env.augmentation_k;
  report["mean_return"] = mean;
  report["std_return"] = sd;
  report["episodes"] = episodes;
  OutputDir out(out_dir);
  write_snapshot(out, c);
  auto os = out.open("evaluation.json");
  os << report.dump(2) << '\n';
  return report;
}

// ---- plan --------------------------------------------------------------------

inline json plan_json(const PlanResult& r, const TissueMesh& mesh, const RunConfig& c,
                      const SpecFile& sf, bool include_wall_time) {
  json log = json::array();
  for (std::size_t i = 0; i < r.evaluation_log.size(); ++i) {
    const auto& e = r.evaluation_log[i];
    const auto [l, rn] = grasp_pair(mesh, e.point);
    json row = {{"index", i},
                {"proposed", {e.proposed[0], e.proposed[1]}},
                {"parameters", {e.point[0], e.point[1]}},
                {"grasp_nodes", {l, rn}},
                {"objective_mm", e.result.objective},
                {"rollout_steps", e.result.steps},
                {"early_stopped", e.result.converged},
                {"diverged", e.result.diverged},
                {"source", e.from_acquisition ? "acquisition" : "initial"}};
    if (!e.result.error.empty()) row["error"] = e.result.error;
    log.push_back(row);
  }
  json j;
  j["config_hash"] = config_hash(c);
  j["seed"] = c.seed;
  j["spec"] = spec_json(sf.spec, mesh);
  j["requested_controlled_points"] = points_json(sf.controlled_points);
  j["best_parameters"] = {r.best_parameters[0], r.best_parameters[1]};
  j["best_grasp_nodes"] = {r.best_grasp_nodes.first, r.best_grasp_nodes.second};
  j["best_grasp_points"] = points_json({mesh.node_positions[r.best_grasp_nodes.first],
                                        mesh.node_positions[r.best_grasp_nodes.second]});
  j["best_objective_mm"] = r.best_objective;
  j["evaluations"] = r.evaluation_log.size();
  j["evaluation_log"] = log;
  if (include_wall_time) j["wall_time_s"] = r.wall_time;
  return j;
}

inline PlanResult cmd_plan(const RunConfig& base, const std::string& policy_spec,
                           const std::string& spec_path, const std::string& out_dir,
                           bool include_wall_time = false) {
  const PolicySource src = resolve_policy(policy_spec, base);
  const RunConfig c = config_for_policy(base, src);
  const auto mesh = build_mesh(c);
  const SpecFile sf = load_spec_file(spec_path, *mesh, c);
  IspEnv env = make_env(c, mesh);
  PlanResult r = plan(sf.spec, src.act, env, c.plan, c.seed, c.bo);
  OutputDir out(out_dir);
  write_snapshot(out, c);
  auto os = out.open("plan.json");
  os << plan_json(r, *mesh, c, sf, include_wall_time).dump(2) << '\n';
  return r;
}

// ---- rollout -----------------------------------------------------------------

inline void cmd_rollout(const RunConfig& base, const std::string& policy_spec,
                        const std::string& spec_path, int steps, const std::string& out_dir) {
  const PolicySource src = resolve_policy(policy_spec, base);
  RunConfig c = config_for_policy(base, src);
  if (steps < 1) throw ConfigurationError("rollout: steps must be >= 1");
  c.env.episode_length = std::max(c.env.episode_length, steps);
  const auto mesh = build_mesh(c);
  const SpecFile sf = load_spec_file(spec_path, *mesh, c);
  IspEnv env = make_env(c, mesh);
  Rng unused(0);
  Observation obs = env.reset(unused, &sf.spec);

  OutputDir out(out_dir);
  write_snapshot(out, c);
  auto os = out.open("trace.csv");
  os << output_banner(c);
  TraceWriter trace(os, c.env.n_controlled, c.env.n_grasped);
  trace.row(0, 0.0, env, SolverSummary{});
  for (int t = 1; t <= steps; ++t) {
    StepResult r = env.step(src.act(env, obs));
    trace.row(t, r.reward, env, r.solver);
    obs = std::move(r.observation);
    if (r.done) break;
  }
}

// ---- mesh-export -------------------------------------------------------------

inline void cmd_mesh_export(const RunConfig& c, const std::string& out_dir) {
  const auto mesh = build_mesh(c);
  OutputDir out(out_dir);
  write_snapshot(out, c);
  auto os = out.open("mesh.txt");
  os << output_banner(c);
  write_mesh_text(os, *mesh);
}

/// Exit codes of the command-line driver.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

/// Maps an exception to the driver's exit code.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigurationError*>(&e) || dynamic_cast<const ParameterError*>(&e) ||
      dynamic_cast<const OutOfDomainError*>(&e) || dynamic_cast<const ShapeError*>(&e) ||
      dynamic_cast<const DegenerateEpisode*>(&e)) {
    return kExitConfig;
  }
  return kExitRuntime;
}

}  // namespace isp
