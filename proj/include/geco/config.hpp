#pragma once

// Run configuration: flat `key = value` text, one key per line, `#` comments.
// Unknown keys, duplicates and malformed values are errors that name the line.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "geco/checkpoint.hpp"
#include "geco/errors.hpp"
#include "geco/inference.hpp"
#include "geco/ood.hpp"
#include "geco/oracle.hpp"
#include "geco/tasks.hpp"
#include "geco/trainer.hpp"

namespace geco {

struct EvalConfig {
  int id_episodes = 500;
  int ood_episodes = 500;
  int plans_per_episode = 20;
  double target_tpr = 0.9;
  int rf_steps = 20;
  int ood_k_max = 10;  // GeCO budget during OOD evaluation
  std::vector<int> budgets{5, 10, 20, 30};

  void validate() const {
    if (id_episodes < 0 || ood_episodes < 0) throw ConfigError("episode counts must be >= 0");
    if (plans_per_episode < 1) throw ConfigError("eval.plans_per_episode must be >= 1");
    if (!(target_tpr >= 0.0 && target_tpr <= 1.0))
      throw ConfigError("eval.target_tpr must lie in [0, 1]");
    if (rf_steps < 1) throw ConfigError("eval.rf_steps must be >= 1");
    if (ood_k_max < 1) throw ConfigError("eval.ood_k_max must be >= 1");
    if (budgets.empty()) throw ConfigError("eval.budgets must list at least one budget");
    for (int b : budgets)
      if (b < 1) throw ConfigError("eval.budgets entries must be >= 1");
  }
};

struct OracleCheckConfig {
  QuadratureConfig quad;
  int points = 500;

  void validate() const {
    quad.validate();
    if (points < 1) throw ConfigError("oracle.points must be >= 1");
  }
};

struct RunConfig {
  MixtureTaskSpec task;
  int goals = 2000;
  TrainConfig train;
  InferConfig infer;
  FilterConfig filter;
  Protocol protocol;
  EvalConfig eval;
  OracleCheckConfig oracle;
  std::string output_dir = "runs";

  void validate() const {
    task.validate();
    if (goals < 1) throw ConfigError("data.goals must be >= 1");
    train.validate();
    infer.validate();
    filter.validate();
    protocol_for(protocol).validate();
    eval.validate();
    oracle.validate();
    if (output_dir.empty()) throw ConfigError("output.dir must not be empty");
  }

  Protocol protocol_for(Protocol p) const {
    p.horizon = task.horizon;
    p.exec_count = task.exec_count;
    return p;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string format_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class T>
T parse_number(const std::string& v) {
  T out{};
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("'" + v + "' is not a valid number");
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Get>
Field int_field(Get at) {
  return {[at](RunConfig& c, const std::string& v) { *at(c) = parse_number<int>(v); },
          [at](const RunConfig& c) { return std::to_string(*at(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Field real_field(Get at) {
  return {[at](RunConfig& c, const std::string& v) { *at(c) = parse_number<double>(v); },
          [at](const RunConfig& c) { return format_real(*at(const_cast<RunConfig&>(c))); }};
}

inline std::string format_steps(const StepSizeTable& t) {
  std::string out;
  for (const StepRange& r : t.ranges) {
    if (!out.empty()) out += ", ";
    out += std::to_string(r.first) + "-" + std::to_string(r.last) + ":" + format_real(r.eta);
  }
  return out;
}

/// "1-1:0.1, 2-4:0.05, ..." (a single step may be written "1:0.1").
inline StepSizeTable parse_steps(const std::string& v) {
  StepSizeTable t;
  for (const std::string& item : split_list(v)) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("step range '" + item + "' lacks ':eta'");
    const std::string range = trim(item.substr(0, colon));
    const auto dash = range.find('-');
    StepRange r;
    r.first = parse_number<int>(trim(range.substr(0, dash)));
    r.last = dash == std::string::npos ? r.first : parse_number<int>(trim(range.substr(dash + 1)));
    r.eta = parse_number<double>(trim(item.substr(colon + 1)));
    t.ranges.push_back(r);
  }
  return t;
}

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    f["task.horizon"] = int_field([](RunConfig& c) { return &c.task.horizon; });
    f["task.modes"] = int_field([](RunConfig& c) { return &c.task.modes; });
    f["task.exec_count"] = int_field([](RunConfig& c) { return &c.task.exec_count; });
    f["task.progress_samples"] = int_field([](RunConfig& c) { return &c.task.progress_samples; });
    f["task.detour"] = real_field([](RunConfig& c) { return &c.task.detour; });
    f["task.id_inner"] = real_field([](RunConfig& c) { return &c.task.id_inner; });
    f["task.id_outer"] = real_field([](RunConfig& c) { return &c.task.id_outer; });
    f["task.ood_inner"] = real_field([](RunConfig& c) { return &c.task.ood_inner; });
    f["task.ood_outer"] = real_field([](RunConfig& c) { return &c.task.ood_outer; });
    f["data.goals"] = int_field([](RunConfig& c) { return &c.goals; });

    f["train.steps"] = int_field([](RunConfig& c) { return &c.train.steps; });
    f["train.batch_size"] = int_field([](RunConfig& c) { return &c.train.batch_size; });
    f["train.log_every"] = int_field([](RunConfig& c) { return &c.train.log_every; });
    f["train.lr"] = real_field([](RunConfig& c) { return &c.train.adam.lr; });
    f["train.gamma_power"] = real_field([](RunConfig& c) { return &c.train.gamma_power; });
    f["train.beta1"] = real_field([](RunConfig& c) { return &c.train.adam.beta1; });
    f["train.beta2"] = real_field([](RunConfig& c) { return &c.train.adam.beta2; });
    f["train.eps"] = real_field([](RunConfig& c) { return &c.train.adam.eps; });
    f["train.head"] = {[](RunConfig& c, const std::string& v) {
                         if (v == "geco") c.train.head = Head::geco;
                         else if (v == "rectified_flow") c.train.head = Head::rectified_flow;
                         else throw ConfigError("train.head must be geco or rectified_flow");
                       },
                       [](const RunConfig& c) { return std::string(to_string(c.train.head)); }};
    f["train.hidden"] = {[](RunConfig& c, const std::string& v) {
                           c.train.hidden_dims.clear();
                           for (const std::string& w : split_list(v)) {
                             const int n = parse_number<int>(w);
                             if (n < 1) throw ConfigError("hidden widths must be >= 1");
                             c.train.hidden_dims.push_back(static_cast<std::size_t>(n));
                           }
                         },
                         [](const RunConfig& c) {
                           std::string out;
                           for (std::size_t w : c.train.hidden_dims)
                             out += (out.empty() ? "" : ", ") + std::to_string(w);
                           return out;
                         }};
    f["train.activation"] = {[](RunConfig& c, const std::string& v) {
                               if (v == "tanh") c.train.activation = Activation::tanh;
                               else if (v == "softplus") c.train.activation = Activation::softplus;
                               else throw ConfigError("train.activation must be tanh or softplus");
                             },
                             [](const RunConfig& c) {
                               return std::string(c.train.activation == Activation::tanh
                                                      ? "tanh"
                                                      : "softplus");
                             }};
    f["schedule.scale"] = real_field([](RunConfig& c) { return &c.train.decay.scale; });
    f["schedule.onset"] = real_field([](RunConfig& c) { return &c.train.decay.onset; });

    f["infer.k_max"] = int_field([](RunConfig& c) { return &c.infer.k_max; });
    f["infer.tolerance"] = real_field([](RunConfig& c) { return &c.infer.tolerance; });
    f["infer.steps"] = {[](RunConfig& c, const std::string& v) { c.infer.steps = parse_steps(v); },
                        [](const RunConfig& c) { return format_steps(c.infer.steps); }};

    f["filter.window"] = int_field([](RunConfig& c) { return &c.filter.window; });
    f["filter.ma_threshold"] = real_field([](RunConfig& c) { return &c.filter.ma_threshold; });
    f["filter.leak"] = real_field([](RunConfig& c) { return &c.filter.leak; });
    f["filter.bucket_threshold"] =
        real_field([](RunConfig& c) { return &c.filter.bucket_threshold; });
    f["filter.trigger"] = real_field([](RunConfig& c) { return &c.filter.trigger; });

    f["episode.total_steps"] = int_field([](RunConfig& c) { return &c.protocol.total_steps; });
    f["episode.success_tol"] = real_field([](RunConfig& c) { return &c.protocol.success_tol; });
    f["episode.max_action"] = real_field([](RunConfig& c) { return &c.protocol.max_action; });

    f["eval.id_episodes"] = int_field([](RunConfig& c) { return &c.eval.id_episodes; });
    f["eval.ood_episodes"] = int_field([](RunConfig& c) { return &c.eval.ood_episodes; });
    f["eval.plans_per_episode"] = int_field([](RunConfig& c) { return &c.eval.plans_per_episode; });
    f["eval.target_tpr"] = real_field([](RunConfig& c) { return &c.eval.target_tpr; });
    f["eval.rf_steps"] = int_field([](RunConfig& c) { return &c.eval.rf_steps; });
    f["eval.ood_k_max"] = int_field([](RunConfig& c) { return &c.eval.ood_k_max; });
    f["eval.budgets"] = {[](RunConfig& c, const std::string& v) {
                           c.eval.budgets.clear();
                           for (const std::string& b : split_list(v))
                             c.eval.budgets.push_back(parse_number<int>(b));
                         },
                         [](const RunConfig& c) {
                           std::string out;
                           for (int b : c.eval.budgets)
                             out += (out.empty() ? "" : ", ") + std::to_string(b);
                           return out;
                         }};

    f["oracle.nodes"] = int_field([](RunConfig& c) { return &c.oracle.quad.nodes; });
    f["oracle.points"] = int_field([](RunConfig& c) { return &c.oracle.points; });
    f["output.dir"] = {[](RunConfig& c, const std::string& v) { c.output_dir = v; },
                       [](const RunConfig& c) { return c.output_dir; }};
    return f;
  }();
  return table;
}

}  // namespace detail

/// A parsed configuration: values plus the master seed (required).
struct LoadedConfig {
  RunConfig run;
  std::uint64_t seed = 0;
};

inline const char* kRequiredKeys[] = {"seed"};

/// Parses config text. `origin` prefixes diagnostics ("file:line: ...").
inline LoadedConfig parse_config(std::string_view text, const std::string& origin = "config") {
  LoadedConfig out;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = detail::trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected 'key = value'");
    const std::string key = detail::trim(std::string_view(line).substr(0, eq));
    const std::string value = detail::trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) fail("missing key before '='");
    if (value.empty()) fail("missing value for '" + key + "'");
    if (!seen.insert(key).second) fail("duplicate key '" + key + "'");
    try {
      if (key == "seed") {
        out.seed = detail::parse_number<std::uint64_t>(value);
        continue;
      }
      const auto& table = detail::fields();
      auto it = table.find(key);
      if (it == table.end()) fail("unknown key '" + key + "'");
      it->second.set(out.run, value);
    } catch (const ConfigError& e) {
      if (std::string_view(e.what()).starts_with(origin + ":")) throw;
      fail(key + ": " + e.what());
    }
  }
  for (const char* req : kRequiredKeys)
    if (!seen.count(req))
      throw ConfigError(origin + ": missing required key '" + std::string(req) + "'");
  try {
    out.run.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return out;
}

inline LoadedConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

/// Canonical text of every setting except the seed, one `key = value` per
/// line in key order. Parsing it back yields the same configuration.
inline std::string resolved_settings(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : detail::fields()) out += key + " = " + field.get(cfg) + "\n";
  return out;
}

inline std::string resolved_config(const LoadedConfig& cfg) {
  return resolved_settings(cfg.run) + "seed = " + std::to_string(cfg.seed) + "\n";
}

/// Hash of the settings that determine results (output location excluded).
inline std::string config_hash(const RunConfig& cfg) {
  RunConfig copy = cfg;
  copy.output_dir = "-";
  return hex64(fnv1a64(resolved_settings(copy)));
}

}  // namespace geco
