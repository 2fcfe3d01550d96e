#pragma once

// Tree-structured Parzen estimator over a mixed categorical / integer / real search space.
// Each dimension is modelled independently: completed trials are split at the gamma-quantile of the
// objective into a good and a bad set, densities l(x) and g(x) are fitted to each, candidates are
// drawn from l and the one with the largest l(x)/g(x) is kept.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "plrefine/errors.hpp"

namespace plrefine::hpo {

enum class DimensionKind { categorical, integer, real };

struct Dimension {
  std::string name;
  DimensionKind kind = DimensionKind::categorical;
  std::vector<nlohmann::json> choices;  // categorical only
  double low = 0, high = 0;             // integer / real bounds, inclusive
  bool log = false;                     // real only: sample uniformly in log space

  static Dimension categorical(std::string name, std::vector<nlohmann::json> choices) {
    return {std::move(name), DimensionKind::categorical, std::move(choices), 0, 0, false};
  }
  static Dimension boolean(std::string name) { return categorical(std::move(name), {false, true}); }
  static Dimension integer(std::string name, int low, int high) {
    return {std::move(name), DimensionKind::integer, {}, static_cast<double>(low), static_cast<double>(high), false};
  }
  static Dimension real(std::string name, double low, double high, bool log = false) {
    return {std::move(name), DimensionKind::real, {}, low, high, log};
  }

  /// Number of discrete values (categorical / integer).
  std::size_t cardinality() const {
    return kind == DimensionKind::categorical ? choices.size() : static_cast<std::size_t>(high - low) + 1;
  }

  void validate() const {
    if (name.empty()) throw ConfigError("search dimension without a name");
    switch (kind) {
      case DimensionKind::categorical:
        if (choices.empty()) throw ConfigError("categorical dimension '" + name + "' has no choices");
        break;
      case DimensionKind::integer:
        if (low > high || low != std::floor(low) || high != std::floor(high))
          throw ConfigError("integer dimension '" + name + "' needs integral low <= high");
        break;
      case DimensionKind::real:
        if (!(low < high)) throw ConfigError("real dimension '" + name + "' needs low < high");
        if (log && !(low > 0)) throw ConfigError("log dimension '" + name + "' needs low > 0");
        break;
    }
  }

  /// Index of a discrete value, or nullopt when it is not part of the dimension.
  std::optional<std::size_t> index_of(const nlohmann::json& v) const {
    if (kind == DimensionKind::categorical) {
      for (std::size_t i = 0; i < choices.size(); ++i)
        if (choices[i] == v) return i;
      return std::nullopt;
    }
    if (!v.is_number()) return std::nullopt;
    const double d = v.get<double>();
    if (d < low || d > high || d != std::floor(d)) return std::nullopt;
    return static_cast<std::size_t>(d - low);
  }

  nlohmann::json value_at(std::size_t index) const {
    if (kind == DimensionKind::categorical) return choices.at(index);
    return static_cast<long long>(low) + static_cast<long long>(index);
  }
};

struct SearchSpace {
  std::vector<Dimension> dims;

  void validate() const {
    if (dims.empty()) throw ConfigError("search space has no dimensions");
    for (std::size_t i = 0; i < dims.size(); ++i) {
      dims[i].validate();
      for (std::size_t j = 0; j < i; ++j)
        if (dims[j].name == dims[i].name) throw ConfigError("duplicate search dimension '" + dims[i].name + "'");
    }
  }
};

/// {"dimensions":[{"name":..,"type":"categorical|bool|int|real","choices":[..],"low":..,"high":..,"log":..}]}
inline SearchSpace space_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("dimensions") || !j["dimensions"].is_array())
    throw ConfigError("search space needs a 'dimensions' array");
  SearchSpace space;
  for (const auto& d : j["dimensions"]) {
    const auto name = d.at("name").get<std::string>();
    const auto type = d.at("type").get<std::string>();
    if (type == "categorical")
      space.dims.push_back(Dimension::categorical(name, d.at("choices").get<std::vector<nlohmann::json>>()));
    else if (type == "bool")
      space.dims.push_back(Dimension::boolean(name));
    else if (type == "int")
      space.dims.push_back(Dimension::integer(name, d.at("low").get<int>(), d.at("high").get<int>()));
    else if (type == "real")
      space.dims.push_back(Dimension::real(name, d.at("low").get<double>(), d.at("high").get<double>(), d.value("log", false)));
    else
      throw ConfigError("unknown dimension type '" + type + "'");
  }
  space.validate();
  return space;
}

inline nlohmann::json to_json(const SearchSpace& space) {
  auto dims = nlohmann::json::array();
  for (const auto& d : space.dims) {
    nlohmann::json j{{"name", d.name}};
    switch (d.kind) {
      case DimensionKind::categorical:
        if (d.choices == std::vector<nlohmann::json>{false, true}) {
          j["type"] = "bool";
        } else {
          j["type"] = "categorical";
          j["choices"] = d.choices;
        }
        break;
      case DimensionKind::integer:
        j["type"] = "int";
        j["low"] = static_cast<int>(d.low);
        j["high"] = static_cast<int>(d.high);
        break;
      case DimensionKind::real:
        j["type"] = "real";
        j["low"] = d.low;
        j["high"] = d.high;
        j["log"] = d.log;
        break;
    }
    dims.push_back(std::move(j));
  }
  return {{"dimensions", dims}};
}

/// One value per dimension name: the choice itself, an integer, or a real.
using Params = std::map<std::string, nlohmann::json>;

enum class TrialStatus { complete, failed, pruned };

inline const char* to_string(TrialStatus s) {
  switch (s) {
    case TrialStatus::complete: return "complete";
    case TrialStatus::failed: return "failed";
    case TrialStatus::pruned: return "pruned";
  }
  return "failed";
}

inline TrialStatus parse_trial_status(const std::string& s) {
  if (s == "complete") return TrialStatus::complete;
  if (s == "failed") return TrialStatus::failed;
  if (s == "pruned") return TrialStatus::pruned;
  throw ConfigError("unknown trial status '" + s + "'");
}

struct Trial {
  int trial_id = 0;
  Params params;
  std::optional<double> objective;  // present iff complete
  TrialStatus status = TrialStatus::failed;
  std::string error;
  nlohmann::json config;  // resolved configuration snapshot (may be null)
};

inline nlohmann::json to_json(const Trial& t) {
  return {{"trial_id", t.trial_id},
          {"params", nlohmann::json(t.params)},
          {"objective", t.objective ? nlohmann::json(*t.objective) : nlohmann::json()},
          {"status", to_string(t.status)},
          {"error", t.error},
          {"config", t.config}};
}

inline Trial trial_from_json(const nlohmann::json& j) {
  Trial t;
  t.trial_id = j.at("trial_id").get<int>();
  t.params = j.at("params").get<Params>();
  if (j.contains("objective") && !j["objective"].is_null()) t.objective = j["objective"].get<double>();
  t.status = parse_trial_status(j.at("status").get<std::string>());
  t.error = j.value("error", "");
  t.config = j.value("config", nlohmann::json());
  if ((t.status == TrialStatus::complete) != t.objective.has_value())
    throw ConfigError("trial " + std::to_string(t.trial_id) + ": objective must be present iff complete");
  return t;
}

/// JSON-lines history, one trial per line.
inline std::vector<Trial> load_history(const std::filesystem::path& path) {
  std::vector<Trial> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(trial_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("corrupt history line in " + path.string() + ": " + e.what());
    }
  }
  return out;
}

inline void append_history(const std::filesystem::path& path, const Trial& trial) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot append to history " + path.string());
  out << to_json(trial).dump() << '\n';
  out.flush();
}

struct TpeSettings {
  double gamma = 0.25;
  int n_startup = 10;
  int n_candidates = 24;
  bool random_only = false;  // i.i.d. uniform draws, repeats allowed, separate stream: the baseline
};

/// Plain seeded random search.
inline TpeSettings random_search_settings() {
  TpeSettings s;
  s.random_only = true;
  return s;
}

using Validity = std::function<bool(const Params&)>;

namespace detail {

inline double to_internal(const Dimension& d, double v) { return d.log ? std::log(v) : v; }
inline double from_internal(const Dimension& d, double t) { return d.log ? std::exp(t) : t; }

inline nlohmann::json sample_uniform(const Dimension& d, std::mt19937_64& rng) {
  if (d.kind != DimensionKind::real) {
    std::uniform_int_distribution<std::size_t> pick(0, d.cardinality() - 1);
    return d.value_at(pick(rng));
  }
  std::uniform_real_distribution<double> u(to_internal(d, d.low), to_internal(d, d.high));
  return std::clamp(from_internal(d, u(rng)), d.low, d.high);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Parzen mixture in internal (possibly log) space: one truncated Gaussian per observation plus one
// uniform prior component, equally weighted. Bandwidth: Scott's rule floored at 1% of the range.
class ParzenEstimator {
 public:
  // integer dimensions get half a step of padding so the end values own a full-width bin
  ParzenEstimator(const Dimension& d, std::vector<double> observations)
      : lo_(to_internal(d, d.low - (d.kind == DimensionKind::integer && !d.log ? 0.5 : 0.0))),
        hi_(to_internal(d, d.high + (d.kind == DimensionKind::integer && !d.log ? 0.5 : 0.0))) {
    for (double v : observations) mus_.push_back(to_internal(d, v));
    const double n = static_cast<double>(mus_.size());
    double sd = 0;
    if (mus_.size() >= 2) {
      double mean = 0;
      for (double m : mus_) mean += m;
      mean /= n;
      for (double m : mus_) sd += (m - mean) * (m - mean);
      sd = std::sqrt(sd / n);
    }
    const double scott = mus_.empty() ? 0.0 : 1.06 * sd * std::pow(n, -0.2);
    sigma_ = std::max(scott, 0.01 * (hi_ - lo_));
  }

  double sample(std::mt19937_64& rng) const {
    std::uniform_int_distribution<std::size_t> comp(0, mus_.size());
    const std::size_t k = comp(rng);
    if (k == mus_.size()) return std::uniform_real_distribution<double>(lo_, hi_)(rng);
    std::normal_distribution<double> noise(mus_[k], sigma_);
    for (int tries = 0; tries < 100; ++tries) {
      const double t = noise(rng);
      if (t >= lo_ && t <= hi_) return t;
    }
    return std::clamp(mus_[k], lo_, hi_);
  }

  double log_density(double t) const {
    double total = 1.0 / (hi_ - lo_);
    for (double mu : mus_) {
      const double mass = normal_cdf((hi_ - mu) / sigma_) - normal_cdf((lo_ - mu) / sigma_);
      const double z = (t - mu) / sigma_;
      total += std::exp(-0.5 * z * z) / (sigma_ * std::sqrt(2 * std::numbers::pi) * std::max(mass, 1e-300));
    }
    return std::log(total / static_cast<double>(mus_.size() + 1));
  }

 private:
  double lo_, hi_;
  double sigma_ = 1;
  std::vector<double> mus_;
};

// l(x) over the good trials and g(x) over the rest, for one dimension. Numeric dimensions, integers
// included, use Parzen mixtures so the search can move past observed values; categories use counts.
class DimensionModel {
 public:
  DimensionModel(const Dimension& d, const std::vector<const Trial*>& good, const std::vector<const Trial*>& bad)
      : dim_(&d) {
    if (d.kind != DimensionKind::categorical) {
      l_parzen_.emplace(d, observations(good));
      g_parzen_.emplace(d, observations(bad));
    } else {
      l_ = frequencies(good);
      g_ = frequencies(bad);
    }
  }

  nlohmann::json sample(std::mt19937_64& rng) const {
    if (l_parzen_) {
      const double v = std::clamp(from_internal(*dim_, l_parzen_->sample(rng)), dim_->low, dim_->high);
      if (dim_->kind == DimensionKind::integer) return static_cast<long long>(std::llround(v));
      return v;
    }
    std::discrete_distribution<std::size_t> draw(l_.begin(), l_.end());
    return dim_->value_at(draw(rng));
  }

  double log_ratio(const nlohmann::json& v) const {
    if (l_parzen_) {
      const double t = to_internal(*dim_, v.get<double>());
      return l_parzen_->log_density(t) - g_parzen_->log_density(t);
    }
    const std::size_t idx = *dim_->index_of(v);
    return std::log(l_[idx]) - std::log(g_[idx]);
  }

 private:
  // add-one smoothed category frequencies
  std::vector<double> frequencies(const std::vector<const Trial*>& trials) const {
    std::vector<double> w(dim_->cardinality(), 1.0);
    for (const Trial* t : trials) {
      auto it = t->params.find(dim_->name);
      if (it == t->params.end()) continue;
      if (auto idx = dim_->index_of(it->second)) w[*idx] += 1.0;
    }
    double total = 0;
    for (double x : w) total += x;
    for (double& x : w) x /= total;
    return w;
  }

  std::vector<double> observations(const std::vector<const Trial*>& trials) const {
    std::vector<double> v;
    for (const Trial* t : trials) {
      auto it = t->params.find(dim_->name);
      if (it != t->params.end() && it->second.is_number())
        v.push_back(std::clamp(it->second.get<double>(), dim_->low, dim_->high));
    }
    return v;
  }

  const Dimension* dim_;
  std::vector<double> l_, g_;
  std::optional<ParzenEstimator> l_parzen_, g_parzen_;
};

}  // namespace detail

inline Params sample_uniform(const SearchSpace& space, std::mt19937_64& rng) {
  Params p;
  for (const auto& d : space.dims) p[d.name] = detail::sample_uniform(d, rng);
  return p;
}

/// Every point of an all-discrete space, or nullopt when the space is continuous or larger than
/// `limit`.
inline std::optional<std::vector<Params>> enumerate_space(const SearchSpace& space, std::size_t limit = 1u << 14) {
  std::size_t total = 1;
  for (const auto& d : space.dims) {
    if (d.kind == DimensionKind::real) return std::nullopt;
    total *= d.cardinality();
    if (total > limit) return std::nullopt;
  }
  std::vector<Params> out(1);
  for (const auto& d : space.dims) {
    std::vector<Params> next;
    next.reserve(out.size() * d.cardinality());
    for (const auto& p : out)
      for (std::size_t i = 0; i < d.cardinality(); ++i) {
        Params q = p;
        q[d.name] = d.value_at(i);
        next.push_back(std::move(q));
      }
    out = std::move(next);
  }
  return out;
}

/// Next point to evaluate. Uniform until n_startup trials exist (or fewer than two completed);
/// afterwards joint candidates are drawn from l(x) and ranked by the summed log l(x)/g(x). Points
/// already in the history are not proposed again while unevaluated ones remain; once none remain
/// the best-ranked candidate is returned. Deterministic in (history, seed).
inline Params suggest(const std::vector<Trial>& history, const SearchSpace& space, std::uint64_t seed,
                      const TpeSettings& settings = {}, const Validity& valid = {}) {
  space.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(history.size()), settings.random_only ? 0x4a4du : 0x7e5u};
  std::mt19937_64 rng(seq);
  auto ok = [&](const Params& p) { return !valid || valid(p); };
  if (settings.random_only) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
      Params p = sample_uniform(space, rng);
      if (ok(p)) return p;
    }
    throw ConfigError("search space contains no valid configuration");
  }

  // keyed by canonical text: ordering std::map<string, json> through C++20 <=> is not reliable
  auto key = [](const Params& p) { return nlohmann::json(p).dump(); };
  std::set<std::string> seen;
  for (const auto& t : history) seen.insert(key(t.params));
  auto fresh = [&](const Params& p) { return !seen.count(key(p)) && ok(p); };

  std::vector<const Trial*> complete;
  for (const auto& t : history)
    if (t.status == TrialStatus::complete && t.objective) complete.push_back(&t);

  std::optional<Params> top;  // best-ranked valid candidate, repeats included
  const bool startup = static_cast<long long>(history.size()) < settings.n_startup || complete.size() < 2;
  if (!startup) {
    std::stable_sort(complete.begin(), complete.end(),
                     [](const Trial* a, const Trial* b) { return *a->objective > *b->objective; });
    const auto n = complete.size();
    const auto n_good = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(settings.gamma * static_cast<double>(n))), 1, n - 1);
    const std::vector<const Trial*> good(complete.begin(), complete.begin() + static_cast<std::ptrdiff_t>(n_good));
    const std::vector<const Trial*> bad(complete.begin() + static_cast<std::ptrdiff_t>(n_good), complete.end());
    std::vector<detail::DimensionModel> models;
    for (const auto& d : space.dims) models.emplace_back(d, good, bad);
    for (int round = 0; round < 8; ++round) {
      std::vector<std::pair<double, Params>> candidates;
      for (int c = 0; c < settings.n_candidates; ++c) {
        Params p;
        double score = 0;
        for (std::size_t k = 0; k < models.size(); ++k) {
          auto v = models[k].sample(rng);
          score += models[k].log_ratio(v);
          p[space.dims[k].name] = std::move(v);
        }
        candidates.emplace_back(score, std::move(p));
      }
      std::stable_sort(candidates.begin(), candidates.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      for (auto& [score, p] : candidates) {
        if (fresh(p)) return std::move(p);
        if (!top && ok(p)) top = p;
      }
    }
  }

  if (auto all = enumerate_space(space)) {
    std::vector<Params> open;
    for (auto& p : *all)
      if (fresh(p)) open.push_back(std::move(p));
    if (!open.empty()) return open[std::uniform_int_distribution<std::size_t>(0, open.size() - 1)(rng)];
  } else {
    for (int attempt = 0; attempt < 10000; ++attempt) {
      Params p = sample_uniform(space, rng);
      if (fresh(p)) return p;
    }
  }
  // nothing unevaluated is left
  if (top) return *top;
  for (int attempt = 0; attempt < 10000; ++attempt) {
    Params p = sample_uniform(space, rng);
    if (ok(p)) return p;
  }
  throw ConfigError("search space contains no valid configuration");
}

inline std::vector<double> best_so_far(const std::vector<Trial>& history) {
  std::vector<double> out;
  double best = std::numeric_limits<double>::quiet_NaN();
  for (const auto& t : history) {
    if (t.objective && (std::isnan(best) || *t.objective > best)) best = *t.objective;
    out.push_back(best);
  }
  return out;
}

/// Highest-objective completed trial; the earliest wins ties.
inline std::optional<Trial> best_trial(const std::vector<Trial>& history) {
  std::optional<Trial> best;
  for (const auto& t : history)
    if (t.status == TrialStatus::complete && t.objective && (!best || *t.objective > *best->objective)) best = t;
  return best;
}

/// Objective evaluation; may fill `config` with a snapshot of the resolved configuration.
using Objective = std::function<double(const Params&, nlohmann::json& config)>;

struct TuneOptions {
  int n_trials = 100;
  std::uint64_t seed = 0;
  TpeSettings tpe;
  Validity valid;
  std::filesystem::path history_path;               // appended after every trial when set
  std::function<void(const Trial&)> on_trial;       // progress hook
};

struct TuneResult {
  std::optional<Trial> best;
  std::vector<Trial> history;
};

/// Runs trials until the history holds n_trials entries. A throwing objective marks the trial
/// failed and the search continues.
inline TuneResult tune(const Objective& objective, const SearchSpace& space, const TuneOptions& options,
                       std::vector<Trial> history = {}) {
  space.validate();
  while (static_cast<int>(history.size()) < options.n_trials) {
    Trial trial;
    trial.trial_id = history.empty() ? 0 : history.back().trial_id + 1;
    trial.params = suggest(history, space, options.seed, options.tpe, options.valid);
    try {
      nlohmann::json config;
      const double value = objective(trial.params, config);
      if (!std::isfinite(value)) throw Error("objective is not finite");
      trial.objective = value;
      trial.status = TrialStatus::complete;
      trial.config = std::move(config);
    } catch (const std::exception& e) {
      trial.status = TrialStatus::failed;
      trial.error = e.what();
    }
    if (!options.history_path.empty()) append_history(options.history_path, trial);
    if (options.on_trial) options.on_trial(trial);
    history.push_back(std::move(trial));
  }
  return {best_trial(history), std::move(history)};
}

}  // namespace plrefine::hpo
