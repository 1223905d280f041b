#pragma once

#include <boost/math/distributions/students_t.hpp>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dynnet/acceptance.hpp"
#include "dynnet/diagnostics.hpp"
#include "dynnet/duality.hpp"
#include "dynnet/engine.hpp"
#include "dynnet/theory.hpp"

#ifndef DYNNET_VERSION
#define DYNNET_VERSION "0.0.0"
#endif

namespace dynnet::harness {

using json = nlohmann::json;

enum ExitCode : int { kOk = 0, kValidationFailure = 1, kBadConfig = 2, kIoError = 3 };

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

// ---------------------------------------------------------------------------------------
// Configuration

enum class Experiment { Simulate, Sweep, Phase, Diagnose, Theory, Validate };

inline std::string_view to_string(Experiment e) {
  switch (e) {
    case Experiment::Simulate: return "simulate";
    case Experiment::Sweep: return "sweep";
    case Experiment::Phase: return "phase";
    case Experiment::Diagnose: return "diagnose";
    case Experiment::Theory: return "theory";
    case Experiment::Validate: return "validate";
  }
  return "?";
}

inline Experiment experiment_from_string(std::string_view s) {
  for (auto e : {Experiment::Simulate, Experiment::Sweep, Experiment::Phase, Experiment::Diagnose, Experiment::Theory,
                 Experiment::Validate})
    if (to_string(e) == s) return e;
  throw ConfigError("unknown experiment: " + std::string(s));
}

/// Every run is a pure function of (config, seed); output_dir and jobs never change results.
struct ExperimentConfig {
  Experiment experiment = Experiment::Simulate;
  ModelParams model = [] {
    ModelParams m;
    m.N = 100;
    m.lambda = 0.5;
    return m;
  }();
  std::uint64_t reps = 100;
  double t_max = 10.0;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  double sample_interval = 0.5;
  std::uint64_t jobs = 1;
  bool trajectories = true;  // per-replica CSVs for simulate

  // sweep
  std::vector<double> lambdas;
  std::vector<double> probe_times{50.0, 100.0, 200.0};
  std::string sweep_mode = "theory";  // theory | simulation
  double star_r = 1.0;

  // phase
  KernelKind phase_kernel = KernelKind::Factor;
  std::vector<double> taus, etas;

  // diagnose / theory
  std::vector<double> a_values{0.1, 0.01, 0.001};
  double score_exponent = 0.4;
  int path_length = 5;

  // validate
  std::vector<int> only;
};

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.contains(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

/// A grid is an explicit list or {"min","max","count"[,"log"]}.
inline std::vector<double> parse_grid(const json& j, const std::string& name) {
  if (j.is_array()) return j.get<std::vector<double>>();
  if (j.is_number()) return {j.get<double>()};
  check_keys(j, {"min", "max", "count", "log"}, name);
  const double lo = j.at("min").get<double>(), hi = j.at("max").get<double>();
  const int n = j.at("count").get<int>();
  const bool log = j.value("log", false);
  if (n < 1) throw ConfigError(name + ".count must be >= 1");
  if (log && !(lo > 0.0 && hi > 0.0)) throw ConfigError(name + ": log grid needs positive bounds");
  std::vector<double> out;
  for (int k = 0; k < n; ++k) {
    const double f = n == 1 ? 0.0 : static_cast<double>(k) / (n - 1);
    out.push_back(log ? std::exp(std::log(lo) + f * (std::log(hi) - std::log(lo))) : lo + f * (hi - lo));
  }
  return out;
}

}  // namespace detail

inline json model_to_json(const ModelParams& m) {
  return {{"N", m.N},
          {"kernel", std::string(to_string(m.kernel.kind))},
          {"beta", m.kernel.beta},
          {"gamma", m.kernel.gamma},
          {"eta", m.eta},
          {"varkappa", m.varkappa},
          {"lambda", m.lambda},
          {"update_rule", std::string(to_string(m.update_rule))}};
}

inline ModelParams model_from_json(const json& j, ModelParams m) {
  detail::check_keys(j, {"N", "kernel", "beta", "gamma", "tau", "eta", "varkappa", "lambda", "update_rule"}, "model");
  if (j.contains("gamma") && j.contains("tau")) throw ConfigError("model: give gamma or tau, not both");
  if (j.contains("N")) m.N = j.at("N").get<std::int64_t>();
  if (j.contains("kernel")) m.kernel.kind = kernel_kind_from_string(j.at("kernel").get<std::string>());
  if (j.contains("beta")) m.kernel.beta = j.at("beta").get<double>();
  if (j.contains("gamma")) m.kernel.gamma = j.at("gamma").get<double>();
  if (j.contains("tau")) m.kernel.gamma = gamma_from_tau(j.at("tau").get<double>());
  if (j.contains("eta")) m.eta = j.at("eta").get<double>();
  if (j.contains("varkappa")) m.varkappa = j.at("varkappa").get<double>();
  if (j.contains("lambda")) m.lambda = j.at("lambda").get<double>();
  if (j.contains("update_rule")) m.update_rule = update_rule_from_string(j.at("update_rule").get<std::string>());
  return m;
}

inline json to_json(const ExperimentConfig& c) {
  return {{"experiment", std::string(to_string(c.experiment))},
          {"model", model_to_json(c.model)},
          {"reps", c.reps},
          {"t_max", c.t_max},
          {"seed", c.seed},
          {"sample_interval", c.sample_interval},
          {"trajectories", c.trajectories},
          {"sweep", {{"lambdas", c.lambdas}, {"probe_times", c.probe_times}, {"mode", c.sweep_mode}, {"star_r", c.star_r}}},
          {"phase", {{"kernel", std::string(to_string(c.phase_kernel))}, {"tau", c.taus}, {"eta", c.etas}}},
          {"diagnose", {{"a", c.a_values}, {"score_exponent", c.score_exponent}, {"path_length", c.path_length}}},
          {"validate", {{"only", c.only}}}};
}

/// Parses a config document; absent fields keep their defaults. Raises ConfigError on any
/// unknown key, wrong type or out-of-range value.
inline ExperimentConfig config_from_json(const json& j, ExperimentConfig c = {}) {
  try {
    detail::check_keys(j,
                       {"experiment", "model", "reps", "t_max", "seed", "output_dir", "sample_interval", "jobs",
                        "trajectories", "sweep", "phase", "diagnose", "validate"},
                       "config");
    if (j.contains("experiment")) c.experiment = experiment_from_string(j.at("experiment").get<std::string>());
    if (j.contains("model")) c.model = model_from_json(j.at("model"), c.model);
    if (j.contains("reps")) c.reps = j.at("reps").get<std::uint64_t>();
    if (j.contains("t_max")) c.t_max = j.at("t_max").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("sample_interval")) c.sample_interval = j.at("sample_interval").get<double>();
    if (j.contains("jobs")) c.jobs = j.at("jobs").get<std::uint64_t>();
    if (j.contains("trajectories")) c.trajectories = j.at("trajectories").get<bool>();
    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      detail::check_keys(s, {"lambdas", "probe_times", "mode", "star_r"}, "sweep");
      if (s.contains("lambdas")) c.lambdas = detail::parse_grid(s.at("lambdas"), "sweep.lambdas");
      if (s.contains("probe_times")) c.probe_times = detail::parse_grid(s.at("probe_times"), "sweep.probe_times");
      if (s.contains("mode")) c.sweep_mode = s.at("mode").get<std::string>();
      if (s.contains("star_r")) c.star_r = s.at("star_r").get<double>();
    }
    if (j.contains("phase")) {
      const auto& p = j.at("phase");
      detail::check_keys(p, {"kernel", "tau", "eta"}, "phase");
      if (p.contains("kernel")) c.phase_kernel = kernel_kind_from_string(p.at("kernel").get<std::string>());
      if (p.contains("tau")) c.taus = detail::parse_grid(p.at("tau"), "phase.tau");
      if (p.contains("eta")) c.etas = detail::parse_grid(p.at("eta"), "phase.eta");
    }
    if (j.contains("diagnose")) {
      const auto& d = j.at("diagnose");
      detail::check_keys(d, {"a", "score_exponent", "path_length"}, "diagnose");
      if (d.contains("a")) c.a_values = detail::parse_grid(d.at("a"), "diagnose.a");
      if (d.contains("score_exponent")) c.score_exponent = d.at("score_exponent").get<double>();
      if (d.contains("path_length")) c.path_length = d.at("path_length").get<int>();
    }
    if (j.contains("validate")) {
      const auto& v = j.at("validate");
      detail::check_keys(v, {"only"}, "validate");
      if (v.contains("only")) c.only = v.at("only").get<std::vector<int>>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

/// Range checks shared by every experiment.
inline void validate_config(const ExperimentConfig& c) {
  try {
    c.model.validate();
  } catch (const DomainError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  if (!(c.t_max >= 0.0)) throw ConfigError("t_max must be non-negative");
  if (!(c.sample_interval > 0.0)) throw ConfigError("sample_interval must be positive");
  if (c.jobs < 1) throw ConfigError("jobs must be >= 1");
  if (c.sweep_mode != "theory" && c.sweep_mode != "simulation") throw ConfigError("sweep.mode must be theory or simulation");
  for (int id : c.only)
    if (id < 1 || id > static_cast<int>(acceptance::criteria().size())) throw ConfigError("validate.only: no such check");
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return config_from_json(j, std::move(base));
}

// ---------------------------------------------------------------------------------------
// Output directory and manifest

/// Writes result files under one directory and records each of them for the manifest.
class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path root) : root_(std::move(root)) {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    if (ec || !std::filesystem::is_directory(root_)) throw IoError("cannot create output directory: " + root_.string());
  }

  [[nodiscard]] const std::filesystem::path& root() const { return root_; }

  void write(const std::string& rel, const std::string& content) {
    const auto path = root_ / rel;
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << content) || !out.flush()) throw IoError("cannot write " + path.string());
    std::lock_guard lock(mu_);
    files_.push_back({rel, content.size(), fnv1a(content)});
  }

  /// Manifest of every file written so far; it does not list itself.
  void write_manifest(const ExperimentConfig& cfg, const std::string& config_text, double wall_seconds,
                      const std::string& started_utc) {
    std::vector<File> files = files_;
    std::sort(files.begin(), files.end(), [](const File& a, const File& b) { return a.path < b.path; });
    json f = json::array();
    for (const auto& x : files) f.push_back({{"path", x.path}, {"bytes", x.bytes}, {"fnv1a", hex64(x.hash)}});
    const json m{{"experiment", std::string(to_string(cfg.experiment))},
                 {"config_file", "config.json"},
                 {"config_hash", hex64(fnv1a(config_text))},
                 {"seed", cfg.seed},
                 {"code_version", DYNNET_VERSION},
                 {"started_utc", started_utc},
                 {"wall_seconds", wall_seconds},
                 {"jobs", cfg.jobs},
                 {"files", f}};
    const auto path = root_ / "manifest.json";
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << m.dump(2) << '\n') || !out.flush()) throw IoError("cannot write " + path.string());
  }

 private:
  struct File {
    std::string path;
    std::size_t bytes;
    std::uint64_t hash;
  };
  std::filesystem::path root_;
  std::vector<File> files_;
  std::mutex mu_;
};

// ---------------------------------------------------------------------------------------
// Worker pool

/// Evaluates f(0..n-1) on up to `jobs` threads; results come back in index order, so the
/// thread count never changes the output. The first exception is rethrown.
template <class F>
auto parallel_map(std::size_t n, std::size_t jobs, F f) -> std::vector<decltype(f(std::size_t{}))> {
  using R = decltype(f(std::size_t{}));
  std::vector<std::optional<R>> slots(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        slots[i].emplace(f(i));
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!err) err = std::current_exception();
        next.store(n);
      }
    }
  };
  const std::size_t k = std::max<std::size_t>(1, std::min(jobs, n));
  if (k == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < k; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (err) std::rethrow_exception(err);
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---------------------------------------------------------------------------------------
// SVG

namespace svg {

inline std::string color(const theory::PhaseResult& r) {
  if (r.verdict == theory::Verdict::FastExtinction) return "#9ecae1";
  if (r.verdict == theory::Verdict::BoundaryUnknown || !r.strategy) return "#bdbdbd";
  switch (*r.strategy) {
    case theory::Strategy::QuickDirect: return "#8c510a";    // brown
    case theory::Strategy::QuickIndirect: return "#f6e05e";  // yellow
    case theory::Strategy::LocalSurvival: return "#1b5e20";  // dark green
  }
  return "#000000";
}

/// Heat map of the classifier over a tau x eta grid, self-contained.
inline std::string phase_map(KernelKind kind, std::span<const double> taus, std::span<const double> etas) {
  const double W = 640, H = 480, L = 70, R = 170, T = 30, B = 60;
  const double pw = W - L - R, ph = H - T - B;
  const double cw = pw / static_cast<double>(taus.size()), ch = ph / static_cast<double>(etas.size());
  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << L << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">metastable phases, " << to_string(kind)
     << " kernel</text>\n";
  for (std::size_t i = 0; i < taus.size(); ++i)
    for (std::size_t j = 0; j < etas.size(); ++j) {
      const auto r = theory::classify_phase(kind, taus[i], etas[j]);
      os << "<rect x=\"" << L + static_cast<double>(i) * cw << "\" y=\"" << T + ph - static_cast<double>(j + 1) * ch
         << "\" width=\"" << cw << "\" height=\"" << ch << "\" fill=\"" << color(r) << "\"/>\n";
    }
  os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  auto label = [&](double x, double y, const std::string& s, const char* anchor) {
    os << "<text x=\"" << x << "\" y=\"" << y << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"" << anchor
       << "\">" << s << "</text>\n";
  };
  label(L, T + ph + 16, format_double(taus.front()), "start");
  label(L + pw, T + ph + 16, format_double(taus.back()), "end");
  label(L + pw / 2, T + ph + 36, "tau", "middle");
  label(L - 6, T + ph, format_double(etas.front()), "end");
  label(L - 6, T + 10, format_double(etas.back()), "end");
  label(L - 40, T + ph / 2, "eta", "middle");
  const std::pair<const char*, const char*> legend[] = {{"#8c510a", "quick direct"},
                                                        {"#f6e05e", "quick indirect"},
                                                        {"#1b5e20", "local survival"},
                                                        {"#9ecae1", "fast extinction"},
                                                        {"#bdbdbd", "boundary / unknown"}};
  double y = T + 10;
  for (const auto& [c, name] : legend) {
    os << "<rect x=\"" << L + pw + 15 << "\" y=\"" << y << "\" width=\"14\" height=\"14\" fill=\"" << c
       << "\" stroke=\"black\"/>\n";
    label(L + pw + 35, y + 11, name, "start");
    y += 22;
  }
  os << "</svg>\n";
  return os.str();
}

/// Log-log scatter of (x, y) with an optional fitted line, base-10 decade ticks.
inline std::string loglog(std::span<const double> x, std::span<const double> y, const std::string& title,
                          const std::string& xlabel, const std::string& ylabel, std::optional<LinearFit> fit) {
  const double W = 560, H = 420, L = 80, R = 20, T = 30, B = 60;
  const double pw = W - L - R, ph = H - T - B;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0 && y[i] > 0.0)) continue;
    x0 = std::min(x0, std::log10(x[i]));
    x1 = std::max(x1, std::log10(x[i]));
    y0 = std::min(y0, std::log10(y[i]));
    y1 = std::max(y1, std::log10(y[i]));
  }
  if (!(x1 >= x0)) x0 = x1 = y0 = y1 = 0.0;
  x0 = std::floor(x0);
  x1 = std::max(std::ceil(x1), x0 + 1);
  y0 = std::floor(y0);
  y1 = std::max(std::ceil(y1), y0 + 1);
  auto px = [&](double lx) { return L + (lx - x0) / (x1 - x0) * pw; };
  auto py = [&](double ly) { return T + ph - (ly - y0) / (y1 - y0) * ph; };
  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << L << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double d = x0; d <= x1 + 1e-9; d += 1.0)
    os << "<line x1=\"" << px(d) << "\" y1=\"" << T + ph << "\" x2=\"" << px(d) << "\" y2=\"" << T + ph + 5
       << "\" stroke=\"black\"/>\n<text x=\"" << px(d) << "\" y=\"" << T + ph + 18
       << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">1e" << d << "</text>\n";
  for (double d = y0; d <= y1 + 1e-9; d += 1.0)
    os << "<line x1=\"" << L - 5 << "\" y1=\"" << py(d) << "\" x2=\"" << L << "\" y2=\"" << py(d)
       << "\" stroke=\"black\"/>\n<text x=\"" << L - 8 << "\" y=\"" << py(d) + 4
       << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">1e" << d << "</text>\n";
  os << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 15
     << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">" << xlabel << "</text>\n";
  os << "<text x=\"15\" y=\"" << T + ph / 2 << "\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 15 "
     << T + ph / 2 << ")\" text-anchor=\"middle\">" << ylabel << "</text>\n";
  if (fit) {
    auto fy = [&](double lx) { return (fit->intercept + fit->slope * lx * std::log(10.0)) / std::log(10.0); };
    os << "<line x1=\"" << px(x0) << "\" y1=\"" << py(fy(x0)) << "\" x2=\"" << px(x1) << "\" y2=\"" << py(fy(x1))
       << "\" stroke=\"#999999\" stroke-dasharray=\"4 3\"/>\n";
  }
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] > 0.0 && y[i] > 0.0)
      os << "<circle cx=\"" << px(std::log10(x[i])) << "\" cy=\"" << py(std::log10(y[i]))
         << "\" r=\"4\" fill=\"#2166ac\"/>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace svg

// ---------------------------------------------------------------------------------------
// Commands

namespace detail {

inline std::string csv_num(double x) { return format_double(x); }

inline json estimate_json(double mean, double se) { return {{"mean", mean}, {"stderr", se}}; }

inline std::string replica_name(std::uint64_t r) {
  std::ostringstream os;
  os << "trajectories/rep_" << std::setw(6) << std::setfill('0') << r << ".csv";
  return os.str();
}

}  // namespace detail

/// Replica runs from full occupancy: per-replica series CSVs and summary.json with the
/// censored mean of T_ext and the mean infected fraction at every sampling time.
inline int cmd_simulate(const ExperimentConfig& cfg, OutputDir& out) {
  const Simulator sim(cfg.model);
  const auto n = static_cast<Vertex>(cfg.model.N);
  const auto init = all_vertices(n);
  const auto grid = static_cast<std::size_t>(std::floor(cfg.t_max / cfg.sample_interval + 1e-9)) + 1;
  struct Rep {
    std::optional<double> t_ext;
    std::vector<double> density;
    std::string csv;
  };
  const auto reps = parallel_map(cfg.reps, cfg.jobs, [&](std::size_t r) {
    EngineOptions opt;
    opt.sample_interval = cfg.sample_interval;
    const auto ts = sim.run_until(init, cfg.t_max, cfg.seed, r, opt);
    Rep out;
    out.t_ext = ts.extinction_time;
    out.density.assign(grid, 0.0);
    for (const auto& p : ts.series) {
      const double k = p.time / cfg.sample_interval;
      const auto ki = static_cast<std::size_t>(std::llround(k));
      if (std::abs(k - static_cast<double>(ki)) < 1e-9 && ki < grid)
        out.density[ki] = static_cast<double>(p.infected) / static_cast<double>(n);
    }
    if (cfg.trajectories) {
      std::ostringstream os;
      ts.write_csv(os);
      out.csv = os.str();
    }
    return out;
  });
  Accumulator text;
  std::uint64_t censored = 0;
  std::vector<Accumulator> dens(grid);
  for (std::size_t r = 0; r < reps.size(); ++r) {
    if (cfg.trajectories) out.write(detail::replica_name(r), reps[r].csv);
    if (!reps[r].t_ext) ++censored;
    text.add(reps[r].t_ext.value_or(cfg.t_max));
    for (std::size_t k = 0; k < grid; ++k) dens[k].add(reps[r].density[k]);
  }
  json series = json::array();
  std::ostringstream csv;
  csv << "time,mean_density,stderr\n";
  if (!reps.empty())
    for (std::size_t k = 0; k < grid; ++k) {
      const double t = static_cast<double>(k) * cfg.sample_interval;
      series.push_back({{"time", t}, {"mean", dens[k].mean()}, {"stderr", dens[k].stderr_mean()}});
      csv << detail::csv_num(t) << ',' << detail::csv_num(dens[k].mean()) << ',' << detail::csv_num(dens[k].stderr_mean())
          << '\n';
    }
  json summary{{"reps", cfg.reps},
               {"t_max", cfg.t_max},
               {"censored", censored},
               {"censored_fraction", reps.empty() ? 0.0 : static_cast<double>(censored) / static_cast<double>(reps.size())},
               {"density_series", series}};
  summary["T_ext"] = reps.empty() ? json(nullptr) : detail::estimate_json(text.mean(), text.stderr_mean());
  out.write("density.csv", csv.str());
  out.write("summary.json", summary.dump(2) + "\n");
  return kOk;
}

/// Star regime and lower-bound shape matching the strategy the classifier picks.
inline std::pair<StarRegime, LowerBoundStrategy> regime_for(KernelKind kind, theory::Strategy s, double eta) {
  switch (s) {
    case theory::Strategy::QuickDirect:
      return {kind == KernelKind::Weak ? StarRegime::QuickDirectWeak : StarRegime::QuickDirectFactor,
              LowerBoundStrategy::Quick};
    case theory::Strategy::QuickIndirect: return {StarRegime::QuickIndirect, LowerBoundStrategy::Quick};
    case theory::Strategy::LocalSurvival:
      return {eta > 0.0 ? StarRegime::LocalSurvivalPos : StarRegime::LocalSurvivalNonpos, LowerBoundStrategy::Local};
  }
  throw ConfigError("unknown strategy");
}

/// Slope of log density against log lambda with a 95% interval, next to the predicted exponent.
inline int cmd_sweep(const ExperimentConfig& cfg, OutputDir& out) {
  if (cfg.lambdas.size() < 3) throw ConfigError("sweep needs at least 3 lambda values");
  for (double l : cfg.lambdas)
    if (!(l > 0.0)) throw ConfigError("sweep lambdas must be positive");
  const auto& m = cfg.model;
  const auto phase = theory::classify_phase(m.kernel.kind, m.tau(), m.eta);
  std::vector<double> dens(cfg.lambdas.size()), se(cfg.lambdas.size(), 0.0);
  if (cfg.sweep_mode == "theory") {
    if (!phase.strategy) throw ConfigError("theory sweep needs a point in the slow phase");
    try {
      const auto [regime, shape] = regime_for(m.kernel.kind, *phase.strategy, m.eta);
      for (std::size_t i = 0; i < cfg.lambdas.size(); ++i) {
        const double lam = cfg.lambdas[i];
        dens[i] = lower_bound_density(m.kernel, lam, star_scale(m.kernel.kind, regime, lam, cfg.star_r, m.kernel.gamma, m.eta),
                                      shape);
      }
    } catch (const DomainError& e) {
      throw ConfigError(std::string("sweep: ") + e.what());
    }
  } else {
    const auto res = parallel_map(cfg.lambdas.size(), cfg.jobs, [&](std::size_t i) {
      auto mi = m;
      mi.lambda = cfg.lambdas[i];
      const Simulator sim(mi);
      return metastability_probe(sim, cfg.probe_times, std::max<std::uint64_t>(cfg.reps, 2), cfg.seed);
    });
    for (std::size_t i = 0; i < res.size(); ++i) {
      double s2 = 0.0;
      for (std::size_t k = 0; k < res[i].times.size(); ++k) {
        dens[i] += res[i].densities[k];
        s2 += res[i].stderr_[k] * res[i].stderr_[k];
      }
      const auto kk = static_cast<double>(res[i].times.size());
      dens[i] /= kk;
      se[i] = std::sqrt(s2) / kk;
    }
  }
  std::ostringstream csv;
  csv << "lambda,density,stderr\n";
  for (std::size_t i = 0; i < dens.size(); ++i)
    csv << detail::csv_num(cfg.lambdas[i]) << ',' << detail::csv_num(dens[i]) << ',' << detail::csv_num(se[i]) << '\n';
  out.write("sweep.csv", csv.str());
  json report{{"mode", cfg.sweep_mode}, {"lambdas", cfg.lambdas}, {"densities", dens}, {"stderr", se}};
  report["xi"] = phase.xi ? json(*phase.xi) : json(nullptr);
  report["verdict"] = std::string(theory::to_string(phase.verdict));
  std::optional<LinearFit> fit;
  if (std::all_of(dens.begin(), dens.end(), [](double d) { return d > 0.0; })) {
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < dens.size(); ++i) {
      lx.push_back(std::log(cfg.lambdas[i]));
      ly.push_back(std::log(dens[i]));
    }
    fit = fit_line(lx, ly);
    const double q = boost::math::quantile(boost::math::students_t(static_cast<double>(dens.size() - 2)), 0.975);
    report["slope"] = fit->slope;
    report["slope_ci95"] = {fit->slope - q * fit->slope_stderr, fit->slope + q * fit->slope_stderr};
    report["r2"] = fit->r2;
  } else {
    report["slope"] = nullptr;
    report["note"] = "a density is zero; no log-log fit";
  }
  out.write("sweep.json", report.dump(2) + "\n");
  out.write("sweep.svg", svg::loglog(cfg.lambdas, dens, "metastable density vs lambda", "lambda", "density", fit));
  return kOk;
}

inline int cmd_phase(const ExperimentConfig& cfg, OutputDir& out) {
  auto taus = cfg.taus, etas = cfg.etas;
  if (taus.empty()) taus = detail::parse_grid(json{{"min", 2.1}, {"max", 4.0}, {"count", 50}}, "tau");
  if (etas.empty()) etas = detail::parse_grid(json{{"min", -1.0}, {"max", 1.0}, {"count", 50}}, "eta");
  for (double t : taus)
    if (!(t > 2.0)) throw ConfigError("phase: tau values must exceed 2");
  std::ostringstream csv;
  theory::write_phase_csv(csv, cfg.phase_kernel, taus, etas);
  out.write("phase.csv", csv.str());
  out.write("phase.svg", svg::phase_map(cfg.phase_kernel, taus, etas));
  return kOk;
}

/// Survival-strategy condition values and supermartingale certificates over the a grid.
inline int cmd_diagnose(const ExperimentConfig& cfg, OutputDir& out) {
  const auto& m = cfg.model;
  std::ostringstream csv;
  csv << "a,quick_direct,quick_indirect,local,local_margin,direct_holds,indirect_holds,local_holds,"
         "cond1_margin,cond2_margin,certificate\n";
  json rows = json::array();
  for (double a : cfg.a_values) {
    ConditionValues c;
    try {
      c = condition_values(m, a);
    } catch (const DomainError& e) {
      throw ConfigError(std::string("diagnose: ") + e.what());
    }
    const auto s = theory::ScoringFunction::monomial(cfg.score_exponent, a);
    const auto chk = theory::check_supermartingale_conditions(m, a, s);
    csv << detail::csv_num(a) << ',' << detail::csv_num(c.quick_direct) << ',' << detail::csv_num(c.quick_indirect) << ','
        << detail::csv_num(c.local) << ',' << detail::csv_num(c.local_margin) << ',' << c.direct_holds << ','
        << c.indirect_holds << ',' << c.local_holds << ',' << detail::csv_num(chk.cond1_margin) << ','
        << detail::csv_num(chk.cond2_margin) << ',' << chk.pass() << '\n';
    rows.push_back({{"a", a},
                    {"quick_direct", c.quick_direct},
                    {"quick_indirect", c.quick_indirect},
                    {"local", c.local},
                    {"local_margin", c.local_margin},
                    {"certificate", chk.pass()}});
  }
  out.write("diagnose.csv", csv.str());
  out.write("diagnose.json", json{{"model", model_to_json(m)}, {"score_exponent", cfg.score_exponent}, {"rows", rows}}.dump(2) + "\n");
  return kOk;
}

/// Closed-form theory at the configured point: phase, certified upper exponent, path
/// integrals with their bounds, static bound terms and the fast-extinction certificate.
inline int cmd_theory(const ExperimentConfig& cfg, OutputDir& out) {
  using namespace theory;
  const auto& m = cfg.model;
  const auto& k = m.kernel;
  json rep{{"model", model_to_json(m)}, {"tau", m.tau()}};
  const auto ph = classify_phase(k.kind, m.tau(), m.eta);
  rep["phase"] = {{"verdict", std::string(to_string(ph.verdict))},
                  {"xi", ph.xi ? json(*ph.xi) : json(nullptr)},
                  {"strategy", ph.strategy ? json(std::string(to_string(*ph.strategy))) : json(nullptr)}};
  try {
    const auto up = supermartingale_exponent(k.kind, m.tau(), m.eta);
    rep["upper_exponent"] = {{"form", std::string(to_string(up.form))},
                             {"exponent", up.exponent ? json(*up.exponent) : json(nullptr)},
                             {"log_power", up.log_power}};
  } catch (const DomainError& e) {
    rep["upper_exponent"] = {{"error", e.what()}};
  }
  std::ostringstream csv;
  csv << "a,l,F1,F1_bound,F2,F2_bound\n";
  json statics = json::array();
  for (double a : cfg.a_values) {
    if (!(a > 0.0 && a < 1.0)) throw ConfigError("theory: a values must lie in (0,1)");
    const auto fs = f_series(k, a, cfg.path_length);
    for (int l = 1; l <= cfg.path_length; ++l) {
      const auto i = static_cast<std::size_t>(l - 1);
      csv << detail::csv_num(a) << ',' << l << ',' << detail::csv_num(fs.f1[i]) << ','
          << detail::csv_num(f_bound(k, a, l, FMode::F1).value) << ',' << detail::csv_num(fs.f2[i]) << ','
          << detail::csv_num(f_bound(k, a, l, FMode::F2).value) << '\n';
    }
    const auto sb = general_static_bound(k, m.lambda, a, cfg.path_length, m.varkappa);
    statics.push_back({{"a", a}, {"total", sb.total}, {"floor_term", sb.floor_term}, {"lambda_term", sb.lambda_term},
                       {"path_terms", sb.path_terms}, {"long_path_term", sb.long_path_term}, {"warnings", sb.warnings}});
  }
  rep["static_bound"] = statics;
  if (m.eta >= 0.0) {
    const auto s = ScoringFunction::monomial(cfg.score_exponent);
    const auto chk = check_supermartingale_conditions(m, 0.0, s);
    json fe{{"score_exponent", cfg.score_exponent}, {"cond1_margin", chk.cond1_margin}, {"cond2_margin", chk.cond2_margin},
            {"certificate", chk.pass()}};
    if (chk.pass()) fe["T_ext_bound"] = fast_extinction_time_bound(m.varkappa, s, static_cast<double>(m.N));
    rep["fast_extinction"] = fe;
  }
  out.write("f_integrals.csv", csv.str());
  out.write("theory.json", rep.dump(2) + "\n");
  return kOk;
}

inline int cmd_validate(const ExperimentConfig& cfg, OutputDir& out, std::ostream& log) {
  const auto results = acceptance::run(cfg.only, cfg.seed, log);
  json checks = json::array();
  bool all = true;
  for (const auto& r : results) {
    all = all && r.pass;
    checks.push_back({{"id", r.id}, {"name", r.name}, {"pass", r.pass}, {"detail", r.detail}, {"seconds", r.seconds}});
  }
  out.write("validate.json", json{{"seed", cfg.seed}, {"all_passed", all}, {"checks", checks}}.dump(2) + "\n");
  return all ? kOk : kValidationFailure;
}

inline std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// Runs one experiment end to end: stores the effective config, dispatches, writes the
/// manifest. Returns the process exit code.
inline int run_experiment(const ExperimentConfig& cfg, std::ostream& log, std::ostream& err) {
  try {
    validate_config(cfg);
  } catch (const ConfigError& e) {
    err << "bad config: " << e.what() << '\n';
    return kBadConfig;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const std::string started = utc_now();
  try {
    OutputDir out(cfg.output_dir);
    const std::string config_text = to_json(cfg).dump(2) + "\n";
    out.write("config.json", config_text);
    int code = kOk;
    switch (cfg.experiment) {
      case Experiment::Simulate: code = cmd_simulate(cfg, out); break;
      case Experiment::Sweep: code = cmd_sweep(cfg, out); break;
      case Experiment::Phase: code = cmd_phase(cfg, out); break;
      case Experiment::Diagnose: code = cmd_diagnose(cfg, out); break;
      case Experiment::Theory: code = cmd_theory(cfg, out); break;
      case Experiment::Validate: code = cmd_validate(cfg, out, log); break;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.write_manifest(cfg, config_text, secs, started);
    return code;
  } catch (const ConfigError& e) {
    err << "bad config: " << e.what() << '\n';
    return kBadConfig;
  } catch (const DomainError& e) {
    err << "bad config: " << e.what() << '\n';
    return kBadConfig;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kIoError;
  }
}

}  // namespace dynnet::harness
