#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <omp.h>
#include <openssl/evp.h>

#include "ctssm/data.hpp"
#include "ctssm/decoding.hpp"
#include "ctssm/discretization.hpp"
#include "ctssm/errors.hpp"
#include "ctssm/inference.hpp"
#include "ctssm/io.hpp"
#include "ctssm/simulation.hpp"
#include "ctssm/state_process.hpp"

namespace ctssm::cli {

namespace fs = std::filesystem;
using io::json;

std::string sha256_hex(const std::string &bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i)
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

std::string file_sha256(const std::string &path) { return sha256_hex(io::read_text(path)); }

namespace {

class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Non-convergence still writes every output; the command just ends with
// the numeric exit code.
struct Outcome {
  int code = kOk;
};

std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Reads `key = value` lines; '#' starts a comment.
std::vector<std::pair<std::string, std::string>> read_config(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw UsageError("cannot read config file '" + path + "'");
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    line = trim(line);
    if (line.empty())
      continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(path + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (key.rfind("--", 0) == 0)
      key.erase(0, 2);
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

bool given_on_command_line(const std::vector<std::string> &args, const std::string &flag) {
  return std::any_of(args.begin(), args.end(), [&](const std::string &a) {
    return a == flag || a.rfind(flag + "=", 0) == 0;
  });
}

/// Appends config-file settings that the command line does not already set.
std::vector<std::string> merge_config(const CLI::App &sub, std::vector<std::string> args) {
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size())
      path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0)
      path = args[i].substr(9);
  }
  if (!path)
    return args;
  std::vector<std::string> extra;
  for (const auto &[key, value] : read_config(*path)) {
    const std::string flag = "--" + key;
    const CLI::Option *opt = sub.get_option_no_throw(flag);
    if (opt == nullptr || key == "config")
      throw UsageError("config key '" + key + "' is not an option of '" + sub.get_name() + "'");
    if (given_on_command_line(args, flag))
      continue;
    if (opt->get_expected_max() == 0) {
      if (value == "true" || value == "1" || value == "yes")
        extra.push_back(flag);
      else if (value != "false" && value != "0" && value != "no")
        throw UsageError("config key '" + key + "' is a switch; use true or false");
      continue;
    }
    extra.push_back(flag);
    std::istringstream tokens(value);
    std::string tok;
    while (tokens >> tok)
      extra.push_back(tok);
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

/// Settings that determine a run's outputs, for the manifest hash.
json resolved_config(const CLI::App &sub) {
  static const std::vector<std::string> skipped{"help", "help-all", "config", "out", "threads"};
  json cfg = json::object();
  for (const CLI::Option *opt : sub.get_options()) {
    if (opt->get_lnames().empty())
      continue;
    const std::string key = opt->get_lnames().front();
    if (std::find(skipped.begin(), skipped.end(), key) != skipped.end())
      continue;
    if (opt->get_expected_max() == 0) {
      cfg[key] = opt->count() > 0;
      continue;
    }
    if (opt->count() > 0) {
      const auto &r = opt->results();
      std::string joined;
      for (std::size_t i = 0; i < r.size(); ++i)
        joined += (i ? " " : "") + r[i];
      cfg[key] = joined;
    } else if (!opt->get_default_str().empty()) {
      cfg[key] = opt->get_default_str();
    }
  }
  return cfg;
}

json start_manifest(const CLI::App &sub) {
  json m;
  m["command"] = sub.get_name();
  m["config"] = resolved_config(sub);
  m["config_hash"] = sha256_hex(m["config"].dump());
  m["files"] = json::object();
  return m;
}

void finish_manifest(json &manifest, const fs::path &out, const std::vector<std::string> &files) {
  for (const auto &f : files)
    manifest["files"][f] = file_sha256((out / f).string());
  io::write_json((out / "manifest.json").string(), manifest);
}

fs::path prepare_out(const std::string &dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p))
    throw std::runtime_error("cannot create output directory '" + dir + "'");
  return p;
}

void apply_threads(int threads) {
  if (threads > 0)
    omp_set_num_threads(threads);
}

std::pair<std::string, double> parse_assignment(const std::string &text, const char *what) {
  const auto eq = text.find('=');
  if (eq == std::string::npos)
    throw UsageError(std::string(what) + " expects name=value, got '" + text + "'");
  const std::string value = text.substr(eq + 1);
  double v = 0.0;
  const auto res = std::from_chars(value.data(), value.data() + value.size(), v);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size())
    throw UsageError(std::string(what) + ": '" + value + "' is not a number");
  return {text.substr(0, eq), v};
}

double pearson(const std::vector<double> &a, const std::vector<double> &b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

OUParams ou_from_flags(double theta, double mu, double sigma) { return OUParams(theta, mu, sigma); }

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string setting;
  std::size_t T = 2000;
  std::uint64_t seed = 0;
  std::size_t individuals = 1000;
  double dropout = 0.0;
  std::string out;
};

void add_simulate(CLI::App &app, SimulateArgs &a) {
  auto *sub = app.add_subcommand("simulate", "Generate a dataset and its true states");
  sub->add_option("--setting", a.setting, "1, 2, 3 or panel")->required();
  sub->add_option("--T", a.T, "Observations per sequence (settings 1-3)")
      ->check(CLI::PositiveNumber);
  sub->add_option("--seed", a.seed, "Master seed")->required();
  sub->add_option("--individuals", a.individuals, "Panel size (panel only)")
      ->check(CLI::PositiveNumber);
  sub->add_option("--dropout", a.dropout, "Missed-wave probability (panel only)")
      ->check(CLI::Range(0.0, 1.0));
  sub->add_option("--out", a.out, "Output directory")->required();
}

Outcome cmd_simulate(const CLI::App &sub, const SimulateArgs &a, std::ostream &out) {
  const fs::path dir = prepare_out(a.out);
  json manifest = start_manifest(sub);
  manifest["seed"] = a.seed;
  if (a.setting == "panel") {
    PanelConfig cfg;
    cfg.individuals = a.individuals;
    cfg.dropout = a.dropout;
    cfg.seed = a.seed;
    const SimulatedPanel sim = generate_panel(cfg);
    io::write_dataset((dir / "data.csv").string(), sim.panel);
    io::write_states((dir / "states.csv").string(), sim.panel, sim.states);
    manifest["time_unit"] = "years";
    manifest["rows"] = sim.panel.observation_count();
    manifest["truth"] = {{"theta", cfg.process.theta()},
                         {"sigma", cfg.process.sigma()},
                         {"phi", cfg.phi}};
  } else {
    int index = 0;
    const auto res = std::from_chars(a.setting.data(), a.setting.data() + a.setting.size(), index);
    if (res.ec != std::errc() || res.ptr != a.setting.data() + a.setting.size())
      index = 0;
    SimSetting setting;
    try {
      setting = SimSetting::numbered(index, a.T, a.seed);
    } catch (const InvalidArgument &) {
      throw UsageError("unknown setting '" + a.setting + "'; valid settings: 1, 2, 3 (or panel)");
    }
    const SimulatedSequence sim = generate_dataset(setting);
    const PanelDataset panel(sim.data);
    io::write_dataset((dir / "data.csv").string(), panel);
    io::write_states((dir / "states.csv").string(), panel, {sim.states});
    manifest["time_unit"] = "days";
    manifest["rows"] = sim.data.size();
    manifest["truth"] = {{"theta", setting.process.theta()},
                         {"sigma", setting.process.sigma()},
                         {"alpha", setting.emission.alpha()}};
  }
  finish_manifest(manifest, dir, {"data.csv", "states.csv"});
  out << manifest.dump(2) << "\n";
  return {};
}

// --------------------------------------------------------------------- fit

struct FitArgs {
  std::string data;
  std::string family = "poisson-scale";
  std::size_t m = 100;
  std::vector<double> range;
  std::string grid = "auto";
  std::string method = "auto";
  int starts = 1;
  double jitter = 0.3;
  std::uint64_t seed = 0;
  bool no_ci = false;
  std::vector<std::string> start_values;
  std::vector<std::string> fixed;
  int threads = 0;
  std::string out;
};

void add_fit(CLI::App &app, FitArgs &a) {
  auto *sub = app.add_subcommand("fit", "Maximum approximate-likelihood fit");
  sub->add_option("--data", a.data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  sub->add_option("--family", a.family)
      ->check(CLI::IsMember({"poisson-scale", "negbin-spline", "benchmark"}));
  sub->add_option("--m", a.m, "Number of state intervals")->check(CLI::Range(2, 100000));
  sub->add_option("--range", a.range, "Grid range b0 bm")->expected(2);
  sub->add_option("--grid", a.grid, "auto: range from the starting OU parameters")
      ->check(CLI::IsMember({"auto"}));
  sub->add_option("--method", a.method)
      ->check(CLI::IsMember({"auto", "simplex", "bfgs", "simplex+bfgs"}));
  sub->add_option("--starts", a.starts, "Number of optimizer starts")->check(CLI::PositiveNumber);
  sub->add_option("--jitter", a.jitter, "Working-scale sd of jittered starts")
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--seed", a.seed, "Seed for jittered starts");
  sub->add_flag("--no-ci", a.no_ci, "Skip the observed-information intervals");
  sub->add_option("--start", a.start_values, "Override a starting value, name=value");
  sub->add_option("--fix", a.fixed, "Hold a parameter fixed, name or name=value");
  sub->add_option("--threads", a.threads, "OpenMP thread cap")->check(CLI::NonNegativeNumber);
  sub->add_option("--out", a.out, "Output directory")->required();
}

Outcome cmd_fit(const CLI::App &sub, const FitArgs &a, std::ostream &out) {
  if (!a.range.empty() && sub.get_option("--grid")->count() > 0)
    throw UsageError("--grid auto and --range are mutually exclusive");
  if (a.starts > 1 && sub.get_option("--seed")->count() == 0)
    throw UsageError("--seed is required when --starts > 1");
  apply_threads(a.threads);
  const PanelDataset panel = io::read_dataset(a.data);
  const Family family = family_from_string(a.family);
  if (family != Family::PoissonScale && !panel.has_covariates())
    throw InvalidArgument("family " + a.family + " needs age and gender columns");

  std::optional<Grid> grid;
  if (!a.range.empty())
    grid.emplace(a.range[0], a.range[1], a.m);
  ModelTemplate start = starting_template(panel, family, grid, a.m);
  for (const auto &s : a.start_values) {
    const auto [name, value] = parse_assignment(s, "--start");
    start.set(name, value);
  }
  for (const auto &f : a.fixed) {
    if (f.find('=') == std::string::npos) {
      start.fix(f);
    } else {
      const auto [name, value] = parse_assignment(f, "--fix");
      start.fix(name, value);
    }
  }
  if (!grid && start.has_state()) {
    const auto [b0, bm] = default_range(start.process());
    start.set_grid(Grid(b0, bm, a.m));
  }

  FitOptions options;
  options.method = fit_method_from_string(a.method);
  options.starts = a.starts;
  options.jitter = a.jitter;
  options.seed = a.seed;
  options.compute_ci = !a.no_ci;
  const FitResult result = fit(panel, start, options);

  const fs::path dir = prepare_out(a.out);
  io::write_json((dir / "fit.json").string(), io::fit_report(result));
  const std::string summary = io::format_fit_summary(result);
  io::write_text((dir / "summary.txt").string(), summary);
  json manifest = start_manifest(sub);
  manifest["seed"] = a.seed;
  manifest["data_sha256"] = file_sha256(a.data);
  manifest["status"] = result.convergence.status;
  finish_manifest(manifest, dir, {"fit.json", "summary.txt"});
  out << summary;
  return {result.converged() ? kOk : kNumeric};
}

// ------------------------------------------------------------------ decode

struct DecodeArgs {
  std::string fit;
  std::string data;
  std::string truth;
  std::size_t m = 0;
  std::vector<double> range;
  int threads = 0;
  std::string out;
};

void add_decode(CLI::App &app, DecodeArgs &a) {
  auto *sub = app.add_subcommand("decode", "Viterbi decoding with a fitted model");
  sub->add_option("--fit", a.fit, "fit.json from the fit command")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--data", a.data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  sub->add_option("--truth", a.truth, "True-states CSV; adds a correlation to the manifest")
      ->check(CLI::ExistingFile);
  sub->add_option("--m", a.m, "Expected grid size; must match the fit")
      ->check(CLI::Range(2, 100000));
  sub->add_option("--range", a.range, "Expected grid range; must match the fit")->expected(2);
  sub->add_option("--threads", a.threads)->check(CLI::NonNegativeNumber);
  sub->add_option("--out", a.out, "Output directory")->required();
}

Outcome cmd_decode(const CLI::App &sub, const DecodeArgs &a, std::ostream &out) {
  apply_threads(a.threads);
  const FitResult fitted = io::fit_from_report(io::read_json(a.fit));
  if (!fitted.model.has_state())
    throw UsageError("a benchmark fit has no latent states to decode");
  const Grid &grid = *fitted.model.grid();
  if (a.m != 0 && a.m != grid.m())
    throw InvalidArgument("grid mismatch: fit uses m = " + std::to_string(grid.m()) +
                          ", requested m = " + std::to_string(a.m));
  if (!a.range.empty() && (a.range[0] != grid.b0() || a.range[1] != grid.bm()))
    throw InvalidArgument("grid mismatch: fit uses range [" + io::format_double(grid.b0()) +
                          ", " + io::format_double(grid.bm()) + "]");
  const PanelDataset panel = io::read_dataset(a.data);
  const ModelSpec spec = fitted.model.build();
  if (needs_covariates(spec.emission) && !panel.has_covariates())
    throw InvalidArgument("the fitted negbin-spline model needs age and gender columns");

  MatrixCache cache;
  std::vector<io::DecodedRow> rows;
  rows.reserve(panel.observation_count());
  std::map<std::string, std::vector<double>> decoded_values;
  double total_log_probability = 0.0;
  for (const auto &entry : panel.entries()) {
    const auto &seq = entry.sequence;
    const DecodedPath path = viterbi(seq, spec, cache);
    total_log_probability += path.log_probability;
    const ExpectedTrajectory traj =
        fitted.family == Family::NegBinSpline
            ? expected_trajectory(path, std::get<NegBinSplineEmission>(spec.emission),
                                  seq.covariates())
            : expected_trajectory(path, std::get<PoissonScaleEmission>(spec.emission));
    for (std::size_t k = 0; k < seq.size(); ++k)
      rows.push_back({entry.id, seq.times()[k], path.state_indices[k], path.state_values[k],
                      traj.expected[k], traj.equilibrium[k]});
    decoded_values[entry.id] = path.state_values;
  }

  const fs::path dir = prepare_out(a.out);
  io::write_decoded_csv((dir / "decoded.csv").string(), rows);
  json manifest = start_manifest(sub);
  manifest["data_sha256"] = file_sha256(a.data);
  manifest["rows"] = rows.size();
  manifest["log_probability"] = total_log_probability;
  if (!a.truth.empty()) {
    const auto truth = io::read_states(a.truth);
    std::vector<double> dec, tru;
    for (const auto &entry : panel.entries()) {
      const auto it = truth.find(entry.id);
      if (it == truth.end() || it->second.size() != entry.sequence.size())
        throw InvalidArgument("true states do not align with the dataset for id " + entry.id);
      const auto &d = decoded_values[entry.id];
      dec.insert(dec.end(), d.begin(), d.end());
      tru.insert(tru.end(), it->second.begin(), it->second.end());
    }
    manifest["correlation_decoded_true"] = pearson(dec, tru);
  }
  finish_manifest(manifest, dir, {"decoded.csv"});
  out << "decoded " << rows.size() << " observations";
  if (manifest.contains("correlation_decoded_true"))
    out << "; correlation with true states "
        << manifest["correlation_decoded_true"].get<double>();
  out << "\n";
  return {};
}

// ------------------------------------------------------------------- sweep

struct SweepArgs {
  int setting = 0;
  std::string data;
  std::size_t T = 2000;
  std::uint64_t seed = 0;
  std::vector<std::size_t> m{20, 30, 50, 100, 150};
  std::vector<double> range{-2.5, 2.5};
  std::string method = "auto";
  int threads = 0;
  std::string out;
};

void add_sweep(CLI::App &app, SweepArgs &a) {
  auto *sub = app.add_subcommand("sweep", "Refit one dataset over several grid sizes");
  auto *setting =
      sub->add_option("--setting", a.setting, "Simulate Setting 1, 2 or 3")->check(CLI::Range(1, 3));
  auto *data = sub->add_option("--data", a.data, "Single-sequence dataset CSV")
                   ->check(CLI::ExistingFile);
  setting->excludes(data);
  sub->add_option("--T", a.T)->check(CLI::PositiveNumber);
  sub->add_option("--seed", a.seed, "Seed for the simulated dataset");
  sub->add_option("--m", a.m, "Grid sizes")->delimiter(',')->check(CLI::Range(2, 100000));
  sub->add_option("--range", a.range, "Grid range b0 bm")->expected(2);
  sub->add_option("--method", a.method)
      ->check(CLI::IsMember({"auto", "simplex", "bfgs", "simplex+bfgs"}));
  sub->add_option("--threads", a.threads)->check(CLI::NonNegativeNumber);
  sub->add_option("--out", a.out, "Output directory")->required();
}

Outcome cmd_sweep(const CLI::App &sub, const SweepArgs &a, std::ostream &out) {
  apply_threads(a.threads);
  FitOptions options;
  options.method = fit_method_from_string(a.method);
  options.compute_ci = false;
  SweepResult sweep;
  if (!a.data.empty()) {
    const PanelDataset panel = io::read_dataset(a.data);
    if (panel.size() != 1)
      throw UsageError("sweep --data expects a single sequence, got " +
                       std::to_string(panel.size()) + " ids");
    sweep = run_m_sweep(panel[0].sequence, a.m, a.range[0], a.range[1], options);
  } else {
    if (sub.get_option("--setting")->count() == 0)
      throw UsageError("sweep needs --setting or --data");
    if (sub.get_option("--seed")->count() == 0)
      throw UsageError("--seed is required with --setting");
    sweep = run_m_sweep(SimSetting::numbered(a.setting, a.T, a.seed), a.m, a.range[0],
                        a.range[1], options);
  }
  const fs::path dir = prepare_out(a.out);
  io::write_sweep_csv((dir / "sweep.csv").string(), sweep);
  const std::string table = io::format_sweep_table(sweep);
  io::write_text((dir / "sweep.txt").string(), table);
  json manifest = start_manifest(sub);
  manifest["seed"] = a.seed;
  const auto ok = std::count_if(sweep.rows.begin(), sweep.rows.end(),
                                [](const SweepRow &r) { return r.ok; });
  manifest["rows_ok"] = ok;
  finish_manifest(manifest, dir, {"sweep.csv", "sweep.txt"});
  out << table;
  return {ok > 0 ? kOk : kNumeric};
}

// ------------------------------------------------------------- consistency

struct ConsistencyArgs {
  int setting = 2;
  std::vector<std::size_t> T{2000, 5000};
  bool full = false;
  std::size_t replicates = 50;
  std::size_t m = 100;
  std::vector<double> range{-2.5, 2.5};
  std::uint64_t seed = 0;
  bool evaluate_only = false;
  int threads = 0;
  std::string out;
};

void add_consistency(CLI::App &app, ConsistencyArgs &a) {
  auto *sub = app.add_subcommand("consistency", "Replicated fits for the bias study");
  sub->add_option("--setting", a.setting)->check(CLI::Range(1, 3));
  sub->add_option("--T", a.T, "Sequence lengths")->delimiter(',')->check(CLI::PositiveNumber);
  sub->add_flag("--full", a.full, "Also run T = 10000");
  sub->add_option("--replicates", a.replicates)->check(CLI::PositiveNumber);
  sub->add_option("--m", a.m)->check(CLI::Range(2, 100000));
  sub->add_option("--range", a.range, "Grid range b0 bm")->expected(2);
  sub->add_option("--seed", a.seed, "Master seed")->required();
  sub->add_flag("--evaluate-only", a.evaluate_only, "Evaluate at the truth, no fitting");
  sub->add_option("--threads", a.threads)->check(CLI::NonNegativeNumber);
  sub->add_option("--out", a.out, "Output directory")->required();
}

Outcome cmd_consistency(const CLI::App &sub, const ConsistencyArgs &a, std::ostream &out) {
  apply_threads(a.threads);
  std::vector<std::size_t> T_values = a.T;
  if (a.full && std::find(T_values.begin(), T_values.end(), 10000) == T_values.end())
    T_values.push_back(10000);
  ConsistencyOptions options;
  options.m = a.m;
  options.b0 = a.range[0];
  options.bm = a.range[1];
  options.evaluate_only = a.evaluate_only;
  options.fit.compute_ci = false;
  const ConsistencyResult result = run_consistency_study(
      SimSetting::numbered(a.setting, T_values.front(), a.seed), T_values, a.replicates, options);
  const fs::path dir = prepare_out(a.out);
  io::write_consistency_csv((dir / "consistency.csv").string(), result);
  const std::string table = io::format_consistency_table(result);
  io::write_text((dir / "consistency.txt").string(), table);
  json manifest = start_manifest(sub);
  manifest["seed"] = a.seed;
  manifest["failures"] = result.failures;
  finish_manifest(manifest, dir, {"consistency.csv", "consistency.txt"});
  out << table;
  return {result.failures < result.rows.size() ? kOk : kNumeric};
}

// ------------------------------------------------------------------- curve

struct CurveArgs {
  std::string fit;
  double from = 7.0;
  double to = 35.0;
  double step = 0.1;
  std::string out;
};

void add_curve(CLI::App &app, CurveArgs &a) {
  auto *sub = app.add_subcommand("curve", "Age-effect curves of a spline fit as CSV");
  sub->add_option("--fit", a.fit)->required()->check(CLI::ExistingFile);
  sub->add_option("--from", a.from);
  sub->add_option("--to", a.to);
  sub->add_option("--step", a.step)->check(CLI::PositiveNumber);
  sub->add_option("--out", a.out, "Output directory")->required();
}

Outcome cmd_curve(const CLI::App &sub, const CurveArgs &a, std::ostream &out) {
  const FitResult fitted = io::fit_from_report(io::read_json(a.fit));
  if (fitted.family == Family::PoissonScale)
    throw UsageError("curve needs a negbin-spline or benchmark fit");
  if (!(a.to >= a.from))
    throw UsageError("--to must not be below --from");
  const NegBinSplineEmission em = fitted.model.negbin_emission();
  const fs::path dir = prepare_out(a.out);
  std::ofstream csv(dir / "curve.csv");
  if (!csv)
    throw std::runtime_error("cannot write '" + (dir / "curve.csv").string() + "'");
  // male = f1, female = f1 + f2 on the log-mean scale.
  csv << "age,male,female,full_support\n";
  const auto n = static_cast<std::size_t>(std::floor((a.to - a.from) / a.step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) {
    const double age = std::min(a.from + static_cast<double>(i) * a.step, a.to);
    const double male = em.covariate_effect({age, 0});
    const double female = em.covariate_effect({age, 1});
    csv << io::format_double(age) << ',' << io::format_double(male) << ','
        << io::format_double(female) << ',' << (em.basis().in_full_support(age) ? 1 : 0) << '\n';
  }
  csv.close();
  json manifest = start_manifest(sub);
  finish_manifest(manifest, dir, {"curve.csv"});
  out << "wrote " << (n + 1) << " ages to " << (dir / "curve.csv").string() << "\n";
  return {};
}

// -------------------------------------------------------------------- path

struct PathArgs {
  double theta = 0.5;
  double mu = 0.0;
  double sigma = 0.5;
  double x0 = 0.0;
  double horizon = 10.0;
  double step = 0.01;
  std::string method = "exact";
  std::uint64_t seed = 0;
  std::string out;
};

void add_path(CLI::App &app, PathArgs &a) {
  auto *sub = app.add_subcommand("path", "Sample an OU path as CSV");
  sub->add_option("--theta", a.theta)->check(CLI::PositiveNumber);
  sub->add_option("--mu", a.mu);
  sub->add_option("--sigma", a.sigma)->check(CLI::PositiveNumber);
  sub->add_option("--x0", a.x0);
  sub->add_option("--horizon", a.horizon)->check(CLI::PositiveNumber);
  sub->add_option("--step", a.step)->check(CLI::PositiveNumber);
  sub->add_option("--method", a.method)->check(CLI::IsMember({"exact", "euler"}));
  sub->add_option("--seed", a.seed)->required();
  sub->add_option("--out", a.out, "Output directory")->required();
}

Outcome cmd_path(const CLI::App &sub, const PathArgs &a, std::ostream &out) {
  const OUParams params = ou_from_flags(a.theta, a.mu, a.sigma);
  Rng rng(a.seed);
  SamplePath path;
  if (a.method == "euler") {
    path = simulate_euler_maruyama(params, a.x0, a.step, a.horizon, rng);
  } else {
    std::vector<double> times;
    const auto n = static_cast<std::size_t>(std::floor(a.horizon / a.step + 1e-9));
    for (std::size_t i = 0; i <= n; ++i)
      times.push_back(static_cast<double>(i) * a.step);
    path = simulate_exact(params, a.x0, times, rng);
  }
  const fs::path dir = prepare_out(a.out);
  std::ofstream csv(dir / "path.csv");
  csv << "time,value\n";
  for (std::size_t i = 0; i < path.times.size(); ++i)
    csv << io::format_double(path.times[i]) << ',' << io::format_double(path.values[i]) << '\n';
  csv.close();
  json manifest = start_manifest(sub);
  manifest["seed"] = a.seed;
  finish_manifest(manifest, dir, {"path.csv"});
  out << "wrote " << path.times.size() << " points\n";
  return {};
}

// ------------------------------------------------------------------ matrix

struct MatrixArgs {
  double theta = 0.5;
  double mu = 0.0;
  double sigma = 0.5;
  double b0 = -3.0;
  double bm = 3.0;
  std::size_t m = 20;
  double delta = 1.0;
  std::string out;
};

void add_matrix(CLI::App &app, MatrixArgs &a) {
  auto *sub = app.add_subcommand("matrix", "Dump a discretized OU transition matrix as CSV");
  sub->add_option("--theta", a.theta)->check(CLI::PositiveNumber);
  sub->add_option("--mu", a.mu);
  sub->add_option("--sigma", a.sigma)->check(CLI::PositiveNumber);
  sub->add_option("--b0", a.b0);
  sub->add_option("--bm", a.bm);
  sub->add_option("--m", a.m)->check(CLI::Range(2, 100000));
  sub->add_option("--delta", a.delta)->check(CLI::PositiveNumber);
  sub->add_option("--out", a.out, "Output directory")->required();
}

Outcome cmd_matrix(const CLI::App &sub, const MatrixArgs &a, std::ostream &out) {
  const OUProcess process(ou_from_flags(a.theta, a.mu, a.sigma));
  const Grid grid(a.b0, a.bm, a.m);
  const TransitionMatrix tm = transition_matrix(process, grid, a.delta);
  const fs::path dir = prepare_out(a.out);
  std::ofstream csv(dir / "matrix.csv");
  csv << "from";
  for (std::size_t j = 1; j <= a.m; ++j)
    csv << ",to_" << j;
  csv << '\n';
  for (Eigen::Index i = 0; i < tm.entries.rows(); ++i) {
    csv << (i + 1);
    for (Eigen::Index j = 0; j < tm.entries.cols(); ++j)
      csv << ',' << io::format_double(tm.entries(i, j));
    csv << '\n';
  }
  csv.close();
  json manifest = start_manifest(sub);
  manifest["min_raw_row_mass"] = tm.min_raw_row_mass;
  finish_manifest(manifest, dir, {"matrix.csv"});
  out << "wrote " << a.m << "x" << a.m << " matrix; smallest raw row mass "
      << tm.min_raw_row_mass << "\n";
  return {};
}

} // namespace

int run(const std::vector<std::string> &raw_args, std::ostream &out, std::ostream &err) {
  CLI::App app{"ctssm: continuous-time state-space models via fine state discretization"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_help_all_flag("--help-all", "Help for every command");

  SimulateArgs simulate;
  FitArgs fit_args;
  DecodeArgs decode;
  SweepArgs sweep;
  ConsistencyArgs consistency;
  CurveArgs curve;
  PathArgs path;
  MatrixArgs matrix;
  add_simulate(app, simulate);
  add_fit(app, fit_args);
  add_decode(app, decode);
  add_sweep(app, sweep);
  add_consistency(app, consistency);
  add_curve(app, curve);
  add_path(app, path);
  add_matrix(app, matrix);
  for (CLI::App *sub : app.get_subcommands({}))
    sub->add_option("--config", "Flat key = value file; flags override it");

  try {
    std::vector<std::string> args = raw_args;
    if (!args.empty())
      if (const CLI::App *sub = app.get_subcommand_no_throw(args.front()))
        args = merge_config(*sub, args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  } catch (const UsageError &e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    const CLI::App *sub = app.get_subcommands().front();
    const std::string &name = sub->get_name();
    Outcome outcome;
    if (name == "simulate")
      outcome = cmd_simulate(*sub, simulate, out);
    else if (name == "fit")
      outcome = cmd_fit(*sub, fit_args, out);
    else if (name == "decode")
      outcome = cmd_decode(*sub, decode, out);
    else if (name == "sweep")
      outcome = cmd_sweep(*sub, sweep, out);
    else if (name == "consistency")
      outcome = cmd_consistency(*sub, consistency, out);
    else if (name == "curve")
      outcome = cmd_curve(*sub, curve, out);
    else if (name == "path")
      outcome = cmd_path(*sub, path, out);
    else if (name == "matrix")
      outcome = cmd_matrix(*sub, matrix, out);
    if (outcome.code == kNumeric)
      err << "warning: optimizer did not converge; outputs were still written\n";
    return outcome.code;
  } catch (const UsageError &e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const IngestionError &e) {
    err << "ingestion error: " << e.what() << "\n";
    return kIngestion;
  } catch (const NumericError &e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const InvalidArgument &e) {
    err << "invalid argument: " << e.what() << "\n";
    return kUsage;
  } catch (const OutOfDomain &e) {
    err << "out of domain: " << e.what() << "\n";
    return kUsage;
  } catch (const IllConditionedGrid &e) {
    err << "ill-conditioned grid: " << e.what() << "\n";
    return kUsage;
  } catch (const InvalidStart &e) {
    err << "invalid start: " << e.what() << "\n";
    return kNumeric;
  } catch (const TooLarge &e) {
    err << "too large: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception &e) {
    // Remaining failures are file-system problems (unreadable or
    // unwritable paths).
    err << "I/O error: " << e.what() << "\n";
    return kIngestion;
  }
}

} // namespace ctssm::cli
