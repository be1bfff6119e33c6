#include "ctssm/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <system_error>

#include "ctssm/errors.hpp"

namespace ctssm::io {

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

int CsvTable::column(const std::string &name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name)
      return static_cast<int>(i);
  return -1;
}

namespace {

std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string &line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ','))
    out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',')
    out.emplace_back();
  return out;
}

std::ifstream open_in(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open '" + path + "' for reading");
  return in;
}

std::ofstream open_out(const std::string &path) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot open '" + path + "' for writing");
  return out;
}

double parse_double(const std::string &text, std::size_t line, const std::string &column) {
  double v = 0.0;
  const auto *end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (text.empty() || res.ec != std::errc() || res.ptr != end || !std::isfinite(v))
    throw IngestionError("expected a finite number, got '" + text + "'", line, column);
  return v;
}

Count parse_count(const std::string &text, std::size_t line, const std::string &column) {
  Count v = 0;
  const auto *end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (text.empty() || res.ec != std::errc() || res.ptr != end)
    throw IngestionError("expected a non-negative integer count, got '" + text + "'", line, column);
  if (v < 0)
    throw IngestionError("count must be non-negative, got '" + text + "'", line, column);
  return v;
}

int required_column(const CsvTable &t, const std::string &name) {
  const int c = t.column(name);
  if (c < 0)
    throw IngestionError("missing required column", 1, name);
  return c;
}

} // namespace

CsvTable read_csv(const std::string &path) {
  std::ifstream in = open_in(path);
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty())
      continue;
    auto cells = split(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size())
      throw IngestionError("expected " + std::to_string(t.header.size()) + " fields, got " +
                               std::to_string(cells.size()),
                           lineno, "*");
    t.rows.push_back(std::move(cells));
    t.lines.push_back(lineno);
  }
  if (t.header.empty())
    throw IngestionError("file has no header", 1, "*");
  return t;
}

PanelDataset read_dataset(const std::string &path) {
  const CsvTable t = read_csv(path);
  const int cid = required_column(t, "id");
  const int ctime = required_column(t, "time");
  const int cy = required_column(t, "y");
  const int cage = t.column("age");
  const int cgender = t.column("gender");
  if ((cage < 0) != (cgender < 0))
    throw IngestionError("age and gender must appear together", 1, cage < 0 ? "age" : "gender");
  const bool with_cov = cage >= 0;
  const SplineBasis basis = SplineBasis::age_basis();

  struct Building {
    std::vector<double> times;
    std::vector<Count> counts;
    std::vector<Covariates> covs;
  };
  std::vector<std::string> order;
  std::map<std::string, Building> groups;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto &row = t.rows[r];
    const std::size_t line = t.lines[r];
    const std::string &id = row[static_cast<std::size_t>(cid)];
    if (id.empty())
      throw IngestionError("empty id", line, "id");
    const double time = parse_double(row[static_cast<std::size_t>(ctime)], line, "time");
    if (time < 0.0)
      throw IngestionError("time must be non-negative", line, "time");
    const Count y = parse_count(row[static_cast<std::size_t>(cy)], line, "y");
    auto [it, fresh] = groups.try_emplace(id);
    if (fresh)
      order.push_back(id);
    Building &b = it->second;
    if (!b.times.empty() && !(time > b.times.back()))
      throw IngestionError("times must be strictly increasing within id '" + id + "'", line, "time");
    if (!b.times.empty() && !(canonical_gap(time - b.times.back()) > 0.0))
      throw IngestionError("time gap below the 1e-9 resolution within id '" + id + "'", line,
                           "time");
    b.times.push_back(time);
    b.counts.push_back(y);
    if (with_cov) {
      const double age = parse_double(row[static_cast<std::size_t>(cage)], line, "age");
      if (age < basis.domain_lo() || age > basis.domain_hi())
        throw IngestionError("age outside the spline domain [7, 35]", line, "age");
      const std::string &g = row[static_cast<std::size_t>(cgender)];
      if (g != "0" && g != "1")
        throw IngestionError("gender must be 0 (male) or 1 (female), got '" + g + "'", line,
                             "gender");
      b.covs.push_back({age, g == "1" ? 1 : 0});
    }
  }
  if (order.empty())
    throw IngestionError("dataset has no rows", 2, "*");
  PanelDataset panel;
  for (const auto &id : order) {
    Building &b = groups[id];
    std::optional<std::vector<Covariates>> covs;
    if (with_cov)
      covs = std::move(b.covs);
    panel.add(id, ObservationSequence(std::move(b.times), std::move(b.counts), std::move(covs)));
  }
  return panel;
}

void write_dataset(const std::string &path, const PanelDataset &panel) {
  std::ofstream out = open_out(path);
  const bool cov = panel.has_covariates();
  out << (cov ? "id,time,y,age,gender\n" : "id,time,y\n");
  for (const auto &e : panel.entries()) {
    const auto &s = e.sequence;
    for (std::size_t k = 0; k < s.size(); ++k) {
      out << e.id << ',' << format_double(s.times()[k]) << ',' << s.counts()[k];
      if (cov)
        out << ',' << format_double(s.covariates()[k].age) << ',' << s.covariates()[k].gender;
      out << '\n';
    }
  }
  if (!out)
    throw std::runtime_error("failed writing '" + path + "'");
}

void write_states(const std::string &path, const PanelDataset &panel,
                  const std::vector<std::vector<double>> &states) {
  if (states.size() != panel.size())
    throw InvalidArgument("write_states: states must align with the panel");
  std::ofstream out = open_out(path);
  out << "id,time,x\n";
  for (std::size_t i = 0; i < panel.size(); ++i) {
    const auto &e = panel[i];
    if (states[i].size() != e.sequence.size())
      throw InvalidArgument("write_states: state path length mismatch for id " + e.id);
    for (std::size_t k = 0; k < e.sequence.size(); ++k)
      out << e.id << ',' << format_double(e.sequence.times()[k]) << ','
          << format_double(states[i][k]) << '\n';
  }
  if (!out)
    throw std::runtime_error("failed writing '" + path + "'");
}

std::map<std::string, std::vector<double>> read_states(const std::string &path) {
  const CsvTable t = read_csv(path);
  const int cid = required_column(t, "id");
  const int cx = required_column(t, "x");
  std::map<std::string, std::vector<double>> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    out[t.rows[r][static_cast<std::size_t>(cid)]].push_back(
        parse_double(t.rows[r][static_cast<std::size_t>(cx)], t.lines[r], "x"));
  return out;
}

json fit_report(const FitResult &result) {
  json estimates = json::object();
  json se = json::object();
  json ci = json::object();
  json free = json::array();
  for (const auto &p : result.parameters) {
    estimates[p.name] = p.estimate;
    se[p.name] = p.se ? json(*p.se) : json(nullptr);
    ci[p.name] = p.ci95 ? json::array({p.ci95->first, p.ci95->second}) : json(nullptr);
    if (p.free)
      free.push_back(p.name);
  }
  json report;
  report["model"] = to_string(result.family);
  report["estimates"] = estimates;
  report["se"] = se;
  report["ci95"] = ci;
  report["loglik"] = result.loglik;
  report["aic"] = result.aic;
  report["k"] = result.k;
  report["convergence"] = {{"status", result.convergence.status},
                           {"iterations", result.convergence.iterations},
                           {"evaluations", result.convergence.evaluations},
                           {"seconds", result.convergence.seconds},
                           {"method", result.convergence.method},
                           {"starts", result.convergence.starts},
                           {"gradient_max_norm", result.convergence.gradient_max_norm}};
  if (result.grid)
    report["grid"] = {{"b0", result.grid->b0()}, {"bm", result.grid->bm()}, {"m", result.grid->m()}};
  else
    report["grid"] = nullptr;
  report["seed"] = result.seed;
  report["free"] = free;
  report["hessian_near_singular"] = result.hessian_near_singular;
  report["diagnostics"] = result.diagnostics;
  return report;
}

FitResult fit_from_report(const json &report) {
  try {
    FitResult r;
    r.family = family_from_string(report.at("model").get<std::string>());
    const json &est = report.at("estimates");
    auto get = [&](const std::string &name) { return est.at(name).get<double>(); };
    std::optional<Grid> grid;
    if (report.contains("grid") && !report["grid"].is_null()) {
      const json &g = report["grid"];
      grid.emplace(g.at("b0").get<double>(), g.at("bm").get<double>(), g.at("m").get<std::size_t>());
    }
    auto omegas = [&](const std::string &prefix) {
      std::vector<double> w(SplineBasis::age_basis().basis_count());
      for (std::size_t l = 0; l < w.size(); ++l)
        w[l] = get(prefix + "_" + std::to_string(l + 1));
      return w;
    };
    switch (r.family) {
    case Family::PoissonScale:
      if (!grid)
        throw InvalidArgument("fit report: poisson-scale report without grid");
      r.model = ModelTemplate::poisson_scale(get("theta"), get("sigma"), get("alpha"), *grid);
      break;
    case Family::NegBinSpline:
      if (!grid)
        throw InvalidArgument("fit report: negbin-spline report without grid");
      r.model = ModelTemplate::negbin_spline(get("theta"), get("sigma"), get("phi"),
                                             omegas("omega1"), omegas("omega2"), *grid);
      break;
    case Family::Benchmark:
      r.model = ModelTemplate::benchmark(get("phi"), omegas("omega1"), omegas("omega2"));
      break;
    }
    std::vector<std::string> free_names;
    if (report.contains("free"))
      free_names = report["free"].get<std::vector<std::string>>();
    for (const auto &p : r.model.parameters())
      if (report.contains("free") &&
          std::find(free_names.begin(), free_names.end(), p.name) == free_names.end())
        r.model.fix(p.name);
    for (const auto &p : r.model.parameters()) {
      ParameterEstimate pe{p.name, p.value, p.free, p.transform, std::nullopt, std::nullopt};
      if (report.contains("se") && report["se"].contains(p.name) && !report["se"][p.name].is_null())
        pe.se = report["se"][p.name].get<double>();
      if (report.contains("ci95") && report["ci95"].contains(p.name) &&
          !report["ci95"][p.name].is_null())
        pe.ci95 = std::make_pair(report["ci95"][p.name][0].get<double>(),
                                 report["ci95"][p.name][1].get<double>());
      r.parameters.push_back(pe);
    }
    r.loglik = report.at("loglik").get<double>();
    r.aic = report.at("aic").get<double>();
    r.k = report.contains("k") ? report["k"].get<std::size_t>() : r.model.free_count();
    const json &c = report.at("convergence");
    r.convergence.status = c.at("status").get<std::string>();
    r.convergence.iterations = c.at("iterations").get<int>();
    r.convergence.evaluations = c.at("evaluations").get<int>();
    r.convergence.seconds = c.at("seconds").get<double>();
    r.grid = grid;
    r.seed = report.value("seed", std::uint64_t{0});
    return r;
  } catch (const json::exception &e) {
    throw InvalidArgument(std::string("malformed fit report: ") + e.what());
  }
}

json read_json(const std::string &path) {
  std::ifstream in = open_in(path);
  try {
    return json::parse(in);
  } catch (const json::exception &e) {
    throw InvalidArgument("'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_json(const std::string &path, const json &value) {
  std::ofstream out = open_out(path);
  out << value.dump(2) << '\n';
  if (!out)
    throw std::runtime_error("failed writing '" + path + "'");
}

std::string format_fit_summary(const FitResult &result) {
  std::ostringstream os;
  os << "model: " << to_string(result.family) << "\n";
  if (result.grid)
    os << "grid: [" << result.grid->b0() << ", " << result.grid->bm() << "], m = " << result.grid->m()
       << "\n";
  os << std::left << std::setw(12) << "parameter" << std::right << std::setw(14) << "estimate"
     << std::setw(14) << "se" << "   95% CI\n";
  for (const auto &p : result.parameters) {
    os << std::left << std::setw(12) << p.name << std::right << std::setw(14)
       << std::setprecision(6) << p.estimate;
    if (!p.free) {
      os << std::setw(14) << "(fixed)" << "\n";
      continue;
    }
    if (p.se)
      os << std::setw(14) << std::setprecision(4) << *p.se;
    else
      os << std::setw(14) << "-";
    if (p.ci95)
      os << "   [" << std::setprecision(4) << p.ci95->first << "; " << p.ci95->second << "]";
    os << "\n";
  }
  os << std::fixed << std::setprecision(2);
  os << "-llk: " << -result.loglik << "\n";
  os << "AIC: " << result.aic << " (k = " << result.k << ")\n";
  os << "seconds: " << result.convergence.seconds << "\n";
  os.unsetf(std::ios::fixed);
  os << "status: " << result.convergence.status << " (" << result.convergence.method << ", "
     << result.convergence.iterations << " iterations, " << result.convergence.evaluations
     << " evaluations)\n";
  for (const auto &d : result.diagnostics)
    os << "note: " << d << "\n";
  return os.str();
}

void write_sweep_csv(const std::string &path, const SweepResult &sweep) {
  std::ofstream out = open_out(path);
  out << "m,theta,sigma,alpha,seconds,neg_llk\n";
  for (const auto &r : sweep.rows) {
    out << r.m << ',';
    if (r.ok)
      out << format_double(r.theta) << ',' << format_double(r.sigma) << ','
          << format_double(r.alpha) << ',' << format_double(r.seconds) << ','
          << format_double(r.neg_llk) << '\n';
    else
      out << ",,,,\n";
  }
}

std::string format_sweep_table(const SweepResult &sweep) {
  std::ostringstream os;
  os << std::setw(8) << "m" << std::setw(10) << "theta" << std::setw(10) << "sigma"
     << std::setw(10) << "alpha" << std::setw(12) << "time (s)" << std::setw(12) << "-llk" << "\n";
  for (const auto &r : sweep.rows) {
    os << std::setw(8) << ("m=" + std::to_string(r.m));
    if (!r.ok) {
      os << "   failed: " << r.error << "\n";
      continue;
    }
    os << std::fixed << std::setw(10) << std::setprecision(4) << r.theta << std::setw(10)
       << std::setprecision(3) << r.sigma << std::setw(10) << std::setprecision(1) << r.alpha
       << std::setw(12) << std::setprecision(1) << r.seconds << std::setw(12)
       << std::setprecision(2) << r.neg_llk << "\n";
    os.unsetf(std::ios::fixed);
  }
  return os.str();
}

void write_consistency_csv(const std::string &path, const ConsistencyResult &result) {
  std::ofstream out = open_out(path);
  out << "T,replicate,seed,ok,theta,sigma,alpha,rel_bias_theta,rel_bias_sigma,rel_bias_alpha,"
         "neg_llk,seconds\n";
  for (const auto &r : result.rows)
    out << r.T << ',' << r.replicate << ',' << r.seed << ',' << (r.ok ? 1 : 0) << ','
        << format_double(r.theta) << ',' << format_double(r.sigma) << ',' << format_double(r.alpha)
        << ',' << format_double(r.rel_bias_theta) << ',' << format_double(r.rel_bias_sigma) << ','
        << format_double(r.rel_bias_alpha) << ',' << format_double(r.neg_llk) << ','
        << format_double(r.seconds) << '\n';
}

std::string format_consistency_table(const ConsistencyResult &result) {
  std::map<std::size_t, std::vector<const ConsistencyRow *>> byT;
  for (const auto &r : result.rows)
    if (r.ok)
      byT[r.T].push_back(&r);
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n == 0 ? 0.0 : (n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]));
  };
  std::ostringstream os;
  os << std::setw(8) << "T" << std::setw(6) << "n" << std::setw(14) << "med bias th"
     << std::setw(14) << "med bias sg" << std::setw(14) << "med bias al" << "\n";
  for (const auto &[T, rows] : byT) {
    std::vector<double> bt, bs, ba;
    for (const auto *r : rows) {
      bt.push_back(r->rel_bias_theta);
      bs.push_back(r->rel_bias_sigma);
      ba.push_back(r->rel_bias_alpha);
    }
    os << std::setw(8) << T << std::setw(6) << rows.size() << std::fixed << std::setprecision(4)
       << std::setw(14) << median(bt) << std::setw(14) << median(bs) << std::setw(14) << median(ba)
       << "\n";
    os.unsetf(std::ios::fixed);
  }
  os << "failed fits excluded: " << result.failures << "\n";
  return os.str();
}

void write_decoded_csv(const std::string &path, const std::vector<DecodedRow> &rows) {
  std::ofstream out = open_out(path);
  out << "id,time,state_index,state_value,expected_count,equilibrium_count\n";
  for (const auto &r : rows)
    out << r.id << ',' << format_double(r.time) << ',' << r.state_index << ','
        << format_double(r.state_value) << ',' << format_double(r.expected_count) << ','
        << format_double(r.equilibrium_count) << '\n';
}

void write_text(const std::string &path, const std::string &text) {
  std::ofstream out = open_out(path);
  out << text;
  if (!out)
    throw std::runtime_error("failed writing '" + path + "'");
}

std::string read_text(const std::string &path) {
  std::ifstream in = open_in(path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

} // namespace ctssm::io
