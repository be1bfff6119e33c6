#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctssm/data.hpp"
#include "ctssm/decoding.hpp"
#include "ctssm/inference.hpp"
#include "ctssm/simulation.hpp"

namespace ctssm::io {

using json = nlohmann::ordered_json;

/// Shortest decimal text that reads back to the same double.
std::string format_double(double value);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  /// 1-based file line of each row (the header is line 1).
  std::vector<std::size_t> lines;

  /// Column position, or -1.
  int column(const std::string &name) const;
};

CsvTable read_csv(const std::string &path);

/// Dataset CSV: id, time, y[, age, gender]. Rows of one id must have
/// strictly increasing times; ids keep their first-appearance order.
PanelDataset read_dataset(const std::string &path);
void write_dataset(const std::string &path, const PanelDataset &panel);

/// True-states CSV: id, time, x.
void write_states(const std::string &path, const PanelDataset &panel,
                  const std::vector<std::vector<double>> &states);
std::map<std::string, std::vector<double>> read_states(const std::string &path);

json fit_report(const FitResult &result);
/// Rebuilds the fitted model (family, estimates, free markers, grid).
FitResult fit_from_report(const json &report);
json read_json(const std::string &path);
void write_json(const std::string &path, const json &value);

/// Table 2/Table 3 shaped text summary.
std::string format_fit_summary(const FitResult &result);

/// Columns: m, theta, sigma, alpha, seconds, neg_llk.
void write_sweep_csv(const std::string &path, const SweepResult &sweep);
std::string format_sweep_table(const SweepResult &sweep);

void write_consistency_csv(const std::string &path, const ConsistencyResult &result);
std::string format_consistency_table(const ConsistencyResult &result);

struct DecodedRow {
  std::string id;
  double time = 0.0;
  std::size_t state_index = 0;
  double state_value = 0.0;
  double expected_count = 0.0;
  double equilibrium_count = 0.0;
};

/// Columns: id, time, state_index, state_value, expected_count, equilibrium_count.
void write_decoded_csv(const std::string &path, const std::vector<DecodedRow> &rows);

void write_text(const std::string &path, const std::string &text);
std::string read_text(const std::string &path);

} // namespace ctssm::io
