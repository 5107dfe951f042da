#pragma once

// Experiment runner behind the lrdiag command-line tool: layered
// configuration (built-in defaults < JSON file < flags), dispatch to the
// library, and CSV / JSON / gnuplot artifact emission.
//
// Configuration tree (JSON object):
//
//   { "experiment": "<name>", "seed": 1, "h": 0.01, "t_end": 10,
//     "record_every": 1, "output_path": ".", "<name>": { ...block... } }
//
// Every leaf is addressable as a flag by its dotted path ("swarm.p") or, when
// unambiguous, by its bare leaf name ("p"). Unknown keys are errors.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lrdiag/bench.hpp"
#include "lrdiag/diagnostics.hpp"
#include "lrdiag/error.hpp"

namespace lrdiag::cli {

using Json = nlohmann::ordered_json;

/// project-bench, riccati-compare, swarm, brownian, viflow.
const std::vector<std::string>& experiment_names();

/// Complete configuration tree with every default filled in.
Json default_config(std::string_view experiment);

/// Dotted paths of every leaf of a configuration tree ("seed", "swarm.p", ...).
std::vector<std::string> leaf_paths(const Json& tree);

struct ExperimentConfig {
  std::string experiment;
  Json tree;  // resolved: defaults, then file, then flags

  std::uint64_t seed() const;
  std::filesystem::path output_path() const;
};

/// One flag value: key is a dotted path or bare leaf name, value is text
/// (arrays as comma-separated lists).
using Override = std::pair<std::string, std::string>;

/// Layers defaults, the optional JSON file and the overrides, then validates.
/// ParseError: unreadable JSON (with line/column), unknown key, wrong type.
/// ValidationError: every out-of-range value, listed together.
ExperimentConfig parse_config(std::string_view experiment, const std::filesystem::path& file,
                              const std::vector<Override>& overrides);
ExperimentConfig parse_config_text(std::string_view experiment, std::string_view json_text,
                                   const std::vector<Override>& overrides);

/// Throws ValidationError listing all violations.
void validate(const ExperimentConfig& cfg);

using Cell = std::variant<double, std::int64_t, std::string>;

struct RunRecord {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
};

/// Shortest decimal text that parses back to exactly x ("nan", "inf", "-inf"
/// for non-finite values).
std::string format_double(double x);

/// Header plus one line per row; IoError if the file cannot be written.
void write_csv(const RunRecord& record, const std::filesystem::path& path);

struct RunOutcome {
  std::vector<std::filesystem::path> files;
  Diagnostics diag;
  std::string summary;  // human-readable, printed by the tool
};

/// Runs the configured experiment and writes <experiment>_run.csv,
/// <experiment>_run.meta.json and <experiment>_run.gp into output_path
/// (brownian adds brownian_error.csv). The probe, when given, feeds the
/// peak-heap column of project-bench.
RunOutcome run_experiment(const ExperimentConfig& cfg, const MemoryProbe& probe = {});

/// 2 configuration, 3 numerical failure, 4 I/O.
int exit_code_for(ErrorCode code);

}  // namespace lrdiag::cli
