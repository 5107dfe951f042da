#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lrdiag/alloc_probe.hpp"
#include "lrdiag/cli.hpp"

namespace {

using lrdiag::cli::Json;

// Every leaf of the experiment's tree becomes --<dotted.path>; block leaves
// also get their bare name when it is not already taken.
struct LeafFlag {
  std::string path;
  CLI::Option* dotted = nullptr;
  CLI::Option* bare = nullptr;
  std::string dotted_value;
  std::string bare_value;
};

std::string leaf_default(const Json& tree, const std::string& path) {
  const Json* node = &tree;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    node = &(*node)[path.substr(start, dot == std::string::npos ? std::string::npos : dot - start)];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_string()) return node->get<std::string>();
  if (node->is_array()) {
    std::string s;
    for (const auto& e : *node) s += (s.empty() ? "" : ",") + e.dump();
    return s;
  }
  return node->dump();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Factored covariance flows: projection benchmarks, Riccati and Kalman-Bucy experiments, VI flows"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, seed_text, out_dir;
  app.add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed_text, "random seed (overrides the configuration)");
  app.add_option("--out", out_dir, "output directory (overrides output_path)");

  std::map<CLI::App*, std::string> experiment_of;
  std::map<std::string, std::vector<std::unique_ptr<LeafFlag>>> flags;
  for (const auto& name : lrdiag::cli::experiment_names()) {
    CLI::App* sub = app.add_subcommand(name, "run the " + name + " experiment");
    sub->set_help_flag("--help", "Print this help message and exit");  // frees -h/--h for the step size
    experiment_of[sub] = name;
    const Json defaults = lrdiag::cli::default_config(name);
    const auto leaves = lrdiag::cli::leaf_paths(defaults);
    std::map<std::string, int> bare_count;
    for (const auto& path : leaves) ++bare_count[path.substr(path.rfind('.') + 1)];
    for (const auto& path : leaves) {
      if (path == "experiment" || path == "seed" || path == "output_path") continue;
      auto flag = std::make_unique<LeafFlag>();
      flag->path = path;
      const std::string help = "default: " + leaf_default(defaults, path);
      flag->dotted = sub->add_option("--" + path, flag->dotted_value, help);
      const std::string bare = path.substr(path.rfind('.') + 1);
      if (bare != path && bare_count[bare] == 1 && bare != "config" && bare != "out")
        flag->bare = sub->add_option("--" + bare, flag->bare_value, "same as --" + path);
      flags[name].push_back(std::move(flag));
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const std::string experiment = experiment_of.at(chosen);
  std::vector<lrdiag::cli::Override> overrides;
  if (!seed_text.empty()) overrides.emplace_back("seed", seed_text);
  if (!out_dir.empty()) overrides.emplace_back("output_path", out_dir);
  for (const auto& flag : flags[experiment]) {
    if (flag->dotted->count() > 0) overrides.emplace_back(flag->path, flag->dotted_value);
    if (flag->bare && flag->bare->count() > 0) overrides.emplace_back(flag->path, flag->bare_value);
  }

  try {
    const auto cfg = lrdiag::cli::parse_config(experiment, config_path, overrides);
    const lrdiag::MemoryProbe probe{lrdiag::alloc_probe::reset, lrdiag::alloc_probe::peak_bytes_since_reset};
    const auto outcome = lrdiag::cli::run_experiment(cfg, probe);
    std::cout << outcome.summary;
    const auto& d = outcome.diag;
    std::cout << "diagnostics: clamps " << d.positivity_clamps << ", fallbacks " << d.fallback_count()
              << ", invariant violations " << d.invariant_violations << " of " << d.invariant_checks << " checks\n";
    for (const auto& f : outcome.files) std::cout << "wrote " << f.string() << "\n";
    return 0;
  } catch (const lrdiag::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return lrdiag::cli::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
