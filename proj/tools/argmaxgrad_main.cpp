#include <cstdio>
#include <cstdlib>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "argmaxgrad/errors.hpp"
#include "argmaxgrad/experiment.hpp"

namespace {

using argmaxgrad::ExperimentSpec;

constexpr int kExitOk = 0;
constexpr int kExitSpecError = 2;
constexpr int kExitDataError = 3;
constexpr int kExitNumericError = 4;

void print_error_json(const std::string& message, int code) {
  nlohmann::json err = {{"error", message}, {"exit_code", code}};
  std::printf("%s\n", err.dump().c_str());
}

ExperimentSpec load_spec(const std::string& path,
                         const std::vector<std::string>& overrides) {
  ExperimentSpec spec = ExperimentSpec::from_file(path);
  for (const std::string& kv : overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw argmaxgrad::ConfigError("--set expects key=value, got: " + kv);
    const std::string key = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;  // plain string
    spec.set_path(key, value);
  }
  if (const char* env = std::getenv("ARGMAXGRAD_SEED"))
    spec.set_seed(std::strtoull(env, nullptr, 10));
  return spec;
}

int run_spec(const std::string& path, const std::vector<std::string>& sets,
             bool force_profile) {
  ExperimentSpec spec = load_spec(path, sets);
  if (force_profile) spec.set_path("kind", "bias_variance");
  const argmaxgrad::RunResult r = argmaxgrad::run(spec);
  nlohmann::json out = {{"final_test_loss", r.final_test_loss},
                        {"wall_seconds", r.wall_seconds},
                        {"summary", r.summary_path}};
  if (r.has_accuracy) out["final_accuracy"] = r.final_accuracy;
  std::printf("%s\n", out.dump().c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient estimators for discrete latent-variable models"};
  app.require_subcommand(1);

  std::string spec_path, fetch_name, fetch_dir;
  std::vector<std::string> sets;

  CLI::App* cmd_run = app.add_subcommand("run", "Run an experiment spec");
  cmd_run->add_option("spec", spec_path, "Path to the spec JSON")->required();
  cmd_run->add_option("--set", sets,
                      "Override a spec field, dotted path: train.epochs=5");

  CLI::App* cmd_profile = app.add_subcommand(
      "profile", "Run a spec as a bias/variance profile");
  cmd_profile->add_option("spec", spec_path, "Path to the spec JSON")
      ->required();
  cmd_profile->add_option("--set", sets, "Override a spec field");

  CLI::App* cmd_fetch =
      app.add_subcommand("fetch", "Download a dataset with verification");
  cmd_fetch->add_option("dataset", fetch_name, "mnist or fashion")->required();
  cmd_fetch->add_option("dir", fetch_dir, "Target directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_run->parsed()) return run_spec(spec_path, sets, false);
    if (cmd_profile->parsed()) return run_spec(spec_path, sets, true);
    if (cmd_fetch->parsed()) {
      argmaxgrad::fetch(fetch_name, fetch_dir);
      std::printf("{\"fetched\": \"%s\", \"dir\": \"%s\"}\n",
                  fetch_name.c_str(), fetch_dir.c_str());
      return kExitOk;
    }
  } catch (const argmaxgrad::ConfigError& e) {
    print_error_json(e.what(), kExitSpecError);
    return kExitSpecError;
  } catch (const argmaxgrad::ParseError& e) {
    print_error_json(e.what(), kExitDataError);
    return kExitDataError;
  } catch (const argmaxgrad::DataError& e) {
    print_error_json(e.what(), kExitDataError);
    return kExitDataError;
  } catch (const argmaxgrad::NumericError& e) {
    print_error_json(e.what(), kExitNumericError);
    return kExitNumericError;
  } catch (const std::exception& e) {
    print_error_json(e.what(), 1);
    return 1;
  }
  return kExitOk;
}
