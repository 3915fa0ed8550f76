#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "argmaxgrad/data.hpp"
#include "argmaxgrad/dvae.hpp"

namespace argmaxgrad {

/// A validated experiment description. The raw JSON document is the source
/// of truth (it round-trips losslessly); typed accessors parse on demand.
class ExperimentSpec {
 public:
  enum class Kind { kTrain, kBiasVariance, kStructuredCompare, kSemiSupervised };

  static ExperimentSpec from_json(const nlohmann::json& j);
  static ExperimentSpec from_file(const std::string& path);

  const nlohmann::json& doc() const { return json_; }
  Kind kind() const;
  std::string output_dir() const;
  /// SHA-256 of the canonical (sorted-key, compact) JSON encoding.
  std::string config_hash() const;

  /// Dotted-path override, e.g. set("train.epochs", 5).
  void set_path(const std::string& dotted, const nlohmann::json& value);
  void set_seed(uint64_t seed);

  TrainConfig train_config() const;
  DvaeModel build_model(int input_dim) const;

  struct DatasetPair {
    Dataset train;
    Dataset test;
    nlohmann::json provenance;  // synthetic parameters, when applicable
  };
  DatasetPair load_datasets() const;

 private:
  nlohmann::json json_;
};

struct RunResult {
  double final_test_loss = 0.0;
  double final_accuracy = 0.0;
  bool has_accuracy = false;
  double wall_seconds = 0.0;
  std::string summary_path;
};

/// Executes the experiment: trains (resuming from a checkpoint in the
/// output directory when one matches the spec), evaluates, and writes
/// metrics.csv, the final checkpoint, and summary.json. The bias_variance
/// kind writes a GradientStats CSV instead; structured_compare trains the
/// three encoder variants against one decoder.
RunResult run(const ExperimentSpec& spec);

/// Downloads the named dataset's IDX files into target_dir with SHA-256
/// verification. Files already present and matching are left alone;
/// mismatching files are refused. `mirror_base` (or the ARGMAXGRAD_MIRROR
/// environment variable) overrides the canonical URLs.
void fetch(const std::string& dataset, const std::string& target_dir,
           const std::string& mirror_base = "");

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);

}  // namespace argmaxgrad
