#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "argmaxgrad/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "argmaxgrad/errors.hpp"

namespace argmaxgrad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr uint64_t kModelStream = 21;
constexpr uint64_t kProfileStream = 22;

// ---------------------------------------------------------------------------
// Spec parsing
// ---------------------------------------------------------------------------

ExperimentSpec::Kind kind_from_string(const std::string& s) {
  if (s == "train") return ExperimentSpec::Kind::kTrain;
  if (s == "bias_variance") return ExperimentSpec::Kind::kBiasVariance;
  if (s == "structured_compare")
    return ExperimentSpec::Kind::kStructuredCompare;
  if (s == "semi_supervised") return ExperimentSpec::Kind::kSemiSupervised;
  throw ConfigError("unknown experiment kind: " + s);
}

EstimatorVariant estimator_from_string(const std::string& s) {
  if (s == "direct") return EstimatorVariant::kDirect;
  if (s == "unbiased_enum") return EstimatorVariant::kUnbiasedEnum;
  if (s == "gsm") return EstimatorVariant::kGsm;
  if (s == "score_function") return EstimatorVariant::kScoreFunction;
  throw ConfigError("unknown estimator: " + s);
}

PairwiseMode pairwise_from_string(const std::string& s) {
  if (s == "none") return PairwiseMode::kNone;
  if (s == "supermodular") return PairwiseMode::kSupermodular;
  if (s == "general") return PairwiseMode::kGeneral;
  throw ConfigError("unknown pairwise mode: " + s);
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  return j.at(key).get<T>();
}

EstimatorConfig estimator_config_from_json(const json& t) {
  EstimatorConfig e;
  e.variant = estimator_from_string(
      get_or<std::string>(t, "estimator", "direct"));
  e.epsilon = get_or<double>(t, "epsilon", 1.0);
  e.tau = get_or<double>(t, "tau", 1.0);
  e.samples_per_step = get_or<int>(t, "samples_per_step", 1);
  return e;
}

}  // namespace

ExperimentSpec ExperimentSpec::from_json(const json& j) {
  ExperimentSpec s;
  s.json_ = j;
  if (!j.is_object()) throw ConfigError("experiment spec must be an object");
  for (const char* key : {"kind", "output_dir", "dataset"})
    if (!j.contains(key))
      throw ConfigError(std::string("experiment spec is missing '") + key +
                        "'");
  s.kind();          // validates
  s.train_config();  // validates
  return s;
}

ExperimentSpec ExperimentSpec::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open spec file " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("spec " + path + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

ExperimentSpec::Kind ExperimentSpec::kind() const {
  return kind_from_string(json_.at("kind").get<std::string>());
}

std::string ExperimentSpec::output_dir() const {
  return json_.at("output_dir").get<std::string>();
}

std::string ExperimentSpec::config_hash() const {
  return sha256_hex(json_.dump());
}

void ExperimentSpec::set_path(const std::string& dotted, const json& value) {
  json* node = &json_;
  size_t begin = 0;
  while (true) {
    const size_t dot = dotted.find('.', begin);
    const std::string key = dotted.substr(
        begin, dot == std::string::npos ? std::string::npos : dot - begin);
    if (key.empty()) throw ConfigError("bad --set path: " + dotted);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    begin = dot + 1;
  }
}

void ExperimentSpec::set_seed(uint64_t seed) {
  json_["train"]["seed"] = seed;
}

TrainConfig ExperimentSpec::train_config() const {
  const json t = json_.contains("train") ? json_.at("train") : json::object();
  TrainConfig c;
  c.estimator = estimator_config_from_json(t);
  c.learning_rate = get_or<double>(t, "learning_rate", 1e-3);
  c.anneal_rate = get_or<double>(t, "anneal_rate", 1e-5);
  c.anneal_period = get_or<int>(t, "anneal_period", 1000);
  c.epsilon_min = get_or<double>(t, "epsilon_min", 0.1);
  c.epochs = get_or<int>(t, "epochs", 30);
  c.batch_size = get_or<int>(t, "batch_size", 100);
  c.seed = get_or<uint64_t>(t, "seed", 0);
  const std::string opt = get_or<std::string>(t, "optimizer", "adam");
  if (opt == "adam") {
    c.optimizer = OptimizerKind::kAdam;
  } else if (opt == "sgd") {
    c.optimizer = OptimizerKind::kSgd;
  } else {
    throw ConfigError("unknown optimizer: " + opt);
  }
  if (t.contains("supervision") && !t.at("supervision").is_null()) {
    SupervisionConfig s;
    s.num_labels = get_or<int>(t.at("supervision"), "num_labels", 100);
    s.weight = get_or<double>(t.at("supervision"), "weight", 1.0);
    c.supervision = s;
  }
  if (c.epochs < 0 || c.batch_size < 1 || c.anneal_period < 1)
    throw ConfigError("train: epochs/batch_size/anneal_period out of range");
  return c;
}

DvaeModel ExperimentSpec::build_model(int input_dim) const {
  if (!json_.contains("model"))
    throw ConfigError("experiment spec is missing 'model'");
  const json& m = json_.at("model");
  const int hidden = get_or<int>(m, "hidden", 300);
  RngStream rng(train_config().seed, kModelStream);
  const std::string latent = get_or<std::string>(m, "latent", "categorical");
  if (latent == "categorical") {
    const int k = get_or<int>(m, "k", 10);
    if (k < 2) throw ConfigError("model.k must be >= 2");
    return DvaeModel::categorical(input_dim, hidden, k, rng);
  }
  if (latent == "structured") {
    const int n = get_or<int>(m, "n", 8);
    if (n < 1) throw ConfigError("model.n must be >= 1");
    return DvaeModel::structured(
        input_dim, hidden, n,
        pairwise_from_string(get_or<std::string>(m, "pairwise", "none")), rng);
  }
  throw ConfigError("unknown latent kind: " + latent);
}

ExperimentSpec::DatasetPair ExperimentSpec::load_datasets() const {
  const json& d = json_.at("dataset");
  DatasetPair out;

  if (d.contains("synthetic")) {
    const std::string kind_s = d.at("synthetic").get<std::string>();
    const SyntheticKind kind = kind_s == "bars" ? SyntheticKind::kBars
                              : kind_s == "mixture"
                                  ? SyntheticKind::kMixture
                                  : throw ConfigError("unknown synthetic kind: " +
                                                      kind_s);
    const int n = get_or<int>(d, "n", 512);
    const int test_n = get_or<int>(d, "test_n", std::max(n / 4, 1));
    const uint64_t seed = get_or<uint64_t>(d, "seed", 1);
    const int components = get_or<int>(d, "components", 4);
    SyntheticDataset tr = synthetic_dataset(kind, n, seed, components);
    SyntheticDataset te = synthetic_dataset(kind, test_n, seed + 1, components);
    out.train = std::move(tr.data);
    out.test = std::move(te.data);
    out.train.split = "train";
    out.test.split = "test";
    if (kind == SyntheticKind::kMixture) {
      json means = json::array();
      for (int c = 0; c < tr.mixture_means.rows(); ++c) {
        json row = json::array();
        for (int p = 0; p < tr.mixture_means.cols(); ++p)
          row.push_back(tr.mixture_means(c, p));
        means.push_back(row);
      }
      out.provenance = {{"synthetic", "mixture"},
                        {"components", components},
                        {"seed", seed},
                        {"means", means}};
    } else {
      out.provenance = {{"synthetic", "bars"}, {"seed", seed}};
    }
    return out;
  }

  for (const char* key : {"images", "test_images"})
    if (!d.contains(key))
      throw ConfigError(std::string("dataset needs '") + key +
                        "' (or 'synthetic')");
  out.train = load_idx(d.at("images").get<std::string>(),
                       get_or<std::string>(d, "labels", ""));
  out.test = load_idx(d.at("test_images").get<std::string>(),
                      get_or<std::string>(d, "test_labels", ""));
  out.train.split = "train";
  out.test.split = "test";

  const int train_limit = get_or<int>(d, "train_limit", 0);
  const int test_limit = get_or<int>(d, "test_limit", 0);
  if (train_limit > 0) out.train = out.train.take(train_limit);
  if (test_limit > 0) out.test = out.test.take(test_limit);

  const std::string bin = get_or<std::string>(d, "binarize", "threshold");
  const uint64_t bseed = get_or<uint64_t>(d, "binarize_seed", 0);
  if (bin == "threshold") {
    out.train = binarize(out.train, BinarizeMode::kThreshold);
    out.test = binarize(out.test, BinarizeMode::kThreshold);
  } else if (bin == "stochastic") {
    out.train = binarize(out.train, BinarizeMode::kStochastic, bseed);
    out.test = binarize(out.test, BinarizeMode::kStochastic, bseed + 1);
  } else if (bin != "none") {
    throw ConfigError("unknown binarize mode: " + bin);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

namespace {

struct EpochRow {
  std::string variant;  // empty outside structured_compare
  int epoch = 0;
  int64_t step = 0;
  double train_elbo = 0.0;
  double test_elbo = 0.0;
  double knob = 0.0;
  double accuracy = 0.0;
  bool has_accuracy = false;
  double wall_ms = 0.0;
};

void append_metrics_row(std::ofstream& os, const EpochRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%lld,%.17g,%.17g,%.17g,", r.epoch,
                static_cast<long long>(r.step), r.train_elbo, r.test_elbo,
                r.knob);
  os << buf;
  if (r.has_accuracy) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.accuracy);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), ",%.17g\n", r.wall_ms);
  os << buf;
  os.flush();
}

struct LabeledSubset {
  Tensor images;
  std::vector<int> labels;
};

/// Stratified pick of `num_labels` examples, round-robin over classes in
/// dataset order.
LabeledSubset pick_labeled_subset(const Dataset& d, int num_labels) {
  if (!d.has_labels())
    throw ConfigError("semi-supervised training needs a labeled dataset");
  int num_classes = 0;
  for (int l : d.labels) num_classes = std::max(num_classes, l + 1);
  std::vector<std::vector<int>> by_class(num_classes);
  for (int i = 0; i < d.count(); ++i) by_class[d.labels[i]].push_back(i);

  std::vector<int> chosen;
  for (int round = 0; static_cast<int>(chosen.size()) < num_labels; ++round) {
    bool any = false;
    for (int c = 0;
         c < num_classes && static_cast<int>(chosen.size()) < num_labels; ++c)
      if (round < static_cast<int>(by_class[c].size())) {
        chosen.push_back(by_class[c][round]);
        any = true;
      }
    if (!any)
      throw ConfigError("dataset has fewer examples than requested labels");
  }

  LabeledSubset out;
  out.images = gather_rows(d.images, chosen);
  out.labels.reserve(chosen.size());
  for (int i : chosen) out.labels.push_back(d.labels[i]);
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

struct LoopResult {
  EvalResult final_eval;
  std::vector<EpochRow> rows;
};

/// Epoch loop shared by the train / semi_supervised / structured_compare
/// kinds. Resumes from `ckpt_dir` when a checkpoint matching `config_hash`
/// is present; checkpoints land on epoch boundaries only.
LoopResult train_loop(DvaeModel model, const TrainConfig& cfg,
                      const Dataset& train, const Dataset& test, int eval_mc,
                      const std::string& ckpt_dir,
                      const std::string& config_hash,
                      const std::string& variant_tag,
                      std::ofstream* metrics) {
  using clock = std::chrono::steady_clock;

  int start_epoch = 0;
  std::optional<Trainer> trainer;
  const fs::path progress_path = fs::path(ckpt_dir) / "progress.json";
  if (fs::exists(progress_path)) {
    std::ifstream pf(progress_path);
    json progress = json::parse(pf, nullptr, false);
    if (!progress.is_discarded() &&
        progress.value("config_hash", "") == config_hash) {
      trainer = Trainer::load_checkpoint(ckpt_dir, cfg);
      if (trainer) start_epoch = progress.value("epochs_completed", 0);
    }
  }
  if (!trainer) trainer.emplace(std::move(model), cfg);

  std::optional<LabeledSubset> labeled;
  int inject_every = 0;
  if (cfg.supervision) {
    labeled = pick_labeled_subset(train, cfg.supervision->num_labels);
    inject_every = (train.count() + cfg.supervision->num_labels - 1) /
                   cfg.supervision->num_labels;
  }

  const int n_batches =
      (train.count() + cfg.batch_size - 1) / cfg.batch_size;
  LoopResult out;

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    double elbo_sum = 0.0;
    int elbo_count = 0;
    double knob = trainer->current_knob();
    std::vector<double> step_ms;

    const auto batches =
        epoch_batches(train.count(), cfg.batch_size, cfg.seed, epoch);
    for (size_t b = 0; b < batches.size(); ++b) {
      const auto t0 = clock::now();
      const Tensor X = gather_rows(train.images, batches[b]);
      const StepMetrics m = trainer->train_step(X);
      elbo_sum += m.elbo;
      ++elbo_count;
      knob = m.knob;
      step_ms.push_back(
          std::chrono::duration<double, std::milli>(clock::now() - t0)
              .count());

      if (labeled) {
        const int64_t global_batch =
            static_cast<int64_t>(epoch) * n_batches + static_cast<int64_t>(b);
        if ((global_batch + 1) % inject_every == 0)
          trainer->semi_supervised_step(labeled->images, labeled->labels);
      }
    }

    const EvalResult ev = evaluate(trainer->model(), test, eval_mc);
    EpochRow row;
    row.variant = variant_tag;
    row.epoch = epoch;
    row.step = trainer->steps();
    row.train_elbo = elbo_count ? elbo_sum / elbo_count : 0.0;
    row.test_elbo = ev.test_loss;
    row.knob = knob;
    row.accuracy = ev.accuracy;
    row.has_accuracy = ev.has_accuracy;
    row.wall_ms = median(step_ms);
    out.rows.push_back(row);
    if (metrics) append_metrics_row(*metrics, row);
    out.final_eval = ev;

    trainer->save_checkpoint(ckpt_dir, config_hash);
    std::ofstream pf(progress_path);
    pf << json{{"config_hash", config_hash}, {"epochs_completed", epoch + 1}}
              .dump(2)
       << "\n";
  }

  if (out.rows.empty())  // zero-epoch run: still report the untouched model
    out.final_eval = evaluate(trainer->model(), test, eval_mc);
  return out;
}

std::ofstream open_metrics_csv(const fs::path& path) {
  const bool fresh = !fs::exists(path);
  std::ofstream os(path, std::ios::app);
  if (!os) throw Error("cannot open " + path.string());
  if (fresh)
    os << "epoch,step,train_elbo,test_elbo,epsilon,accuracy,wall_ms\n";
  return os;
}

json summary_json(const ExperimentSpec& spec, const RunResult& r) {
  json s = {{"final_test_loss", r.final_test_loss},
            {"wall_seconds", r.wall_seconds},
            {"config_hash", spec.config_hash()}};
  if (r.has_accuracy) s["final_accuracy"] = r.final_accuracy;
  return s;
}

RunResult run_training_kind(const ExperimentSpec& spec) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path out_dir(spec.output_dir());
  fs::create_directories(out_dir);

  ExperimentSpec::DatasetPair data = spec.load_datasets();
  if (!data.provenance.is_null()) {
    std::ofstream pf(out_dir / "dataset_params.json");
    pf << data.provenance.dump(2) << "\n";
  }

  TrainConfig cfg = spec.train_config();
  if (spec.kind() == ExperimentSpec::Kind::kTrain) cfg.supervision.reset();
  if (spec.kind() == ExperimentSpec::Kind::kSemiSupervised &&
      !cfg.supervision)
    cfg.supervision = SupervisionConfig{};

  DvaeModel model = spec.build_model(data.train.dim());
  std::ofstream metrics = open_metrics_csv(out_dir / "metrics.csv");
  const int eval_mc = get_or<int>(spec.doc(), "eval_mc_samples", 1);

  const LoopResult loop =
      train_loop(std::move(model), cfg, data.train, data.test, eval_mc,
                 out_dir.string(), spec.config_hash(), "", &metrics);

  RunResult r;
  r.final_test_loss = loop.final_eval.test_loss;
  r.final_accuracy = loop.final_eval.accuracy;
  r.has_accuracy = loop.final_eval.has_accuracy;
  r.wall_seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
  std::ofstream sf(out_dir / "summary.json");
  sf << summary_json(spec, r).dump(2) << "\n";
  r.summary_path = (out_dir / "summary.json").string();
  return r;
}

RunResult run_bias_variance(const ExperimentSpec& spec) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path out_dir(spec.output_dir());
  fs::create_directories(out_dir);

  ExperimentSpec::DatasetPair data = spec.load_datasets();
  const json prof = spec.doc().contains("profile") ? spec.doc().at("profile")
                                                    : json::object();
  const int subset = get_or<int>(prof, "profile_images", 100);
  const int trials = get_or<int>(prof, "trials", 10000);
  const int pretrain_steps = get_or<int>(prof, "pretrain_steps", 2000);
  const Dataset profile_set = data.train.take(subset);

  DvaeModel model = spec.build_model(data.train.dim());
  if (model.latent.kind != LatentSpec::Kind::kCategorical)
    throw ConfigError("bias_variance profiles need a categorical latent");

  // Figure-of-merit reference point: parameters learned with the unbiased
  // gradient on the profile subset.
  TrainConfig cfg = spec.train_config();
  cfg.supervision.reset();
  TrainConfig pre_cfg = cfg;
  pre_cfg.estimator.variant = EstimatorVariant::kUnbiasedEnum;
  Trainer pre(std::move(model), pre_cfg);
  for (int s = 0; s < pretrain_steps; ++s)
    pre.train_step(profile_set.images);

  const MlpParams& enc = pre.model().encoder;
  const MlpParams& dec = pre.model().decoder;
  const GradientMap reference =
      unbiased_gradient_mean(enc, dec, profile_set.images);

  std::vector<EstimatorConfig> grid;
  if (prof.contains("grid")) {
    for (const auto& g : prof.at("grid"))
      grid.push_back(estimator_config_from_json(g));
  } else {
    for (double eps : {0.1, 0.3, 1.0, 3.0}) {
      EstimatorConfig e;
      e.variant = EstimatorVariant::kDirect;
      e.epsilon = eps;
      grid.push_back(e);
    }
  }

  RngStream rng(cfg.seed, kProfileStream);
  const std::vector<GradientStats> stats = bias_variance_profile(
      enc, dec, profile_set.images, grid, reference, trials, rng);
  write_gradient_stats_csv((out_dir / "profile.csv").string(), stats);

  RunResult r;
  const EvalResult ev = evaluate(pre.model(), profile_set, 1);
  r.final_test_loss = ev.test_loss;
  r.wall_seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
  std::ofstream sf(out_dir / "summary.json");
  json s = summary_json(spec, r);
  s["profile_rows"] = stats.size();
  s["trials"] = trials;
  sf << s.dump(2) << "\n";
  r.summary_path = (out_dir / "summary.json").string();
  return r;
}

RunResult run_structured_compare(const ExperimentSpec& spec) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path out_dir(spec.output_dir());
  fs::create_directories(out_dir);

  ExperimentSpec::DatasetPair data = spec.load_datasets();
  TrainConfig cfg = spec.train_config();
  cfg.supervision.reset();
  if (cfg.estimator.variant != EstimatorVariant::kDirect)
    throw ConfigError("structured_compare trains with the direct estimator");

  const json& m = spec.doc().contains("model") ? spec.doc().at("model")
                                                : json::object();
  const int hidden = get_or<int>(m, "hidden", 300);
  const int n = get_or<int>(m, "n", 8);
  const int eval_mc = get_or<int>(spec.doc(), "eval_mc_samples", 1);

  std::ofstream cmp(out_dir / "compare.csv");
  if (!cmp) throw Error("cannot open compare.csv");
  cmp << "variant,epoch,step,train_elbo,test_elbo,epsilon,wall_ms\n";

  const std::pair<const char*, PairwiseMode> variants[] = {
      {"unstructured", PairwiseMode::kNone},
      {"supermodular", PairwiseMode::kSupermodular},
      {"general", PairwiseMode::kGeneral}};

  RunResult r;
  json per_variant = json::object();
  for (const auto& [tag, mode] : variants) {
    RngStream rng(cfg.seed, kModelStream);
    DvaeModel model =
        DvaeModel::structured(data.train.dim(), hidden, n, mode, rng);
    const fs::path vdir = out_dir / tag;
    fs::create_directories(vdir);
    const LoopResult loop =
        train_loop(std::move(model), cfg, data.train, data.test, eval_mc,
                   vdir.string(), spec.config_hash(), tag, nullptr);
    for (const EpochRow& row : loop.rows) {
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%s,%d,%lld,%.17g,%.17g,%.17g,%.17g\n",
                    tag, row.epoch, static_cast<long long>(row.step),
                    row.train_elbo, row.test_elbo, row.knob, row.wall_ms);
      cmp << buf;
    }
    cmp.flush();
    per_variant[tag] = loop.final_eval.test_loss;
    if (mode == PairwiseMode::kSupermodular)
      r.final_test_loss = loop.final_eval.test_loss;
  }

  r.wall_seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
  std::ofstream sf(out_dir / "summary.json");
  json s = summary_json(spec, r);
  s["per_variant_test_loss"] = per_variant;
  sf << s.dump(2) << "\n";
  r.summary_path = (out_dir / "summary.json").string();
  return r;
}

}  // namespace

RunResult run(const ExperimentSpec& spec) {
  switch (spec.kind()) {
    case ExperimentSpec::Kind::kTrain:
    case ExperimentSpec::Kind::kSemiSupervised:
      return run_training_kind(spec);
    case ExperimentSpec::Kind::kBiasVariance:
      return run_bias_variance(spec);
    case ExperimentSpec::Kind::kStructuredCompare:
      return run_structured_compare(spec);
  }
  throw ConfigError("unhandled experiment kind");
}

// ---------------------------------------------------------------------------
// Fetch
// ---------------------------------------------------------------------------

std::string sha256_hex(const void* data, size_t len) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int digest_len = 0;
  if (!EVP_Digest(data, len, digest, &digest_len, EVP_sha256(), nullptr))
    throw Error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(digest_len * 2);
  for (unsigned int i = 0; i < digest_len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_hex(const std::string& s) {
  return sha256_hex(s.data(), s.size());
}

namespace {

struct RemoteFile {
  const char* name;
  const char* sha256;
};

struct DatasetSource {
  const char* base;  // canonical base URL, slash-terminated
  RemoteFile files[4];
};

// Pinned SHA-256 of the canonical gzip files.
const DatasetSource kMnist = {
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    {{"train-images-idx3-ubyte.gz",
      "440fcabf73cc546fa21475e81ea370265605f56be210a4024d2ca8f203523609"},
     {"train-labels-idx1-ubyte.gz",
      "3552534a0a558bbed6aed32b30c495cca23d567ec52cac8be1a0730e8010255c"},
     {"t10k-images-idx3-ubyte.gz",
      "8d422c7b0a1c1c79245a5bcf07fe86e33eeafee792b84584aec276f5a2dbc4e6"},
     {"t10k-labels-idx1-ubyte.gz",
      "f7ae60f92e00ec6debd23a6088c31dbd2371eca3ffa0defaefb259924204aec6"}}};

const DatasetSource kFashion = {
    "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
    {{"train-images-idx3-ubyte.gz",
      "3aede38d61863908ad78613f6a32ed271626dd12800ba2636569512369268a84"},
     {"train-labels-idx1-ubyte.gz",
      "a04f17134ac03560a47e3764e11b92fc97de4d1bfaf8ba1a3aa29af54cc90845"},
     {"t10k-images-idx3-ubyte.gz",
      "346e55b948d973a97e58d2351dde16a484bd415d4595297633bb08f03db6a073"},
     {"t10k-labels-idx1-ubyte.gz",
      "67da17c76eaffca5446c3361aaab5c3cd6d1c2608764d35dfb1850b086bf8dd5"}}};

struct ParsedUrl {
  bool https = false;
  std::string host_port;
  std::string path;  // begins with '/'
};

ParsedUrl parse_url(const std::string& url) {
  ParsedUrl u;
  std::string rest;
  if (url.rfind("https://", 0) == 0) {
    u.https = true;
    rest = url.substr(8);
  } else if (url.rfind("http://", 0) == 0) {
    rest = url.substr(7);
  } else {
    throw DataError("unsupported URL scheme: " + url);
  }
  const size_t slash = rest.find('/');
  u.host_port = rest.substr(0, slash);
  u.path = slash == std::string::npos ? "/" : rest.substr(slash);
  if (u.host_port.empty()) throw DataError("bad URL: " + url);
  return u;
}

std::string http_get(const std::string& url) {
  const ParsedUrl u = parse_url(url);
  auto fetch_body = [&](auto& client) -> std::string {
    client.set_follow_location(true);
    client.set_connection_timeout(30);
    client.set_read_timeout(120);
    auto res = client.Get(u.path);
    if (!res)
      throw DataError("download failed for " + url + ": " +
                      httplib::to_string(res.error()));
    if (res->status != 200)
      throw DataError("download failed for " + url + ": HTTP " +
                      std::to_string(res->status));
    return res->body;
  };
  if (u.https) {
    httplib::SSLClient client(u.host_port);
    client.enable_server_certificate_verification(true);
    return fetch_body(client);
  }
  httplib::Client client(u.host_port);
  return fetch_body(client);
}

std::string read_file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

void fetch(const std::string& dataset, const std::string& target_dir,
           const std::string& mirror_base) {
  const DatasetSource* src = nullptr;
  if (dataset == "mnist") {
    src = &kMnist;
  } else if (dataset == "fashion") {
    src = &kFashion;
  } else {
    throw DataError("unknown dataset '" + dataset +
                    "' (expected mnist or fashion)");
  }

  std::string base = mirror_base;
  if (base.empty())
    if (const char* env = std::getenv("ARGMAXGRAD_MIRROR")) base = env;
  if (base.empty()) base = src->base;
  if (base.back() != '/') base.push_back('/');

  fs::create_directories(target_dir);
  for (const RemoteFile& f : src->files) {
    const fs::path target = fs::path(target_dir) / f.name;
    if (fs::exists(target)) {
      const std::string got = sha256_hex(read_file_bytes(target));
      if (got == f.sha256) continue;  // already fetched
      throw DataError("refusing to overwrite " + target.string() +
                      ": existing file hash " + got + " != expected " +
                      f.sha256);
    }
    const std::string body = http_get(base + f.name);
    const std::string got = sha256_hex(body);
    if (got != f.sha256)
      throw DataError("checksum mismatch for " + std::string(f.name) +
                      ": got " + got + ", expected " + f.sha256 +
                      "; nothing was written");
    std::ofstream os(target, std::ios::binary);
    os.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!os) {
      std::error_code ec;
      fs::remove(target, ec);
      throw DataError("write failed for " + target.string());
    }
  }
}

}  // namespace argmaxgrad
