#include "doctest.h"

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

// Must match the library's httplib configuration (one definition rule).
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "argmaxgrad/errors.hpp"
#include "argmaxgrad/experiment.hpp"

using namespace argmaxgrad;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json bars_train_spec(const std::string& out_dir, int epochs = 30) {
  return json{
      {"kind", "train"},
      {"dataset", {{"synthetic", "bars"}, {"n", 1024}, {"test_n", 64}}},
      {"model", {{"latent", "categorical"}, {"k", 8}, {"hidden", 32}}},
      {"train",
       {{"estimator", "direct"},
        {"epsilon", 1.0},
        {"learning_rate", 3e-3},
        {"anneal_rate", 1e-3},
        {"epochs", epochs},
        {"batch_size", 8},
        {"seed", 0}}},
      {"output_dir", out_dir}};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// metrics.csv with the wall_ms column stripped; wall-clock times are the
/// one legitimately nondeterministic column.
std::string strip_wall_column(const std::string& csv) {
  std::istringstream is(csv);
  std::ostringstream os;
  std::string line;
  while (std::getline(is, line)) {
    const size_t comma = line.rfind(',');
    os << line.substr(0, comma) << "\n";
  }
  return os.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ARGMAXGRAD_CLI_PATH) + " " + args +
                          " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_SUITE_BEGIN("experiment");

TEST_CASE("specs round-trip losslessly and hash every field") {
  const json doc = bars_train_spec("/tmp/amg_rt");
  const ExperimentSpec spec = ExperimentSpec::from_json(doc);
  CHECK(spec.doc() == doc);

  const ExperimentSpec again = ExperimentSpec::from_json(doc);
  CHECK(again.config_hash() == spec.config_hash());

  json changed = doc;
  changed["train"]["epochs"] = 31;
  CHECK(ExperimentSpec::from_json(changed).config_hash() !=
        spec.config_hash());

  ExperimentSpec overridden = ExperimentSpec::from_json(doc);
  overridden.set_path("train.epochs", 31);
  CHECK(overridden.config_hash() ==
        ExperimentSpec::from_json(changed).config_hash());
}

TEST_CASE("invalid specs are rejected with ConfigError") {
  CHECK_THROWS_AS(ExperimentSpec::from_json(json{{"kind", "train"}}),
                  ConfigError);
  json bad = bars_train_spec("/tmp/amg_bad");
  bad["kind"] = "unknown_kind";
  CHECK_THROWS_AS(ExperimentSpec::from_json(bad), ConfigError);
  bad = bars_train_spec("/tmp/amg_bad");
  bad["train"]["estimator"] = "what";
  CHECK_THROWS_AS(ExperimentSpec::from_json(bad), ConfigError);
}

TEST_CASE("train run beats the untrained baseline by at least 30%") {
  const fs::path dir = fresh_dir("amg_run_train");
  const ExperimentSpec spec =
      ExperimentSpec::from_json(bars_train_spec(dir.string(), 30));

  // Untrained baseline via the same model construction.
  const auto data = spec.load_datasets();
  const DvaeModel untrained = spec.build_model(data.train.dim());
  const double baseline = evaluate(untrained, data.test, 1).test_loss;

  const RunResult r = run(spec);
  CHECK(r.final_test_loss < 0.7 * baseline);
  CHECK(fs::exists(dir / "metrics.csv"));
  CHECK(fs::exists(dir / "summary.json"));
  CHECK(fs::exists(dir / "model.ckpt"));

  const json summary = json::parse(slurp(dir / "summary.json"));
  CHECK(summary.at("config_hash") == spec.config_hash());
  CHECK(summary.at("final_test_loss").get<double>() ==
        doctest::Approx(r.final_test_loss));

  // Header row declares the schema.
  const std::string metrics = slurp(dir / "metrics.csv");
  CHECK(metrics.rfind("epoch,step,train_elbo,test_elbo,epsilon,accuracy,"
                      "wall_ms\n", 0) == 0);
}

TEST_CASE("same spec and seed produce identical metrics modulo wall clock") {
  const fs::path a = fresh_dir("amg_det_a");
  const fs::path b = fresh_dir("amg_det_b");
  json doc = bars_train_spec(a.string(), 5);
  run(ExperimentSpec::from_json(doc));
  doc["output_dir"] = b.string();
  run(ExperimentSpec::from_json(doc));
  CHECK(strip_wall_column(slurp(a / "metrics.csv")) ==
        strip_wall_column(slurp(b / "metrics.csv")));
}

TEST_CASE("completed runs resume as no-ops; interrupted runs continue exactly") {
  // Straight 4-epoch run.
  const fs::path full = fresh_dir("amg_resume_full");
  json doc = bars_train_spec(full.string(), 4);
  const RunResult straight = run(ExperimentSpec::from_json(doc));

  // Re-running the finished spec must not add epochs.
  const std::string metrics_before = slurp(full / "metrics.csv");
  const RunResult again = run(ExperimentSpec::from_json(doc));
  CHECK(slurp(full / "metrics.csv") == metrics_before);
  CHECK(again.final_test_loss == straight.final_test_loss);

  // Interrupted state: train 2 epochs through the library, stage the
  // checkpoint, then let run() finish epochs 2..3.
  const fs::path part = fresh_dir("amg_resume_part");
  json part_doc = bars_train_spec(part.string(), 4);
  const ExperimentSpec part_spec = ExperimentSpec::from_json(part_doc);
  {
    const auto data = part_spec.load_datasets();
    DvaeModel model = part_spec.build_model(data.train.dim());
    const TrainConfig cfg = part_spec.train_config();
    Trainer t(std::move(model), cfg);
    for (int epoch = 0; epoch < 2; ++epoch)
      for (const auto& idx : epoch_batches(data.train.count(),
                                           cfg.batch_size, cfg.seed, epoch))
        t.train_step(gather_rows(data.train.images, idx));
    t.save_checkpoint(part.string(), part_spec.config_hash());
    std::ofstream pf(part / "progress.json");
    pf << json{{"config_hash", part_spec.config_hash()},
               {"epochs_completed", 2}}
              .dump();
  }
  const RunResult resumed = run(part_spec);
  CHECK(resumed.final_test_loss == straight.final_test_loss);
}

TEST_CASE("bias_variance kind writes the stats CSV with an exact zero row") {
  const fs::path dir = fresh_dir("amg_profile");
  const json doc = {
      {"kind", "bias_variance"},
      {"dataset", {{"synthetic", "bars"}, {"n", 64}, {"test_n", 8}}},
      {"model", {{"latent", "categorical"}, {"k", 8}, {"hidden", 8}}},
      {"train", {{"learning_rate", 1e-3}, {"seed", 1}}},
      {"profile",
       {{"profile_images", 16},
        {"trials", 64},
        {"pretrain_steps", 30},
        {"grid", json::array({{{"estimator", "unbiased_enum"}},
                              {{"estimator", "direct"}, {"epsilon", 1.0}}})}}},
      {"output_dir", dir.string()}};
  run(ExperimentSpec::from_json(doc));

  const std::string csv = slurp(dir / "profile.csv");
  std::istringstream is(csv);
  std::string header, row0, row1;
  std::getline(is, header);
  std::getline(is, row0);
  std::getline(is, row1);
  CHECK(header == "knob,bias_l2,mean_std,trials");
  CHECK(row0 == "0,0,0,64");
  CHECK(row1.rfind("1,", 0) == 0);
}

TEST_CASE("structured_compare trains all three encoder variants") {
  const fs::path dir = fresh_dir("amg_compare");
  const json doc = {
      {"kind", "structured_compare"},
      {"dataset", {{"synthetic", "bars"}, {"n", 64}, {"test_n", 16}}},
      {"model", {{"latent", "structured"}, {"n", 4}, {"hidden", 8}}},
      {"train",
       {{"estimator", "direct"},
        {"epsilon", 1.0},
        {"epochs", 2},
        {"batch_size", 16},
        {"seed", 2}}},
      {"output_dir", dir.string()}};
  run(ExperimentSpec::from_json(doc));

  const std::string csv = slurp(dir / "compare.csv");
  CHECK(csv.find("unstructured,0,") != std::string::npos);
  CHECK(csv.find("supermodular,1,") != std::string::npos);
  CHECK(csv.find("general,1,") != std::string::npos);
  const json summary = json::parse(slurp(dir / "summary.json"));
  CHECK(summary.at("per_variant_test_loss").size() == 3);
}

TEST_CASE("CLI: exit codes for spec, data, and numeric failures") {
  CHECK(run_cli("run /nonexistent/spec.json") == 2);

  const fs::path dir = fresh_dir("amg_cli");
  {
    std::ofstream os(dir / "bad.json");
    os << "{\"kind\": \"train\"}";
  }
  CHECK(run_cli("run " + (dir / "bad.json").string()) == 2);

  // Numeric blow-up: an absurd learning rate overflows the weights on the
  // first update and the finite guard converts it to exit code 4.
  json doc = bars_train_spec((dir / "nan_run").string(), 3);
  doc["train"]["learning_rate"] = 1e308;
  doc["train"]["optimizer"] = "sgd";
  {
    std::ofstream os(dir / "nan.json");
    os << doc.dump();
  }
  CHECK(run_cli("run " + (dir / "nan.json").string()) == 4);

  // Happy path, exit 0, plus a --set override.
  json ok = bars_train_spec((dir / "ok_run").string(), 1);
  {
    std::ofstream os(dir / "ok.json");
    os << ok.dump();
  }
  CHECK(run_cli("run " + (dir / "ok.json").string() +
                " --set train.epochs=2") == 0);
  const std::string metrics = slurp(dir / "ok_run" / "metrics.csv");
  CHECK(metrics.find("\n1,") != std::string::npos);  // epoch 1 present
}

TEST_CASE("fetch verifies checksums against a local fixture server") {
  // Serve the bundled canonical files; fetch must accept them, be
  // idempotent, refuse corrupt bytes, and leave no partial files.
  const std::string src = std::string(ARGMAXGRAD_SOURCE_DIR) + "/data/mnist";
  httplib::Server server;
  std::atomic<int> hits{0};
  std::atomic<bool> corrupt{false};
  server.Get("/(.+)", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    std::ifstream is(src + "/" + req.matches[1].str(), std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    std::string body = ss.str();
    if (body.empty()) {
      res.status = 404;
      return;
    }
    if (corrupt) body[100] ^= 0x5a;
    res.set_content(body, "application/octet-stream");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread server_thread([&] { server.listen_after_bind(); });
  const std::string mirror = "http://127.0.0.1:" + std::to_string(port) + "/";

  const fs::path dir = fresh_dir("amg_fetch");
  fetch("mnist", dir.string(), mirror);
  CHECK(fs::exists(dir / "train-images-idx3-ubyte.gz"));
  CHECK(fs::exists(dir / "t10k-labels-idx1-ubyte.gz"));
  const int first_hits = hits;
  CHECK(first_hits == 4);

  // Idempotent: matching files short-circuit the download.
  fetch("mnist", dir.string(), mirror);
  CHECK(hits == first_hits);

  // Corrupted payloads are rejected and nothing is written.
  const fs::path dir2 = fresh_dir("amg_fetch_bad");
  corrupt = true;
  CHECK_THROWS_AS(fetch("mnist", dir2.string(), mirror), DataError);
  CHECK(fs::is_empty(dir2));
  corrupt = false;

  // A pre-existing mismatching file is refused, not overwritten.
  const fs::path dir3 = fresh_dir("amg_fetch_refuse");
  {
    std::ofstream os(dir3 / "train-images-idx3-ubyte.gz", std::ios::binary);
    os << "not the dataset";
  }
  CHECK_THROWS_AS(fetch("mnist", dir3.string(), mirror), DataError);
  CHECK(slurp(dir3 / "train-images-idx3-ubyte.gz") == "not the dataset");

  CHECK_THROWS_AS(fetch("cifar", dir.string(), mirror), DataError);

  server.stop();
  server_thread.join();
}

TEST_SUITE_END();
