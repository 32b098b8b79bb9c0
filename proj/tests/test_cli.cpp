#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "fedlm/commands.hpp"
#include "fedlm/config.hpp"
#include "fedlm/io.hpp"

using namespace fedlm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fedlm_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string config_error(const std::string& json) {
  try {
    parse_config_text(json);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FEDLM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

constexpr const char* kTinyRun = R"({
  "synth_num_clients": 6, "synth_seqs_per_client": 5, "synth_test_seqs_per_client": 2,
  "clients_per_round": 3, "rounds": 4, "eval_period": 2, "client_lr": 1.0,
  "server_optimizer": "sgd", "server_lr": 1.0, "upload_scheme": "uniform", "upload_bits": 8
})";

}  // namespace

TEST_CASE("config defaults and validation") {
  const ExperimentConfig d = parse_config_text("{}");
  CHECK(d.model_preset == "desk_lstm");
  CHECK(d.fed.rounds == 100);
  CHECK(d.fed.upload.scheme == Scheme::none);
  CHECK_FALSE(d.fed.pvt.has_value());

  CHECK(config_error(R"({"pvt_fraction": 0})").find("pvt_fraction") != std::string::npos);
  CHECK(config_error(R"({"pvt_fraction": 1.5})").find("pvt_fraction") != std::string::npos);
  CHECK(config_error(R"({"rounds": -1})").find("rounds") != std::string::npos);
  CHECK(config_error(R"({"rounds": "many"})").find("rounds") != std::string::npos);
  CHECK(config_error(R"({"no_such_key": 1})").find("no_such_key") != std::string::npos);
  CHECK(config_error(R"({"server_optimizer": "rmsprop"})").find("server_optimizer") !=
        std::string::npos);
  CHECK_FALSE(config_error("[1, 2]").empty());
  CHECK_FALSE(config_error("{not json").empty());

  const ExperimentConfig tern =
      parse_config_text(R"({"upload_scheme": "terngrad", "upload_bits": 1.585})");
  CHECK(tern.fed.upload.scheme == Scheme::terngrad);
  CHECK(tern.fed.upload.bits_per_value() == kTernaryBits);
  CHECK(config_error(R"({"upload_scheme": "uniform", "upload_bits": 1.585})")
            .find("upload_bits") != std::string::npos);
  CHECK(config_error(R"({"download_scheme": "uniform", "download_bits": 4})")
            .find("download_bits") != std::string::npos);
  CHECK(config_error(R"({"algorithm": "fedavg", "prox_mu": 0.1})").find("prox_mu") !=
        std::string::npos);

  const ExperimentConfig pvt = parse_config_text(R"({"pvt_fraction": 0.4})");
  REQUIRE(pvt.fed.pvt.has_value());
  CHECK(pvt.fed.pvt->fraction == 0.4);

  const ExperimentConfig lt =
      parse_config_text(R"({"model": "large_transformer", "layer_size": 1024})");
  CHECK(lt.model.arch == Arch::transformer);
  CHECK(lt.model.layer_size == 1024);
}

TEST_CASE("config echo round trips") {
  const ExperimentConfig a = parse_config_text(
      R"({"model": "desk_transformer", "pvt_fraction": 0.5, "upload_scheme": "terngrad",
          "download_scheme": "uniform", "download_bits": 16, "seed": 9})");
  const std::string echo = config_to_json(a);
  CHECK(config_to_json(parse_config_text(echo)) == echo);
  const auto keys = config_keys();
  const auto parsed = nlohmann::ordered_json::parse(echo);
  REQUIRE(parsed.size() == keys.size());
  std::size_t i = 0;
  for (const auto& [k, v] : parsed.items()) CHECK(k == keys[i++]);
}

TEST_CASE("cost-only projection reproduces the reference totals") {
  const fs::path dir = scratch("cost");
  std::ostringstream log;
  const auto base = cmd_federated(parse_config_text(R"({"model": "large_transformer",
      "rounds": 10000})"), dir, true, log);
  REQUIRE(base.size() == 2);
  CHECK(base[0].basis == "nominal");
  CHECK(base[0].download_gb == 840.0);
  CHECK(base[0].upload_gb == 840.0);
  CHECK(base[1].basis == "instantiated");
  CHECK(base[1].parameters == static_cast<double>(parameter_count(model_preset("large_transformer"))));

  const auto pvt = cmd_federated(parse_config_text(R"({"model": "large_transformer",
      "rounds": 10000, "pvt_fraction": 0.4, "upload_scheme": "uniform", "upload_bits": 8})"),
                                 dir, true, log);
  CHECK(pvt[0].download_gb == 840.0);
  CHECK(pvt[0].upload_gb == 84.0);
  CHECK(log.str().find("nominal") != std::string::npos);
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "summary.json"));
  CHECK_FALSE(fs::exists(dir / "metrics.csv"));
  fs::remove_all(dir);
}

TEST_CASE("federated run writes artifacts and the report merges them") {
  const fs::path root = scratch("run");
  std::ostringstream log;
  const ExperimentConfig cfg = parse_config_text(kTinyRun);
  const auto rows = cmd_federated(cfg, root / "alpha", false, log);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].basis == "measured");
  CHECK(rows[0].final_perplexity > 1.0);
  for (const char* f : {"metrics.csv", "ledger.csv", "manifest.json", "summary.json", "final.ckpt"})
    CHECK(fs::exists(root / "alpha" / f));

  const auto metrics = parse_metrics_csv(io::read_text(root / "alpha" / "metrics.csv"), "m");
  REQUIRE(metrics.size() == 3);  // rounds / eval_period + 1
  CHECK(metrics[0].round == 0);
  CHECK(metrics[2].round == 4);

  // Report totals equal the ledger's per-client sums.
  const auto summary = nlohmann::json::parse(io::read_text(root / "alpha" / "summary.json"));
  CHECK(metrics.back().cum_upload_bytes ==
        summary["ledger"]["cum_upload_bytes_per_client"].get<double>());
  CHECK(metrics.back().cum_download_bytes ==
        summary["ledger"]["cum_download_bytes_per_client"].get<double>());

  // The manifest is a pure function of the config.
  const std::string manifest = io::read_text(root / "alpha" / "manifest.json");
  cmd_federated(cfg, root / "beta", false, log);
  CHECK(io::read_text(root / "beta" / "manifest.json") == manifest);
  CHECK(io::read_text(root / "beta" / "metrics.csv") ==
        io::read_text(root / "alpha" / "metrics.csv"));

  io::write_text(root / "zeta.csv", io::read_text(root / "alpha" / "metrics.csv"));
  std::ostringstream out;
  cmd_report({root / "zeta.csv", root / "beta" / "metrics.csv", root / "alpha" / "metrics.csv"},
             root / "report.csv", out);
  const std::string merged = io::read_text(root / "report.csv");
  std::istringstream lines(merged);
  std::string line;
  std::getline(lines, line);
  CHECK(line ==
        "run,round,test_perplexity,cum_download_bytes,cum_upload_bytes,trainable_params,"
        "cum_upload_gb");
  std::vector<std::string> order;
  while (std::getline(lines, line)) order.push_back(line.substr(0, line.find(',', line.find(',') + 1)));
  CHECK(order == std::vector<std::string>{"alpha,0", "alpha,2", "alpha,4", "beta,0", "beta,2",
                                          "beta,4", "zeta,0", "zeta,2", "zeta,4"});
  CHECK(out.str().find("alpha") != std::string::npos);
  fs::remove_all(root);
}

TEST_CASE("metrics parsing") {
  const std::string header(kMetricsHeader);
  const auto rows = parse_metrics_csv(header + "\n0,128,0,0,5\n10,64.5,1000,250.5,5\n", "x");
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].cum_upload_bytes == 250.5);
  CHECK(metrics_csv(rows) == header + "\n0,128,0,0,5\n10,64.5,1000,250.5,5\n");

  auto error_of = [](const std::string& text) {
    try {
      parse_metrics_csv(text, "runs/a.csv");
    } catch (const ParseError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(error_of(header + "\n0,1,0,0,5\n1,2,3\n").rfind("runs/a.csv:3:", 0) == 0);
  CHECK(error_of(header + "\n0,abc,0,0,5\n").rfind("runs/a.csv:2:", 0) == 0);
  CHECK(error_of("round,ppl\n").rfind("runs/a.csv:1:", 0) == 0);
  CHECK(error_of("").rfind("runs/a.csv:1:", 0) == 0);

  CHECK(run_name("out/fedavg_seed1/metrics.csv") == "fedavg_seed1");
  CHECK(run_name("out/baseline.csv") == "baseline");
}

TEST_CASE("pretrain writes a checkpoint usable as a warm start") {
  const fs::path root = scratch("pretrain");
  std::ostringstream log;
  ExperimentConfig cfg = parse_config_text(kTinyRun);
  cfg.pretrain_steps = 3;
  cmd_pretrain(cfg, root / "pre", log);
  CHECK(fs::exists(root / "pre" / "pretrain.ckpt"));
  CHECK(io::read_text(root / "pre" / "pretrain_loss.csv").rfind("step,loss\n1,", 0) == 0);
  cfg.warm_start = (root / "pre" / "pretrain.ckpt").string();
  const auto rows = cmd_federated(cfg, root / "warm", false, log);
  CHECK(rows[0].final_perplexity > 1.0);
  cfg.warm_start = (root / "missing.ckpt").string();
  CHECK_THROWS(cmd_federated(cfg, root / "bad", false, log));
  fs::remove_all(root);
}

TEST_CASE("executable exit codes") {
  const fs::path root = scratch("exe");
  io::write_text(root / "bad.json", R"({"pvt_fraction": 0})");
  io::write_text(root / "tiny.json", kTinyRun);
  io::write_text(root / "broken.csv", "not a metrics file\n");
  const std::string r = root.string();
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("bogus") == 2);
  CHECK(run_cli("federated --config " + r + "/bad.json") == 2);
  CHECK(run_cli("federated --config " + r + "/missing.json") == 2);
  CHECK(run_cli("federated --cost-only --config " + r + "/tiny.json --out " + r + "/c") == 0);
  CHECK(run_cli("federated --config " + r + "/tiny.json --seed 3 --out " + r + "/run") == 0);
  CHECK(fs::exists(root / "run" / "metrics.csv"));
  CHECK(run_cli("report " + r + "/run/metrics.csv --out " + r + "/rep.csv") == 0);
  CHECK(fs::exists(root / "rep.csv"));
  CHECK(run_cli("report " + r + "/broken.csv --out " + r + "/rep2.csv") == 3);
  CHECK(run_cli("report") == 2);
  fs::remove_all(root);
}
