#include "fedlm/commands.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <ostream>

#include "fedlm/io.hpp"

namespace fedlm {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

CostSummary project_cost(const ExperimentConfig& cfg, double parameters,
                         std::string basis) {
  const double rounds = static_cast<double>(cfg.fed.rounds);
  const double fraction = cfg.fed.pvt ? cfg.fed.pvt->fraction : 1.0;
  CostSummary s;
  s.basis = std::move(basis);
  s.parameters = parameters;
  s.download_gb = cost_bytes(parameters, cfg.fed.download.bits_per_value(), rounds) / kBytesPerGB;
  s.upload_gb =
      cost_bytes(fraction * parameters, cfg.fed.upload.bits_per_value(), rounds) / kBytesPerGB;
  return s;
}

std::string format_cost_table(const std::vector<CostSummary>& rows) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-14s %14s %14s %14s %16s\n", "basis", "parameters",
                "download_gb", "upload_gb", "final_perplexity");
  out += line;
  for (const auto& r : rows) {
    char ppl[32] = "-";
    if (r.final_perplexity > 0.0) std::snprintf(ppl, sizeof ppl, "%.4f", r.final_perplexity);
    std::snprintf(line, sizeof line, "%-14s %14.0f %14.4f %14.4f %16s\n", r.basis.c_str(),
                  r.parameters, r.download_gb, r.upload_gb, ppl);
    out += line;
  }
  return out;
}

namespace {

ordered_json summary_json(const std::vector<CostSummary>& rows) {
  ordered_json arr = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json o;
    o["basis"] = r.basis;
    o["parameters"] = r.parameters;
    o["download_gb"] = r.download_gb;
    o["upload_gb"] = r.upload_gb;
    if (r.final_perplexity > 0.0) o["final_perplexity"] = r.final_perplexity;
    arr.push_back(o);
  }
  return arr;
}

void write_manifest(const ExperimentConfig& cfg, const fs::path& out,
                    const std::string& command, bool cost_only) {
  const std::string echo = config_to_json(cfg);
  ordered_json m;
  m["command"] = command;
  m["cost_only"] = cost_only;
  m["config_hash"] = io::git_blob_hash(echo);
  m["config"] = ordered_json::parse(echo);
  io::write_text(out / "manifest.json", m.dump(2) + "\n");
}

}  // namespace

std::vector<CostSummary> cmd_federated(const ExperimentConfig& cfg,
                                       const fs::path& out, bool cost_only,
                                       std::ostream& log) {
  cfg.validate();
  fs::create_directories(out);
  write_manifest(cfg, out, "federated", cost_only);
  const double actual = static_cast<double>(parameter_count(cfg.model));

  std::vector<CostSummary> rows;
  ordered_json summary;
  if (cost_only) {
    if (cfg.model.nominal_params > 0.0) {
      rows.push_back(project_cost(cfg, cfg.model.nominal_params, "nominal"));
    }
    rows.push_back(project_cost(cfg, actual, "instantiated"));
  } else {
    const LoadedData data = load_data(cfg);
    TensorMap warm;
    if (!cfg.warm_start.empty()) warm = load_checkpoint(cfg.warm_start);
    auto observer = [&](const RoundMetrics& m) {
      for (const auto& f : m.failures) {
        log << "round " << m.round << ": dropped client " << f << "\n";
      }
    };
    ExperimentResult res = run_experiment(cfg.fed, cfg.model, data.train, data.test,
                                          cfg.warm_start.empty() ? nullptr : &warm, observer);
    io::write_text(out / "metrics.csv", metrics_csv(res.rows));
    io::write_text(out / "ledger.csv", res.ledger.to_csv());
    save_checkpoint(out / "final.ckpt", res.state.model);

    CostSummary measured;
    measured.basis = "measured";
    measured.parameters = actual;
    measured.download_gb = res.ledger.cum_download_per_client() / kBytesPerGB;
    measured.upload_gb = res.ledger.cum_upload_per_client() / kBytesPerGB;
    measured.final_perplexity = res.rows.back().test_perplexity;
    rows.push_back(measured);

    summary["total_download_bytes"] = res.ledger.total_download();
    summary["total_upload_bytes"] = res.ledger.total_upload();
    summary["cum_download_bytes_per_client"] = res.ledger.cum_download_per_client();
    summary["cum_upload_bytes_per_client"] = res.ledger.cum_upload_per_client();
  }
  ordered_json doc;
  doc["rounds"] = cfg.fed.rounds;
  doc["cost_summary"] = summary_json(rows);
  if (!summary.empty()) doc["ledger"] = summary;
  io::write_text(out / "summary.json", doc.dump(2) + "\n");
  log << format_cost_table(rows);
  return rows;
}

void cmd_pretrain(const ExperimentConfig& cfg, const fs::path& out,
                  std::ostream& log) {
  cfg.validate();
  fs::create_directories(out);
  write_manifest(cfg, out, "pretrain", false);
  const LoadedData data = load_data(cfg);
  PretrainResult res = centralized_pretrain(cfg.model, data.train, cfg.pretrain_steps,
                                            cfg.pretrain_adam, cfg.pretrain_batch_size,
                                            cfg.fed.seq_len,
                                            Prng(cfg.fed.seed).derive("pretrain"));
  save_checkpoint(out / "pretrain.ckpt", res.params);
  std::string csv = "step,loss\n";
  for (std::size_t i = 0; i < res.losses.size(); ++i) {
    csv += std::to_string(i + 1) + "," + io::format_double(res.losses[i]) + "\n";
  }
  io::write_text(out / "pretrain_loss.csv", csv);
  const double ppl = evaluate_perplexity(cfg.model, res.params, data.test, cfg.fed.seq_len);
  log << "pretrain steps " << cfg.pretrain_steps << ", test perplexity " << ppl << "\n";
}

namespace {

template <typename T>
T parse_field(std::string_view s, const std::string& where, const char* what) {
  T v{};
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) {
    throw ParseError(where + ": bad " + what + " '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

std::vector<MetricsRow> parse_metrics_csv(std::string_view text,
                                          const std::string& source) {
  std::vector<MetricsRow> rows;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header = false;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const std::string where = source + ":" + std::to_string(line_no);
    if (!header) {
      if (line != kMetricsHeader) throw ParseError(where + ": unexpected header");
      header = true;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    std::size_t s = 0;
    for (;;) {
      const std::size_t c = line.find(',', s);
      f.push_back(line.substr(s, c == std::string_view::npos ? line.size() - s : c - s));
      if (c == std::string_view::npos) break;
      s = c + 1;
    }
    if (f.size() != 5) {
      throw ParseError(where + ": expected 5 fields, got " + std::to_string(f.size()));
    }
    MetricsRow r;
    r.round = parse_field<std::int64_t>(f[0], where, "round");
    r.test_perplexity = parse_field<double>(f[1], where, "test_perplexity");
    r.cum_download_bytes = parse_field<double>(f[2], where, "cum_download_bytes");
    r.cum_upload_bytes = parse_field<double>(f[3], where, "cum_upload_bytes");
    r.trainable_params = parse_field<double>(f[4], where, "trainable_params");
    rows.push_back(r);
  }
  if (!header) throw ParseError(source + ":1: empty metrics file");
  return rows;
}

std::string run_name(const fs::path& csv) {
  if (csv.filename() == "metrics.csv" && csv.has_parent_path() &&
      !csv.parent_path().filename().empty()) {
    return csv.parent_path().filename().string();
  }
  return csv.stem().string();
}

std::string merge_reports(std::vector<ReportRun> runs) {
  struct Item {
    const std::string* run;
    MetricsRow row;
  };
  std::vector<Item> items;
  for (const auto& r : runs)
    for (const auto& row : r.rows) items.push_back({&r.run, row});
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    if (*a.run != *b.run) return *a.run < *b.run;
    return a.row.round < b.row.round;
  });
  std::string out =
      "run,round,test_perplexity,cum_download_bytes,cum_upload_bytes,trainable_params,"
      "cum_upload_gb\n";
  for (const auto& it : items) {
    out += *it.run + "," + std::to_string(it.row.round) + "," +
           io::format_double(it.row.test_perplexity) + "," +
           format_number(it.row.cum_download_bytes) + "," +
           format_number(it.row.cum_upload_bytes) + "," +
           format_number(it.row.trainable_params) + "," +
           io::format_double(it.row.cum_upload_bytes / kBytesPerGB) + "\n";
  }
  return out;
}

void cmd_report(const std::vector<fs::path>& csvs, const fs::path& out_csv,
                std::ostream& out) {
  if (csvs.empty()) throw UsageError("report needs at least one metrics CSV");
  std::vector<ReportRun> runs;
  for (const auto& p : csvs) {
    ReportRun r{run_name(p), parse_metrics_csv(io::read_text(p), p.string())};
    if (r.rows.empty()) throw ParseError(p.string() + ":2: no metrics rows");
    runs.push_back(std::move(r));
  }
  if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
  io::write_text(out_csv, merge_reports(runs));

  std::sort(runs.begin(), runs.end(),
            [](const ReportRun& a, const ReportRun& b) { return a.run < b.run; });
  char line[200];
  std::snprintf(line, sizeof line, "%-24s %8s %16s %14s %14s\n", "run", "rounds",
                "final_perplexity", "download_gb", "upload_gb");
  out << line;
  for (const auto& r : runs) {
    const MetricsRow& last =
        *std::max_element(r.rows.begin(), r.rows.end(),
                          [](const auto& a, const auto& b) { return a.round < b.round; });
    std::snprintf(line, sizeof line, "%-24s %8lld %16.4f %14.6f %14.6f\n", r.run.c_str(),
                  static_cast<long long>(last.round), last.test_perplexity,
                  last.cum_download_bytes / kBytesPerGB, last.cum_upload_bytes / kBytesPerGB);
    out << line;
  }
}

}  // namespace fedlm
