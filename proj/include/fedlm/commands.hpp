#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fedlm/config.hpp"

namespace fedlm {

struct CostSummary {
  std::string basis;  // "nominal", "instantiated" or "measured"
  double parameters = 0.0;
  double download_gb = 0.0;  // per client over all rounds
  double upload_gb = 0.0;
  double final_perplexity = 0.0;  // 0 when not trained
};

// Closed-form per-client totals for cfg.fed.rounds rounds. Upload counts
// pvt_fraction of the parameters, which is the mean PVT trainable count.
CostSummary project_cost(const ExperimentConfig& cfg, double parameters,
                         std::string basis);

// Fixed-width table: basis, params, download GB, upload GB, perplexity.
std::string format_cost_table(const std::vector<CostSummary>& rows);

// Writes metrics.csv, ledger.csv, manifest.json, summary.json and final.ckpt
// under `out` (only manifest.json and summary.json when cost_only).
std::vector<CostSummary> cmd_federated(const ExperimentConfig& cfg,
                                       const std::filesystem::path& out,
                                       bool cost_only, std::ostream& log);

// Writes pretrain.ckpt and pretrain_loss.csv under `out`.
void cmd_pretrain(const ExperimentConfig& cfg, const std::filesystem::path& out,
                  std::ostream& log);

struct ReportRun {
  std::string run;
  std::vector<MetricsRow> rows;
};

// Parses a metrics CSV; malformed input raises ParseError with the line.
std::vector<MetricsRow> parse_metrics_csv(std::string_view text,
                                          const std::string& source);
// Run name: the file stem, or the parent directory for "metrics.csv".
std::string run_name(const std::filesystem::path& csv);

// Long-format CSV sorted by (run, round):
// run,round,test_perplexity,cum_download_bytes,cum_upload_bytes,
// trainable_params,cum_upload_gb
std::string merge_reports(std::vector<ReportRun> runs);

// Reads the CSVs, writes the merged file to `out_csv` and prints a summary.
void cmd_report(const std::vector<std::filesystem::path>& csvs,
                const std::filesystem::path& out_csv, std::ostream& out);

}  // namespace fedlm
