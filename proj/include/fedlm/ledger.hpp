#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace fedlm {

struct ClientCharge {
  std::string client_id;
  double download_bytes = 0.0;
  double upload_bytes = 0.0;
  double trainable_params = 0.0;
};

struct RoundRecord {
  std::int64_t round = 0;
  std::size_t clients = 0;
  double download_bytes = 0.0;  // summed over the round's clients
  double upload_bytes = 0.0;
  double mean_trainable_params = 0.0;

  double download_per_client() const;
  double upload_per_client() const;
  bool operator==(const RoundRecord&) const = default;
};

struct ClientTotals {
  double download_bytes = 0.0;
  double upload_bytes = 0.0;
  std::size_t rounds = 0;
  bool operator==(const ClientTotals&) const = default;
};

/// Communication accounting. Bytes are ideal: parameters * bits / 8, so
/// fractional values occur for non-integer bit widths.
class CommLedger {
 public:
  void record_round(std::int64_t round, const std::vector<ClientCharge>& charges);

  const std::vector<RoundRecord>& rounds() const { return rounds_; }
  const std::map<std::string, ClientTotals>& clients() const { return clients_; }

  // Sum over rounds of the mean bytes a participating client moved.
  double cum_download_per_client() const { return cum_down_; }
  double cum_upload_per_client() const { return cum_up_; }
  // Sum over all clients and rounds.
  double total_download() const;
  double total_upload() const;

  // round,clients,download_bytes,upload_bytes,mean_trainable_params
  std::string to_csv() const;

  bool operator==(const CommLedger&) const = default;

 private:
  std::vector<RoundRecord> rounds_;
  std::map<std::string, ClientTotals> clients_;
  double cum_down_ = 0.0;
  double cum_up_ = 0.0;
};

// Integral values print without exponent; others as the shortest round-trip
// decimal.
std::string format_number(double v);

}  // namespace fedlm
