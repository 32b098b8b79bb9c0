#include "fedlm/ledger.hpp"

#include <cmath>

#include "fedlm/io.hpp"
#include "fedlm/tensor.hpp"

namespace fedlm {

double RoundRecord::download_per_client() const {
  return clients == 0 ? 0.0 : download_bytes / static_cast<double>(clients);
}

double RoundRecord::upload_per_client() const {
  return clients == 0 ? 0.0 : upload_bytes / static_cast<double>(clients);
}

void CommLedger::record_round(std::int64_t round,
                              const std::vector<ClientCharge>& charges) {
  if (!rounds_.empty() && round <= rounds_.back().round) {
    throw UsageError("ledger rounds must increase");
  }
  RoundRecord rec;
  rec.round = round;
  rec.clients = charges.size();
  double trainable = 0.0;
  for (const auto& c : charges) {
    rec.download_bytes += c.download_bytes;
    rec.upload_bytes += c.upload_bytes;
    trainable += c.trainable_params;
    ClientTotals& t = clients_[c.client_id];
    t.download_bytes += c.download_bytes;
    t.upload_bytes += c.upload_bytes;
    ++t.rounds;
  }
  if (!charges.empty()) {
    rec.mean_trainable_params = trainable / static_cast<double>(charges.size());
  }
  cum_down_ += rec.download_per_client();
  cum_up_ += rec.upload_per_client();
  rounds_.push_back(rec);
}

double CommLedger::total_download() const {
  double s = 0.0;
  for (const auto& r : rounds_) s += r.download_bytes;
  return s;
}

double CommLedger::total_upload() const {
  double s = 0.0;
  for (const auto& r : rounds_) s += r.upload_bytes;
  return s;
}

std::string CommLedger::to_csv() const {
  std::string out = "round,clients,download_bytes,upload_bytes,mean_trainable_params\n";
  for (const auto& r : rounds_) {
    out += std::to_string(r.round) + "," + std::to_string(r.clients) + "," +
           format_number(r.download_bytes) + "," + format_number(r.upload_bytes) +
           "," + format_number(r.mean_trainable_params) + "\n";
  }
  return out;
}

std::string format_number(double v) {
  if (std::isfinite(v) && v == std::floor(v) && std::abs(v) < 9007199254740992.0) {
    return std::to_string(static_cast<long long>(v));
  }
  return io::format_double(v);
}

}  // namespace fedlm
