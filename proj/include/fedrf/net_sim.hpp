#pragma once

// Deterministic unreliable network: per-kind drop probabilities, per-client
// availability, and a ledger of everything sent, delivered and dropped.

#include "fedrf/core.hpp"
#include "fedrf/random.hpp"
#include "fedrf/wire.hpp"

#include <array>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace fedrf {

struct NetworkConfig {
  std::array<double, kMessageKinds> drop_probability{0.0, 0.0, 0.0};
  double availability = 1.0;  // probability a source client is reachable in a round
  std::uint64_t seed = 0;

  void validate() const {
    for (double p : drop_probability) {
      if (!(p >= 0.0 && p <= 1.0)) throw InvalidInputError("NetworkConfig: drop probability must be in [0, 1]");
    }
    if (!(availability >= 0.0 && availability <= 1.0)) {
      throw InvalidInputError("NetworkConfig: availability must be in [0, 1]");
    }
  }
};

struct LedgerEntry {
  std::size_t sent = 0;
  std::size_t delivered = 0;
  std::size_t dropped = 0;
  std::size_t volume = 0;            // scalars sent
  std::size_t volume_delivered = 0;  // scalars that arrived
};

/// Per-round, per-kind message accounting. Volumes count scalar parameters.
class CommLedger {
 public:
  void record(std::uint32_t round, const ProtocolMessage& msg, bool delivered) {
    LedgerEntry& e = rounds_[round][kind_index(msg.kind)];
    ++e.sent;
    e.volume += msg.volume();
    if (delivered) {
      ++e.delivered;
      e.volume_delivered += msg.volume();
    } else {
      ++e.dropped;
    }
  }

  /// Makes a round appear in the ledger even if nothing was sent.
  void touch(std::uint32_t round) { rounds_[round]; }

  bool has_round(std::uint32_t round) const { return rounds_.count(round) > 0; }

  const LedgerEntry& entry(std::uint32_t round, MessageKind kind) const {
    static const LedgerEntry empty{};
    const auto it = rounds_.find(round);
    return it == rounds_.end() ? empty : it->second[kind_index(kind)];
  }

  std::size_t round_volume(std::uint32_t round) const {
    if (!has_round(round)) throw InvalidInputError("round_volume: round " + std::to_string(round) + " not recorded");
    std::size_t total = 0;
    for (const auto& e : rounds_.at(round)) total += e.volume;
    return total;
  }

  std::size_t round_volume_delivered(std::uint32_t round) const {
    if (!has_round(round)) throw InvalidInputError("round_volume: round " + std::to_string(round) + " not recorded");
    std::size_t total = 0;
    for (const auto& e : rounds_.at(round)) total += e.volume_delivered;
    return total;
  }

  std::size_t kind_volume(std::uint32_t round, MessageKind kind) const { return entry(round, kind).volume; }

  /// sent = delivered + dropped for every round and kind.
  bool conserved() const {
    for (const auto& [round, kinds] : rounds_) {
      for (const auto& e : kinds) {
        if (e.sent != e.delivered + e.dropped || e.volume_delivered > e.volume) return false;
      }
    }
    return true;
  }

  std::vector<std::uint32_t> rounds() const {
    std::vector<std::uint32_t> out;
    for (const auto& [round, kinds] : rounds_) out.push_back(round);
    return out;
  }

  /// Columns: round, kind, sent, delivered, dropped, volume.
  void write_csv(std::ostream& os) const {
    os << "round,kind,sent,delivered,dropped,volume\n";
    for (const auto& [round, kinds] : rounds_) {
      for (std::size_t k = 0; k < kMessageKinds; ++k) {
        const auto& e = kinds[k];
        os << round << ',' << kind_name(static_cast<MessageKind>(k + 1)) << ',' << e.sent << ',' << e.delivered << ','
           << e.dropped << ',' << e.volume << '\n';
      }
    }
  }

  std::string to_csv() const {
    std::ostringstream os;
    write_csv(os);
    return os.str();
  }

 private:
  std::map<std::uint32_t, std::array<LedgerEntry, kMessageKinds>> rounds_;
};

/// Is source `client` reachable in `round`? The target is always reachable.
inline bool client_available(const NetworkConfig& cfg, std::uint32_t round, std::uint32_t client) {
  if (client == kTargetId || cfg.availability >= 1.0) return true;
  const rng::CounterRng gen(cfg.seed, "availability", {round, client});
  return gen.uniform_at(0) <= cfg.availability;
}

/// Whether one message survives. A pure function of (seed, round, sender,
/// recipient, kind), so outcomes do not depend on delivery order.
inline bool message_survives(const NetworkConfig& cfg, const ProtocolMessage& msg) {
  if (!client_available(cfg, msg.round, msg.sender)) return false;
  if (msg.recipient != kServerId && msg.recipient != kAllSources && !client_available(cfg, msg.round, msg.recipient)) {
    return false;
  }
  const double p = cfg.drop_probability[kind_index(msg.kind)];
  if (p <= 0.0) return true;
  if (p >= 1.0) return false;
  const rng::CounterRng gen(cfg.seed, "drop", {msg.round, msg.sender, msg.recipient, static_cast<std::uint64_t>(msg.kind)});
  return gen.uniform_at(0) > p;
}

/// Drops messages per the network model and records every outcome.
inline std::vector<ProtocolMessage> deliver(const std::vector<ProtocolMessage>& msgs, const NetworkConfig& cfg,
                                            std::uint32_t round, CommLedger& ledger) {
  cfg.validate();
  ledger.touch(round);
  std::vector<ProtocolMessage> out;
  for (const auto& msg : msgs) {
    const bool ok = message_survives(cfg, msg);
    ledger.record(round, msg, ok);
    if (ok) out.push_back(msg);
  }
  return out;
}

/// Analytic per-round communication of the federated DA methods compared in
/// the complexity table, in scalars. P is the ciphertext expansion factor.
struct ComplexityRow {
  std::size_t clients = 0;   // K
  std::size_t samples = 0;   // n per domain
  std::size_t features = 0;  // N
  std::size_t m = 0;
  std::size_t ciphertext = 1;  // P
  double fada = 0.0;           // O(K n N)
  double fedka = 0.0;          // O(K n N)
  double fda = 0.0;            // O(K n N P)
  double fedrf_analytic = 0.0;  // (K + 1) 2N + (K + 1) 2N m
  double fedrf_measured = 0.0;  // filled in from a protocol run
};

inline ComplexityRow analytic_complexity(std::size_t k, std::size_t n, std::size_t n_feat, std::size_t m,
                                         std::size_t ciphertext) {
  ComplexityRow row{k, n, n_feat, m, ciphertext};
  const double kn = static_cast<double>(k) * static_cast<double>(n);
  row.fada = kn * static_cast<double>(n_feat);
  row.fedka = kn * static_cast<double>(n_feat);
  row.fda = kn * static_cast<double>(n_feat) * static_cast<double>(ciphertext);
  const double two_n = 2.0 * static_cast<double>(n_feat);
  row.fedrf_analytic = static_cast<double>(k + 1) * two_n + static_cast<double>(k + 1) * two_n * static_cast<double>(m);
  return row;
}

}  // namespace fedrf
