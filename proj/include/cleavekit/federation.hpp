#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cleavekit/core.hpp"
#include "cleavekit/em.hpp"

namespace cleave::fed {

inline constexpr const char* kProtocolVersion = "1";

struct NoClients : Error {
  using Error::Error;
};
struct IncompleteModes : Error {
  using Error::Error;
};
struct ConnectionLost : Error {
  using Error::Error;
};
struct VersionMismatch : Error {
  using Error::Error;
};
struct ProtocolError : Error {
  using Error::Error;
};

struct ModeStats {
  ActLabel label = ActLabel::t2;
  double mean = 0.0;
  double std = 0.0;
  std::int64_t n = 0;
};

/// What one client shares with the server: per-mode sufficient statistics,
/// never raw samples.
struct ClientStats {
  std::string client_id;
  std::array<ModeStats, 5> modes{};  // ordered as kEmModes

  void validate() const;
  nlohmann::json to_json() const;
  static ClientStats from_json(const nlohmann::json& j);
};

enum class AggregationStrategy { WeightedAverage, MaxPooling };
AggregationStrategy parse_strategy(std::string_view name);
const char* to_string(AggregationStrategy s);

ClientStats summarize_client(const ActMixture& mixture,
                             const std::array<std::int64_t, 5>& n_per_mode,
                             std::string client_id);

/// Pool client statistics into the global model. WeightedAverage combines
/// population moments exactly; MaxPooling adopts the largest-n client per
/// mode (ties broken by smallest client_id). Global weights are equal.
ActMixture aggregate(const std::vector<ClientStats>& stats,
                     AggregationStrategy strategy);

// --- wire protocol: newline-delimited JSON over TCP -------------------------

struct FedMessage {
  enum class Type { Register, StatsUpload, GlobalModel, Error };
  Type type = Type::Error;
  std::string protocol_version = kProtocolVersion;
  std::string client_id;           // Register
  ClientStats stats;               // StatsUpload
  ActMixture model;                // GlobalModel
  int round = 0;                   // GlobalModel
  std::string code, text;          // Error

  std::string encode() const;  // one line, no trailing newline
  static FedMessage decode(const std::string& line);
};

struct ServerConfig {
  std::string bind_host = "127.0.0.1";
  std::uint16_t port = 0;  // 0 picks an ephemeral port
  int quorum = 1;
  AggregationStrategy strategy = AggregationStrategy::WeightedAverage;
  int rounds = 1;
  std::string model_out;  // persisted global model path; empty skips
  int session_timeout_ms = 30000;
};

/// One-shot-round aggregation server. Sessions run on their own threads;
/// the round aggregate is computed once when the quorum is reached and the
/// identical serialized line is sent to every participant.
class FedServer {
 public:
  explicit FedServer(ServerConfig cfg);
  ~FedServer();
  FedServer(const FedServer&) = delete;
  FedServer& operator=(const FedServer&) = delete;

  void start();
  std::uint16_t port() const;
  void wait();  // blocks until all rounds complete
  void stop();

  int rounds_completed() const;
  ActMixture last_model() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct ClientConfig {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  std::string client_id;
  em::EmConfig em;
  int max_retries = 5;
  int retry_delay_ms = 100;
  int io_timeout_ms = 30000;
  // Test hook: every sent/received line is appended here when set.
  std::vector<std::string>* wire_capture = nullptr;
};

/// Upload pre-computed statistics and block for the round's global model.
ActMixture exchange_stats(const ClientConfig& cfg, const ClientStats& stats,
                          int* round_out = nullptr);

/// Full client: local EM fit, stats upload, global model retrieval.
ActMixture run_client(const ClientConfig& cfg,
                      const std::vector<double>& samples,
                      int* round_out = nullptr);

}  // namespace cleave::fed
