#include "cleavekit/federation.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstring>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

namespace cleave::fed {

void ClientStats::validate() const {
  if (client_id.empty()) throw ValidationError("client_id must not be empty");
  for (size_t i = 0; i < 5; ++i) {
    if (modes[i].label != kEmModes[i]) {
      throw IncompleteModes("client stats must carry the five modes in order");
    }
    if (modes[i].n < 1) throw ValidationError("mode sample count must be >= 1");
    if (modes[i].std < 0 || !std::isfinite(modes[i].std) ||
        !std::isfinite(modes[i].mean)) {
      throw ValidationError("mode stats must be finite with std >= 0");
    }
  }
}

nlohmann::json ClientStats::to_json() const {
  nlohmann::json jm = nlohmann::json::array();
  for (const auto& s : modes) {
    jm.push_back({{"label", to_string(s.label)},
                  {"mean", s.mean},
                  {"std", s.std},
                  {"n", s.n}});
  }
  return nlohmann::json{{"client_id", client_id}, {"modes", std::move(jm)}};
}

ClientStats ClientStats::from_json(const nlohmann::json& j) {
  ClientStats s;
  s.client_id = j.at("client_id").get<std::string>();
  const auto& jm = j.at("modes");
  if (jm.size() != 5) throw IncompleteModes("expected exactly five modes");
  std::array<bool, 5> seen{};
  for (const auto& m : jm) {
    ActLabel label = parse_label(m.at("label").get<std::string>());
    int idx = em_mode_index(label);
    if (seen[static_cast<size_t>(idx)]) {
      throw ValidationError("duplicate mode in client stats");
    }
    seen[static_cast<size_t>(idx)] = true;
    s.modes[static_cast<size_t>(idx)] = {label, m.at("mean").get<double>(),
                                         m.at("std").get<double>(),
                                         m.at("n").get<std::int64_t>()};
  }
  s.validate();
  return s;
}

AggregationStrategy parse_strategy(std::string_view name) {
  if (name == "weighted") return AggregationStrategy::WeightedAverage;
  if (name == "max") return AggregationStrategy::MaxPooling;
  throw ValidationError("unknown strategy: " + std::string(name));
}

const char* to_string(AggregationStrategy s) {
  return s == AggregationStrategy::WeightedAverage ? "weighted" : "max";
}

ClientStats summarize_client(const ActMixture& mixture,
                             const std::array<std::int64_t, 5>& n_per_mode,
                             std::string client_id) {
  mixture.validate();
  ClientStats s;
  s.client_id = std::move(client_id);
  for (size_t i = 0; i < 5; ++i) {
    s.modes[i] = {kEmModes[i], mixture.modes[i].mean, mixture.modes[i].std,
                  n_per_mode[i]};
  }
  s.validate();
  return s;
}

ActMixture aggregate(const std::vector<ClientStats>& stats,
                     AggregationStrategy strategy) {
  if (stats.empty()) throw NoClients("no client statistics to aggregate");
  for (const auto& s : stats) s.validate();

  ActMixture out;
  for (size_t m = 0; m < 5; ++m) {
    if (strategy == AggregationStrategy::WeightedAverage) {
      // Pooled population moments: exact for disjoint sample sets.
      double total_n = 0, sum_mean = 0, sum_sq = 0;
      for (const auto& s : stats) {
        const auto& ms = s.modes[m];
        const double n = static_cast<double>(ms.n);
        total_n += n;
        sum_mean += n * ms.mean;
        sum_sq += n * (ms.std * ms.std + ms.mean * ms.mean);
      }
      const double mean = sum_mean / total_n;
      const double var = std::max(sum_sq / total_n - mean * mean, 0.0);
      out.modes[m] = {mean, std::sqrt(var), 0.2};
    } else {
      const ClientStats* best = &stats[0];
      for (const auto& s : stats) {
        if (s.modes[m].n > best->modes[m].n ||
            (s.modes[m].n == best->modes[m].n &&
             s.client_id < best->client_id)) {
          best = &s;
        }
      }
      out.modes[m] = {best->modes[m].mean, best->modes[m].std, 0.2};
    }
  }
  out.validate();
  return out;
}

// --- wire ---------------------------------------------------------------

std::string FedMessage::encode() const {
  nlohmann::json j;
  j["protocol_version"] = protocol_version;
  switch (type) {
    case Type::Register:
      j["type"] = "register";
      j["client_id"] = client_id;
      break;
    case Type::StatsUpload:
      j["type"] = "stats_upload";
      j["stats"] = stats.to_json();
      break;
    case Type::GlobalModel:
      j["type"] = "global_model";
      j["round"] = round;
      j["model"] = model.to_json();
      break;
    case Type::Error:
      j["type"] = "error";
      j["code"] = code;
      j["text"] = text;
      break;
  }
  return j.dump();
}

FedMessage FedMessage::decode(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const std::exception& e) {
    throw ProtocolError(std::string("malformed frame: ") + e.what());
  }
  FedMessage m;
  if (!j.contains("protocol_version")) {
    throw ProtocolError("frame missing protocol_version");
  }
  m.protocol_version = j["protocol_version"].get<std::string>();
  const std::string type = j.value("type", "");
  if (type == "register") {
    m.type = Type::Register;
    m.client_id = j.at("client_id").get<std::string>();
  } else if (type == "stats_upload") {
    m.type = Type::StatsUpload;
    m.stats = ClientStats::from_json(j.at("stats"));
  } else if (type == "global_model") {
    m.type = Type::GlobalModel;
    m.round = j.at("round").get<int>();
    m.model = ActMixture::from_json(j.at("model"));
  } else if (type == "error") {
    m.type = Type::Error;
    m.code = j.value("code", "");
    m.text = j.value("text", "");
  } else {
    throw ProtocolError("unknown message type: " + type);
  }
  return m;
}

// --- socket plumbing ------------------------------------------------------

namespace {

bool log_enabled() {
  const char* lvl = ::getenv("CLEAVEKIT_LOG");
  return lvl && (std::string_view(lvl) == "info" ||
                 std::string_view(lvl) == "debug");
}

void log_info(const std::string& msg) {
  if (log_enabled()) std::cerr << "[cleavekit] " << msg << "\n";
}

struct Fd {
  int fd = -1;
  Fd() = default;
  explicit Fd(int f) : fd(f) {}
  Fd(Fd&& o) noexcept : fd(o.fd) { o.fd = -1; }
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      close_fd();
      fd = o.fd;
      o.fd = -1;
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { close_fd(); }
  void close_fd() {
    if (fd >= 0) {
      ::close(fd);
      fd = -1;
    }
  }
  bool valid() const { return fd >= 0; }
};

void set_timeout(int fd, int ms) {
  timeval tv{};
  tv.tv_sec = ms / 1000;
  tv.tv_usec = (ms % 1000) * 1000;
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
}

bool send_line(int fd, const std::string& line) {
  std::string buf = line;
  buf.push_back('\n');
  size_t off = 0;
  while (off < buf.size()) {
    ssize_t k = ::send(fd, buf.data() + off, buf.size() - off, MSG_NOSIGNAL);
    if (k <= 0) return false;
    off += static_cast<size_t>(k);
  }
  return true;
}

struct LineReader {
  int fd;
  std::string buf;
  explicit LineReader(int f) : fd(f) {}
  // Returns false on EOF/timeout/error.
  bool read_line(std::string& out) {
    for (;;) {
      auto pos = buf.find('\n');
      if (pos != std::string::npos) {
        out = buf.substr(0, pos);
        buf.erase(0, pos + 1);
        return true;
      }
      char chunk[4096];
      ssize_t k = ::recv(fd, chunk, sizeof(chunk), 0);
      if (k <= 0) return false;
      buf.append(chunk, static_cast<size_t>(k));
    }
  }
};

Fd tcp_connect(const std::string& host, std::uint16_t port) {
  Fd fd(::socket(AF_INET, SOCK_STREAM, 0));
  if (!fd.valid()) return {};
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) return {};
  if (::connect(fd.fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    return {};
  }
  int one = 1;
  ::setsockopt(fd.fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return fd;
}

}  // namespace

// --- server -----------------------------------------------------------------

struct FedServer::Impl {
  ServerConfig cfg;
  Fd listen_fd;
  std::uint16_t bound_port = 0;
  std::thread accept_thread;
  std::vector<std::thread> sessions;

  std::mutex mu;
  std::condition_variable cv;
  bool stopping = false;
  int round = 1;
  int rounds_done = 0;
  std::map<std::string, ClientStats> pending;       // current round uploads
  std::map<int, std::string> broadcast_by_round;    // serialized once
  ActMixture last_model;

  explicit Impl(ServerConfig c) : cfg(std::move(c)) {}

  void bind_listen() {
    listen_fd = Fd(::socket(AF_INET, SOCK_STREAM, 0));
    if (!listen_fd.valid()) throw ConnectionLost("cannot create listen socket");
    int one = 1;
    ::setsockopt(listen_fd.fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(cfg.port);
    if (::inet_pton(AF_INET, cfg.bind_host.c_str(), &addr.sin_addr) != 1) {
      throw ValidationError("bad bind address: " + cfg.bind_host);
    }
    if (::bind(listen_fd.fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) !=
        0) {
      throw ConnectionLost("bind failed on " + cfg.bind_host + ":" +
                           std::to_string(cfg.port));
    }
    if (::listen(listen_fd.fd, 16) != 0) throw ConnectionLost("listen failed");
    sockaddr_in actual{};
    socklen_t len = sizeof(actual);
    ::getsockname(listen_fd.fd, reinterpret_cast<sockaddr*>(&actual), &len);
    bound_port = ntohs(actual.sin_port);
  }

  void accept_loop() {
    for (;;) {
      {
        std::lock_guard<std::mutex> lk(mu);
        if (stopping || rounds_done >= cfg.rounds) break;
      }
      pollfd p{listen_fd.fd, POLLIN, 0};
      int r = ::poll(&p, 1, 100);
      if (r <= 0) continue;
      int cfd = ::accept(listen_fd.fd, nullptr, nullptr);
      if (cfd < 0) continue;
      set_timeout(cfd, cfg.session_timeout_ms);
      std::lock_guard<std::mutex> lk(mu);
      sessions.emplace_back(&Impl::session, this, cfd);
    }
  }

  void session(int raw_fd) {
    Fd fd(raw_fd);
    LineReader reader(fd.fd);
    std::string line;
    try {
      if (!reader.read_line(line)) return;
      FedMessage reg = FedMessage::decode(line);
      if (reg.protocol_version != kProtocolVersion) {
        FedMessage err;
        err.type = FedMessage::Type::Error;
        err.code = "version_mismatch";
        err.text = "server speaks protocol " + std::string(kProtocolVersion);
        send_line(fd.fd, err.encode());
        return;
      }
      if (reg.type != FedMessage::Type::Register) {
        FedMessage err;
        err.type = FedMessage::Type::Error;
        err.code = "expected_register";
        send_line(fd.fd, err.encode());
        return;
      }
      if (!reader.read_line(line)) return;
      FedMessage up = FedMessage::decode(line);
      if (up.type != FedMessage::Type::StatsUpload) {
        FedMessage err;
        err.type = FedMessage::Type::Error;
        err.code = "expected_stats_upload";
        send_line(fd.fd, err.encode());
        return;
      }
      up.stats.client_id = up.stats.client_id.empty() ? reg.client_id
                                                      : up.stats.client_id;

      int my_round = 0;
      {
        std::unique_lock<std::mutex> lk(mu);
        if (rounds_done >= cfg.rounds) {
          lk.unlock();
          FedMessage err;
          err.type = FedMessage::Type::Error;
          err.code = "round_over";
          err.text = "all rounds completed";
          send_line(fd.fd, err.encode());
          return;
        }
        my_round = round;
        if (pending.count(up.stats.client_id)) {
          log_info("duplicate upload from " + up.stats.client_id +
                   "; latest wins");
        }
        pending[up.stats.client_id] = up.stats;
        if (static_cast<int>(pending.size()) >= cfg.quorum &&
            !broadcast_by_round.count(my_round)) {
          std::vector<ClientStats> all;
          all.reserve(pending.size());
          for (auto& [id, st] : pending) all.push_back(st);
          ActMixture global = aggregate(all, cfg.strategy);
          FedMessage bc;
          bc.type = FedMessage::Type::GlobalModel;
          bc.round = my_round;
          bc.model = global;
          broadcast_by_round[my_round] = bc.encode();
          last_model = global;
          if (!cfg.model_out.empty()) {
            save_model_json(cfg.model_out, global, my_round);
          }
          rounds_done = my_round;
          round = my_round + 1;
          pending.clear();
          log_info("round " + std::to_string(my_round) + " aggregated over " +
                   std::to_string(all.size()) + " clients");
          cv.notify_all();
        } else {
          cv.wait(lk, [&] {
            return stopping || broadcast_by_round.count(my_round) > 0;
          });
        }
        if (!broadcast_by_round.count(my_round)) return;  // stopped
        line = broadcast_by_round[my_round];
      }
      send_line(fd.fd, line);
    } catch (const Error& e) {
      // Malformed frame: answer and close this session only.
      FedMessage err;
      err.type = FedMessage::Type::Error;
      err.code = "protocol_error";
      err.text = e.what();
      send_line(fd.fd, err.encode());
    }
  }
};

FedServer::FedServer(ServerConfig cfg) : impl_(new Impl(std::move(cfg))) {}

FedServer::~FedServer() {
  stop();
}

void FedServer::start() {
  impl_->bind_listen();
  impl_->accept_thread = std::thread(&Impl::accept_loop, impl_.get());
}

std::uint16_t FedServer::port() const {
  return impl_->bound_port;
}

void FedServer::wait() {
  for (;;) {
    {
      std::lock_guard<std::mutex> lk(impl_->mu);
      if (impl_->rounds_done >= impl_->cfg.rounds || impl_->stopping) break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  stop();
}

void FedServer::stop() {
  {
    std::lock_guard<std::mutex> lk(impl_->mu);
    if (impl_->stopping && !impl_->accept_thread.joinable()) return;
    impl_->stopping = true;
    impl_->cv.notify_all();
  }
  if (impl_->accept_thread.joinable()) impl_->accept_thread.join();
  std::vector<std::thread> sessions;
  {
    std::lock_guard<std::mutex> lk(impl_->mu);
    sessions.swap(impl_->sessions);
  }
  for (auto& t : sessions) {
    if (t.joinable()) t.join();
  }
}

int FedServer::rounds_completed() const {
  std::lock_guard<std::mutex> lk(impl_->mu);
  return impl_->rounds_done;
}

ActMixture FedServer::last_model() const {
  std::lock_guard<std::mutex> lk(impl_->mu);
  return impl_->last_model;
}

// --- client -----------------------------------------------------------------

namespace {
void capture(const ClientConfig& cfg, const std::string& line) {
  if (cfg.wire_capture) cfg.wire_capture->push_back(line);
}
}  // namespace

ActMixture exchange_stats(const ClientConfig& cfg, const ClientStats& stats,
                          int* round_out) {
  Fd fd;
  int delay = cfg.retry_delay_ms;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    fd = tcp_connect(cfg.host, cfg.port);
    if (fd.valid()) break;
    if (attempt == cfg.max_retries) {
      throw ConnectionLost("cannot reach " + cfg.host + ":" +
                           std::to_string(cfg.port) + " after " +
                           std::to_string(cfg.max_retries + 1) + " attempts");
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(delay));
    delay = std::min(delay * 2, 5000);
  }
  set_timeout(fd.fd, cfg.io_timeout_ms);

  FedMessage reg;
  reg.type = FedMessage::Type::Register;
  reg.client_id = stats.client_id;
  std::string line = reg.encode();
  capture(cfg, line);
  if (!send_line(fd.fd, line)) throw ConnectionLost("send failed (register)");

  FedMessage up;
  up.type = FedMessage::Type::StatsUpload;
  up.stats = stats;
  line = up.encode();
  capture(cfg, line);
  if (!send_line(fd.fd, line)) throw ConnectionLost("send failed (stats)");

  LineReader reader(fd.fd);
  if (!reader.read_line(line)) {
    throw ConnectionLost("connection closed before global model");
  }
  capture(cfg, line);
  FedMessage reply = FedMessage::decode(line);
  if (reply.type == FedMessage::Type::Error) {
    if (reply.code == "version_mismatch") {
      throw VersionMismatch(reply.text);
    }
    throw ProtocolError(reply.code + ": " + reply.text);
  }
  if (reply.type != FedMessage::Type::GlobalModel) {
    throw ProtocolError("expected global_model reply");
  }
  if (round_out) *round_out = reply.round;
  return reply.model;
}

ActMixture run_client(const ClientConfig& cfg,
                      const std::vector<double>& samples, int* round_out) {
  auto [mixture, trace] = em::fit(samples, cfg.em);
  (void)trace;
  std::array<std::int64_t, 5> counts{};
  for (size_t i = 0; i < 5; ++i) {
    counts[i] = std::max<std::int64_t>(
        1, std::llround(mixture.modes[i].weight *
                        static_cast<double>(samples.size())));
  }
  ClientStats stats = summarize_client(mixture, counts, cfg.client_id);
  return exchange_stats(cfg, stats, round_out);
}

}  // namespace cleave::fed
