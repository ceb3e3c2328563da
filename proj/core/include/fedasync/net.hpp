#pragma once

// Process roles for running the asynchronous protocol over TCP: one server,
// N clients, strict request/response per connection.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fedasync/client.hpp"
#include "fedasync/netproto.hpp"
#include "fedasync/server.hpp"
#include "fedasync/sim.hpp"

namespace fedasync::net {

/// Owning TCP socket that exchanges whole frames.
class Connection {
 public:
  Connection() = default;
  explicit Connection(int fd) : fd_(fd) {}
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;
  Connection(Connection&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Connection& operator=(Connection&& other) noexcept;
  ~Connection();

  /// Connects to host:port. Throws ProtocolError("connect_failed") on failure.
  static Connection connect_to(const std::string& host, std::uint16_t port);

  bool is_open() const noexcept { return fd_ >= 0; }
  int fd() const noexcept { return fd_; }
  void close();

  /// Writes raw bytes. Throws ProtocolError("connection_lost").
  void send_bytes(std::span<const std::uint8_t> bytes);
  void send(const Message& m);
  /// Blocks for one full frame. Throws ProtocolError("connection_closed") on a
  /// clean EOF between frames and ProtocolError("truncated_frame") mid-frame.
  Message receive();

 private:
  int fd_ = -1;
};

struct ServerSetup {
  ModelSpec model;
  Hyperparams hp;
  HPolicy h_policy = hpolicy::Fixed{3};
  ParamVector initial_weights;
  std::shared_ptr<const data::Dataset> train;  // for the objective F
  std::shared_ptr<const data::Dataset> eval;   // held-out accuracy
  int eval_every = 1;
};

struct ServeResult {
  GlobalState final_state;
  sim::ExperimentTrace trace;
  std::vector<sim::Arrival> arrivals;  // in aggregation order
};

/// Parameter server. Construct (binds and listens), then call run() which
/// returns once hp.e_total aggregations happened and every connection got bye.
class ParameterServer {
 public:
  ParameterServer(ServerSetup setup, const std::string& bind_address, std::uint16_t port);
  ~ParameterServer();
  ParameterServer(const ParameterServer&) = delete;
  ParameterServer& operator=(const ParameterServer&) = delete;

  /// Port actually bound (useful when constructed with port 0).
  std::uint16_t port() const noexcept { return port_; }
  ServeResult run();
  /// Makes run() return early; pending connections are closed.
  void stop();

 private:
  struct Session {
    bool greeted = false;
    ClientId peer;
    int assigned_h = 0;
  };

  void handle(Connection& conn);
  /// Reply to send, or nullopt when the peer said bye.
  std::optional<Message> on_message(const Message& m, Session& session);
  ModelDown dispatch_locked(Session& session);
  bool done_locked() const;

  ServerSetup setup_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<int> active_{0};

  std::mutex mu_;  // the aggregation critical section
  GlobalState state_;
  Rng policy_rng_;
  sim::TraceRecorder recorder_;
  std::vector<sim::Arrival> arrivals_;
  std::chrono::steady_clock::time_point started_;

  std::mutex fds_mu_;
  std::vector<int> open_fds_;
  std::vector<std::thread> handlers_;
};

struct ClientRunOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = kDefaultPort;
  int max_retries = 5;
  std::chrono::milliseconds initial_backoff{50};
};

struct ClientRunStats {
  int exit_code = 0;  // 0 clean bye, 4 protocol error after retries exhausted
  int rounds = 0;
  int protocol_errors = 0;
  int reconnects = 0;
  std::string last_error;
};

/// hello -> {model_down -> local_train -> model_up}* -> bye. Connection loss and
/// protocol errors trigger reconnects with exponential backoff; after
/// `max_retries` consecutive failures the run ends with exit code 4.
ClientRunStats run_client(const ClientRunOptions& options, Client& client);

}  // namespace fedasync::net
