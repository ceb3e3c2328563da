#include "fedasync/net.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstring>

#include "fedasync/log.hpp"

namespace fedasync::net {

namespace {

// Returns bytes read; stops early only on EOF.
std::size_t read_full(int fd, std::uint8_t* buf, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, buf + got, n - got, 0);
    if (r == 0) break;
    if (r < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError("connection_lost", std::strerror(errno));
    }
    got += static_cast<std::size_t>(r);
  }
  return got;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

}  // namespace

Connection& Connection::operator=(Connection&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = std::exchange(other.fd_, -1);
  }
  return *this;
}

Connection::~Connection() { close(); }

void Connection::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

Connection Connection::connect_to(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0) {
    throw ProtocolError("connect_failed", host + ": " + ::gai_strerror(rc));
  }
  std::string last = "no addresses";
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) {
      last = std::strerror(errno);
      continue;
    }
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
      ::freeaddrinfo(res);
      set_nodelay(fd);
      return Connection(fd);
    }
    last = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(res);
  throw ProtocolError("connect_failed", host + ":" + service + ": " + last);
}

void Connection::send_bytes(std::span<const std::uint8_t> bytes) {
  if (fd_ < 0) throw ProtocolError("connection_lost", "socket is closed");
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t r = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError("connection_lost", std::strerror(errno));
    }
    sent += static_cast<std::size_t>(r);
  }
}

void Connection::send(const Message& m) { send_bytes(encode_frame(m)); }

Message Connection::receive() {
  if (fd_ < 0) throw ProtocolError("connection_lost", "socket is closed");
  std::array<std::uint8_t, 4> header{};
  const std::size_t got = read_full(fd_, header.data(), header.size());
  if (got == 0) throw ProtocolError("connection_closed", "peer closed the connection");
  if (got < header.size()) throw ProtocolError("truncated_frame", "connection closed inside the length prefix");
  const std::uint32_t len = read_length_prefix(header);
  if (len > kMaxFrameBytes) throw ProtocolError("frame_too_large", "declared length " + std::to_string(len));
  std::vector<std::uint8_t> payload(len);
  if (read_full(fd_, payload.data(), len) < len) {
    throw ProtocolError("truncated_frame", "connection closed inside a " + std::to_string(len) + "-byte payload");
  }
  return decode_payload(std::string_view(reinterpret_cast<const char*>(payload.data()), len));
}

ParameterServer::ParameterServer(ServerSetup setup, const std::string& bind_address, std::uint16_t port)
    : setup_(std::move(setup)),
      state_(GlobalState::initial(setup_.initial_weights)),
      policy_rng_(sim::policy_rng(setup_.hp.seed)),
      recorder_(setup_.model, setup_.train, setup_.eval, setup_.hp.e_total, setup_.eval_every) {
  setup_.hp.validate();
  setup_.model.validate();
  if (setup_.initial_weights.dim() != setup_.model.param_count()) {
    throw DimensionError("initial weights have dimension " + std::to_string(setup_.initial_weights.dim()) +
                         ", model needs " + std::to_string(setup_.model.param_count()));
  }

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, bind_address.c_str(), &addr.sin_addr) != 1) {
    throw ConfigError("net.bind", "not an IPv4 address: " + bind_address);
  }
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw Error(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(listen_fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(listen_fd_, 64) != 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw Error("cannot listen on " + bind_address + ":" + std::to_string(port) + ": " + why);
  }
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
}

ParameterServer::~ParameterServer() {
  stop();
  for (auto& th : handlers_) {
    if (th.joinable()) th.join();
  }
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void ParameterServer::stop() {
  stopping_ = true;
  std::lock_guard lock(fds_mu_);
  for (const int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
}

bool ParameterServer::done_locked() const { return state_.aggregations >= static_cast<Epoch>(setup_.hp.e_total); }

ServeResult ParameterServer::run() {
  started_ = std::chrono::steady_clock::now();
  recorder_.start(state_.w);

  // Keep accepting until the run is complete and every live session has been
  // told bye; late connections still get a bye instead of a refused connect.
  while (!stopping_) {
    {
      std::lock_guard lock(mu_);
      if (done_locked() && active_ == 0) break;
    }
    pollfd pfd{listen_fd_, POLLIN, 0};
    const int r = ::poll(&pfd, 1, 100);
    if (r < 0 && errno != EINTR) throw Error(std::string("poll: ") + std::strerror(errno));
    if (r <= 0 || !(pfd.revents & POLLIN)) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    set_nodelay(fd);
    {
      std::lock_guard lock(fds_mu_);
      open_fds_.push_back(fd);
    }
    ++active_;
    handlers_.emplace_back([this, fd] {
      Connection conn(fd);
      handle(conn);
      {
        std::lock_guard lock(fds_mu_);
        std::erase(open_fds_, fd);
      }
      conn.close();
      --active_;
    });
  }
  stop();
  for (auto& th : handlers_) {
    if (th.joinable()) th.join();
  }
  handlers_.clear();

  std::lock_guard lock(mu_);
  ServeResult result;
  result.final_state = state_;
  result.trace = recorder_.finish(state_.w);
  result.arrivals = arrivals_;
  return result;
}

void ParameterServer::handle(Connection& conn) {
  Session session;
  try {
    while (true) {
      const Message m = conn.receive();
      const std::optional<Message> reply = on_message(m, session);
      if (!reply) return;
      conn.send(*reply);
      if (std::holds_alternative<Bye>(*reply)) return;
      if (const auto* err = std::get_if<ErrorMessage>(&*reply); err && err->code == "handshake_required") return;
    }
  } catch (const ProtocolError& e) {
    if (e.code() == "connection_closed" || e.code() == "connection_lost") return;
    log_warning("closing connection" + (session.peer.empty() ? std::string() : " from " + session.peer) + ": " +
                e.what());
    try {
      conn.send(ErrorMessage{e.code() == "truncated_frame" ? e.code() : "malformed_frame", e.what()});
    } catch (const ProtocolError&) {
    }
  }
}

ModelDown ParameterServer::dispatch_locked(Session& session) {
  session.assigned_h = assign_local_iterations(setup_.h_policy, session.peer, setup_.hp, policy_rng_);
  return ModelDown{state_.t, session.assigned_h, state_.w};
}

std::optional<Message> ParameterServer::on_message(const Message& m, Session& session) {
  if (const auto* hello = std::get_if<Hello>(&m)) {
    session.greeted = true;
    session.peer = hello->client_id;
    std::lock_guard lock(mu_);
    if (done_locked()) return Bye{};
    return dispatch_locked(session);
  }
  if (const auto* up = std::get_if<ModelUp>(&m)) {
    if (!session.greeted) return ErrorMessage{"handshake_required", "model_up before hello"};
    std::lock_guard lock(mu_);
    if (done_locked()) return Bye{};
    if (up->tau > state_.t) {
      return ErrorMessage{"stale_protocol_violation",
                          "tau=" + std::to_string(up->tau) + " is ahead of t=" + std::to_string(state_.t)};
    }
    if (up->weights.dim() != state_.w.dim()) {
      return ErrorMessage{"dimension_mismatch", "expected " + std::to_string(state_.w.dim()) + " weights, got " +
                                                    std::to_string(up->weights.dim())};
    }
    const double now = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    const ClientUpdate update{up->weights, up->tau, session.peer, session.assigned_h};
    auto [next, rec] = async_aggregate(state_, update, setup_.hp, now);
    state_ = std::move(next);
    arrivals_.push_back(sim::Arrival{rec.client_id, rec.tau, rec.local_iterations});

    sim::TraceRow row;
    row.t = state_.t;
    row.wall_clock_s = now;
    row.staleness = rec.staleness;
    row.beta_t = rec.beta_t;
    row.client_id = rec.client_id;
    row.tau = rec.tau;
    row.local_iterations = rec.local_iterations;
    recorder_.add(std::move(row), rec.exceeded_k_bound);
    if (recorder_.due(state_.t)) recorder_.evaluate_last(state_.w);

    if (done_locked()) return Bye{};
    return dispatch_locked(session);
  }
  if (std::holds_alternative<Bye>(m)) return std::nullopt;
  return ErrorMessage{"unexpected_message", "server does not accept " + std::string(message_type(m))};
}

ClientRunStats run_client(const ClientRunOptions& options, Client& client) {
  ClientRunStats stats;
  int failures = 0;
  auto backoff = options.initial_backoff;
  bool first_attempt = true;
  while (true) {
    try {
      if (!first_attempt) ++stats.reconnects;
      first_attempt = false;
      Connection conn = Connection::connect_to(options.host, options.port);
      conn.send(Hello{client.id(), client.shard_size()});
      while (true) {
        const Message m = conn.receive();
        if (const auto* down = std::get_if<ModelDown>(&m)) {
          const ClientUpdate upd = client.local_train(down->weights, down->t, down->h_assign);
          conn.send(ModelUp{upd.tau, upd.client_id, upd.w_new});
          ++stats.rounds;
          failures = 0;
          backoff = options.initial_backoff;
        } else if (std::holds_alternative<Bye>(m)) {
          stats.exit_code = 0;
          return stats;
        } else if (const auto* err = std::get_if<ErrorMessage>(&m)) {
          throw ProtocolError(err->code, err->detail);
        } else {
          throw ProtocolError("unexpected_message", "client does not accept " + std::string(message_type(m)));
        }
      }
    } catch (const ProtocolError& e) {
      ++stats.protocol_errors;
      stats.last_error = e.what();
      log_warning("client " + client.id() + ": " + stats.last_error);
      if (++failures > options.max_retries) {
        stats.exit_code = 4;
        return stats;
      }
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    } catch (const DivergenceError& e) {
      stats.exit_code = 3;
      stats.last_error = e.what();
      return stats;
    }
  }
}

}  // namespace fedasync::net
