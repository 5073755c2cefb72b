// Minimal framed TCP transport.
//
// Frame layout on the wire (little-endian):
//   u32 length   -- number of bytes that follow the length field
//   u16 msg_type
//   u64 request_id
//   body...      -- length - 10 bytes
//
// Responses echo the request's msg_type and request_id.  The transport is
// strictly request/response per connection; concurrency comes from one
// connection per thread (servers are thread-per-connection, clients keep a
// small pool of connections per target).
#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace dynembed {

struct Frame {
  std::uint16_t msg_type = 0;
  std::uint64_t request_id = 0;
  std::string body;
};

// Maximum frame body size accepted; guards against corrupted length words.
inline constexpr std::uint32_t kMaxFrameBytes = 1u << 30;

// Blocking client connection.  Not thread-safe; callers serialize access.
class Connection {
 public:
  // Takes ownership of a connected socket.
  explicit Connection(int fd);
  ~Connection();

  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;

  // Connects to host:port, throws Error(kWorkerUnreachable) on failure.
  static std::unique_ptr<Connection> dial(const std::string& host, int port);

  // Sends a frame and blocks for the matching reply.
  Frame call(std::uint16_t msg_type, std::uint64_t request_id, const std::string& body);

  void send_frame(std::uint16_t msg_type, std::uint64_t request_id, const std::string& body);
  Frame recv_frame();

  int fd() const { return fd_; }

 private:
  int fd_;
};

// Thread-per-connection TCP server.
class TcpServer {
 public:
  using Handler = std::function<Frame(const Frame&)>;

  // Binds and listens on the port (throws Error on failure).  port 0 picks
  // an ephemeral port; bound_port() reports the actual one.
  TcpServer(int port, Handler handler);
  ~TcpServer();

  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  int bound_port() const { return port_; }

  // Starts the accept loop on a background thread.
  void start();
  // Stops accepting, closes the listener, and joins all workers.
  void stop();

 private:
  void accept_loop();
  void serve(int client_fd);

  int listen_fd_ = -1;
  int port_ = 0;
  Handler handler_;
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;
  std::mutex workers_mu_;
  std::vector<std::thread> workers_;
};

// Parses "host:port"; throws Error(kInvalidConfig) on malformed input.
std::pair<std::string, int> parse_host_port(const std::string& spec);

}  // namespace dynembed
