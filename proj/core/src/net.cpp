#include "dynembed/net.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "dynembed/bytes.hpp"
#include "dynembed/error.hpp"

namespace dynembed {

namespace {

void write_all(int fd, const void* data, std::size_t n) {
  const char* p = static_cast<const char*>(data);
  while (n > 0) {
    ssize_t w = ::send(fd, p, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kWorkerUnreachable,
                  std::string("send failed: ") + std::strerror(errno));
    }
    p += w;
    n -= static_cast<std::size_t>(w);
  }
}

// Returns false on clean EOF before any byte was read.
bool read_all(int fd, void* data, std::size_t n) {
  char* p = static_cast<char*>(data);
  std::size_t got = 0;
  while (got < n) {
    ssize_t r = ::recv(fd, p + got, n - got, 0);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kWorkerUnreachable,
                  std::string("recv failed: ") + std::strerror(errno));
    }
    if (r == 0) {
      if (got == 0) return false;
      throw Error(ErrorCode::kWorkerUnreachable, "connection closed mid-frame");
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

}  // namespace

Connection::Connection(int fd) : fd_(fd) {
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

Connection::~Connection() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Connection> Connection::dial(const std::string& host, int port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port_str = std::to_string(port);
  int rc = ::getaddrinfo(host.c_str(), port_str.c_str(), &hints, &res);
  if (rc != 0) {
    throw Error(ErrorCode::kWorkerUnreachable,
                "resolve " + host + ": " + gai_strerror(rc));
  }
  int fd = -1;
  std::string last_err = "no addresses";
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) {
      last_err = std::strerror(errno);
      continue;
    }
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    last_err = std::strerror(errno);
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) {
    throw Error(ErrorCode::kWorkerUnreachable,
                "connect " + host + ":" + port_str + ": " + last_err);
  }
  return std::make_unique<Connection>(fd);
}

void Connection::send_frame(std::uint16_t msg_type, std::uint64_t request_id,
                            const std::string& body) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(2 + 8 + body.size()));
  w.u16(msg_type);
  w.u64(request_id);
  std::string head = w.take();
  write_all(fd_, head.data(), head.size());
  if (!body.empty()) write_all(fd_, body.data(), body.size());
}

Frame Connection::recv_frame() {
  std::uint32_t length = 0;
  if (!read_all(fd_, &length, sizeof length)) {
    throw Error(ErrorCode::kWorkerUnreachable, "connection closed");
  }
  if (length < 10 || length > kMaxFrameBytes) {
    throw Error(ErrorCode::kProtocolError, "bad frame length");
  }
  std::string payload(length, '\0');
  if (!read_all(fd_, payload.data(), payload.size())) {
    throw Error(ErrorCode::kWorkerUnreachable, "connection closed mid-frame");
  }
  ByteReader r(payload);
  Frame f;
  f.msg_type = r.u16();
  f.request_id = r.u64();
  f.body.assign(payload.data() + 10, payload.size() - 10);
  return f;
}

Frame Connection::call(std::uint16_t msg_type, std::uint64_t request_id,
                       const std::string& body) {
  send_frame(msg_type, request_id, body);
  Frame reply = recv_frame();
  if (reply.msg_type != msg_type || reply.request_id != request_id) {
    throw Error(ErrorCode::kProtocolError, "mismatched reply");
  }
  return reply;
}

TcpServer::TcpServer(int port, Handler handler) : handler_(std::move(handler)) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) {
    throw Error(ErrorCode::kInternal, std::string("socket: ") + std::strerror(errno));
  }
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_ANY);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    int err = errno;
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw Error(ErrorCode::kInternal,
                "bind port " + std::to_string(port) + ": " + std::strerror(err));
  }
  if (::listen(listen_fd_, 128) != 0) {
    int err = errno;
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw Error(ErrorCode::kInternal, std::string("listen: ") + std::strerror(err));
  }
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
}

TcpServer::~TcpServer() { stop(); }

void TcpServer::start() {
  accept_thread_ = std::thread([this] { accept_loop(); });
}

void TcpServer::stop() {
  bool expected = false;
  if (!stopping_.compare_exchange_strong(expected, true)) {
    if (accept_thread_.joinable()) accept_thread_.join();
    return;
  }
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  if (accept_thread_.joinable()) accept_thread_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(workers_mu_);
    workers.swap(workers_);
  }
  for (auto& t : workers) {
    if (t.joinable()) t.join();
  }
}

void TcpServer::accept_loop() {
  while (!stopping_.load()) {
    int client = ::accept(listen_fd_, nullptr, nullptr);
    if (client < 0) {
      if (errno == EINTR) continue;
      break;  // listener closed by stop()
    }
    std::lock_guard lock(workers_mu_);
    if (stopping_.load()) {
      ::close(client);
      break;
    }
    workers_.emplace_back([this, client] { serve(client); });
  }
}

void TcpServer::serve(int client_fd) {
  Connection conn(client_fd);
  while (!stopping_.load()) {
    Frame request;
    try {
      request = conn.recv_frame();
    } catch (const Error&) {
      break;  // peer closed or stream corrupted; drop the connection
    }
    Frame reply;
    try {
      reply = handler_(request);
    } catch (const std::exception&) {
      break;  // handler-level errors are encoded in-band; anything else is fatal
    }
    reply.msg_type = request.msg_type;
    reply.request_id = request.request_id;
    try {
      conn.send_frame(reply.msg_type, reply.request_id, reply.body);
    } catch (const Error&) {
      break;
    }
  }
}

std::pair<std::string, int> parse_host_port(const std::string& spec) {
  auto colon = spec.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == spec.size()) {
    throw Error(ErrorCode::kInvalidConfig, "expected host:port, got '" + spec + "'");
  }
  const std::string host = spec.substr(0, colon);
  const std::string port_str = spec.substr(colon + 1);
  char* end = nullptr;
  long port = std::strtol(port_str.c_str(), &end, 10);
  if (end == port_str.c_str() || *end != '\0' || port < 1 || port > 65535) {
    throw Error(ErrorCode::kInvalidConfig, "bad port in '" + spec + "'");
  }
  return {host, static_cast<int>(port)};
}

}  // namespace dynembed
