#include "shapflow/comm.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <condition_variable>
#include <cstdlib>
#include <cstring>
#include <mutex>
#include <thread>

#include "shapflow/error.hpp"

namespace shapflow {

namespace {

constexpr std::uint32_t kKindSum = 1;
constexpr std::uint32_t kKindBarrier = 2;
constexpr std::uint32_t kKindGather = 3;
constexpr std::uint32_t kKindHello = 0x7E;
constexpr std::uint32_t kResultBit = 0x100;

const char* kind_name(std::uint32_t kind) {
  switch (kind & ~kResultBit) {
    case kKindSum: return "all_reduce_sum";
    case kKindBarrier: return "barrier";
    case kKindGather: return "gather_to_root";
    default: return "unknown collective";
  }
}

// Fixed summation order shared by every backend: copy the per-rank partials
// into slots padded to a power of two, then fold the top half onto the
// bottom half until one row remains. For power-of-two worlds this
// reproduces the top levels of the global leaf tree used by the solver.
void fold_partials(const std::vector<const double*>& parts, std::size_t len,
                   std::vector<double>& out) {
  const std::size_t p = parts.size();
  const std::size_t padded = std::bit_ceil(std::max<std::size_t>(p, 1));
  std::vector<double> scratch(padded * len, 0.0);
  for (std::size_t r = 0; r < p; ++r)
    std::memcpy(scratch.data() + r * len, parts[r], len * sizeof(double));
  for (std::size_t half = padded / 2; half >= 1; half /= 2) {
    for (std::size_t r = 0; r < half; ++r) {
      double* lo = scratch.data() + r * len;
      const double* hi = scratch.data() + (r + half) * len;
      for (std::size_t j = 0; j < len; ++j) lo[j] += hi[j];
    }
    if (half == 1) break;
  }
  out.assign(scratch.begin(), scratch.begin() + len);
}

// ---------------------------------------------------------------------------
// single worker

class LocalComm final : public Communicator {
 public:
  int rank() const override { return 0; }
  int world_size() const override { return 1; }

 protected:
  void all_reduce_impl(std::uint64_t, std::span<double>) override {}
  void barrier_impl(std::uint64_t) override {}
  std::vector<double> gather_impl(std::uint64_t,
                                  std::span<const double> buf) override {
    return {buf.begin(), buf.end()};
  }
};

// ---------------------------------------------------------------------------
// in-process threads

struct ThreadGroup {
  explicit ThreadGroup(int w, std::chrono::milliseconds t)
      : world(w), timeout(t), slots(w) {}

  struct Slot {
    std::uint64_t seq = 0;
    std::uint32_t kind = 0;
    std::uint64_t len = 0;
    const double* src = nullptr;
  };

  int world;
  std::chrono::milliseconds timeout;
  std::mutex mu;
  std::condition_variable cv;
  std::uint64_t phase = 0;
  int arrived = 0;
  std::string error;
  std::vector<Slot> slots;
  std::vector<double> result;

  // Every collective funnels through here. The slot must be filled before
  // arrival; the last rank to arrive runs `combine` under the lock.
  void rendezvous(const std::function<void()>& combine) {
    std::unique_lock lk(mu);
    if (!error.empty()) throw ProtocolError(error);
    const std::uint64_t my_phase = phase;
    if (++arrived == world) {
      validate();
      if (error.empty() && combine) combine();
      arrived = 0;
      ++phase;
      cv.notify_all();
    } else if (!cv.wait_for(lk, timeout, [&] {
                 return phase != my_phase || !error.empty();
               })) {
      error = "collective timed out after " + std::to_string(timeout.count()) +
              " ms waiting for peers";
      ++phase;
      cv.notify_all();
      throw ProtocolError(error);
    }
    if (!error.empty()) throw ProtocolError(error);
  }

 private:
  void validate() {
    for (int r = 1; r < world; ++r) {
      if (slots[r].seq != slots[0].seq || slots[r].kind != slots[0].kind ||
          (slots[0].kind == kKindSum && slots[r].len != slots[0].len)) {
        error = "collective sequence mismatch: rank 0 issued " +
                std::string(kind_name(slots[0].kind)) + " #" +
                std::to_string(slots[0].seq) + " (len " +
                std::to_string(slots[0].len) + ") but rank " +
                std::to_string(r) + " issued " +
                std::string(kind_name(slots[r].kind)) + " #" +
                std::to_string(slots[r].seq) + " (len " +
                std::to_string(slots[r].len) + ")";
        return;
      }
    }
  }
};

class ThreadComm final : public Communicator {
 public:
  ThreadComm(ThreadGroup& g, int rank) : group_(g), rank_(rank) {}

  int rank() const override { return rank_; }
  int world_size() const override { return group_.world; }

 protected:
  void all_reduce_impl(std::uint64_t seq, std::span<double> buf) override {
    group_.slots[rank_] = {seq, kKindSum, buf.size(), buf.data()};
    group_.rendezvous([&] {
      std::vector<const double*> parts(group_.world);
      for (int r = 0; r < group_.world; ++r) parts[r] = group_.slots[r].src;
      fold_partials(parts, buf.size(), group_.result);
    });
    std::memcpy(buf.data(), group_.result.data(), buf.size() * sizeof(double));
    // hold everyone until the result is copied out so the next collective
    // cannot overwrite it early
    group_.slots[rank_] = {seq, kKindBarrier, 0, nullptr};
    group_.rendezvous(nullptr);
  }

  void barrier_impl(std::uint64_t seq) override {
    group_.slots[rank_] = {seq, kKindBarrier, 0, nullptr};
    group_.rendezvous(nullptr);
  }

  std::vector<double> gather_impl(std::uint64_t seq,
                                  std::span<const double> buf) override {
    group_.slots[rank_] = {seq, kKindGather, buf.size(), buf.data()};
    group_.rendezvous([&] {
      group_.result.clear();
      for (int r = 0; r < group_.world; ++r)
        group_.result.insert(group_.result.end(), group_.slots[r].src,
                             group_.slots[r].src + group_.slots[r].len);
    });
    std::vector<double> out;
    if (rank_ == 0) out = group_.result;
    group_.slots[rank_] = {seq, kKindBarrier, 0, nullptr};
    group_.rendezvous(nullptr);
    return out;
  }

 private:
  ThreadGroup& group_;
  int rank_;
};

void run_workers(int p, const std::function<void(int)>& body) {
  if (p < 1) throw ProtocolError("worker count must be positive");
  std::vector<std::exception_ptr> errors(p);
  std::vector<std::thread> threads;
  threads.reserve(p);
  for (int r = 0; r < p; ++r) {
    threads.emplace_back([&, r] {
      try {
        body(r);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// loopback / multi-process sockets

struct FrameHeader {
  std::uint32_t seq = 0;
  std::uint32_t tag = 0;
  std::uint64_t len = 0;
};
static_assert(sizeof(FrameHeader) == 16);

using Clock = std::chrono::steady_clock;

void io_wait(int fd, short events, Clock::time_point deadline, const char* what) {
  while (true) {
    auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - Clock::now());
    if (remaining.count() <= 0)
      throw ProtocolError(std::string("timed out during ") + what);
    pollfd pfd{fd, events, 0};
    int rc = poll(&pfd, 1, static_cast<int>(remaining.count()));
    if (rc > 0) return;
    if (rc < 0 && errno != EINTR)
      throw ProtocolError(std::string("poll failed during ") + what + ": " +
                          std::strerror(errno));
  }
}

void write_all(int fd, const void* data, std::size_t len,
               Clock::time_point deadline, const char* what) {
  const char* p = static_cast<const char*>(data);
  while (len > 0) {
    io_wait(fd, POLLOUT, deadline, what);
    ssize_t n = send(fd, p, len, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw ProtocolError(std::string("send failed during ") + what + ": " +
                          std::strerror(errno));
    }
    p += n;
    len -= static_cast<std::size_t>(n);
  }
}

void read_all(int fd, void* data, std::size_t len, Clock::time_point deadline,
              const char* what) {
  char* p = static_cast<char*>(data);
  while (len > 0) {
    io_wait(fd, POLLIN, deadline, what);
    ssize_t n = recv(fd, p, len, 0);
    if (n == 0)
      throw ProtocolError(std::string("peer closed connection during ") + what);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw ProtocolError(std::string("recv failed during ") + what + ": " +
                          std::strerror(errno));
    }
    p += n;
    len -= static_cast<std::size_t>(n);
  }
}

void send_frame(int fd, std::uint32_t seq, std::uint32_t tag, const void* payload,
                std::uint64_t len, Clock::time_point deadline, const char* what) {
  FrameHeader h{seq, tag, len};
  write_all(fd, &h, sizeof(h), deadline, what);
  if (len > 0) write_all(fd, payload, len, deadline, what);
}

FrameHeader recv_header(int fd, Clock::time_point deadline, const char* what) {
  FrameHeader h;
  read_all(fd, &h, sizeof(h), deadline, what);
  return h;
}

class SocketComm final : public Communicator {
 public:
  // root: takes ownership of the accepted peer fds, indexed by rank-1
  SocketComm(int rank, int world, std::vector<int> fds,
             std::chrono::milliseconds timeout)
      : rank_(rank), world_(world), fds_(std::move(fds)), timeout_(timeout) {}

  ~SocketComm() override { close_all(); }

  int rank() const override { return rank_; }
  int world_size() const override { return world_; }

 protected:
  void all_reduce_impl(std::uint64_t seq, std::span<double> buf) override {
    const std::uint32_t s = static_cast<std::uint32_t>(seq);
    auto deadline = Clock::now() + timeout_;
    if (rank_ == 0) {
      std::vector<std::vector<double>> recv_bufs(world_);
      std::vector<const double*> parts(world_);
      parts[0] = buf.data();
      for (int r = 1; r < world_; ++r) {
        FrameHeader h = recv_header(fds_[r - 1], deadline, "all_reduce_sum");
        if (h.seq != s || h.tag != kKindSum ||
            h.len != buf.size() * sizeof(double))
          fail_peers("collective sequence mismatch: root issued all_reduce_sum #" +
                     std::to_string(s) + " (len " + std::to_string(buf.size()) +
                     ") but rank " + std::to_string(r) + " sent " +
                     kind_name(h.tag) + " #" + std::to_string(h.seq) +
                     " (payload " + std::to_string(h.len) + " bytes)");
        recv_bufs[r].resize(buf.size());
        read_all(fds_[r - 1], recv_bufs[r].data(), h.len, deadline,
                 "all_reduce_sum");
        parts[r] = recv_bufs[r].data();
      }
      std::vector<double> result;
      fold_partials(parts, buf.size(), result);
      for (int r = 1; r < world_; ++r)
        send_frame(fds_[r - 1], s, kKindSum | kResultBit, result.data(),
                   result.size() * sizeof(double), deadline, "all_reduce_sum");
      std::memcpy(buf.data(), result.data(), result.size() * sizeof(double));
    } else {
      send_frame(fds_[0], s, kKindSum, buf.data(), buf.size() * sizeof(double),
                 deadline, "all_reduce_sum");
      FrameHeader h = recv_header(fds_[0], deadline, "all_reduce_sum");
      if (h.seq != s || h.tag != (kKindSum | kResultBit) ||
          h.len != buf.size() * sizeof(double))
        fail_peers("unexpected reduce result frame: tag " + std::to_string(h.tag) +
                   " seq " + std::to_string(h.seq));
      read_all(fds_[0], buf.data(), h.len, deadline, "all_reduce_sum");
    }
  }

  void barrier_impl(std::uint64_t seq) override {
    const std::uint32_t s = static_cast<std::uint32_t>(seq);
    auto deadline = Clock::now() + timeout_;
    if (rank_ == 0) {
      for (int r = 1; r < world_; ++r) {
        FrameHeader h = recv_header(fds_[r - 1], deadline, "barrier");
        if (h.seq != s || h.tag != kKindBarrier || h.len != 0)
          fail_peers("collective sequence mismatch: root issued barrier #" +
                     std::to_string(s) + " but rank " + std::to_string(r) +
                     " sent " + kind_name(h.tag) + " #" + std::to_string(h.seq));
      }
      for (int r = 1; r < world_; ++r)
        send_frame(fds_[r - 1], s, kKindBarrier | kResultBit, nullptr, 0,
                   deadline, "barrier");
    } else {
      send_frame(fds_[0], s, kKindBarrier, nullptr, 0, deadline, "barrier");
      FrameHeader h = recv_header(fds_[0], deadline, "barrier");
      if (h.seq != s || h.tag != (kKindBarrier | kResultBit))
        fail_peers("unexpected barrier release frame");
    }
  }

  std::vector<double> gather_impl(std::uint64_t seq,
                                  std::span<const double> buf) override {
    const std::uint32_t s = static_cast<std::uint32_t>(seq);
    auto deadline = Clock::now() + timeout_;
    if (rank_ == 0) {
      std::vector<double> out(buf.begin(), buf.end());
      for (int r = 1; r < world_; ++r) {
        FrameHeader h = recv_header(fds_[r - 1], deadline, "gather_to_root");
        if (h.seq != s || h.tag != kKindGather ||
            h.len % sizeof(double) != 0)
          fail_peers("collective sequence mismatch: root issued gather #" +
                     std::to_string(s) + " but rank " + std::to_string(r) +
                     " sent " + kind_name(h.tag) + " #" + std::to_string(h.seq));
        std::size_t old = out.size();
        out.resize(old + h.len / sizeof(double));
        read_all(fds_[r - 1], out.data() + old, h.len, deadline,
                 "gather_to_root");
      }
      return out;
    }
    send_frame(fds_[0], s, kKindGather, buf.data(), buf.size() * sizeof(double),
               deadline, "gather_to_root");
    return {};
  }

 private:
  [[noreturn]] void fail_peers(const std::string& message) {
    // closing the sockets unblocks every peer with a read error instead of
    // leaving them waiting for a result that will never come
    close_all();
    throw ProtocolError(message);
  }

  void close_all() {
    for (int fd : fds_)
      if (fd >= 0) close(fd);
    fds_.assign(fds_.size(), -1);
  }

  int rank_;
  int world_;
  std::vector<int> fds_;  // root: peer fds by rank-1; others: [0] = root
  std::chrono::milliseconds timeout_;
};

sockaddr_in parse_addr(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
    throw ProtocolError("cannot parse coordinator address: " + host);
  return addr;
}

}  // namespace

// ---------------------------------------------------------------------------
// Communicator base

void Communicator::all_reduce_sum(std::span<double> buf) {
  if (buf.size() == 1)
    ++stats_.scalar_allreduce;
  else
    ++stats_.vector_allreduce;
  stats_.doubles_reduced += buf.size();
  all_reduce_impl(next_seq_++, buf);
}

double Communicator::all_reduce_sum(double x) {
  all_reduce_sum(std::span<double>(&x, 1));
  return x;
}

void Communicator::barrier() {
  ++stats_.barriers;
  barrier_impl(next_seq_++);
}

std::vector<double> Communicator::gather_to_root(std::span<const double> buf) {
  ++stats_.gathers;
  return gather_impl(next_seq_++, buf);
}

std::unique_ptr<Communicator> make_local_communicator() {
  return std::make_unique<LocalComm>();
}

void run_on_thread_workers(int p, const std::function<void(Communicator&)>& fn,
                           std::chrono::milliseconds timeout) {
  ThreadGroup group(p, timeout);
  run_workers(p, [&](int r) {
    ThreadComm comm(group, r);
    fn(comm);
  });
}

// ---------------------------------------------------------------------------
// socket setup

SocketListener::SocketListener(const std::string& host, std::uint16_t port) {
  fd_ = socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw ProtocolError("socket() failed");
  int one = 1;
  setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr = parse_addr(host, port);
  if (bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    close(fd_);
    fd_ = -1;
    throw ProtocolError("cannot bind " + host + ":" + std::to_string(port) +
                        ": " + std::strerror(errno));
  }
  if (listen(fd_, 64) != 0) {
    close(fd_);
    fd_ = -1;
    throw ProtocolError("listen() failed");
  }
  socklen_t len = sizeof(addr);
  getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

SocketListener::~SocketListener() {
  if (fd_ >= 0) close(fd_);
}

std::unique_ptr<Communicator> make_root_socket_comm(
    SocketListener& listener, int world, std::chrono::milliseconds timeout) {
  auto deadline = Clock::now() + timeout;
  std::vector<int> fds(world > 1 ? world - 1 : 0, -1);
  for (int i = 0; i < world - 1; ++i) {
    io_wait(listener.fd(), POLLIN, deadline, "worker rendezvous");
    int fd = accept(listener.fd(), nullptr, nullptr);
    if (fd < 0) throw ProtocolError("accept() failed");
    int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    FrameHeader h = recv_header(fd, deadline, "worker rendezvous");
    std::uint64_t peer_rank = 0;
    if (h.tag != kKindHello || h.len != sizeof(peer_rank)) {
      close(fd);
      throw ProtocolError("bad hello frame from connecting worker");
    }
    read_all(fd, &peer_rank, sizeof(peer_rank), deadline, "worker rendezvous");
    if (peer_rank == 0 || peer_rank >= static_cast<std::uint64_t>(world) ||
        fds[peer_rank - 1] != -1) {
      close(fd);
      throw ProtocolError("invalid or duplicate worker rank " +
                          std::to_string(peer_rank));
    }
    fds[peer_rank - 1] = fd;
  }
  return std::make_unique<SocketComm>(0, world, std::move(fds), timeout);
}

std::unique_ptr<Communicator> connect_socket_comm(
    const std::string& coord, int rank, int world,
    std::chrono::milliseconds timeout) {
  auto colon = coord.rfind(':');
  if (colon == std::string::npos)
    throw ProtocolError("coordinator must be host:port, got " + coord);
  const std::string host = coord.substr(0, colon);
  const int port = std::atoi(coord.c_str() + colon + 1);
  sockaddr_in addr = parse_addr(host, static_cast<std::uint16_t>(port));

  auto deadline = Clock::now() + timeout;
  int fd = -1;
  while (true) {
    fd = socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw ProtocolError("socket() failed");
    if (connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0)
      break;
    close(fd);
    if (Clock::now() >= deadline)
      throw ProtocolError("timed out connecting to coordinator " + coord);
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  int one = 1;
  setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  std::uint64_t r = static_cast<std::uint64_t>(rank);
  send_frame(fd, 0, kKindHello, &r, sizeof(r), deadline, "worker rendezvous");
  return std::make_unique<SocketComm>(rank, world, std::vector<int>{fd}, timeout);
}

void run_on_socket_workers(int p, const std::function<void(Communicator&)>& fn,
                           std::chrono::milliseconds timeout) {
  SocketListener listener("127.0.0.1", 0);
  const std::string coord = "127.0.0.1:" + std::to_string(listener.port());
  run_workers(p, [&](int r) {
    std::unique_ptr<Communicator> comm =
        r == 0 ? make_root_socket_comm(listener, p, timeout)
               : connect_socket_comm(coord, r, p, timeout);
    fn(*comm);
  });
}

std::unique_ptr<Communicator> connect_env_communicator(
    std::chrono::milliseconds timeout) {
  const char* rank_s = std::getenv("SHAPFLOW_RANK");
  const char* world_s = std::getenv("SHAPFLOW_WORLD");
  const char* coord_s = std::getenv("SHAPFLOW_COORD");
  if (!rank_s || !world_s || !coord_s) return nullptr;
  const int rank = std::atoi(rank_s);
  const int world = std::atoi(world_s);
  if (world < 1 || rank < 0 || rank >= world)
    throw ProtocolError("inconsistent SHAPFLOW_RANK/SHAPFLOW_WORLD");
  if (rank == 0) {
    std::string coord(coord_s);
    auto colon = coord.rfind(':');
    if (colon == std::string::npos)
      throw ProtocolError("SHAPFLOW_COORD must be host:port");
    SocketListener listener(coord.substr(0, colon),
                            static_cast<std::uint16_t>(
                                std::atoi(coord.c_str() + colon + 1)));
    return make_root_socket_comm(listener, world, timeout);
  }
  return connect_socket_comm(coord_s, rank, world, timeout);
}

}  // namespace shapflow
