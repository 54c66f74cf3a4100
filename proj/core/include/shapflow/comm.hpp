#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace shapflow {

struct CollectiveStats {
  std::uint64_t scalar_allreduce = 0;  // length-1 reductions
  std::uint64_t vector_allreduce = 0;  // longer reductions
  std::uint64_t barriers = 0;
  std::uint64_t gathers = 0;
  std::uint64_t doubles_reduced = 0;
};

// Collective communication between the workers of one explanation job.
// Calls are matched by a running sequence number and a shape tag; if ranks
// disagree on which collective comes next the group fails with a
// ProtocolError instead of deadlocking. Reductions sum in a fixed binary
// tree over ranks (fold by halves, zero-padded to a power of two), so the
// result is bitwise deterministic and, for power-of-two worlds, identical
// to a single rank folding the same partials.
class Communicator {
 public:
  virtual ~Communicator() = default;

  virtual int rank() const = 0;
  virtual int world_size() const = 0;

  // in place: every rank receives the element-wise sum over ranks
  void all_reduce_sum(std::span<double> buf);
  double all_reduce_sum(double x);
  void barrier();
  // root receives the concatenation in rank order; other ranks get {}
  std::vector<double> gather_to_root(std::span<const double> buf);

  const CollectiveStats& stats() const { return stats_; }

 protected:
  virtual void all_reduce_impl(std::uint64_t seq, std::span<double> buf) = 0;
  virtual void barrier_impl(std::uint64_t seq) = 0;
  virtual std::vector<double> gather_impl(std::uint64_t seq,
                                          std::span<const double> buf) = 0;

  CollectiveStats stats_;
  std::uint64_t next_seq_ = 0;
};

inline constexpr std::chrono::milliseconds kDefaultCommTimeout{60000};

// Runs fn once per rank on p in-process threads sharing one memory-backed
// communicator group. Rethrows the lowest-ranked worker failure.
void run_on_thread_workers(int p, const std::function<void(Communicator&)>& fn,
                           std::chrono::milliseconds timeout = kDefaultCommTimeout);

// Same shape but ranks talk over loopback TCP sockets, exercising the same
// wire protocol as separate worker processes.
void run_on_socket_workers(int p, const std::function<void(Communicator&)>& fn,
                           std::chrono::milliseconds timeout = kDefaultCommTimeout);

// Multi-process entry points. Rank 0 owns the listening socket; other ranks
// connect to coord ("host:port") and retry until the rendezvous times out.
class SocketListener {
 public:
  // binds host:port; port 0 picks a free port
  SocketListener(const std::string& host, std::uint16_t port);
  ~SocketListener();
  SocketListener(const SocketListener&) = delete;
  SocketListener& operator=(const SocketListener&) = delete;
  std::uint16_t port() const { return port_; }
  int fd() const { return fd_; }

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

std::unique_ptr<Communicator> make_root_socket_comm(
    SocketListener& listener, int world,
    std::chrono::milliseconds timeout = kDefaultCommTimeout);
std::unique_ptr<Communicator> connect_socket_comm(
    const std::string& coord, int rank, int world,
    std::chrono::milliseconds timeout = kDefaultCommTimeout);

// Reads SHAPFLOW_RANK, SHAPFLOW_WORLD and SHAPFLOW_COORD; returns nullptr
// when they are absent.
std::unique_ptr<Communicator> connect_env_communicator(
    std::chrono::milliseconds timeout = kDefaultCommTimeout);

// Single worker, no peers; collectives are identities.
std::unique_ptr<Communicator> make_local_communicator();

}  // namespace shapflow
