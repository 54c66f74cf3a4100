#include <doctest.h>

#include <array>
#include <chrono>
#include <mutex>
#include <thread>
#include <vector>

#include "shapflow/comm.hpp"
#include "shapflow/error.hpp"

using namespace shapflow;
using namespace std::chrono_literals;

namespace {

// The documented reduction order: fold by halves over the zero-padded
// power-of-two rank array.
std::vector<double> fold_reference(std::vector<std::vector<double>> parts) {
  std::size_t padded = 1;
  while (padded < parts.size()) padded *= 2;
  parts.resize(padded, std::vector<double>(parts[0].size(), 0.0));
  while (parts.size() > 1) {
    const std::size_t half = parts.size() / 2;
    for (std::size_t i = 0; i < half; ++i) {
      for (std::size_t j = 0; j < parts[i].size(); ++j) {
        parts[i][j] += parts[half + i][j];
      }
    }
    parts.resize(half);
  }
  return parts[0];
}

std::vector<double> rank_payload(int rank) {
  return {static_cast<double>(rank + 1), 0.1 * rank, -3.5 * rank + 0.25};
}

}  // namespace

TEST_CASE("local communicator is the identity") {
  auto comm = make_local_communicator();
  CHECK(comm->rank() == 0);
  CHECK(comm->world_size() == 1);
  std::vector<double> buf = {1.5, -2.0};
  comm->all_reduce_sum(buf);
  CHECK(buf == std::vector<double>{1.5, -2.0});
  CHECK(comm->all_reduce_sum(7.0) == 7.0);
  comm->barrier();
  auto gathered = comm->gather_to_root(buf);
  CHECK(gathered == buf);
  CHECK(comm->stats().vector_allreduce == 1);
  CHECK(comm->stats().scalar_allreduce == 1);
  CHECK(comm->stats().barriers == 1);
  CHECK(comm->stats().gathers == 1);
  CHECK(comm->stats().doubles_reduced == 3);
}

TEST_CASE("thread and socket reductions match the documented fold exactly") {
  for (int world : {1, 2, 4, 8}) {
    CAPTURE(world);
    std::vector<std::vector<double>> parts;
    for (int r = 0; r < world; ++r) parts.push_back(rank_payload(r));
    const std::vector<double> want = fold_reference(parts);

    for (int backend = 0; backend < 2; ++backend) {
      CAPTURE(backend);
      std::mutex mu;
      std::vector<std::vector<double>> got(world);
      auto body = [&](Communicator& comm) {
        std::vector<double> buf = rank_payload(comm.rank());
        comm.all_reduce_sum(buf);
        std::lock_guard<std::mutex> lock(mu);
        got[comm.rank()] = buf;
      };
      if (backend == 0) {
        run_on_thread_workers(world, body);
      } else {
        run_on_socket_workers(world, body);
      }
      for (int r = 0; r < world; ++r) {
        CHECK(got[r] == want);  // bitwise, on every rank
      }
    }
  }
}

TEST_CASE("scalar all-reduce and repeated collectives") {
  std::mutex mu;
  std::vector<double> sums;
  run_on_thread_workers(4, [&](Communicator& comm) {
    const double s = comm.all_reduce_sum(static_cast<double>(comm.rank()));
    const double t = comm.all_reduce_sum(10.0);
    std::lock_guard<std::mutex> lock(mu);
    sums.push_back(s);
    sums.push_back(t);
    CHECK(comm.stats().scalar_allreduce == 2);
    CHECK(comm.stats().doubles_reduced == 2);
  });
  for (std::size_t i = 0; i < sums.size(); i += 2) {
    CHECK(sums[i] == 6.0);
    CHECK(sums[i + 1] == 40.0);
  }
}

TEST_CASE("gather concatenates in rank order, root only") {
  const std::vector<std::vector<double>> payload = {
      {0.5}, {}, {1.0, 2.0}, {7.0}};
  for (int backend = 0; backend < 2; ++backend) {
    CAPTURE(backend);
    std::mutex mu;
    std::vector<std::vector<double>> got(4);
    auto body = [&](Communicator& comm) {
      auto g = comm.gather_to_root(payload[comm.rank()]);
      std::lock_guard<std::mutex> lock(mu);
      got[comm.rank()] = std::move(g);
    };
    if (backend == 0) {
      run_on_thread_workers(4, body);
    } else {
      run_on_socket_workers(4, body);
    }
    CHECK(got[0] == std::vector<double>{0.5, 1.0, 2.0, 7.0});
    for (int r = 1; r < 4; ++r) CHECK(got[r].empty());
  }
}

TEST_CASE("interleaved collectives keep every rank consistent") {
  run_on_thread_workers(3, [&](Communicator& comm) {
    for (int round = 0; round < 50; ++round) {
      std::vector<double> buf = {static_cast<double>(comm.rank()),
                                 static_cast<double>(round)};
      comm.all_reduce_sum(buf);
      CHECK(buf[0] == 3.0);  // 0+1+2
      CHECK(buf[1] == 3.0 * round);
      comm.barrier();
    }
    CHECK(comm.stats().vector_allreduce == 50);
    CHECK(comm.stats().barriers == 50);
  });
}

TEST_CASE("shape mismatches fail loudly instead of deadlocking") {
  // different lengths
  CHECK_THROWS_AS(run_on_thread_workers(2,
                                        [](Communicator& comm) {
                                          std::vector<double> buf(
                                              comm.rank() == 0 ? 2 : 3, 1.0);
                                          comm.all_reduce_sum(buf);
                                        }),
                  ProtocolError);
  // different collective kinds
  CHECK_THROWS_AS(run_on_thread_workers(2,
                                        [](Communicator& comm) {
                                          std::vector<double> buf(1, 1.0);
                                          if (comm.rank() == 0) {
                                            comm.all_reduce_sum(buf);
                                          } else {
                                            comm.barrier();
                                          }
                                        }),
                  ProtocolError);
  // sockets: length mismatch crosses the wire
  CHECK_THROWS_AS(run_on_socket_workers(2,
                                        [](Communicator& comm) {
                                          std::vector<double> buf(
                                              comm.rank() == 0 ? 2 : 3, 1.0);
                                          comm.all_reduce_sum(buf);
                                        }),
                  ProtocolError);
}

TEST_CASE("a straggler past the timeout poisons the group") {
  CHECK_THROWS_AS(run_on_thread_workers(
                      2,
                      [](Communicator& comm) {
                        if (comm.rank() == 1) std::this_thread::sleep_for(400ms);
                        comm.barrier();
                      },
                      100ms),
                  ProtocolError);
}

TEST_CASE("worker exceptions surface from the lowest failing rank") {
  CHECK_THROWS_WITH_AS(run_on_thread_workers(3,
                                             [](Communicator& comm) {
                                               if (comm.rank() == 1) {
                                                 throw DataError("boom");
                                               }
                                             }),
                       "boom", DataError);
}

TEST_CASE("socket backend carries many rounds reliably") {
  run_on_socket_workers(2, [](Communicator& comm) {
    for (int round = 0; round < 200; ++round) {
      std::vector<double> buf = {1.0, 2.0, 3.0, 4.0};
      comm.all_reduce_sum(buf);
      CHECK(buf[0] == 2.0);
    }
  });
}

TEST_CASE("world size validation") {
  CHECK_THROWS_AS(run_on_thread_workers(0, [](Communicator&) {}),
                  ProtocolError);
  CHECK_THROWS_AS(run_on_socket_workers(-2, [](Communicator&) {}),
                  ProtocolError);
}
