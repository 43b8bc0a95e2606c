#pragma once

#include <cstdint>

namespace cages {

std::uint64_t mix64(std::uint64_t x);

// Counter-based stream: every draw is a pure function of
// (seed, stream, substream, role, counter), so parallel callers get the same
// numbers no matter how work is scheduled across threads.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream = 0,
             std::uint64_t role = 0);

  std::uint64_t next_u64();
  double uniform();             // strictly inside (0, 1)
  double normal();              // N(0,1) via the inverse CDF
  bool bernoulli(double p);
  int binomial(int draws, double p);       // inverse-CDF scan, one uniform
  int categorical(const double* weights, int k);  // weights sum to 1

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace cages
