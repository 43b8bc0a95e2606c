#include "cages/rng.hpp"

#include <gsl/gsl_cdf.h>

#include <cmath>
#include <stdexcept>

#include "cages/design.hpp"

namespace cages {

// splitmix64 finalizer; full-avalanche mix of the 64-bit state.
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream,
                       std::uint64_t role) {
  std::uint64_t k = mix64(seed);
  k = mix64(k ^ (stream * 0xd1342543de82ef95ULL));
  k = mix64(k ^ (substream * 0xaf251af3b0f025b5ULL));
  k = mix64(k ^ (role * 0x9e3779b97f4a7c15ULL));
  key_ = k;
}

std::uint64_t CounterRng::next_u64() { return mix64(key_ ^ mix64(++counter_)); }

double CounterRng::uniform() {
  // 53 random bits; +0.5 keeps the value strictly inside (0,1) so the
  // inverse normal CDF never sees an endpoint.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double CounterRng::normal() { return gsl_cdf_ugaussian_Pinv(uniform()); }

bool CounterRng::bernoulli(double p) { return uniform() < p; }

int CounterRng::binomial(int draws, double p) {
  if (draws < 0) throw std::domain_error("binomial: draws must be >= 0");
  const double u = uniform();
  double cum = 0.0;
  for (int d = 0; d < draws; ++d) {
    cum += binomial_pmf(d, draws, p);
    if (u < cum) return d;
  }
  return draws;
}

int CounterRng::categorical(const double* weights, int k) {
  const double u = uniform();
  double cum = 0.0;
  for (int i = 0; i < k - 1; ++i) {
    cum += weights[i];
    if (u < cum) return i;
  }
  return k - 1;
}

}  // namespace cages
