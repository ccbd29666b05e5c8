#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace invarirank {

/// splitmix64 finalizer over (a, b); used to derive independent seeds.
std::uint64_t MixSeed(std::uint64_t a, std::uint64_t b);

/// Uniform random permutation of 0..n-1 drawn with Fisher-Yates.
std::vector<int> RandomPermutation(std::size_t n, std::mt19937_64& rng);

/// Runs fn(0..n-1) across worker threads. Each index writes only its own
/// output slot, so results do not depend on scheduling. Rethrows the first
/// exception. The worker count comes from INVARIRANK_THREADS, else the
/// hardware concurrency.
void ParallelFor(std::size_t n, const std::function<void(std::size_t)>& fn);

unsigned WorkerCount();

}  // namespace invarirank
