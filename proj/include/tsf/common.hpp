#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsf {

// Tensor extents, outermost first. Rank is limited to 5.
using Shape = std::vector<int>;

constexpr int kMaxRank = 5;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool shape_eq(const Shape& a, const Shape& b);

// Thrown when a forward pass or optimizer step produces a non-finite value.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Deterministic RNG. All stochastic code in the library draws from one of
// these; identical seeds give identical streams on a given platform.
class Rng {
public:
    explicit Rng(uint64_t seed);

    double uniform(double lo, double hi);
    double normal(double mean, double stddev);
    int uniform_int(int lo, int hi);  // inclusive range
    bool bernoulli(double p_true);
    uint64_t next_u64();

    // Independent stream derived from this generator's seed and a salt;
    // used for per-video generation so results are schedule-independent.
    Rng fork(uint64_t salt) const;

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    std::mt19937_64 gen_;
};

// FNV-1a content hashing, used for run manifests and determinism checks.
uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull);
std::string hash_hex(uint64_t h);
std::string hash_file(const std::string& path);

}  // namespace tsf
