#pragma once

#include <cstdint>
#include <limits>

namespace icl::tasks {

// Independent seed domains. Train and Eval never share a stream key, which is
// what keeps evaluation tasks out of the training set.
enum class Domain : std::uint64_t {
  Train = 1,
  Eval = 2,
  Tuning = 3,
  Normalizer = 4,
  Init = 5,
  Batches = 6,
};

// Purpose tags separate the task draw from the prompt draw for the same t.
enum class Purpose : std::uint64_t {
  Task = 11,
  Prompt = 12,
  Weights = 13,
  Order = 14,
  Misc = 15,
};

std::uint64_t splitmix64(std::uint64_t x);

/// Counter-based stream: the i-th output is splitmix64(key + i * golden), so a
/// stream is fully determined by its key and position and can be recreated
/// anywhere. Satisfies UniformRandomBitGenerator.
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit Stream(std::uint64_t key) : key_(key) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::uint64_t key() const { return key_; }
  std::uint64_t position() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Splittable seed: (master seed, domain). `stream(purpose, t)` derives the
/// key for the t-th task/prompt/... deterministically.
class Rng {
 public:
  explicit Rng(std::uint64_t master_seed, Domain domain = Domain::Train)
      : master_seed_(master_seed), domain_(domain) {}

  std::uint64_t master_seed() const { return master_seed_; }
  Domain domain() const { return domain_; }

  Rng with_domain(Domain d) const { return Rng(master_seed_, d); }
  Stream stream(Purpose purpose, std::uint64_t index) const;
  std::uint64_t stream_key(Purpose purpose, std::uint64_t index) const;

 private:
  std::uint64_t master_seed_;
  Domain domain_;
};

}  // namespace icl::tasks
