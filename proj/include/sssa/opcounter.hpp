#ifndef SSSA_OPCOUNTER_HPP
#define SSSA_OPCOUNTER_HPP

#include <cstdint>

namespace sssa {

// Tally of synaptic-arithmetic work: plain accumulates (AC), fused
// multiply-accumulates (MAC), and threshold comparisons. Counts only grow
// within a pass; callers merge per-call counters as needed.
struct OpCounter {
  std::uint64_t ac = 0;
  std::uint64_t mac = 0;
  std::uint64_t cmp = 0;

  void merge(const OpCounter& other) {
    ac += other.ac;
    mac += other.mac;
    cmp += other.cmp;
  }

  std::uint64_t total() const { return ac + mac + cmp; }

  bool operator==(const OpCounter& other) const = default;
};

}

#endif
