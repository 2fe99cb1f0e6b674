#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace bmfia {

struct GradcheckEntry {
  std::string name;
  double rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string note;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool all_passed() const;
  void print(std::ostream& os) const;
};

/// Finite-difference audits of every gradient path on a small problem
/// (8x8 meshes, downsized network).
GradcheckReport run_gradcheck(std::uint64_t seed);

}  // namespace bmfia
