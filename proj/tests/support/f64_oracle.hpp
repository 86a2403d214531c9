#pragma once

// Float64 finite differences for float32 networks. The implementation is
// compiled against the double-precision core, which lives in its own
// namespace, so this header only exchanges plain standard types.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace tmaseg_oracle {

using NamedValues = std::map<std::string, std::vector<double>>;

struct NetworkProbe {
  std::string preset;  // a name accepted by preset()
  std::uint64_t seed = 0;
  NamedValues params;  // overrides the freshly initialized values
  std::vector<std::int64_t> input_shape;
  std::vector<double> input;
  std::vector<double> weights;  // r in L = sum r * logits
};

/// (L(theta + step*d) - L(theta - step*d)) / (2*step), train mode, all in double.
double central_difference(const NetworkProbe& probe, const NamedValues& direction, double step);

}  // namespace tmaseg_oracle
