// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "stitchfuse/ir.hpp"

namespace stitchfuse {

struct PipelineOptions {
  bool fuse_dot = false;
  int64_t footprint_limit = 64ll * 1024 * 1024;  // summed I/O bytes per elementwise group
  int64_t smem_limit = 20480;
  int64_t trivial_transpose_threshold = 4096;  // element count
  std::vector<int> block_threads_ladder = {64, 128, 256, 512, 1024};
  std::set<ElementwiseKind> expensive_override;  // empty = use default_expensive
  uint64_t seed = 0;

  bool is_expensive(ElementwiseKind k) const {
    if (!expensive_override.empty()) return expensive_override.count(k) > 0;
    return default_expensive(k);
  }
};

}  // namespace stitchfuse
