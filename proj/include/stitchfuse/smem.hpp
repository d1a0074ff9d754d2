// SPDX-License-Identifier: Apache-2.0
//
// Shared-memory planning: size requirements, shrinking under the capacity
// limit, and dominance-tree space sharing.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <variant>
#include <vector>

#include "stitchfuse/fusion.hpp"
#include "stitchfuse/ir.hpp"
#include "stitchfuse/options.hpp"
#include "stitchfuse/schedule.hpp"
#include "stitchfuse/span.hpp"

namespace stitchfuse {

struct SmemDecision {
  enum Kind { None, Alloc, Share } kind = None;
  int64_t bytes = 0;   // Alloc
  InstrId target;      // Share: the Alloc whose buffer is reused
};

struct SharedMemPlan {
  std::map<InstrId, SmemDecision> decisions;
  int64_t total_bytes = 0;
  std::vector<InstrId> shrunk;  // demoted to inline recomputation, in demotion order
};

struct SmemInfeasible {
  InstrId recommended_exclusion;  // member with the largest mandatory requirement
};

using SmemResult = std::variant<SharedMemPlan, SmemInfeasible>;

// Immediate dominators over reverse data-flow edges, rooted at a virtual node
// joining the computation roots.
struct DominanceTree {
  std::map<InstrId, InstrId> idom;  // absent for roots (their idom is the virtual root)

  bool dominates(const InstrId& a, const InstrId& b) const;  // a dominates b
};

DominanceTree build_dominance_tree(const FusedComputation& comp, const TensorGraph& graph);

// Per-candidate shared-buffer byte requirements (per-block chunk size).
// Candidates: non-root Reduce/BatchMatMul (mandatory); elementwise members
// with multiple users inside the computation; expensive elementwise members
// transitively feeding a BatchMatMul through shape-modulation ops only.
std::map<InstrId, int64_t> size_requirements(const FusedComputation& comp,
                                             const TensorGraph& graph, const SchedulePlan& plan,
                                             const PipelineOptions& options);

// Shrink + share, interleaved until the plan fits the limit.
SmemResult plan_shared_memory(const FusedComputation& comp, const TensorGraph& graph,
                              const SpanMap& span_map, const SchedulePlan& plan,
                              const PipelineOptions& options);

// One sharing pass over a fixed kept set (exposed for tests).
SharedMemPlan share(const std::map<InstrId, int64_t>& kept, const FusedComputation& comp,
                    const TensorGraph& graph, const DominanceTree& dom, const SpanMap& span_map);

}  // namespace stitchfuse
