// SPDX-License-Identifier: Apache-2.0
//
// Span-layered deep fusion: intra-layer ElementwiseFusion plus layerwise
// subgraph fusion gated by the schedule-consistency check.

#pragma once

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "stitchfuse/ir.hpp"
#include "stitchfuse/options.hpp"
#include "stitchfuse/span.hpp"

namespace stitchfuse {

struct FusedComputation {
  std::set<InstrId> members;
  std::vector<InstrId> roots;  // members with all users outside, or graph outputs
  InstrId fusion_root;         // seed instruction
  int64_t footprint_bytes = 0;  // external input bytes + root output bytes
};

struct FusionPlan {
  std::vector<FusedComputation> computations;
  std::set<InstrId> unfused;  // non-Parameter/Constant instructions left standalone
};

enum class FuseReason {
  Ok,
  CyclicRisk,
  NotProducerConsumer,
  NoSatisfiableSchedule,
  SmemInfeasible,
};

std::string to_string(FuseReason r);

// Recomputes roots and footprint from the member set.
void finalize_computation(FusedComputation& comp, const TensorGraph& graph);

std::vector<FusedComputation> elementwise_fusion(const TensorGraph& graph, const SpanMap& span_map,
                                                 int64_t layer, int64_t footprint_limit);

struct ConsistencyCheck {
  const TensorGraph& graph;
  const PipelineOptions& options;
  // instructions already claimed by another computation
  const std::set<InstrId>* assigned = nullptr;
  // members vetoed by shared-memory feedback for this seed
  const std::set<InstrId>* vetoed = nullptr;

  FuseReason check(const FusedComputation& seed, const InstrId& candidate,
                   const std::set<InstrId>& fused, const std::set<InstrId>& giveup) const;
};

FusedComputation subgraph_fuse(const TensorGraph& graph, const SpanMap& span_map,
                               FusedComputation seed, int64_t roof,
                               const ConsistencyCheck& checker);

// Returns the member whose exclusion shared-memory planning recommends, or
// nullopt when the computation is feasible. Supplied by the pipeline driver.
using SmemFeasibility =
    std::function<std::optional<InstrId>(const FusedComputation&, const TensorGraph&)>;

FusionPlan fuse_module(const TensorGraph& graph, const PipelineOptions& options,
                       const SmemFeasibility& smem_check = nullptr);

}  // namespace stitchfuse
