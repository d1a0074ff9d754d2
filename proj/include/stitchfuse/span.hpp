// SPDX-License-Identifier: Apache-2.0
//
// Work/Span analysis: per-frame layering of the graph by longest path to an output.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "stitchfuse/ir.hpp"
#include "stitchfuse/options.hpp"

namespace stitchfuse {

struct SpanMap {
  std::map<InstrId, int64_t> span;
  int64_t critical_path_length = 0;
  // span value -> instruction ids, sorted by id
  std::map<int64_t, std::vector<InstrId>> layers;
};

// Spans are computed independently per frame context; cross-frame edges are
// ignored. Outputs (and instructions with no same-frame users) get span 0.
SpanMap compute_span(const TensorGraph& graph);

// A maximal interval of consecutive layers with no fusion barrier inside.
// LibraryCall always acts as a barrier; BatchMatMul only when dot fusion is off.
struct FusionRegion {
  std::optional<std::string> frame;
  int64_t lower_layer = 0;  // inclusive
  int64_t upper_layer = 0;  // inclusive
  std::optional<int64_t> lower_lc;  // barrier layer below, if any
  std::optional<int64_t> upper_lc;  // barrier layer above, if any
  std::vector<int64_t> layers;
};

std::vector<FusionRegion> layers_between(const SpanMap& span_map, const TensorGraph& graph,
                                         const PipelineOptions& options);

bool is_fusion_barrier(const Instruction& instr, const PipelineOptions& options);

}  // namespace stitchfuse
