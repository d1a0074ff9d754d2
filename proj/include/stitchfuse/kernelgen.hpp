// SPDX-License-Identifier: Apache-2.0
//
// Block-composed kernel programs: one program per fused computation, a
// statement list in execution order plus a shared-memory arena layout.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "stitchfuse/fusion.hpp"
#include "stitchfuse/ir.hpp"
#include "stitchfuse/options.hpp"
#include "stitchfuse/schedule.hpp"
#include "stitchfuse/smem.hpp"
#include "stitchfuse/span.hpp"

namespace stitchfuse {

struct SharedDest {
  int64_t offset = 0;
  int64_t bytes = 0;
};

struct OutputDest {
  int root_index = 0;
};

struct MaterializeStmt {
  InstrId instr;
  Schedule schedule;
  std::variant<SharedDest, OutputDest> dest;
};

struct BarrierStmt {};

// Member computed on the fly inside consumers; no buffer of its own.
struct InlineBindingStmt {
  InstrId instr;
};

using Statement = std::variant<MaterializeStmt, BarrierStmt, InlineBindingStmt>;

struct KernelProgram {
  FusedComputation comp;
  SchedulePlan plan;
  std::vector<Statement> statements;
  int64_t arena_bytes = 0;
  std::map<InstrId, int64_t> arena_offsets;  // every shared member, Share resolved
};

KernelProgram emit_program(const FusedComputation& comp, const TensorGraph& graph,
                           const SpanMap& span_map, const SchedulePlan& plan,
                           const SharedMemPlan& smem, const PipelineOptions& options);

// Structural checks: producer-before-consumer among materialized members,
// arena bounds, every root written exactly once.
std::optional<std::string> check_program(const KernelProgram& program, const TensorGraph& graph);

std::string dump_program(const KernelProgram& program, const TensorGraph& graph);

}  // namespace stitchfuse
