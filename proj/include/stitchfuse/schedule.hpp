// SPDX-License-Identifier: Apache-2.0
//
// Schedule space (split_dim, sword, sched_type), blocks computation, and
// constraint propagation across a fused computation.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "stitchfuse/fusion.hpp"
#include "stitchfuse/ir.hpp"
#include "stitchfuse/options.hpp"

namespace stitchfuse {

enum class SchedType { Row, Column };

std::string to_string(SchedType t);

struct Schedule {
  int64_t split_dim = 0;
  int64_t sword = 1;
  SchedType type = SchedType::Row;

  bool operator==(const Schedule&) const = default;
  bool operator<(const Schedule& o) const {
    return std::tie(split_dim, sword, type) < std::tie(o.split_dim, o.sword, o.type);
  }
};

inline Schedule default_schedule() { return Schedule{0, 1, SchedType::Row}; }
std::string to_string(const Schedule& s);

struct SchedulePlan {
  std::map<InstrId, Schedule> per_instruction;  // scheduled (materializable) members
  int64_t blocks = 1;
  int block_threads = 64;
  std::set<InstrId> bypassed;  // thread-composed members (no schedule)
};

bool schedule_valid(const Shape& shape, const Schedule& s);

// All (split_dim, sword, sched_type) with sword over divisors of the split
// extent; ascending split_dim, ascending sword, Row before Column.
std::vector<Schedule> enumerate_schedules(const Shape& shape);

int64_t blocks_of(const Shape& shape, const Schedule& s);

// The axis-aligned box of the work space owned by one block: per-dim
// [begin, end) ranges. Boxes over all blocks tile the index space exactly.
std::vector<std::pair<int64_t, int64_t>> chunk_box(const Shape& shape, const Schedule& s,
                                                   int64_t block);

// Table-1 propagation: the schedule each operand must hold so its per-block
// chunk covers what the consumer's chunk needs, with an equal blocks count.
// Outer nullopt = Unsatisfiable. An inner nullopt marks an operand that is
// re-read whole per block (broadcast-created split dim); a member operand in
// that position must be thread-composed.
std::optional<std::vector<std::optional<Schedule>>> propagate(const Instruction& instr,
                                                              const TensorGraph& graph,
                                                              const Schedule& out_schedule);

enum class ResolveFailure {
  PropagationUnsatisfiable,
  ScheduleConflict,   // one member received two different schedules
  BlocksMismatch,     // member schedule yields a different blocks count
  InlineReduceOrDot,  // a Reduce/BatchMatMul would have to be thread-composed
};

struct ResolveResult {
  std::optional<SchedulePlan> plan;
  ResolveFailure failure = ResolveFailure::PropagationUnsatisfiable;
  bool ok() const { return plan.has_value(); }
};

// Back-propagates root schedules through members in reverse span order.
// Trivial ops (per classify_trivial) are bypassed where possible; members
// reachable only through bypassed ops are inlined, unless Reduce/BatchMatMul.
ResolveResult resolve_schedule(const FusedComputation& comp, const TensorGraph& graph,
                               const std::map<InstrId, Schedule>& root_schedules,
                               const PipelineOptions& options);

// Trivial ops are bypassed in cost sums and schedule propagation.
bool classify_trivial(const Instruction& instr, int64_t transpose_threshold);

}  // namespace stitchfuse
