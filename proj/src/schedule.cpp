// SPDX-License-Identifier: Apache-2.0

#include "stitchfuse/schedule.hpp"

#include <algorithm>
#include <cassert>
#include <sstream>

namespace stitchfuse {

std::string to_string(SchedType t) { return t == SchedType::Row ? "row" : "col"; }

std::string to_string(const Schedule& s) {
  std::ostringstream os;
  os << "(" << s.split_dim << "," << s.sword << "," << to_string(s.type) << ")";
  return os.str();
}

bool schedule_valid(const Shape& shape, const Schedule& s) {
  if (shape.rank() == 0) return s == default_schedule();
  if (s.split_dim < 0 || s.split_dim >= shape.rank()) return false;
  if (s.sword < 1) return false;
  return shape.dims[s.split_dim] % s.sword == 0;
}

std::vector<Schedule> enumerate_schedules(const Shape& shape) {
  if (shape.rank() == 0) return {default_schedule()};
  std::vector<Schedule> out;
  for (int64_t d = 0; d < shape.rank(); ++d) {
    int64_t extent = shape.dims[d];
    for (int64_t sword = 1; sword <= extent; ++sword) {
      if (extent % sword != 0) continue;
      out.push_back({d, sword, SchedType::Row});
      out.push_back({d, sword, SchedType::Column});
    }
  }
  return out;
}

int64_t blocks_of(const Shape& shape, const Schedule& s) {
  if (shape.rank() == 0) return 1;
  if (!schedule_valid(shape, s)) throw std::invalid_argument("invalid schedule for shape");
  int64_t prod = 1;
  if (s.type == SchedType::Row) {
    for (int64_t i = 0; i < s.split_dim; ++i) prod *= shape.dims[i];
  } else {
    for (int64_t i = s.split_dim + 1; i < shape.rank(); ++i) prod *= shape.dims[i];
  }
  return s.sword * prod;
}

std::vector<std::pair<int64_t, int64_t>> chunk_box(const Shape& shape, const Schedule& s,
                                                   int64_t block) {
  int64_t rank = shape.rank();
  std::vector<std::pair<int64_t, int64_t>> box(rank);
  for (int64_t i = 0; i < rank; ++i) box[i] = {0, shape.dims[i]};
  if (rank == 0) return box;
  int64_t slice_len = shape.dims[s.split_dim] / s.sword;
  int64_t slice = block % s.sword;
  int64_t fixed = block / s.sword;  // linear index of the fixed prefix/suffix
  box[s.split_dim] = {slice * slice_len, (slice + 1) * slice_len};
  if (s.type == SchedType::Row) {
    for (int64_t i = s.split_dim - 1; i >= 0; --i) {
      int64_t v = fixed % shape.dims[i];
      fixed /= shape.dims[i];
      box[i] = {v, v + 1};
    }
  } else {
    for (int64_t i = rank - 1; i > s.split_dim; --i) {
      int64_t v = fixed % shape.dims[i];
      fixed /= shape.dims[i];
      box[i] = {v, v + 1};
    }
  }
  return box;
}

namespace {

using OperandSchedules = std::vector<std::optional<Schedule>>;

// Passes the same (blocks-preserving) schedule to one operand shape, or fails.
std::optional<Schedule> transform_reshape(const Shape& out, const Shape& in, const Schedule& s) {
  if (s.type == SchedType::Row) {
    // Row partitions the linear space into `blocks` equal contiguous segments;
    // find any (d', s') on the input inducing the same segmentation.
    int64_t blocks = blocks_of(out, s);
    int64_t prefix = 1;
    for (int64_t d = 0; d < in.rank(); ++d) {
      if (blocks % prefix == 0) {
        int64_t sword = blocks / prefix;
        if (sword >= 1 && sword <= in.dims[d] && in.dims[d] % sword == 0)
          return Schedule{d, sword, SchedType::Row};
      }
      prefix *= in.dims[d];
    }
    return std::nullopt;
  }
  // Column chunks interleave; the partitions coincide only when suffix count,
  // split extent, and sword all match.
  int64_t out_suffix = 1;
  for (int64_t i = s.split_dim + 1; i < out.rank(); ++i) out_suffix *= out.dims[i];
  int64_t suffix = 1;
  for (int64_t d = in.rank() - 1; d >= 0; --d) {
    if (suffix == out_suffix && in.dims[d] == out.dims[s.split_dim])
      return Schedule{d, s.sword, SchedType::Column};
    suffix *= in.dims[d];
  }
  return std::nullopt;
}

}  // namespace

std::optional<OperandSchedules> propagate(const Instruction& instr, const TensorGraph& graph,
                                          const Schedule& out_schedule) {
  const int64_t out_blocks = blocks_of(instr.shape, out_schedule);
  auto in_shape = [&](size_t i) -> const Shape& { return graph.at(instr.operands[i]).shape; };

  // With a single block every chunk is the whole tensor; any op is satisfied
  // by the default schedule on its operands.
  if (out_blocks == 1) {
    return OperandSchedules(instr.operands.size(), default_schedule());
  }

  const Schedule& s = out_schedule;
  auto checked = [&](OperandSchedules res) -> std::optional<OperandSchedules> {
    for (size_t i = 0; i < res.size(); ++i)
      if (res[i]) {
        if (!schedule_valid(in_shape(i), *res[i])) return std::nullopt;
        if (blocks_of(in_shape(i), *res[i]) != out_blocks) return std::nullopt;
      }
    return res;
  };

  switch (instr.opcode) {
    case Opcode::Elementwise:
      return checked(OperandSchedules(instr.operands.size(), s));
    case Opcode::Reshape:
    case Opcode::Bitcast: {
      auto t = transform_reshape(instr.shape, in_shape(0), s);
      if (!t) return std::nullopt;
      return checked({t});
    }
    case Opcode::Transpose: {
      // The identity prefix (Row) / suffix (Column) must cover the split dim;
      // otherwise per-block operand chunks are not expressible in this space.
      if (s.type == SchedType::Row) {
        for (int64_t i = 0; i <= s.split_dim; ++i)
          if (instr.permutation[i] != i) return std::nullopt;
      } else {
        for (int64_t i = s.split_dim; i < instr.shape.rank(); ++i)
          if (instr.permutation[i] != i) return std::nullopt;
      }
      return checked({s});
    }
    case Opcode::Reduce: {
      std::set<int64_t> rd(instr.reduce_dims.begin(), instr.reduce_dims.end());
      // map the output split dim to its input position by reinserting reduce dims
      int64_t mapped = -1, out_pos = 0;
      for (int64_t i = 0; i < in_shape(0).rank(); ++i) {
        if (rd.count(i)) continue;
        if (out_pos == s.split_dim) {
          mapped = i;
          break;
        }
        ++out_pos;
      }
      assert(mapped >= 0);
      int64_t min_rd = *rd.begin();
      int64_t max_rd = *rd.rbegin();
      if (s.type == SchedType::Row && mapped < min_rd)
        return checked({Schedule{mapped, s.sword, SchedType::Row}});
      if (s.type == SchedType::Column && mapped > max_rd)
        return checked({Schedule{mapped, s.sword, SchedType::Column}});
      return std::nullopt;
    }
    case Opcode::Broadcast: {
      for (size_t i = 0; i < instr.broadcast_dim_map.size(); ++i) {
        if (instr.broadcast_dim_map[i] == s.split_dim) {
          return checked({Schedule{static_cast<int64_t>(i), s.sword, s.type}});
        }
      }
      // split dim is broadcast-created: the operand is re-read whole per block
      return OperandSchedules{std::nullopt};
    }
    case Opcode::BatchMatMul: {
      if (s.type != SchedType::Row || s.split_dim >= instr.shape.rank() - 2) return std::nullopt;
      return checked(OperandSchedules(2, s));
    }
    default:
      return std::nullopt;
  }
}

bool classify_trivial(const Instruction& instr, int64_t transpose_threshold) {
  switch (instr.opcode) {
    case Opcode::Reshape:
    case Opcode::Bitcast:
    case Opcode::Broadcast:
      return true;
    case Opcode::Transpose:
      return instr.shape.element_count() < transpose_threshold;
    default:
      return false;
  }
}

ResolveResult resolve_schedule(const FusedComputation& comp, const TensorGraph& graph,
                               const std::map<InstrId, Schedule>& root_schedules,
                               const PipelineOptions& options) {
  auto fail = [&](ResolveFailure f) {
    ResolveResult r;
    r.failure = f;
    return r;
  };

  SchedulePlan plan;
  bool blocks_set = false;
  for (const InstrId& root : comp.roots) {
    auto it = root_schedules.find(root);
    if (it == root_schedules.end()) return fail(ResolveFailure::PropagationUnsatisfiable);
    if (!schedule_valid(graph.at(root).shape, it->second))
      return fail(ResolveFailure::PropagationUnsatisfiable);
    int64_t b = blocks_of(graph.at(root).shape, it->second);
    if (!blocks_set) {
      plan.blocks = b;
      blocks_set = true;
    } else if (plan.blocks != b) {
      return fail(ResolveFailure::BlocksMismatch);
    }
  }

  // incoming requirements per member: real schedules and/or whole-reads
  struct Incoming {
    std::set<Schedule> schedules;
    bool replicated = false;
  };
  std::map<InstrId, Incoming> incoming;
  for (const auto& [root, sched] : root_schedules)
    if (comp.members.count(root)) incoming[root].schedules.insert(sched);

  std::set<InstrId> root_set(comp.roots.begin(), comp.roots.end());

  // users-first order over the member subgraph
  std::vector<InstrId> order = graph.topological_order();
  std::reverse(order.begin(), order.end());

  auto push_replicated = [&](const Instruction& m) {
    for (const InstrId& op : m.operands)
      if (comp.members.count(op)) incoming[op].replicated = true;
  };
  auto push_schedules = [&](const Instruction& m, const OperandSchedules& scheds) {
    for (size_t i = 0; i < m.operands.size(); ++i) {
      if (!comp.members.count(m.operands[i])) continue;
      if (scheds[i]) incoming[m.operands[i]].schedules.insert(*scheds[i]);
      else incoming[m.operands[i]].replicated = true;
    }
  };

  for (const InstrId& id : order) {
    if (!comp.members.count(id)) continue;
    const Instruction& m = graph.at(id);
    const Incoming in = incoming[id];
    const bool is_root = root_set.count(id) > 0;
    const bool is_reduce_or_dot =
        m.opcode == Opcode::Reduce || m.opcode == Opcode::BatchMatMul;

    if (is_root) {
      // the root schedule is fixed; member users must agree with it
      Schedule sched = root_schedules.at(id);
      for (const Schedule& got : in.schedules)
        if (!(got == sched)) return fail(ResolveFailure::ScheduleConflict);
      if (in.replicated) return fail(ResolveFailure::ScheduleConflict);
      plan.per_instruction[id] = sched;
      auto prop = propagate(m, graph, sched);
      if (!prop) return fail(ResolveFailure::PropagationUnsatisfiable);
      push_schedules(m, *prop);
      continue;
    }

    const bool trivial = classify_trivial(m, options.trivial_transpose_threshold);
    const bool has_sched = !in.schedules.empty();
    if (has_sched && in.schedules.size() > 1) return fail(ResolveFailure::ScheduleConflict);

    if (!has_sched || in.replicated || trivial) {
      // thread-composed: consumers recompute this member inline. Schedules
      // still flow through it when the transform exists, so materialized
      // producers underneath keep a consistent chunking.
      if (has_sched && !in.replicated) {
        Schedule sched = *in.schedules.begin();
        auto prop = propagate(m, graph, sched);
        if (prop) {
          plan.bypassed.insert(id);
          push_schedules(m, *prop);
          continue;
        }
      }
      if (is_reduce_or_dot) return fail(ResolveFailure::InlineReduceOrDot);
      plan.bypassed.insert(id);
      push_replicated(m);
      continue;
    }

    Schedule sched = *in.schedules.begin();
    plan.per_instruction[id] = sched;
    auto prop = propagate(m, graph, sched);
    if (!prop) return fail(ResolveFailure::PropagationUnsatisfiable);
    push_schedules(m, *prop);
  }

  for (const auto& [id, sched] : plan.per_instruction) {
    if (blocks_of(graph.at(id).shape, sched) != plan.blocks)
      return fail(ResolveFailure::BlocksMismatch);
  }
  ResolveResult ok;
  ok.plan = std::move(plan);
  return ok;
}

}  // namespace stitchfuse
