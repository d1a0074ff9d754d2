// SPDX-License-Identifier: Apache-2.0

#include "stitchfuse/kernelgen.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace stitchfuse {

namespace {

constexpr int64_t kAlign = 8;

int64_t align_up(int64_t v) { return (v + kAlign - 1) / kAlign * kAlign; }

std::vector<InstrId> execution_order(const FusedComputation& comp, const SpanMap& span_map) {
  std::vector<InstrId> order(comp.members.begin(), comp.members.end());
  std::sort(order.begin(), order.end(), [&](const InstrId& a, const InstrId& b) {
    int64_t sa = span_map.span.at(a), sb = span_map.span.at(b);
    if (sa != sb) return sa > sb;
    return a < b;
  });
  return order;
}

}  // namespace

KernelProgram emit_program(const FusedComputation& comp, const TensorGraph& graph,
                           const SpanMap& span_map, const SchedulePlan& plan,
                           const SharedMemPlan& smem, const PipelineOptions& options) {
  (void)options;
  KernelProgram program;
  program.comp = comp;
  program.plan = plan;

  // arena layout: sequential over Alloc decisions in execution order
  std::vector<InstrId> order = execution_order(comp, span_map);
  for (const InstrId& id : order) {
    auto it = smem.decisions.find(id);
    if (it == smem.decisions.end() || it->second.kind != SmemDecision::Alloc) continue;
    program.arena_offsets[id] = program.arena_bytes;
    program.arena_bytes += align_up(it->second.bytes);
  }
  for (const InstrId& id : order) {
    auto it = smem.decisions.find(id);
    if (it == smem.decisions.end() || it->second.kind != SmemDecision::Share) continue;
    program.arena_offsets[id] = program.arena_offsets.at(it->second.target);
  }

  std::map<InstrId, int> root_index;
  for (size_t i = 0; i < comp.roots.size(); ++i) root_index[comp.roots[i]] = static_cast<int>(i);

  for (const InstrId& id : order) {
    auto rit = root_index.find(id);
    if (rit != root_index.end()) {
      program.statements.push_back(
          MaterializeStmt{id, plan.per_instruction.at(id), OutputDest{rit->second}});
      continue;
    }
    auto oit = program.arena_offsets.find(id);
    if (oit != program.arena_offsets.end()) {
      int64_t bytes = graph.at(id).shape.element_count() / plan.blocks *
                      element_size(graph.at(id).shape.etype);
      program.statements.push_back(
          MaterializeStmt{id, plan.per_instruction.at(id), SharedDest{oit->second, bytes}});
      program.statements.push_back(BarrierStmt{});
      continue;
    }
    program.statements.push_back(InlineBindingStmt{id});
  }
  return program;
}

std::optional<std::string> check_program(const KernelProgram& program, const TensorGraph& graph) {
  std::set<InstrId> available;  // materialized or inline-bound so far
  std::set<int> roots_written;
  for (const Statement& stmt : program.statements) {
    if (const auto* mat = std::get_if<MaterializeStmt>(&stmt)) {
      for (const InstrId& op : graph.at(mat->instr).operands)
        if (program.comp.members.count(op) && !available.count(op))
          return "operand " + op + " of " + mat->instr + " not yet available";
      if (const auto* shared = std::get_if<SharedDest>(&mat->dest)) {
        if (shared->offset < 0 || shared->offset + shared->bytes > program.arena_bytes)
          return "arena overflow for " + mat->instr;
      } else {
        int idx = std::get<OutputDest>(mat->dest).root_index;
        if (idx < 0 || idx >= static_cast<int>(program.comp.roots.size()))
          return "bad root index for " + mat->instr;
        if (program.comp.roots[idx] != mat->instr)
          return "root index mismatch for " + mat->instr;
        if (!roots_written.insert(idx).second) return "root written twice: " + mat->instr;
      }
      available.insert(mat->instr);
    } else if (const auto* inl = std::get_if<InlineBindingStmt>(&stmt)) {
      for (const InstrId& op : graph.at(inl->instr).operands)
        if (program.comp.members.count(op) && !available.count(op))
          return "operand " + op + " of inline " + inl->instr + " not yet available";
      available.insert(inl->instr);
    }
  }
  if (roots_written.size() != program.comp.roots.size()) return "not all roots written";
  return std::nullopt;
}

std::string dump_program(const KernelProgram& program, const TensorGraph& graph) {
  std::ostringstream os;
  os << "program blocks=" << program.plan.blocks << " block_threads=" << program.plan.block_threads
     << " arena=" << program.arena_bytes << "B\n";
  os << "roots:";
  for (const InstrId& root : program.comp.roots) os << " " << root;
  os << "\n";
  for (const Statement& stmt : program.statements) {
    if (const auto* mat = std::get_if<MaterializeStmt>(&stmt)) {
      os << "  materialize " << mat->instr << " [" << to_string(mat->schedule) << "] -> ";
      if (const auto* shared = std::get_if<SharedDest>(&mat->dest))
        os << "shared@" << shared->offset << " (" << shared->bytes << "B)";
      else
        os << "output#" << std::get<OutputDest>(mat->dest).root_index;
      os << "\n";
    } else if (std::holds_alternative<BarrierStmt>(stmt)) {
      os << "  barrier\n";
    } else {
      const auto& inl = std::get<InlineBindingStmt>(stmt);
      os << "  inline " << inl.instr << " (" << opcode_name(graph.at(inl.instr)) << ")\n";
    }
  }
  return os.str();
}

}  // namespace stitchfuse
