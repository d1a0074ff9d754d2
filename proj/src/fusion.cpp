// SPDX-License-Identifier: Apache-2.0

#include "stitchfuse/fusion.hpp"

#include <algorithm>
#include <cassert>

#include "stitchfuse/schedule.hpp"

namespace stitchfuse {

std::string to_string(FuseReason r) {
  switch (r) {
    case FuseReason::Ok: return "Ok";
    case FuseReason::CyclicRisk: return "CyclicRisk";
    case FuseReason::NotProducerConsumer: return "NotProducerConsumer";
    case FuseReason::NoSatisfiableSchedule: return "NoSatisfiableSchedule";
    case FuseReason::SmemInfeasible: return "SmemInfeasible";
  }
  return "?";
}

void finalize_computation(FusedComputation& comp, const TensorGraph& graph) {
  comp.roots.clear();
  std::set<InstrId> externals;
  int64_t bytes = 0;
  for (const InstrId& id : comp.members) {
    const Instruction& instr = graph.at(id);
    bool all_inside = true;
    for (const InstrId& user : graph.users_of(id))
      if (!comp.members.count(user)) all_inside = false;
    if (!all_inside || graph.is_output(id) || graph.users_of(id).empty())
      comp.roots.push_back(id);
    for (const InstrId& op : instr.operands)
      if (!comp.members.count(op) && externals.insert(op).second)
        bytes += graph.at(op).shape.byte_size();
  }
  std::sort(comp.roots.begin(), comp.roots.end());
  for (const InstrId& root : comp.roots) bytes += graph.at(root).shape.byte_size();
  comp.footprint_bytes = bytes;
}

std::vector<FusedComputation> elementwise_fusion(const TensorGraph& graph, const SpanMap& span_map,
                                                 int64_t layer, int64_t footprint_limit) {
  std::vector<FusedComputation> result;
  auto it = span_map.layers.find(layer);
  if (it == span_map.layers.end()) return result;

  // group by output shape; groups and members in deterministic order
  std::map<Shape, std::vector<InstrId>> groups;
  for (const InstrId& id : it->second) {
    const Instruction& instr = graph.at(id);
    if (instr.is_elementwise()) groups[instr.shape].push_back(id);
  }

  for (const auto& [shape, ids] : groups) {
    FusedComputation current;
    std::set<InstrId> inputs_seen;
    int64_t footprint = 0;
    auto flush = [&]() {
      if (current.members.empty()) return;
      current.fusion_root = *current.members.begin();
      finalize_computation(current, graph);
      result.push_back(current);
      current = FusedComputation{};
      inputs_seen.clear();
      footprint = 0;
    };
    auto cost_of = [&](const Instruction& instr) {
      int64_t added = instr.shape.byte_size();
      for (const InstrId& op : instr.operands)
        if (!inputs_seen.count(op)) added += graph.at(op).shape.byte_size();
      return added;
    };
    for (const InstrId& id : ids) {
      const Instruction& instr = graph.at(id);
      int64_t added = cost_of(instr);
      if (!current.members.empty() && footprint + added > footprint_limit) {
        flush();
        added = cost_of(instr);
      }
      current.members.insert(id);
      footprint += added;
      for (const InstrId& op : instr.operands) inputs_seen.insert(op);
    }
    flush();
  }
  return result;
}

namespace {

// True if any forward path from `start` (exclusive of membership test at the
// start itself is included) reaches a member of `members`.
bool reaches_member(const TensorGraph& graph, const InstrId& start,
                    const std::set<InstrId>& members, std::map<InstrId, int>& memo) {
  if (members.count(start)) return true;
  auto it = memo.find(start);
  if (it != memo.end()) return it->second;
  memo[start] = 0;
  bool hit = false;
  for (const InstrId& user : graph.users_of(start))
    if (reaches_member(graph, user, members, memo)) {
      hit = true;
      break;
    }
  memo[start] = hit ? 1 : 0;
  return hit;
}

}  // namespace

FuseReason ConsistencyCheck::check(const FusedComputation& seed, const InstrId& candidate,
                                   const std::set<InstrId>& fused,
                                   const std::set<InstrId>& giveup) const {
  const Instruction& instr = graph.at(candidate);
  if (vetoed && vetoed->count(candidate)) return FuseReason::SmemInfeasible;
  if (assigned && assigned->count(candidate)) return FuseReason::CyclicRisk;
  for (const InstrId& user : graph.users_of(candidate))
    if (giveup.count(user)) return FuseReason::CyclicRisk;
  bool has_fused_user = false;
  for (const InstrId& user : graph.users_of(candidate))
    if (fused.count(user)) has_fused_user = true;
  if (!has_fused_user) return FuseReason::NotProducerConsumer;

  if (instr.opcode == Opcode::Parameter || instr.opcode == Opcode::Constant ||
      is_fusion_barrier(instr, options))
    return FuseReason::NoSatisfiableSchedule;
  const Instruction& root_instr = graph.at(seed.fusion_root);
  if (instr.frame_id != root_instr.frame_id) return FuseReason::NoSatisfiableSchedule;

  FusedComputation tentative;
  tentative.members = fused;
  tentative.members.insert(candidate);
  tentative.fusion_root = seed.fusion_root;
  finalize_computation(tentative, graph);

  // condensing the tentative members must keep the graph a DAG: no path may
  // leave through an external user and re-enter the member set
  std::map<InstrId, int> memo;
  for (const InstrId& id : tentative.members)
    for (const InstrId& user : graph.users_of(id))
      if (!tentative.members.count(user) &&
          reaches_member(graph, user, tentative.members, memo))
        return FuseReason::CyclicRisk;

  std::map<InstrId, Schedule> root_schedules;
  for (const InstrId& root : tentative.roots) root_schedules[root] = default_schedule();
  if (!resolve_schedule(tentative, graph, root_schedules, options).ok())
    return FuseReason::NoSatisfiableSchedule;
  return FuseReason::Ok;
}

FusedComputation subgraph_fuse(const TensorGraph& graph, const SpanMap& span_map,
                               FusedComputation seed, int64_t roof,
                               const ConsistencyCheck& checker) {
  int64_t curr_span = span_map.span.at(seed.fusion_root);
  std::set<InstrId> fused = seed.members;
  std::set<InstrId> giveup;
  for (int64_t layer = curr_span + 1; layer <= roof - 1; ++layer) {
    auto it = span_map.layers.find(layer);
    if (it == span_map.layers.end()) continue;
    for (const InstrId& hlo : it->second) {
      if (fused.count(hlo)) continue;
      if (checker.check(seed, hlo, fused, giveup) == FuseReason::Ok)
        fused.insert(hlo);
      else
        giveup.insert(hlo);
    }
  }
  FusedComputation result;
  result.members = std::move(fused);
  result.fusion_root = seed.fusion_root;
  finalize_computation(result, graph);
  return result;
}

FusionPlan fuse_module(const TensorGraph& graph, const PipelineOptions& options,
                       const SmemFeasibility& smem_check) {
  SpanMap span_map = compute_span(graph);
  std::vector<FusionRegion> regions = layers_between(span_map, graph, options);

  FusionPlan plan;
  std::set<InstrId> assigned;

  auto frame_of = [&](const InstrId& id) { return graph.at(id).frame_id; };

  for (const FusionRegion& region : regions) {
    int64_t roof = region.upper_lc ? *region.upper_lc : region.upper_layer + 1;
    for (int64_t layer : region.layers) {
      auto lit = span_map.layers.find(layer);
      if (lit == span_map.layers.end()) continue;

      // seeds at this root layer: elementwise groups plus singleton seeds for
      // the remaining fusable ops
      std::vector<FusedComputation> seeds;
      for (FusedComputation& ew : elementwise_fusion(graph, span_map, layer,
                                                     options.footprint_limit)) {
        std::set<InstrId> kept;
        for (const InstrId& id : ew.members)
          if (!assigned.count(id) && frame_of(id) == region.frame) kept.insert(id);
        if (kept.empty()) continue;
        ew.members = std::move(kept);
        ew.fusion_root = *ew.members.begin();
        finalize_computation(ew, graph);
        seeds.push_back(std::move(ew));
      }
      for (const InstrId& id : lit->second) {
        const Instruction& instr = graph.at(id);
        if (assigned.count(id) || frame_of(id) != region.frame) continue;
        if (instr.is_elementwise()) continue;
        if (instr.opcode == Opcode::Parameter || instr.opcode == Opcode::Constant) continue;
        if (is_fusion_barrier(instr, options)) continue;
        FusedComputation seed;
        seed.members = {id};
        seed.fusion_root = id;
        finalize_computation(seed, graph);
        seeds.push_back(std::move(seed));
      }
      std::sort(seeds.begin(), seeds.end(),
                [](const FusedComputation& a, const FusedComputation& b) {
                  return a.fusion_root < b.fusion_root;
                });

      for (FusedComputation& seed : seeds) {
        std::set<InstrId> veto;
        ConsistencyCheck checker{graph, options, &assigned, &veto};
        FusedComputation comp = subgraph_fuse(graph, span_map, seed, roof, checker);
        if (smem_check) {
          bool first_failure = true;
          for (int attempt = 0; comp.members.size() > 1; ++attempt) {
            std::optional<InstrId> recommended = smem_check(comp, graph);
            if (!recommended) break;
            if (first_failure && !seed.members.count(*recommended)) {
              veto.insert(*recommended);
              first_failure = false;
            } else {
              // split at the highest layer of the computation
              int64_t top = 0;
              for (const InstrId& id : comp.members)
                top = std::max(top, span_map.span.at(id));
              bool any = false;
              for (const InstrId& id : comp.members)
                if (span_map.span.at(id) == top && !seed.members.count(id)) {
                  veto.insert(id);
                  any = true;
                }
              if (!any) break;
            }
            comp = subgraph_fuse(graph, span_map, seed, roof, checker);
            if (attempt > static_cast<int>(region.layers.size()) + 2) break;
          }
        }
        for (const InstrId& id : comp.members) assigned.insert(id);
        plan.computations.push_back(std::move(comp));
      }
    }
  }

  for (const Instruction& instr : graph.instructions()) {
    if (instr.opcode == Opcode::Parameter || instr.opcode == Opcode::Constant) continue;
    if (!assigned.count(instr.id)) plan.unfused.insert(instr.id);
  }
  return plan;
}

}  // namespace stitchfuse
