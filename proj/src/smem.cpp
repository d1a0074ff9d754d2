// SPDX-License-Identifier: Apache-2.0

#include "stitchfuse/smem.hpp"

#include <algorithm>
#include <cassert>

namespace stitchfuse {

namespace {

bool is_shape_modulation(const Instruction& instr) {
  switch (instr.opcode) {
    case Opcode::Reshape:
    case Opcode::Bitcast:
    case Opcode::Transpose:
    case Opcode::Broadcast:
      return true;
    default:
      return false;
  }
}

// execution order of members: producers first (descending span), id tie-break
std::vector<InstrId> execution_order(const FusedComputation& comp, const SpanMap& span_map) {
  std::vector<InstrId> order(comp.members.begin(), comp.members.end());
  std::sort(order.begin(), order.end(), [&](const InstrId& a, const InstrId& b) {
    int64_t sa = span_map.span.at(a), sb = span_map.span.at(b);
    if (sa != sb) return sa > sb;
    return a < b;
  });
  return order;
}

enum class SmemClass { CheapMultiUser = 1, ExpensiveMultiUser = 2, ExpensiveFeedsDot = 3, Mandatory = 4 };

bool feeds_dot_through_shape_mods(const FusedComputation& comp, const TensorGraph& graph,
                                  const InstrId& id, std::set<InstrId>& visiting) {
  if (!visiting.insert(id).second) return false;
  for (const InstrId& user : graph.users_of(id)) {
    if (!comp.members.count(user)) continue;
    const Instruction& u = graph.at(user);
    if (u.opcode == Opcode::BatchMatMul) return true;
    if (is_shape_modulation(u) && feeds_dot_through_shape_mods(comp, graph, user, visiting))
      return true;
  }
  return false;
}

SmemClass classify(const FusedComputation& comp, const TensorGraph& graph, const InstrId& id,
                   const PipelineOptions& options) {
  const Instruction& instr = graph.at(id);
  if (instr.opcode == Opcode::Reduce || instr.opcode == Opcode::BatchMatMul)
    return SmemClass::Mandatory;
  bool expensive = instr.is_elementwise() && options.is_expensive(instr.kind);
  if (expensive) {
    std::set<InstrId> visiting;
    if (feeds_dot_through_shape_mods(comp, graph, id, visiting)) return SmemClass::ExpensiveFeedsDot;
    return SmemClass::ExpensiveMultiUser;
  }
  return SmemClass::CheapMultiUser;
}

}  // namespace

bool DominanceTree::dominates(const InstrId& a, const InstrId& b) const {
  InstrId cur = b;
  while (true) {
    if (cur == a) return true;
    auto it = idom.find(cur);
    if (it == idom.end()) return false;
    cur = it->second;
  }
}

DominanceTree build_dominance_tree(const FusedComputation& comp, const TensorGraph& graph) {
  // iterative dataflow dominators over reverse data-flow: the predecessors of
  // a member are its users inside the computation; roots hang off a virtual
  // root node
  std::set<InstrId> root_set(comp.roots.begin(), comp.roots.end());
  std::map<InstrId, std::set<InstrId>> dom;
  std::set<InstrId> all = comp.members;
  for (const InstrId& id : all) dom[id] = all;  // start from "everything"
  for (const InstrId& r : comp.roots) dom[r] = {r};

  bool changed = true;
  while (changed) {
    changed = false;
    for (const InstrId& id : all) {
      if (root_set.count(id)) continue;
      std::set<InstrId> meet;
      bool first = true;
      for (const InstrId& user : graph.users_of(id)) {
        if (!comp.members.count(user)) continue;
        if (first) {
          meet = dom.at(user);
          first = false;
        } else {
          std::set<InstrId> keep;
          std::set_intersection(meet.begin(), meet.end(), dom.at(user).begin(),
                                dom.at(user).end(), std::inserter(keep, keep.begin()));
          meet = std::move(keep);
        }
      }
      meet.insert(id);
      if (meet != dom.at(id)) {
        dom[id] = std::move(meet);
        changed = true;
      }
    }
  }

  DominanceTree tree;
  for (const InstrId& id : all) {
    const std::set<InstrId>& d = dom.at(id);
    // immediate dominator: the strict dominator dominated by all others
    const InstrId* best = nullptr;
    size_t best_size = 0;
    for (const InstrId& cand : d) {
      if (cand == id) continue;
      size_t sz = dom.at(cand).size();
      if (!best || sz > best_size) {
        best = &cand;
        best_size = sz;
      }
    }
    if (best) tree.idom[id] = *best;
  }
  return tree;
}

std::map<InstrId, int64_t> size_requirements(const FusedComputation& comp,
                                             const TensorGraph& graph, const SchedulePlan& plan,
                                             const PipelineOptions& options) {
  std::set<InstrId> root_set(comp.roots.begin(), comp.roots.end());
  std::map<InstrId, int64_t> reqs;
  for (const InstrId& id : comp.members) {
    if (root_set.count(id)) continue;
    if (!plan.per_instruction.count(id)) continue;  // inlined members are recomputed
    const Instruction& instr = graph.at(id);
    bool candidate = false;
    if (instr.opcode == Opcode::Reduce || instr.opcode == Opcode::BatchMatMul) {
      candidate = true;
    } else if (instr.is_elementwise()) {
      int users_inside = 0;
      for (const InstrId& user : graph.users_of(id))
        if (comp.members.count(user)) ++users_inside;
      if (users_inside > 1) candidate = true;
      if (!candidate && options.is_expensive(instr.kind)) {
        std::set<InstrId> visiting;
        candidate = feeds_dot_through_shape_mods(comp, graph, id, visiting);
      }
    }
    if (candidate) {
      int64_t chunk_elems = instr.shape.element_count() / plan.blocks;
      reqs[id] = chunk_elems * element_size(instr.shape.etype);
    }
  }
  return reqs;
}

SharedMemPlan share(const std::map<InstrId, int64_t>& kept, const FusedComputation& comp,
                    const TensorGraph& graph, const DominanceTree& dom, const SpanMap& span_map) {
  std::vector<InstrId> order = execution_order(comp, span_map);
  std::map<InstrId, size_t> pos;
  for (size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;

  auto last_use = [&](const InstrId& id) {
    size_t last = 0;
    for (const InstrId& user : graph.users_of(id))
      if (comp.members.count(user)) last = std::max(last, pos.at(user));
    return last;
  };

  struct Buffer {
    InstrId alloc_id;
    int64_t bytes;
    std::vector<InstrId> holders;
  };
  std::vector<Buffer> buffers;

  SharedMemPlan plan;
  for (const InstrId& id : order) {
    auto rit = kept.find(id);
    if (rit == kept.end()) continue;
    int64_t need = rit->second;

    Buffer* reuse = nullptr;
    for (Buffer& buf : buffers) {
      if (need > buf.bytes) continue;
      bool ok = true;
      for (const InstrId& holder : buf.holders) {
        // the candidate must dominate the previous holder and the holder's
        // value must have no uses after the candidate's write point
        if (!dom.dominates(id, holder) || last_use(holder) > pos.at(id)) {
          ok = false;
          break;
        }
      }
      if (ok) {
        reuse = &buf;
        break;
      }
    }
    if (reuse) {
      plan.decisions[id] = {SmemDecision::Share, 0, reuse->alloc_id};
      reuse->holders.push_back(id);
    } else {
      plan.decisions[id] = {SmemDecision::Alloc, need, {}};
      buffers.push_back({id, need, {id}});
      plan.total_bytes += need;
    }
  }
  return plan;
}

SmemResult plan_shared_memory(const FusedComputation& comp, const TensorGraph& graph,
                              const SpanMap& span_map, const SchedulePlan& plan,
                              const PipelineOptions& options) {
  std::map<InstrId, int64_t> reqs = size_requirements(comp, graph, plan, options);
  DominanceTree dom = build_dominance_tree(comp, graph);

  // demotion order: cheap multi-user, expensive multi-user, expensive feeding
  // dot; within a class the smallest span first, ties by id
  std::vector<InstrId> demotable;
  for (const auto& [id, bytes] : reqs)
    if (classify(comp, graph, id, options) != SmemClass::Mandatory) demotable.push_back(id);
  std::sort(demotable.begin(), demotable.end(), [&](const InstrId& a, const InstrId& b) {
    int ca = static_cast<int>(classify(comp, graph, a, options));
    int cb = static_cast<int>(classify(comp, graph, b, options));
    if (ca != cb) return ca < cb;
    int64_t sa = span_map.span.at(a), sb = span_map.span.at(b);
    if (sa != sb) return sa < sb;
    return a < b;
  });

  std::map<InstrId, int64_t> kept = reqs;
  std::vector<InstrId> shrunk;
  size_t next_demotion = 0;
  while (true) {
    SharedMemPlan result = share(kept, comp, graph, dom, span_map);
    if (result.total_bytes <= options.smem_limit) {
      result.shrunk = shrunk;
      return result;
    }
    if (next_demotion >= demotable.size()) {
      InstrId worst;
      int64_t worst_bytes = -1;
      for (const auto& [id, bytes] : kept)
        if (bytes > worst_bytes || (bytes == worst_bytes && id < worst)) {
          worst = id;
          worst_bytes = bytes;
        }
      return SmemInfeasible{worst};
    }
    const InstrId& victim = demotable[next_demotion++];
    kept.erase(victim);
    shrunk.push_back(victim);
  }
}

}  // namespace stitchfuse
