// SPDX-License-Identifier: Apache-2.0

#include "stitchfuse/pipeline.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace stitchfuse {

double predicted_e2e(double fusable_ratio, double fusion_speedup) {
  if (fusable_ratio < 0.0 || fusable_ratio > 1.0)
    throw std::invalid_argument("fusable_ratio out of [0, 1]");
  if (fusion_speedup < 1.0) throw std::invalid_argument("fusion_speedup below 1");
  return 1.0 + fusable_ratio * (1.0 - 1.0 / fusion_speedup);
}

CompileReport compile_graph(const TensorGraph& graph, const PipelineOptions& options,
                            PerfLibrary& lib, const CostModelParams& params) {
  CompileReport report;
  report.span_map = compute_span(graph);

  SmemFeasibility smem_check = [&](const FusedComputation& comp,
                                   const TensorGraph& g) -> std::optional<InstrId> {
    SchedulePlan plan = tune(comp, g, lib, params, options);
    SmemResult result = plan_shared_memory(comp, g, report.span_map, plan, options);
    if (const auto* fail = std::get_if<SmemInfeasible>(&result))
      return fail->recommended_exclusion;
    return std::nullopt;
  };
  report.fusion = fuse_module(graph, options, smem_check);

  for (const FusedComputation& comp : report.fusion.computations) {
    CompiledKernel kernel;
    kernel.comp = comp;
    kernel.plan = tune(comp, graph, lib, params, options);
    SmemResult smem = plan_shared_memory(comp, graph, report.span_map, kernel.plan, options);
    if (std::holds_alternative<SmemInfeasible>(smem))
      throw std::runtime_error("internal: shared memory infeasible after fusion feedback for " +
                               comp.fusion_root);
    kernel.smem = std::get<SharedMemPlan>(smem);
    kernel.program =
        emit_program(comp, graph, report.span_map, kernel.plan, kernel.smem, options);
    if (auto err = check_program(kernel.program, graph))
      throw std::runtime_error("internal: invalid kernel program: " + *err);
    kernel.cost_us = plan_cost_us(comp, graph, kernel.plan, lib, params, options);
    report.kernels.push_back(std::move(kernel));
  }

  for (const Instruction& instr : graph.instructions()) {
    if (instr.opcode == Opcode::Parameter || instr.opcode == Opcode::Constant ||
        instr.opcode == Opcode::LibraryCall)
      continue;
    ++report.baseline_kernels;
  }
  report.fused_kernels = static_cast<int64_t>(report.kernels.size());
  for (const InstrId& id : report.fusion.unfused)
    if (graph.at(id).opcode != Opcode::LibraryCall) ++report.fused_kernels;
  report.fusion_ratio = report.baseline_kernels > 0
                            ? static_cast<double>(report.fused_kernels) / report.baseline_kernels
                            : 1.0;
  return report;
}

std::map<InstrId, TensorValue> run_compiled(const CompileReport& report, const TensorGraph& graph,
                                            const std::map<InstrId, TensorValue>& inputs) {
  // condensation nodes: one per kernel, one per remaining instruction
  std::map<InstrId, int> node_of;  // instruction -> node index
  int n = 0;
  for (const CompiledKernel& kernel : report.kernels) {
    for (const InstrId& id : kernel.comp.members) node_of[id] = n;
    ++n;
  }
  int first_single = n;
  std::vector<InstrId> singles;
  for (const Instruction& instr : graph.instructions())
    if (!node_of.count(instr.id)) {
      node_of[instr.id] = n++;
      singles.push_back(instr.id);
    }

  std::vector<std::set<int>> succs(n);
  std::vector<int> indegree(n, 0);
  for (const Instruction& instr : graph.instructions())
    for (const InstrId& op : instr.operands) {
      int from = node_of.at(op), to = node_of.at(instr.id);
      if (from != to && succs[from].insert(to).second) ++indegree[to];
    }

  std::vector<int> ready;
  for (int i = 0; i < n; ++i)
    if (indegree[i] == 0) ready.push_back(i);
  std::sort(ready.begin(), ready.end());

  std::map<InstrId, TensorValue> values;
  auto run_node = [&](int node) {
    if (node < first_single) {
      const CompiledKernel& kernel = report.kernels[node];
      std::map<InstrId, TensorValue> externals;
      for (const InstrId& id : kernel.comp.members)
        for (const InstrId& op : graph.at(id).operands)
          if (!kernel.comp.members.count(op)) externals[op] = values.at(op);
      std::vector<TensorValue> roots = run_program(kernel.program, graph, externals);
      for (size_t r = 0; r < roots.size(); ++r)
        values[kernel.comp.roots[r]] = std::move(roots[r]);
      return;
    }
    const InstrId& id = singles[node - first_single];
    const Instruction& instr = graph.at(id);
    if (instr.opcode == Opcode::Parameter) {
      auto it = inputs.find(id);
      if (it == inputs.end()) throw ExecError("missing input for parameter " + id);
      values[id] = it->second;
    } else if (instr.opcode == Opcode::Constant) {
      values[id] = constant_value(instr);
    } else {
      values[id] = eval_dense(graph, id, values);
    }
  };

  int processed = 0;
  while (!ready.empty()) {
    int node = ready.front();
    ready.erase(ready.begin());
    run_node(node);
    ++processed;
    for (int succ : succs[node])
      if (--indegree[succ] == 0)
        ready.insert(std::lower_bound(ready.begin(), ready.end(), succ), succ);
  }
  if (processed != n) throw ExecError("condensation is cyclic");
  return values;
}

std::string report_text(const CompileReport& report, const TensorGraph& graph,
                        int64_t baseline_override) {
  int64_t baseline = baseline_override >= 0 ? baseline_override : report.baseline_kernels;
  double ratio = baseline > 0 ? static_cast<double>(report.fused_kernels) / baseline : 1.0;
  std::ostringstream os;
  os << "baseline_kernels: " << baseline << "\n";
  os << "fused_kernels: " << report.fused_kernels << "\n";
  os << "fusion_ratio: " << ratio << "\n";
  os << "critical_path_length: " << report.span_map.critical_path_length << "\n";
  for (const CompiledKernel& kernel : report.kernels) {
    os << "computation " << kernel.comp.fusion_root << ": members=" << kernel.comp.members.size()
       << " roots=";
    for (size_t i = 0; i < kernel.comp.roots.size(); ++i)
      os << (i ? "," : "") << kernel.comp.roots[i];
    os << " blocks=" << kernel.plan.blocks << " block_threads=" << kernel.plan.block_threads
       << " smem=" << kernel.smem.total_bytes << "B cost=" << kernel.cost_us << "us";
    if (!kernel.smem.shrunk.empty()) {
      os << " shrunk=";
      for (size_t i = 0; i < kernel.smem.shrunk.size(); ++i)
        os << (i ? "," : "") << kernel.smem.shrunk[i];
    }
    os << "\n";
  }
  for (const InstrId& id : report.fusion.unfused)
    os << "standalone " << id << " (" << opcode_name(graph.at(id)) << ")\n";
  return os.str();
}

}  // namespace stitchfuse
