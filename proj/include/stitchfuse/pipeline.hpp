// SPDX-License-Identifier: Apache-2.0
//
// Compile driver: span -> fuse (with shared-memory feedback) -> tune ->
// shared-memory planning -> program emission, plus report metrics and a
// graph-level executor mixing kernel programs with the interpreter.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stitchfuse/exec.hpp"
#include "stitchfuse/fusion.hpp"
#include "stitchfuse/ir.hpp"
#include "stitchfuse/kernelgen.hpp"
#include "stitchfuse/options.hpp"
#include "stitchfuse/smem.hpp"
#include "stitchfuse/span.hpp"
#include "stitchfuse/tuning.hpp"

namespace stitchfuse {

struct CompiledKernel {
  FusedComputation comp;
  SchedulePlan plan;
  SharedMemPlan smem;
  KernelProgram program;
  double cost_us = 0.0;
};

struct CompileReport {
  SpanMap span_map;
  FusionPlan fusion;
  std::vector<CompiledKernel> kernels;
  int64_t baseline_kernels = 0;  // library calls excluded
  int64_t fused_kernels = 0;
  double fusion_ratio = 1.0;
};

// 1 + fusable_ratio * (1 - 1 / fusion_speedup)
double predicted_e2e(double fusable_ratio, double fusion_speedup);

CompileReport compile_graph(const TensorGraph& graph, const PipelineOptions& options,
                            PerfLibrary& lib, const CostModelParams& params);

// Executes the compiled module: kernel programs for fused computations in
// condensation order, the interpreter for everything else.
std::map<InstrId, TensorValue> run_compiled(const CompileReport& report, const TensorGraph& graph,
                                            const std::map<InstrId, TensorValue>& inputs);

std::string report_text(const CompileReport& report, const TensorGraph& graph,
                        int64_t baseline_override = -1);

}  // namespace stitchfuse
