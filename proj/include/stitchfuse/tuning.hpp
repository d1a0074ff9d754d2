// SPDX-License-Identifier: Apache-2.0
//
// Schedule tuning: performance-library lookups with an analytical cost-model
// fallback, single-root sweep and two-stage multi-root search with pruning.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "stitchfuse/fusion.hpp"
#include "stitchfuse/ir.hpp"
#include "stitchfuse/options.hpp"
#include "stitchfuse/schedule.hpp"

namespace stitchfuse {

struct PerfKey {
  std::string opcode;
  std::vector<int64_t> shape;
  int64_t split_dim = 0;
  int64_t sword = 1;
  SchedType sched_type = SchedType::Row;
  int block_threads = 64;
  std::optional<int> extra;  // reduce_warps / trans_warps

  auto tie() const {
    return std::tie(opcode, shape, split_dim, sword, sched_type, block_threads, extra);
  }
  bool operator<(const PerfKey& o) const { return tie() < o.tie(); }
  bool operator==(const PerfKey& o) const { return tie() == o.tie(); }
};

struct PerfEntry {
  double cost_us = 0.0;
  bool synthetic = false;
};

class PerfLibrary {
 public:
  PerfLibrary() = default;

  static PerfLibrary load(const std::string& path);
  static PerfLibrary from_text(const std::string& text);
  void store(const std::string& path) const;
  std::string to_text() const;

  const PerfEntry* find(const PerfKey& key) const;
  void insert(const PerfKey& key, PerfEntry entry);
  const std::map<PerfKey, PerfEntry>& entries() const { return entries_; }
  int64_t hits() const { return hits_; }
  int64_t misses() const { return misses_; }

  // union; on conflict keep the non-synthetic entry, else the cheaper one
  void merge_from(const PerfLibrary& other);

  mutable int64_t hits_ = 0;
  mutable int64_t misses_ = 0;

 private:
  std::map<PerfKey, PerfEntry> entries_;
};

struct CostModelParams {
  double launch_overhead_us = 5.0;
  double bandwidth_gb_s = 500.0;
  double expensive_elementwise_factor = 2.0;
  double dot_flops_g = 5000.0;
  // occupancy by total resident threads (blocks * block_threads), step table
  std::vector<std::pair<int64_t, double>> occupancy_steps = {
      {0, 0.05}, {1024, 0.1}, {4096, 0.25}, {16384, 0.5}, {65536, 1.0}};

  static CostModelParams load(const std::string& path);
  double occupancy(int64_t blocks, int block_threads) const;
};

PerfKey make_perf_key(const Instruction& instr, const Schedule& schedule, int block_threads);

// Analytical per-op cost (launch-free): bytes / (bandwidth * occupancy) *
// op_factor; BatchMatMul additionally bounded below by its FLOP time.
double estimate_cost_us(const Instruction& instr, const TensorGraph& graph,
                        const Schedule& schedule, int64_t blocks, int block_threads,
                        const CostModelParams& params, const PipelineOptions& options);

double lookup_or_estimate(PerfLibrary& lib, const PerfKey& key, const CostModelParams& params,
                          double estimate_us);

// Sum of member costs for a resolved plan (bypassed members excluded).
double plan_cost_us(const FusedComputation& comp, const TensorGraph& graph,
                    const SchedulePlan& plan, PerfLibrary& lib, const CostModelParams& params,
                    const PipelineOptions& options,
                    double prune_above = -1.0);  // >=0: stop early past this

std::set<int64_t> valid_blocks_set(const Shape& shape);

SchedulePlan tune_single_root(const FusedComputation& comp, const TensorGraph& graph,
                              PerfLibrary& lib, const CostModelParams& params,
                              const PipelineOptions& options);

SchedulePlan tune_multi_root(const FusedComputation& comp, const TensorGraph& graph,
                             PerfLibrary& lib, const CostModelParams& params,
                             const PipelineOptions& options);

SchedulePlan tune(const FusedComputation& comp, const TensorGraph& graph, PerfLibrary& lib,
                  const CostModelParams& params, const PipelineOptions& options);

}  // namespace stitchfuse
