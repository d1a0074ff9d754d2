// SPDX-License-Identifier: Apache-2.0

#include "stitchfuse/tuning.hpp"

#include <algorithm>
#include <cassert>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace stitchfuse {

namespace {

std::string format_cost(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

PerfLibrary PerfLibrary::from_text(const std::string& text) {
  PerfLibrary lib;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields = split(line, '|');
    if (fields.size() != 9)
      throw std::runtime_error("perf library: malformed record at line " + std::to_string(lineno));
    try {
      PerfKey key;
      key.opcode = fields[0];
      if (!fields[1].empty())
        for (const std::string& d : split(fields[1], ',')) key.shape.push_back(std::stoll(d));
      key.split_dim = std::stoll(fields[2]);
      key.sword = std::stoll(fields[3]);
      if (fields[4] == "row") key.sched_type = SchedType::Row;
      else if (fields[4] == "col") key.sched_type = SchedType::Column;
      else throw std::runtime_error("bad sched_type");
      key.block_threads = std::stoi(fields[5]);
      if (fields[6] != "-") key.extra = std::stoi(fields[6]);
      PerfEntry entry;
      entry.cost_us = std::stod(fields[7]);
      entry.synthetic = fields[8] == "1";
      lib.entries_[key] = entry;
    } catch (const std::exception&) {
      throw std::runtime_error("perf library: malformed record at line " + std::to_string(lineno));
    }
  }
  return lib;
}

PerfLibrary PerfLibrary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open perf library: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

std::string PerfLibrary::to_text() const {
  std::ostringstream out;
  for (const auto& [key, entry] : entries_) {
    out << key.opcode << '|';
    for (size_t i = 0; i < key.shape.size(); ++i) out << (i ? "," : "") << key.shape[i];
    out << '|' << key.split_dim << '|' << key.sword << '|' << to_string(key.sched_type) << '|'
        << key.block_threads << '|' << (key.extra ? std::to_string(*key.extra) : "-") << '|'
        << format_cost(entry.cost_us) << '|' << (entry.synthetic ? 1 : 0) << '\n';
  }
  return out.str();
}

void PerfLibrary::store(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write perf library: " + path);
  out << to_text();
  if (!out) throw std::runtime_error("I/O error writing perf library: " + path);
}

const PerfEntry* PerfLibrary::find(const PerfKey& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    ++misses_;
    return nullptr;
  }
  ++hits_;
  return &it->second;
}

void PerfLibrary::insert(const PerfKey& key, PerfEntry entry) { entries_[key] = entry; }

void PerfLibrary::merge_from(const PerfLibrary& other) {
  for (const auto& [key, entry] : other.entries_) {
    auto it = entries_.find(key);
    if (it == entries_.end()) {
      entries_[key] = entry;
    } else if (it->second.synthetic != entry.synthetic) {
      if (it->second.synthetic) it->second = entry;
    } else {
      it->second.cost_us = std::min(it->second.cost_us, entry.cost_us);
    }
  }
}

CostModelParams CostModelParams::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open cost params: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  CostModelParams p;
  p.launch_overhead_us = j.value("launch_overhead_us", p.launch_overhead_us);
  p.bandwidth_gb_s = j.value("bandwidth_gb_s", p.bandwidth_gb_s);
  p.expensive_elementwise_factor =
      j.value("expensive_elementwise_factor", p.expensive_elementwise_factor);
  p.dot_flops_g = j.value("dot_flops_g", p.dot_flops_g);
  if (j.contains("occupancy_steps")) {
    p.occupancy_steps.clear();
    for (const auto& step : j["occupancy_steps"])
      p.occupancy_steps.emplace_back(step.at(0).get<int64_t>(), step.at(1).get<double>());
  }
  if (p.launch_overhead_us <= 0 || p.bandwidth_gb_s <= 0 || p.expensive_elementwise_factor <= 0 ||
      p.dot_flops_g <= 0)
    throw std::runtime_error("cost params must be strictly positive");
  return p;
}

double CostModelParams::occupancy(int64_t blocks, int block_threads) const {
  int64_t total = blocks * block_threads;
  double occ = occupancy_steps.empty() ? 1.0 : occupancy_steps.front().second;
  for (const auto& [min_total, value] : occupancy_steps)
    if (total >= min_total) occ = value;
  return occ;
}

PerfKey make_perf_key(const Instruction& instr, const Schedule& schedule, int block_threads) {
  PerfKey key;
  key.opcode = opcode_name(instr);
  key.shape = instr.shape.dims;
  key.split_dim = schedule.split_dim;
  key.sword = schedule.sword;
  key.sched_type = schedule.type;
  key.block_threads = block_threads;
  if (instr.opcode == Opcode::Reduce || instr.opcode == Opcode::Transpose)
    key.extra = block_threads / 32;
  return key;
}

double estimate_cost_us(const Instruction& instr, const TensorGraph& graph,
                        const Schedule& schedule, int64_t blocks, int block_threads,
                        const CostModelParams& params, const PipelineOptions& options) {
  int64_t bytes = instr.shape.byte_size();
  for (const InstrId& op : instr.operands) bytes += graph.at(op).shape.byte_size();
  double occ = params.occupancy(blocks, block_threads);
  double factor = 1.0;
  if (instr.is_elementwise() && options.is_expensive(instr.kind))
    factor = params.expensive_elementwise_factor;
  double mem_us = static_cast<double>(bytes) / (params.bandwidth_gb_s * 1000.0 * occ) * factor;
  if (instr.opcode == Opcode::BatchMatMul) {
    int64_t r = instr.shape.rank();
    int64_t batch = 1;
    for (int64_t i = 0; i < r - 2; ++i) batch *= instr.shape.dims[i];
    int64_t m = instr.shape.dims[r - 2], n = instr.shape.dims[r - 1];
    int64_t k = graph.at(instr.operands[0]).shape.dims[r - 1];
    double flops = 2.0 * batch * m * n * k;
    double flop_us = flops / (params.dot_flops_g * 1000.0 * occ);
    return std::max(mem_us, flop_us);
  }
  return mem_us;
}

double lookup_or_estimate(PerfLibrary& lib, const PerfKey& key, const CostModelParams& params,
                          double estimate_us) {
  (void)params;
  if (const PerfEntry* hit = lib.find(key)) return hit->cost_us;
  PerfEntry entry;
  entry.cost_us = estimate_us;
  entry.synthetic = true;
  lib.insert(key, entry);
  return entry.cost_us;
}

double plan_cost_us(const FusedComputation& comp, const TensorGraph& graph,
                    const SchedulePlan& plan, PerfLibrary& lib, const CostModelParams& params,
                    const PipelineOptions& options, double prune_above) {
  double total = 0.0;
  for (const auto& [id, sched] : plan.per_instruction) {
    const Instruction& instr = graph.at(id);
    PerfKey key = make_perf_key(instr, sched, plan.block_threads);
    double est =
        estimate_cost_us(instr, graph, sched, plan.blocks, plan.block_threads, params, options);
    double cost = lookup_or_estimate(lib, key, params, est);
    assert(cost >= 0.0 && "per-op costs must be nonnegative for pruning to be lossless");
    total += cost;
    // early exit only on strict excess so a completed equal-cost plan can
    // still win its tie-break
    if (prune_above >= 0.0 && total > prune_above) return total;
  }
  return total;
}

namespace {

struct Best {
  bool set = false;
  double cost = 0.0;
  SchedulePlan plan;

  // ties: larger blocks, then smaller block_threads, then enumeration order
  void consider(double c, const SchedulePlan& p) {
    if (!set || c < cost ||
        (c == cost && (p.blocks > plan.blocks ||
                       (p.blocks == plan.blocks && p.block_threads < plan.block_threads)))) {
      set = true;
      cost = c;
      plan = p;
    }
  }
};

}  // namespace

std::set<int64_t> valid_blocks_set(const Shape& shape) {
  std::set<int64_t> out;
  for (const Schedule& s : enumerate_schedules(shape)) out.insert(blocks_of(shape, s));
  return out;
}

SchedulePlan tune_single_root(const FusedComputation& comp, const TensorGraph& graph,
                              PerfLibrary& lib, const CostModelParams& params,
                              const PipelineOptions& options) {
  assert(comp.roots.size() == 1);
  const InstrId& root = comp.roots[0];
  Best best;
  for (const Schedule& sched : enumerate_schedules(graph.at(root).shape)) {
    for (int bt : options.block_threads_ladder) {
      ResolveResult r = resolve_schedule(comp, graph, {{root, sched}}, options);
      if (!r.ok()) continue;
      SchedulePlan plan = std::move(*r.plan);
      plan.block_threads = bt;
      double prune = best.set ? best.cost : -1.0;
      double cost = plan_cost_us(comp, graph, plan, lib, params, options, prune);
      if (best.set && cost > best.cost) continue;
      best.consider(cost, plan);
    }
  }
  assert(best.set && "the default schedule is always satisfiable");
  return best.plan;
}

SchedulePlan tune_multi_root(const FusedComputation& comp, const TensorGraph& graph,
                             PerfLibrary& lib, const CostModelParams& params,
                             const PipelineOptions& options) {
  assert(comp.roots.size() >= 2);

  // stage 1: intersect per-root valid blocks sets
  std::set<int64_t> agreed;
  bool first = true;
  for (const InstrId& root : comp.roots) {
    std::set<int64_t> bs = valid_blocks_set(graph.at(root).shape);
    if (first) {
      agreed = std::move(bs);
      first = false;
    } else {
      std::set<int64_t> keep;
      std::set_intersection(agreed.begin(), agreed.end(), bs.begin(), bs.end(),
                            std::inserter(keep, keep.begin()));
      agreed = std::move(keep);
    }
  }

  // roots of equal shape share one schedule; distinct shapes vary independently
  std::vector<Shape> shapes;
  std::map<Shape, std::vector<InstrId>> roots_by_shape;
  for (const InstrId& root : comp.roots) {
    const Shape& s = graph.at(root).shape;
    if (!roots_by_shape.count(s)) shapes.push_back(s);
    roots_by_shape[s].push_back(root);
  }

  constexpr int64_t kComboCap = 4096;
  Best best;
  for (int64_t blocks : agreed) {
    std::vector<std::vector<Schedule>> candidates;
    int64_t combos = 1;
    for (const Shape& s : shapes) {
      std::vector<Schedule> list;
      for (const Schedule& sched : enumerate_schedules(s))
        if (blocks_of(s, sched) == blocks) list.push_back(sched);
      if (list.empty()) {
        combos = 0;
        break;
      }
      combos *= static_cast<int64_t>(list.size());
      candidates.push_back(std::move(list));
    }
    if (combos == 0) continue;
    // bound the joint space; truncated tails keep tuning deterministic
    while (combos > kComboCap) {
      combos = 1;
      for (auto& list : candidates) {
        if (list.size() > 1) list.pop_back();
        combos *= static_cast<int64_t>(list.size());
      }
    }

    std::vector<size_t> pick(candidates.size(), 0);
    while (true) {
      std::map<InstrId, Schedule> root_schedules;
      for (size_t i = 0; i < shapes.size(); ++i)
        for (const InstrId& root : roots_by_shape[shapes[i]])
          root_schedules[root] = candidates[i][pick[i]];
      for (int bt : options.block_threads_ladder) {
        ResolveResult r = resolve_schedule(comp, graph, root_schedules, options);
        if (!r.ok()) break;  // independent of bt
        SchedulePlan plan = std::move(*r.plan);
        plan.block_threads = bt;
        double prune = best.set ? best.cost : -1.0;
        double cost = plan_cost_us(comp, graph, plan, lib, params, options, prune);
        if (best.set && cost > best.cost) continue;
        best.consider(cost, plan);
      }
      size_t i = 0;
      for (; i < pick.size(); ++i) {
        if (++pick[i] < candidates[i].size()) break;
        pick[i] = 0;
      }
      if (i == pick.size()) break;
    }
  }

  if (!best.set) {
    std::map<InstrId, Schedule> defaults;
    for (const InstrId& root : comp.roots) defaults[root] = default_schedule();
    ResolveResult r = resolve_schedule(comp, graph, defaults, options);
    assert(r.ok() && "the default schedule is always satisfiable");
    SchedulePlan plan = std::move(*r.plan);
    plan.block_threads = options.block_threads_ladder.front();
    best.consider(plan_cost_us(comp, graph, plan, lib, params, options), plan);
  }
  return best.plan;
}

SchedulePlan tune(const FusedComputation& comp, const TensorGraph& graph, PerfLibrary& lib,
                  const CostModelParams& params, const PipelineOptions& options) {
  if (comp.roots.size() == 1) return tune_single_root(comp, graph, lib, params, options);
  return tune_multi_root(comp, graph, lib, params, options);
}

}  // namespace stitchfuse
