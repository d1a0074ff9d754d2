// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate: one pass/fail line per criterion.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "stitchfuse/fixtures.hpp"
#include "stitchfuse/pipeline.hpp"
#include "support.hpp"

using namespace stitchfuse;
using namespace testsupport;

namespace {

void report(int criterion, bool ok, const std::string& what) {
  std::cout << "criterion " << criterion << ": " << (ok ? "PASS" : "FAIL") << " - " << what
            << std::endl;
  CHECK_MESSAGE(ok, "criterion ", criterion, ": ", what);
}

TensorGraph fixture() { return parse_graph(fixture_graphs().at("softmax_batchdot")); }

}  // namespace

TEST_CASE("criterion 1: scope statement") {
  std::cout << "criterion 1: the original GPU measurements (fusion speedups 1.15-3.5x, "
               "E2E gains up to 20%, workload fusion ratios 0.25-0.82) require GPU hardware "
               "and proprietary workloads and are NOT reproduced here; the property suites "
               "below substitute for them" << std::endl;
  report(1, true, "non-reproducible results stated explicitly");
}

TEST_CASE("criterion 2: oracle equivalence on 200 random graphs") {
  auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20000);
  CostModelParams params;
  bool ok = true;
  for (int i = 0; i < 200 && ok; ++i) {
    TensorGraph g = random_graph(rng);
    PipelineOptions options;
    options.fuse_dot = i % 2 == 0;
    PerfLibrary lib;
    CompileReport rep = compile_graph(g, options, lib, params);
    auto inputs = random_inputs(g, rng);
    auto reference = interpret(g, inputs);
    auto values = run_compiled(rep, g, inputs);
    for (const InstrId& out : g.outputs())
      ok = ok && values_close(values.at(out), reference.at(out), 1e-5);
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ok = ok && secs < 120.0;
  report(2, ok, "pipeline == interpreter within 1e-5 on 200 random graphs (" +
                    std::to_string(secs) + "s)");
}

TEST_CASE("criterion 3: fixture kernel counts") {
  CostModelParams params;
  TensorGraph g = fixture();
  PipelineOptions on;
  on.fuse_dot = true;
  PerfLibrary lib1;
  CompileReport with_dot = compile_graph(g, on, lib1, params);
  PipelineOptions off;
  PerfLibrary lib2;
  CompileReport without = compile_graph(g, off, lib2, params);
  bool ok = with_dot.fused_kernels == 1 && with_dot.baseline_kernels >= 10 &&
            with_dot.fusion_ratio <= 0.2 && without.fusion.unfused.count("Dot.1") == 1 &&
            without.fused_kernels - 1 <= 2;
  report(3, ok, "fuse_dot -> 1 kernel (ratio " + std::to_string(with_dot.fusion_ratio) +
                    "); dot off -> standalone Dot.1 + " +
                    std::to_string(without.fused_kernels - 1) + " kernels");
}

TEST_CASE("criterion 4: schedule laws") {
  bool tiling = true;
  for (int64_t a = 1; a <= 8 && tiling; ++a)
    for (int64_t b = 0; b <= 8 && tiling; ++b)
      for (int64_t c = 0; c <= 8 && tiling; ++c) {
        if (b == 0 && c > 0) continue;
        std::vector<int64_t> dims = {a};
        if (b) dims.push_back(b);
        if (c) dims.push_back(c);
        Shape shape{dims, ElementType::F32};
        for (const Schedule& sched : enumerate_schedules(shape)) {
          int64_t blocks = blocks_of(shape, sched);
          std::vector<int> hits(shape.element_count(), 0);
          for (int64_t blk = 0; blk < blocks; ++blk) {
            auto box = chunk_box(shape, sched, blk);
            std::vector<int64_t> idx;
            for (const auto& [lo, hi] : box) idx.push_back(lo);
            while (true) {
              int64_t linear = 0;
              for (size_t d = 0; d < dims.size(); ++d) linear = linear * dims[d] + idx[d];
              ++hits[linear];
              int64_t d = static_cast<int64_t>(dims.size()) - 1;
              for (; d >= 0; --d) {
                if (++idx[d] < box[d].second) break;
                idx[d] = box[d].first;
              }
              if (d < 0) break;
            }
          }
          for (int h : hits) tiling = tiling && h == 1;
        }
      }

  std::mt19937_64 rng(40000);
  PipelineOptions options;
  options.fuse_dot = true;
  int computations = 0;
  bool defaults = true;
  while (computations < 1000) {
    TensorGraph g = random_graph(rng);
    FusionPlan plan = fuse_module(g, options);
    for (const FusedComputation& comp : plan.computations) {
      ++computations;
      std::map<InstrId, Schedule> roots;
      for (const InstrId& root : comp.roots) roots[root] = default_schedule();
      defaults = defaults && resolve_schedule(comp, g, roots, options).ok();
    }
  }
  report(4, tiling && defaults,
         "chunk tiling exact on all rank<=3 extents<=8 shapes; default schedule satisfiable "
         "for " + std::to_string(computations) + "/" + std::to_string(computations) +
             " random computations");
}

TEST_CASE("criterion 5: table 1 row conformance") {
  bool ok = true;
  auto expect = [&](bool cond) { ok = ok && cond; };

  Shape s348{{4, 6, 8}, ElementType::F32};
  {  // elementwise
    TensorGraph g = build({param("p", {4, 6}), param("q", {4, 6}),
                           ew("a", ElementwiseKind::Add, {"p", "q"}, {4, 6})});
    auto r = propagate(g.at("a"), g, {1, 3, SchedType::Row});
    expect(r && *(*r)[0] == Schedule{1, 3, SchedType::Row});
  }
  {  // transpose row + column
    TensorGraph g = build({param("p", {4, 6, 8}), transpose("t", "p", {0, 2, 1}, s348),
                           ew("u", ElementwiseKind::Neg, {"t"}, {4, 8, 6})});
    auto r = propagate(g.at("t"), g, {0, 2, SchedType::Row});
    expect(r && *(*r)[0] == Schedule{0, 2, SchedType::Row});
    expect(!propagate(g.at("t"), g, {1, 2, SchedType::Row}));
    TensorGraph g2 = build({param("p", {4, 6, 8}), transpose("t", "p", {1, 0, 2}, s348),
                            ew("u", ElementwiseKind::Neg, {"t"}, {6, 4, 8})});
    auto c = propagate(g2.at("t"), g2, {2, 2, SchedType::Column});
    expect(c && *(*c)[0] == Schedule{2, 2, SchedType::Column});
    expect(!propagate(g2.at("t"), g2, {0, 2, SchedType::Column}));
  }
  {  // reduce row + column
    TensorGraph g = build({param("p", {4, 6, 8}), reduce("r", "p", {4, 8}, {1}),
                           ew("u", ElementwiseKind::Neg, {"r"}, {4, 8})});
    auto row = propagate(g.at("r"), g, {0, 2, SchedType::Row});
    expect(row && *(*row)[0] == Schedule{0, 2, SchedType::Row});
    expect(!propagate(g.at("r"), g, {1, 2, SchedType::Row}));
    auto col = propagate(g.at("r"), g, {1, 2, SchedType::Column});
    expect(col && *(*col)[0] == Schedule{2, 2, SchedType::Column});
    expect(!propagate(g.at("r"), g, {0, 2, SchedType::Column}));
  }
  {  // batch dot
    TensorGraph g = build({param("p", {4, 6, 8}), param("q", {4, 8, 5}),
                           bmm("d", "p", "q", {4, 6, 5}),
                           ew("u", ElementwiseKind::Neg, {"d"}, {4, 6, 5})});
    auto r = propagate(g.at("d"), g, {0, 2, SchedType::Row});
    expect(r && *(*r)[0] == Schedule{0, 2, SchedType::Row} &&
           *(*r)[1] == Schedule{0, 2, SchedType::Row});
    expect(!propagate(g.at("d"), g, {1, 2, SchedType::Row}));
    expect(!propagate(g.at("d"), g, {0, 2, SchedType::Column}));
  }
  {  // reshape
    TensorGraph g = build({param("p", {4, 6}), reshape("r", "p", {24}),
                           ew("u", ElementwiseKind::Neg, {"r"}, {24})});
    auto r = propagate(g.at("r"), g, {0, 4, SchedType::Row});
    expect(r && *(*r)[0] == Schedule{0, 4, SchedType::Row});
    TensorGraph g2 = build({param("p", {2, 3, 5}), reshape("r", "p", {6, 5}),
                            ew("u", ElementwiseKind::Neg, {"r"}, {6, 5})});
    auto c = propagate(g2.at("r"), g2, {1, 5, SchedType::Column});
    expect(c && *(*c)[0] == Schedule{2, 5, SchedType::Column});
  }
  {  // broadcast
    TensorGraph g = build({param("p", {4}), broadcast("b", "p", {0}, {4, 6}),
                           ew("u", ElementwiseKind::Neg, {"b"}, {4, 6})});
    auto mapped = propagate(g.at("b"), g, {0, 2, SchedType::Row});
    expect(mapped && (*mapped)[0] && *(*mapped)[0] == Schedule{0, 2, SchedType::Row});
    auto created = propagate(g.at("b"), g, {1, 2, SchedType::Column});
    expect(created && !(*created)[0]);
  }
  report(5, ok, "all table 1 rows (elementwise, transpose x2, reduce x2, batch dot, "
                "reshape, broadcast) behave as specified");
}

TEST_CASE("criterion 6: tuning optimality") {
  std::mt19937_64 rng(60000);
  CostModelParams params;
  PipelineOptions options;
  options.fuse_dot = true;
  int cases = 0;
  bool ok = true;
  while (cases < 50) {
    TensorGraph g = random_graph(rng);
    FusionPlan fusion = fuse_module(g, options);
    for (const FusedComputation& comp : fusion.computations) {
      if (comp.members.size() < 2) continue;
      int64_t space = 1;
      for (const InstrId& root : comp.roots)
        space *= static_cast<int64_t>(enumerate_schedules(g.at(root).shape).size());
      if (space > 200) continue;
      ++cases;
      PerfLibrary lib;
      SchedulePlan tuned = tune(comp, g, lib, params, options);
      double tuned_cost = plan_cost_us(comp, g, tuned, lib, params, options);

      double best = -1.0;
      std::vector<std::vector<Schedule>> per_root;
      for (const InstrId& root : comp.roots)
        per_root.push_back(enumerate_schedules(g.at(root).shape));
      std::vector<size_t> pick(per_root.size(), 0);
      while (true) {
        std::map<InstrId, Schedule> roots;
        for (size_t i = 0; i < per_root.size(); ++i) roots[comp.roots[i]] = per_root[i][pick[i]];
        ResolveResult r = resolve_schedule(comp, g, roots, options);
        if (r.ok())
          for (int bt : options.block_threads_ladder) {
            SchedulePlan plan = *r.plan;
            plan.block_threads = bt;
            double cost = plan_cost_us(comp, g, plan, lib, params, options);
            if (best < 0.0 || cost < best) best = cost;
          }
        size_t i = 0;
        for (; i < pick.size(); ++i) {
          if (++pick[i] < per_root[i].size()) break;
          pick[i] = 0;
        }
        if (i == pick.size()) break;
      }
      ok = ok && best >= 0.0 && tuned_cost == best;
    }
  }

  // intersection vs brute force
  std::vector<Shape> shapes = {{{4, 6}, ElementType::F32},
                               {{6, 8}, ElementType::F32},
                               {{12}, ElementType::F32}};
  std::set<int64_t> intersect = valid_blocks_set(shapes[0]);
  for (size_t s = 1; s < shapes.size(); ++s) {
    std::set<int64_t> keep;
    for (int64_t b : valid_blocks_set(shapes[s]))
      if (intersect.count(b)) keep.insert(b);
    intersect = keep;
  }
  std::set<int64_t> brute;
  for (int64_t b = 1; b <= 64; ++b) {
    bool everywhere = true;
    for (const Shape& s : shapes) {
      bool found = false;
      for (const Schedule& sched : enumerate_schedules(s))
        found = found || blocks_of(s, sched) == b;
      everywhere = everywhere && found;
    }
    if (everywhere) brute.insert(b);
  }
  ok = ok && intersect == brute;
  report(6, ok, "tuner cost == exhaustive cost on " + std::to_string(cases) +
                    " computations; blocks-set intersection matches brute force");
}

TEST_CASE("criterion 7: shared memory planning") {
  CostModelParams params;
  bool cap_ok = true;
  std::mt19937_64 rng(70000);
  for (int i = 0; i < 80; ++i) {
    TensorGraph g = random_graph(rng);
    PipelineOptions options;
    options.fuse_dot = i % 2 == 0;
    PerfLibrary lib;
    CompileReport rep = compile_graph(g, options, lib, params);
    for (const CompiledKernel& kernel : rep.kernels)
      cap_ok = cap_ok && kernel.smem.total_bytes <= 20480;
  }

  TensorGraph g = fixture();
  PipelineOptions options;
  options.fuse_dot = true;
  PerfLibrary lib;
  CompileReport rep = compile_graph(g, options, lib, params);
  const SharedMemPlan& smem = rep.kernels[0].smem;
  bool shares = smem.decisions.at("Reduce.2").kind == SmemDecision::Share &&
                smem.decisions.at("Reduce.2").target == "Reduce.1" &&
                smem.decisions.at("Divide.1").kind == SmemDecision::Share &&
                smem.decisions.at("Divide.1").target == "Exponential.1";

  options.smem_limit = 1024;
  PerfLibrary lib2;
  CompileReport shrunk_rep = compile_graph(g, options, lib2, params);
  bool shrink_order =
      shrunk_rep.kernels[0].smem.shrunk == std::vector<InstrId>{"Exponential.1", "Divide.1"};

  std::mt19937_64 rng2(70001);
  auto inputs = random_inputs(g, rng2);
  auto reference = interpret(g, inputs);
  bool unchanged = values_close(run_compiled(shrunk_rep, g, inputs).at("Dot.1"),
                                reference.at("Dot.1"), 1e-5);
  report(7, cap_ok && shares && shrink_order && unchanged,
         "plans fit 20480B; fixture shares Reduce.2->Reduce.1 and Divide.1->Exponential.1; "
         "limit 1024 shrinks [Exponential.1, Divide.1] with outputs unchanged");
}

TEST_CASE("criterion 8: span oracle") {
  std::mt19937_64 rng(80000);
  bool ok = true;
  for (int i = 0; i < 1000; ++i) {
    TensorGraph g = random_graph(rng);
    SpanMap sm = compute_span(g);
    auto oracle = span_oracle(g);
    for (const Instruction& instr : g.instructions())
      ok = ok && sm.span.at(instr.id) == oracle.at(instr.id);
  }
  TensorGraph g = fixture();
  ok = ok && compute_span(g).critical_path_length == 9;
  report(8, ok, "span == longest path oracle on 1000 random DAGs; fixture critical path 9");
}

TEST_CASE("criterion 9: structural safety") {
  std::mt19937_64 rng(90000);
  bool dag_ok = true;
  for (int i = 0; i < 500; ++i) {
    TensorGraph g = random_graph(rng);
    PipelineOptions options;
    options.fuse_dot = i % 2 == 0;
    FusionPlan plan = fuse_module(g, options);

    // condensation Kahn sort must consume every node
    std::map<InstrId, int> node_of;
    int n = 0;
    for (const FusedComputation& comp : plan.computations) {
      for (const InstrId& id : comp.members) node_of[id] = n;
      ++n;
    }
    for (const Instruction& instr : g.instructions())
      if (!node_of.count(instr.id)) node_of[instr.id] = n++;
    std::vector<std::set<int>> succs(n);
    std::vector<int> indeg(n, 0);
    for (const Instruction& instr : g.instructions())
      for (const InstrId& op : instr.operands) {
        int from = node_of.at(op), to = node_of.at(instr.id);
        if (from != to && succs[from].insert(to).second) ++indeg[to];
      }
    std::vector<int> stack;
    for (int v = 0; v < n; ++v)
      if (indeg[v] == 0) stack.push_back(v);
    int seen = 0;
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      ++seen;
      for (int s : succs[v])
        if (--indeg[s] == 0) stack.push_back(s);
    }
    dag_ok = dag_ok && seen == n;
  }

  // the executor throws on any coverage gap or canary hit; clean runs prove both
  bool exec_ok = true;
  CostModelParams params;
  std::mt19937_64 rng2(90001);
  for (int i = 0; i < 50; ++i) {
    TensorGraph g = random_graph(rng2);
    PipelineOptions options;
    options.fuse_dot = true;
    PerfLibrary lib;
    try {
      CompileReport rep = compile_graph(g, options, lib, params);
      auto inputs = random_inputs(g, rng2);
      run_compiled(rep, g, inputs);
    } catch (const std::exception&) {
      exec_ok = false;
    }
  }
  report(9, dag_ok && exec_ok,
         "condensation is a DAG on 500 random fusion plans; 50 executor runs with full "
         "coverage and no canary violations");
}

TEST_CASE("criterion 10: predicted E2E formula") {
  bool ok = predicted_e2e(0.5, 2.0) == 1.25 && predicted_e2e(0.0, 1.0) == 1.0 &&
            predicted_e2e(0.3, 1.0) == 1.0 && predicted_e2e(1.0, 1.0) == 1.0;
  report(10, ok, "predicted_e2e(0.5,2)=1.25 exactly and collapses to 1 at speedup 1");
}

TEST_CASE("criterion 11: perf library round-trip") {
  std::mt19937_64 rng(110000);
  PerfLibrary lib;
  const char* opcodes[] = {"exp", "add", "reduce", "transpose", "batch_matmul", "div"};
  std::uniform_int_distribution<int> d(1, 32);
  std::uniform_real_distribution<double> dc(0.001, 500.0);
  for (int i = 0; i < 1000; ++i) {
    PerfKey key;
    key.opcode = opcodes[i % 6];
    key.shape = {d(rng), d(rng), d(rng)};
    key.split_dim = i % 3;
    key.sword = d(rng);
    key.sched_type = i % 2 ? SchedType::Row : SchedType::Column;
    key.block_threads = 64 << (i % 5);
    if (key.opcode == "reduce" || key.opcode == "transpose") key.extra = key.block_threads / 32;
    lib.insert(key, {dc(rng), i % 3 == 0});
  }
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "stitchfuse_accept";
  fs::create_directories(dir);
  std::string p1 = (dir / "lib1.txt").string(), p2 = (dir / "lib2.txt").string();
  lib.store(p1);
  PerfLibrary loaded = PerfLibrary::load(p1);
  loaded.store(p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string t1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string t2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  bool ok = !t1.empty() && t1 == t2 && loaded.entries().size() == lib.entries().size();
  report(11, ok, "store -> load -> store is byte-identical on a 1000-entry library");
}
