// SPDX-License-Identifier: Apache-2.0
//
// stitchfuse: fusion-compiler command line.
// Exit codes: 0 success, 1 user error, 2 internal invariant violation.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "stitchfuse/exec.hpp"
#include "stitchfuse/fixtures.hpp"
#include "stitchfuse/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace stitchfuse;

namespace {

struct UserError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UserError("cannot write " + path);
  out << text;
}

TensorGraph load_graph(const std::string& path) {
  try {
    return parse_graph(slurp(path));
  } catch (const ParseError& e) {
    throw UserError(path + ": " + e.what());
  }
}

std::map<InstrId, TensorValue> load_inputs(const std::string& path, const TensorGraph& graph,
                                           uint64_t base_seed) {
  json doc;
  try {
    doc = json::parse(slurp(path));
  } catch (const json::parse_error& e) {
    throw UserError(path + ": " + e.what());
  }
  std::map<InstrId, TensorValue> inputs;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const json& j = it.value();
    Shape shape;
    shape.dims = j.at("shape").get<std::vector<int64_t>>();
    std::string dtype = j.value("dtype", "f32");
    shape.etype = dtype == "i32" ? ElementType::I32 : ElementType::F32;
    TensorValue v = TensorValue::zeros(shape);
    int64_t n = shape.element_count();
    if (j.contains("data")) {
      std::vector<double> data = j["data"].get<std::vector<double>>();
      if (static_cast<int64_t>(data.size()) != n)
        throw UserError(path + ": " + it.key() + ": data size mismatch");
      for (int64_t i = 0; i < n; ++i)
        v.set(i, shape.etype == ElementType::F32 ? Scalar{static_cast<float>(data[i])}
                                                 : Scalar{static_cast<int32_t>(data[i])});
    } else {
      uint64_t seed = j.value("random_seed", base_seed);
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<float> df(-1.0f, 1.0f);
      std::uniform_int_distribution<int32_t> di(-4, 4);
      for (int64_t i = 0; i < n; ++i)
        v.set(i, shape.etype == ElementType::F32 ? Scalar{df(rng)} : Scalar{di(rng)});
    }
    if (!graph.contains(it.key())) throw UserError(path + ": unknown input id " + it.key());
    inputs[it.key()] = std::move(v);
  }
  return inputs;
}

double value_checksum(const TensorValue& v) {
  double sum = 0.0;
  int64_t n = v.shape.element_count();
  for (int64_t i = 0; i < n; ++i) {
    Scalar s = v.get(i);
    sum += std::holds_alternative<float>(s) ? std::get<float>(s) : std::get<int32_t>(s);
  }
  return sum;
}

bool values_close(const TensorValue& a, const TensorValue& b, double rel) {
  if (a.shape != b.shape) return false;
  int64_t n = a.shape.element_count();
  for (int64_t i = 0; i < n; ++i) {
    if (a.shape.etype == ElementType::I32) {
      if (std::get<int32_t>(a.get(i)) != std::get<int32_t>(b.get(i))) return false;
      continue;
    }
    double x = std::get<float>(a.get(i)), y = std::get<float>(b.get(i));
    double diff = std::abs(x - y);
    if (diff > rel * std::max({1.0, std::abs(x), std::abs(y)})) return false;
  }
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stitchfuse fusion compiler"};
  app.require_subcommand(1);
  app.fallthrough();

  PipelineOptions options;
  std::string perf_lib_path;
  std::string cost_params_path;
  int64_t baseline_count = -1;
  app.add_flag("--fuse-dot", options.fuse_dot, "allow BatchMatMul inside fused computations");
  app.add_option("--footprint-limit", options.footprint_limit, "elementwise group I/O byte limit");
  app.add_option("--smem-limit", options.smem_limit, "shared-memory arena capacity in bytes");
  app.add_option("--perf-lib", perf_lib_path, "performance library file");
  app.add_option("--cost-params", cost_params_path, "cost model parameter file (json)");
  app.add_option("--seed", options.seed, "seed for generated inputs");
  app.add_option("--baseline-count", baseline_count, "externally computed baseline kernel count");

  std::string graph_path, inputs_path, out_path, out_dir = ".";
  bool emit_prog = false, compare_ref = false, dump_values = false;
  std::vector<std::string> lib_paths;

  CLI::App* c_span = app.add_subcommand("span", "span analysis and layering");
  c_span->add_option("graph", graph_path)->required();

  CLI::App* c_fuse = app.add_subcommand("fuse", "fusion plan");
  c_fuse->add_option("graph", graph_path)->required();

  CLI::App* c_sched = app.add_subcommand("schedule", "tuned per-computation schedules");
  c_sched->add_option("graph", graph_path)->required();

  CLI::App* c_tune = app.add_subcommand("tune", "tuning costs and library hit counts");
  c_tune->add_option("graph", graph_path)->required();

  CLI::App* c_compile = app.add_subcommand("compile", "full pipeline report");
  c_compile->add_option("graph", graph_path)->required();
  c_compile->add_flag("--emit-program", emit_prog, "dump kernel programs");

  CLI::App* c_run = app.add_subcommand("run", "execute the compiled module");
  c_run->add_option("graph", graph_path)->required();
  c_run->add_option("--inputs", inputs_path, "tensor file")->required();
  c_run->add_flag("--compare-reference", compare_ref, "check against the interpreter");
  c_run->add_flag("--dump-values", dump_values, "print full output tensors");

  CLI::App* c_perflib = app.add_subcommand("perflib", "performance library tools");
  CLI::App* p_dump = c_perflib->add_subcommand("dump", "print entries");
  p_dump->add_option("lib", perf_lib_path)->required();
  CLI::App* p_merge = c_perflib->add_subcommand("merge", "union libraries");
  p_merge->add_option("libs", lib_paths)->required()->expected(-1);
  p_merge->add_option("--out", out_path, "merged library path")->required();
  CLI::App* p_stats = c_perflib->add_subcommand("stats", "entry statistics");
  p_stats->add_option("lib", perf_lib_path)->required();
  c_perflib->require_subcommand(1);

  CLI::App* c_fixtures = app.add_subcommand("fixtures", "write bundled example graphs");
  c_fixtures->add_option("--out-dir", out_dir, "destination directory");

  CLI11_PARSE(app, argc, argv);

  try {
    CostModelParams params;
    if (!cost_params_path.empty()) params = CostModelParams::load(cost_params_path);
    PerfLibrary lib;
    if (!perf_lib_path.empty() && fs::exists(perf_lib_path))
      lib = PerfLibrary::load(perf_lib_path);

    if (c_span->parsed()) {
      TensorGraph graph = load_graph(graph_path);
      SpanMap sm = compute_span(graph);
      std::cout << "critical_path_length: " << sm.critical_path_length << "\n";
      for (const auto& [layer, ids] : sm.layers) {
        std::cout << "layer " << layer << ":";
        for (const InstrId& id : ids) std::cout << " " << id;
        std::cout << "\n";
      }
    } else if (c_fuse->parsed()) {
      TensorGraph graph = load_graph(graph_path);
      FusionPlan plan = fuse_module(graph, options);
      for (const FusedComputation& comp : plan.computations) {
        std::cout << "computation " << comp.fusion_root << " roots=";
        for (size_t i = 0; i < comp.roots.size(); ++i) std::cout << (i ? "," : "") << comp.roots[i];
        std::cout << " members=";
        bool first = true;
        for (const InstrId& id : comp.members) {
          std::cout << (first ? "" : ",") << id;
          first = false;
        }
        std::cout << " footprint=" << comp.footprint_bytes << "B\n";
      }
      for (const InstrId& id : plan.unfused) std::cout << "standalone " << id << "\n";
    } else if (c_sched->parsed() || c_tune->parsed() || c_compile->parsed()) {
      TensorGraph graph = load_graph(graph_path);
      CompileReport report = compile_graph(graph, options, lib, params);
      if (c_sched->parsed()) {
        for (const CompiledKernel& kernel : report.kernels) {
          std::cout << "computation " << kernel.comp.fusion_root
                    << " blocks=" << kernel.plan.blocks
                    << " block_threads=" << kernel.plan.block_threads << "\n";
          for (const auto& [id, sched] : kernel.plan.per_instruction)
            std::cout << "  " << id << " " << to_string(sched) << "\n";
          for (const InstrId& id : kernel.plan.bypassed) std::cout << "  " << id << " bypassed\n";
        }
      } else if (c_tune->parsed()) {
        for (const CompiledKernel& kernel : report.kernels)
          std::cout << "computation " << kernel.comp.fusion_root << " cost=" << kernel.cost_us
                    << "us blocks=" << kernel.plan.blocks << "\n";
        std::cout << "library hits: " << lib.hits() << "\n";
        std::cout << "library misses: " << lib.misses() << "\n";
      } else {
        std::cout << report_text(report, graph, baseline_count);
        if (emit_prog)
          for (const CompiledKernel& kernel : report.kernels)
            std::cout << dump_program(kernel.program, graph);
      }
      if (!perf_lib_path.empty()) lib.store(perf_lib_path);
    } else if (c_run->parsed()) {
      TensorGraph graph = load_graph(graph_path);
      std::map<InstrId, TensorValue> inputs = load_inputs(inputs_path, graph, options.seed);
      CompileReport report = compile_graph(graph, options, lib, params);
      std::map<InstrId, TensorValue> values = run_compiled(report, graph, inputs);
      for (const InstrId& out : graph.outputs()) {
        const TensorValue& v = values.at(out);
        std::cout << out << " shape=" << to_string(v.shape)
                  << " checksum=" << value_checksum(v) << "\n";
        if (dump_values) {
          for (int64_t i = 0; i < v.shape.element_count(); ++i) {
            Scalar s = v.get(i);
            std::cout << (i ? " " : "  ")
                      << (std::holds_alternative<float>(s)
                              ? std::to_string(std::get<float>(s))
                              : std::to_string(std::get<int32_t>(s)));
          }
          std::cout << "\n";
        }
      }
      if (compare_ref) {
        std::map<InstrId, TensorValue> ref = interpret(graph, inputs);
        bool ok = true;
        for (const InstrId& out : graph.outputs())
          if (!values_close(values.at(out), ref.at(out), 1e-5)) {
            std::cout << "MISMATCH " << out << "\n";
            ok = false;
          }
        std::cout << (ok ? "reference check: PASS" : "reference check: FAIL") << "\n";
        if (!ok) return 2;
      }
    } else if (c_perflib->parsed()) {
      if (p_dump->parsed()) {
        std::cout << PerfLibrary::load(perf_lib_path).to_text();
      } else if (p_merge->parsed()) {
        PerfLibrary merged;
        for (const std::string& path : lib_paths) merged.merge_from(PerfLibrary::load(path));
        merged.store(out_path);
        std::cout << "merged entries: " << merged.entries().size() << "\n";
      } else {
        PerfLibrary l = PerfLibrary::load(perf_lib_path);
        size_t synth = 0;
        for (const auto& [key, entry] : l.entries())
          if (entry.synthetic) ++synth;
        std::cout << "entries: " << l.entries().size() << "\n";
        std::cout << "synthetic: " << synth << "\n";
        std::cout << "synthetic_fraction: "
                  << (l.entries().empty() ? 0.0
                                          : static_cast<double>(synth) / l.entries().size())
                  << "\n";
      }
    } else if (c_fixtures->parsed()) {
      fs::create_directories(out_dir);
      for (const auto& [name, text] : fixture_graphs()) {
        std::string path = (fs::path(out_dir) / (name + ".json")).string();
        spit(path, text);
        std::cout << "wrote " << path << "\n";
      }
    }
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
