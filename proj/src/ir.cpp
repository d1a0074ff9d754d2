// SPDX-License-Identifier: Apache-2.0

#include "stitchfuse/ir.hpp"

#include <algorithm>
#include <sstream>

#include "json.hpp"

namespace stitchfuse {

using nlohmann::json;

int element_size(ElementType t) { return t == ElementType::F32 ? 4 : 4; }

std::string to_string(ElementType t) { return t == ElementType::F32 ? "f32" : "i32"; }

int64_t Shape::element_count() const {
  int64_t n = 1;
  for (int64_t d : dims) n *= d;
  return n;
}

std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.dims.size(); ++i) os << (i ? "," : "") << s.dims[i];
  os << "]" << to_string(s.etype);
  return os.str();
}

bool default_expensive(ElementwiseKind k) {
  switch (k) {
    case ElementwiseKind::Exp:
    case ElementwiseKind::Log:
    case ElementwiseKind::Divide:
    case ElementwiseKind::Power:
    case ElementwiseKind::Tanh:
    case ElementwiseKind::Sqrt:
    case ElementwiseKind::Rsqrt:
      return true;
    default:
      return false;
  }
}

int arity(ElementwiseKind k) {
  switch (k) {
    case ElementwiseKind::Neg:
    case ElementwiseKind::Scale:
    case ElementwiseKind::Exp:
    case ElementwiseKind::Log:
    case ElementwiseKind::Tanh:
    case ElementwiseKind::Sqrt:
    case ElementwiseKind::Rsqrt:
      return 1;
    case ElementwiseKind::Select:
      return 3;
    default:
      return 2;
  }
}

namespace {

const std::vector<std::pair<std::string, ElementwiseKind>>& kind_names() {
  static const std::vector<std::pair<std::string, ElementwiseKind>> names = {
      {"add", ElementwiseKind::Add},       {"sub", ElementwiseKind::Sub},
      {"mul", ElementwiseKind::Mul},       {"max", ElementwiseKind::Max},
      {"min", ElementwiseKind::Min},       {"neg", ElementwiseKind::Neg},
      {"compare", ElementwiseKind::Compare}, {"select", ElementwiseKind::Select},
      {"scale", ElementwiseKind::Scale},   {"exp", ElementwiseKind::Exp},
      {"log", ElementwiseKind::Log},       {"div", ElementwiseKind::Divide},
      {"pow", ElementwiseKind::Power},     {"tanh", ElementwiseKind::Tanh},
      {"sqrt", ElementwiseKind::Sqrt},     {"rsqrt", ElementwiseKind::Rsqrt},
  };
  return names;
}

}  // namespace

std::string to_string(ElementwiseKind k) {
  for (const auto& [name, kind] : kind_names())
    if (kind == k) return name;
  return "?";
}

std::string to_string(Opcode op) {
  switch (op) {
    case Opcode::Parameter: return "parameter";
    case Opcode::Constant: return "constant";
    case Opcode::Elementwise: return "elementwise";
    case Opcode::Reshape: return "reshape";
    case Opcode::Bitcast: return "bitcast";
    case Opcode::Transpose: return "transpose";
    case Opcode::Broadcast: return "broadcast";
    case Opcode::Reduce: return "reduce";
    case Opcode::BatchMatMul: return "batch_matmul";
    case Opcode::LibraryCall: return "library_call";
  }
  return "?";
}

std::string opcode_name(const Instruction& instr) {
  if (instr.opcode == Opcode::Elementwise) return to_string(instr.kind);
  return to_string(instr.opcode);
}

TensorGraph::TensorGraph(std::vector<Instruction> instructions, std::vector<InstrId> outputs)
    : instructions_(std::move(instructions)), outputs_(std::move(outputs)) {
  for (size_t i = 0; i < instructions_.size(); ++i) {
    index_[instructions_[i].id] = i;
    users_[instructions_[i].id];
  }
  for (const Instruction& instr : instructions_)
    for (const InstrId& op : instr.operands) users_[op].insert(instr.id);
}

const Instruction& TensorGraph::at(const InstrId& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw ParseError("unknown instruction id: " + id);
  return instructions_[it->second];
}

bool TensorGraph::contains(const InstrId& id) const { return index_.count(id) > 0; }

bool TensorGraph::is_output(const InstrId& id) const {
  return std::find(outputs_.begin(), outputs_.end(), id) != outputs_.end();
}

const std::set<InstrId>& TensorGraph::users_of(const InstrId& id) const {
  auto it = users_.find(id);
  if (it == users_.end()) throw ParseError("unknown instruction id: " + id);
  return it->second;
}

std::vector<InstrId> TensorGraph::topological_order() const {
  std::map<InstrId, int> pending;
  std::vector<InstrId> ready;
  for (const Instruction& instr : instructions_) {
    pending[instr.id] = static_cast<int>(std::set<InstrId>(instr.operands.begin(), instr.operands.end()).size());
    if (pending[instr.id] == 0) ready.push_back(instr.id);
  }
  std::sort(ready.begin(), ready.end());
  std::vector<InstrId> order;
  while (!ready.empty()) {
    InstrId id = ready.front();
    ready.erase(ready.begin());
    order.push_back(id);
    for (const InstrId& u : users_of(id))
      if (--pending[u] == 0) ready.insert(std::lower_bound(ready.begin(), ready.end(), u), u);
  }
  if (order.size() != instructions_.size()) throw ParseError("graph contains a cycle");
  return order;
}

namespace {

Opcode opcode_from_name(const std::string& name, ElementwiseKind* kind, bool* is_ew) {
  *is_ew = false;
  for (const auto& [n, k] : kind_names())
    if (n == name) {
      *kind = k;
      *is_ew = true;
      return Opcode::Elementwise;
    }
  if (name == "parameter") return Opcode::Parameter;
  if (name == "constant") return Opcode::Constant;
  if (name == "reshape") return Opcode::Reshape;
  if (name == "bitcast") return Opcode::Bitcast;
  if (name == "transpose") return Opcode::Transpose;
  if (name == "broadcast") return Opcode::Broadcast;
  if (name == "reduce") return Opcode::Reduce;
  if (name == "batch_matmul") return Opcode::BatchMatMul;
  if (name == "library_call") return Opcode::LibraryCall;
  throw ParseError("unknown op \"" + name + "\"");
}

[[noreturn]] void semantic_error(const InstrId& id, const std::string& what) {
  throw ParseError("instruction " + id + ": " + what);
}

void check_cycles(const std::vector<Instruction>& instrs) {
  std::map<InstrId, int> state;  // 0 unvisited, 1 on stack, 2 done
  std::map<InstrId, const Instruction*> by_id;
  for (const Instruction& i : instrs) by_id[i.id] = &i;
  // iterative DFS keeping the stack for error reporting
  for (const Instruction& start : instrs) {
    if (state[start.id]) continue;
    std::vector<std::pair<const Instruction*, size_t>> stack{{&start, 0}};
    state[start.id] = 1;
    while (!stack.empty()) {
      auto& [instr, next] = stack.back();
      if (next >= instr->operands.size()) {
        state[instr->id] = 2;
        stack.pop_back();
        continue;
      }
      const InstrId& op = instr->operands[next++];
      auto it = by_id.find(op);
      if (it == by_id.end()) semantic_error(instr->id, "unknown operand " + op);
      if (state[op] == 1) {
        std::string path;
        for (auto& [s, _] : stack) path += s->id + " ";
        throw ParseError("cycle detected involving: " + path + op);
      }
      if (state[op] == 0) {
        state[op] = 1;
        stack.push_back({it->second, 0});
      }
    }
  }
}

void validate_instruction(const Instruction& instr, const std::map<InstrId, Instruction>& by_id) {
  auto operand_shape = [&](size_t i) -> const Shape& { return by_id.at(instr.operands[i]).shape; };
  for (int64_t d : instr.shape.dims)
    if (d < 1) semantic_error(instr.id, "dimension extents must be >= 1");
  switch (instr.opcode) {
    case Opcode::Parameter:
    case Opcode::Constant:
      if (!instr.operands.empty()) semantic_error(instr.id, "takes no operands");
      break;
    case Opcode::Elementwise: {
      if (static_cast<int>(instr.operands.size()) != arity(instr.kind))
        semantic_error(instr.id, "expects " + std::to_string(arity(instr.kind)) + " operands");
      for (size_t i = 0; i < instr.operands.size(); ++i)
        if (operand_shape(i) != instr.shape)
          semantic_error(instr.id, "operand shape mismatch (no implicit broadcast)");
      if (instr.shape.etype == ElementType::I32 && default_expensive(instr.kind))
        semantic_error(instr.id, to_string(instr.kind) + " requires f32");
      break;
    }
    case Opcode::Reshape:
    case Opcode::Bitcast:
      if (instr.operands.size() != 1) semantic_error(instr.id, "expects 1 operand");
      if (operand_shape(0).element_count() != instr.shape.element_count())
        semantic_error(instr.id, "element count mismatch");
      if (operand_shape(0).etype != instr.shape.etype)
        semantic_error(instr.id, "element type mismatch");
      break;
    case Opcode::Transpose: {
      if (instr.operands.size() != 1) semantic_error(instr.id, "expects 1 operand");
      const Shape& in = operand_shape(0);
      if (static_cast<int64_t>(instr.permutation.size()) != instr.shape.rank() ||
          in.rank() != instr.shape.rank())
        semantic_error(instr.id, "permutation rank mismatch");
      std::vector<bool> seen(instr.permutation.size(), false);
      for (int64_t p : instr.permutation) {
        if (p < 0 || p >= instr.shape.rank() || seen[p])
          semantic_error(instr.id, "permutation not bijective");
        seen[p] = true;
      }
      for (int64_t i = 0; i < instr.shape.rank(); ++i)
        if (instr.shape.dims[i] != in.dims[instr.permutation[i]])
          semantic_error(instr.id, "shape does not match permuted operand shape");
      break;
    }
    case Opcode::Broadcast: {
      if (instr.operands.size() != 1) semantic_error(instr.id, "expects 1 operand");
      const Shape& in = operand_shape(0);
      if (static_cast<int64_t>(instr.broadcast_dim_map.size()) != in.rank())
        semantic_error(instr.id, "dim_map must have one entry per operand dim");
      int64_t prev = -1;
      for (size_t i = 0; i < instr.broadcast_dim_map.size(); ++i) {
        int64_t d = instr.broadcast_dim_map[i];
        if (d <= prev || d >= instr.shape.rank())
          semantic_error(instr.id, "dim_map must be strictly increasing output dims");
        if (instr.shape.dims[d] != in.dims[i])
          semantic_error(instr.id, "mapped dim extent mismatch");
        prev = d;
      }
      break;
    }
    case Opcode::Reduce: {
      if (instr.operands.size() != 1) semantic_error(instr.id, "expects 1 operand");
      const Shape& in = operand_shape(0);
      std::set<int64_t> rd(instr.reduce_dims.begin(), instr.reduce_dims.end());
      if (rd.size() != instr.reduce_dims.size()) semantic_error(instr.id, "reduce_dims not distinct");
      for (int64_t d : rd)
        if (d < 0 || d >= in.rank()) semantic_error(instr.id, "reduce dim out of range");
      std::vector<int64_t> expect;
      for (int64_t i = 0; i < in.rank(); ++i)
        if (!rd.count(i)) expect.push_back(in.dims[i]);
      if (expect != instr.shape.dims) semantic_error(instr.id, "output shape mismatch for reduce");
      break;
    }
    case Opcode::BatchMatMul: {
      if (instr.operands.size() != 2) semantic_error(instr.id, "expects 2 operands");
      const Shape& a = operand_shape(0);
      const Shape& b = operand_shape(1);
      int64_t r = a.rank();
      if (r < 3 || b.rank() != r || instr.shape.rank() != r)
        semantic_error(instr.id, "operand ranks must be equal and >= 3");
      for (int64_t i = 0; i < r - 2; ++i)
        if (a.dims[i] != b.dims[i] || a.dims[i] != instr.shape.dims[i])
          semantic_error(instr.id, "batch dims mismatch");
      if (a.dims[r - 1] != b.dims[r - 2]) semantic_error(instr.id, "contraction extents mismatch");
      if (instr.shape.dims[r - 2] != a.dims[r - 2] || instr.shape.dims[r - 1] != b.dims[r - 1])
        semantic_error(instr.id, "output dims mismatch");
      break;
    }
    case Opcode::LibraryCall: {
      if (instr.callee == "matmul") {
        if (instr.operands.size() != 2) semantic_error(instr.id, "matmul expects 2 operands");
        const Shape& a = operand_shape(0);
        const Shape& b = operand_shape(1);
        int64_t r = a.rank();
        if (r < 2 || b.rank() != r || instr.shape.rank() != r)
          semantic_error(instr.id, "matmul operand ranks must be equal and >= 2");
        for (int64_t i = 0; i < r - 2; ++i)
          if (a.dims[i] != b.dims[i] || a.dims[i] != instr.shape.dims[i])
            semantic_error(instr.id, "batch dims mismatch");
        if (a.dims[r - 1] != b.dims[r - 2]) semantic_error(instr.id, "contraction extents mismatch");
      } else if (instr.callee == "opaque") {
        // accepted as a barrier; not executable
      } else {
        semantic_error(instr.id, "unknown library callee \"" + instr.callee + "\"");
      }
      break;
    }
  }
}

int line_of_offset(const std::string& text, size_t offset) {
  int line = 1;
  for (size_t i = 0; i < offset && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

const std::set<std::string> kKnownKeys = {
    "id",          "op",      "operands", "shape",    "dtype",   "permutation",
    "reduce_dims", "reducer", "broadcast_dim_map",    "frame_id", "value",
    "callee",      "scalar",
};

}  // namespace

TensorGraph parse_graph(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("syntax error at line " + std::to_string(line_of_offset(text, e.byte)) + ": " +
                     e.what());
  }
  if (!doc.is_object() || !doc.contains("instructions") || !doc.contains("outputs"))
    throw ParseError("expected top-level keys \"instructions\" and \"outputs\"");

  std::vector<Instruction> instrs;
  std::map<InstrId, Instruction> by_id;
  for (const json& j : doc["instructions"]) {
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!kKnownKeys.count(it.key())) throw ParseError("unknown key \"" + it.key() + "\"");
    Instruction instr;
    instr.id = j.at("id").get<std::string>();
    if (by_id.count(instr.id)) throw ParseError("duplicate instruction id " + instr.id);
    std::string op = j.at("op").get<std::string>();
    bool is_ew = false;
    instr.opcode = opcode_from_name(op, &instr.kind, &is_ew);
    if (j.contains("operands")) instr.operands = j["operands"].get<std::vector<InstrId>>();
    instr.shape.dims = j.at("shape").get<std::vector<int64_t>>();
    std::string dtype = j.value("dtype", "f32");
    if (dtype == "f32") instr.shape.etype = ElementType::F32;
    else if (dtype == "i32") instr.shape.etype = ElementType::I32;
    else throw ParseError("instruction " + instr.id + ": unknown dtype \"" + dtype + "\"");
    if (j.contains("frame_id")) instr.frame_id = j["frame_id"].get<std::string>();
    if (j.contains("permutation")) instr.permutation = j["permutation"].get<std::vector<int64_t>>();
    if (j.contains("broadcast_dim_map"))
      instr.broadcast_dim_map = j["broadcast_dim_map"].get<std::vector<int64_t>>();
    if (j.contains("reduce_dims")) instr.reduce_dims = j["reduce_dims"].get<std::vector<int64_t>>();
    if (j.contains("scalar")) instr.scalar = j["scalar"].get<double>();
    if (j.contains("callee")) instr.callee = j["callee"].get<std::string>();
    if (j.contains("value")) {
      if (j["value"].is_array()) instr.literal = j["value"].get<std::vector<double>>();
      else instr.literal = {j["value"].get<double>()};
    }

    bool is_mean = false;
    if (instr.opcode == Opcode::Reduce) {
      std::string red = j.value("reducer", "sum");
      if (red == "sum") instr.reducer = Reducer::Sum;
      else if (red == "max") instr.reducer = Reducer::Max;
      else if (red == "min") instr.reducer = Reducer::Min;
      else if (red == "mean") is_mean = true;
      else throw ParseError("instruction " + instr.id + ": unknown reducer \"" + red + "\"");
    }
    if (instr.opcode == Opcode::Constant && instr.literal.empty())
      semantic_error(instr.id, "constant requires a value");
    if (instr.opcode == Opcode::Constant &&
        static_cast<int64_t>(instr.literal.size()) != 1 &&
        static_cast<int64_t>(instr.literal.size()) != instr.shape.element_count())
      semantic_error(instr.id, "constant value must be a scalar splat or one element per entry");

    if (is_mean) {
      // mean is lowered to sum + scale so Reduce stays a pure fold
      if (instr.shape.etype == ElementType::I32) semantic_error(instr.id, "mean requires f32");
      Instruction sum = instr;
      sum.id = instr.id + ".sum";
      sum.reducer = Reducer::Sum;
      Instruction scale;
      scale.id = instr.id;
      scale.opcode = Opcode::Elementwise;
      scale.kind = ElementwiseKind::Scale;
      scale.operands = {sum.id};
      scale.shape = instr.shape;
      scale.frame_id = instr.frame_id;
      if (by_id.count(sum.id)) throw ParseError("duplicate instruction id " + sum.id);
      by_id[sum.id] = sum;
      instrs.push_back(sum);
      instr = scale;
    }
    by_id[instr.id] = instr;
    instrs.push_back(instr);
  }

  check_cycles(instrs);
  for (Instruction& instr : instrs) {
    if (instr.opcode == Opcode::Elementwise && instr.kind == ElementwiseKind::Scale &&
        instr.scalar == 0.0 && instr.operands.size() == 1 && by_id.count(instr.operands[0]) &&
        by_id.at(instr.operands[0]).opcode == Opcode::Reduce) {
      // lowered mean: fill in 1 / reduced-element-count
      const Instruction& sum = by_id.at(instr.operands[0]);
      int64_t reduced = by_id.at(sum.operands[0]).shape.element_count() / sum.shape.element_count();
      instr.scalar = 1.0 / static_cast<double>(reduced);
      by_id[instr.id] = instr;
    }
    validate_instruction(instr, by_id);
  }

  std::vector<InstrId> outputs = doc["outputs"].get<std::vector<InstrId>>();
  TensorGraph graph(instrs, outputs);
  for (const InstrId& out : outputs) {
    if (!graph.contains(out)) throw ParseError("unknown output id " + out);
    if (!graph.users_of(out).empty())
      throw ParseError("output " + out + " has users inside the graph");
  }
  for (const Instruction& instr : graph.instructions())
    if (graph.users_of(instr.id).empty() && !graph.is_output(instr.id))
      throw ParseError("instruction " + instr.id + " has no users and is not an output");
  return graph;
}

std::string serialize_graph(const TensorGraph& graph) {
  json doc;
  doc["instructions"] = json::array();
  for (const Instruction& instr : graph.instructions()) {
    json j;
    j["id"] = instr.id;
    j["op"] = opcode_name(instr);
    if (!instr.operands.empty()) j["operands"] = instr.operands;
    j["shape"] = instr.shape.dims;
    j["dtype"] = to_string(instr.shape.etype);
    if (instr.frame_id) j["frame_id"] = *instr.frame_id;
    if (instr.opcode == Opcode::Transpose) j["permutation"] = instr.permutation;
    if (instr.opcode == Opcode::Broadcast) j["broadcast_dim_map"] = instr.broadcast_dim_map;
    if (instr.opcode == Opcode::Reduce) {
      j["reduce_dims"] = instr.reduce_dims;
      j["reducer"] = instr.reducer == Reducer::Sum ? "sum"
                     : instr.reducer == Reducer::Max ? "max"
                                                     : "min";
    }
    if (instr.opcode == Opcode::Elementwise && instr.kind == ElementwiseKind::Scale)
      j["scalar"] = instr.scalar;
    if (instr.opcode == Opcode::Constant)
      j["value"] = instr.literal.size() == 1 ? json(instr.literal[0]) : json(instr.literal);
    if (instr.opcode == Opcode::LibraryCall) j["callee"] = instr.callee;
    doc["instructions"].push_back(j);
  }
  doc["outputs"] = graph.outputs();
  return doc.dump(2) + "\n";
}

}  // namespace stitchfuse
