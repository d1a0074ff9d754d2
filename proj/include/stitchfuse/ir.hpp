// SPDX-License-Identifier: Apache-2.0
//
// HLO-like tensor graph: shapes, opcodes, instructions, text serialization.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace stitchfuse {

using InstrId = std::string;

enum class ElementType { F32, I32 };

int element_size(ElementType t);
std::string to_string(ElementType t);

struct Shape {
  std::vector<int64_t> dims;
  ElementType etype = ElementType::F32;

  int64_t rank() const { return static_cast<int64_t>(dims.size()); }
  int64_t element_count() const;
  int64_t byte_size() const { return element_count() * element_size(etype); }

  bool operator==(const Shape& o) const = default;
  bool operator<(const Shape& o) const {
    if (dims != o.dims) return dims < o.dims;
    return etype < o.etype;
  }
};

std::string to_string(const Shape& s);

enum class Opcode {
  Parameter,
  Constant,
  Elementwise,
  Reshape,
  Bitcast,
  Transpose,
  Broadcast,
  Reduce,
  BatchMatMul,
  LibraryCall,
};

enum class ElementwiseKind {
  // cheap
  Add,
  Sub,
  Mul,
  Max,
  Min,
  Neg,
  Compare,
  Select,
  Scale,
  // expensive
  Exp,
  Log,
  Divide,
  Power,
  Tanh,
  Sqrt,
  Rsqrt,
};

enum class Reducer { Sum, Max, Min };

// Default expensive set; overridable through options.
bool default_expensive(ElementwiseKind k);
int arity(ElementwiseKind k);
std::string to_string(ElementwiseKind k);
std::string to_string(Opcode op);

struct Instruction {
  InstrId id;
  Opcode opcode = Opcode::Parameter;
  ElementwiseKind kind = ElementwiseKind::Add;  // Elementwise only
  std::vector<InstrId> operands;
  Shape shape;
  std::optional<std::string> frame_id;

  std::vector<int64_t> permutation;        // Transpose
  std::vector<int64_t> broadcast_dim_map;  // Broadcast
  std::vector<int64_t> reduce_dims;        // Reduce
  Reducer reducer = Reducer::Sum;          // Reduce
  double scalar = 0.0;                     // Elementwise(Scale)
  std::vector<double> literal;             // Constant (splat if size 1)
  std::string callee;                      // LibraryCall ("matmul")

  bool is_elementwise() const { return opcode == Opcode::Elementwise; }
};

// opcode string used in the graph file and in perf-library keys
std::string opcode_name(const Instruction& instr);

class TensorGraph {
 public:
  TensorGraph() = default;
  TensorGraph(std::vector<Instruction> instructions, std::vector<InstrId> outputs);

  const Instruction& at(const InstrId& id) const;
  bool contains(const InstrId& id) const;
  const std::vector<Instruction>& instructions() const { return instructions_; }
  const std::vector<InstrId>& outputs() const { return outputs_; }
  bool is_output(const InstrId& id) const;

  // instructions listing `id` among their operands (distinct, sorted by id)
  const std::set<InstrId>& users_of(const InstrId& id) const;

  // ids in a valid execution order (operands before users)
  std::vector<InstrId> topological_order() const;

 private:
  std::vector<Instruction> instructions_;
  std::vector<InstrId> outputs_;
  std::map<InstrId, size_t> index_;
  std::map<InstrId, std::set<InstrId>> users_;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Parses, validates, and lowers (mean -> sum + scale) a graph file.
TensorGraph parse_graph(const std::string& text);
std::string serialize_graph(const TensorGraph& graph);

}  // namespace stitchfuse
