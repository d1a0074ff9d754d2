// SPDX-License-Identifier: Apache-2.0
//
// Host execution: a dense reference interpreter and a block-level simulator
// for kernel programs. Both paths fold reductions in the same order.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "stitchfuse/ir.hpp"
#include "stitchfuse/kernelgen.hpp"

namespace stitchfuse {

struct ExecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Scalar = std::variant<float, int32_t>;

struct TensorValue {
  Shape shape;
  std::vector<float> f32;
  std::vector<int32_t> i32;

  static TensorValue zeros(const Shape& shape);
  Scalar get(int64_t linear) const;
  void set(int64_t linear, Scalar v);
};

int64_t linearize(const std::vector<int64_t>& index, const std::vector<int64_t>& dims);
std::vector<int64_t> delinearize(int64_t linear, const std::vector<int64_t>& dims);

// Evaluates one element of `instr` at `index`; operands are fetched through
// the accessor so both execution paths share the arithmetic and fold order.
using OperandAccessor = std::function<Scalar(size_t operand_index, const std::vector<int64_t>&)>;
Scalar compute_element(const Instruction& instr, const std::vector<Shape>& operand_shapes,
                       const std::vector<int64_t>& index, const OperandAccessor& operand);

TensorValue constant_value(const Instruction& instr);

// Dense evaluation of one non-Parameter/Constant instruction from stored
// operand values.
TensorValue eval_dense(const TensorGraph& graph, const InstrId& id,
                       const std::map<InstrId, TensorValue>& values);

// Dense op-by-op execution; returns a value for every instruction.
std::map<InstrId, TensorValue> interpret(const TensorGraph& graph,
                                         const std::map<InstrId, TensorValue>& inputs);

// Runs a kernel program block by block with a fresh arena per block.
// Checks chunk containment, write coverage, and arena ownership (stale reads
// through a reused buffer raise ExecError).
std::vector<TensorValue> run_program(const KernelProgram& program, const TensorGraph& graph,
                                     const std::map<InstrId, TensorValue>& externals);

}  // namespace stitchfuse
