// SPDX-License-Identifier: Apache-2.0
//
// Shared test helpers: instruction builders, a seeded random graph
// generator, independent oracles, and tensor comparison.

#pragma once

#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "stitchfuse/exec.hpp"
#include "stitchfuse/fusion.hpp"
#include "stitchfuse/ir.hpp"

namespace testsupport {

using namespace stitchfuse;

Instruction param(const std::string& id, std::vector<int64_t> dims,
                  ElementType etype = ElementType::F32);
Instruction constant(const std::string& id, std::vector<int64_t> dims, double value);
Instruction ew(const std::string& id, ElementwiseKind kind, std::vector<InstrId> operands,
               std::vector<int64_t> dims, ElementType etype = ElementType::F32);
Instruction reshape(const std::string& id, const InstrId& operand, std::vector<int64_t> dims,
                    ElementType etype = ElementType::F32);
Instruction bitcast(const std::string& id, const InstrId& operand, std::vector<int64_t> dims,
                    ElementType etype = ElementType::F32);
Instruction transpose(const std::string& id, const InstrId& operand, std::vector<int64_t> perm,
                      const Shape& in_shape);
Instruction broadcast(const std::string& id, const InstrId& operand, std::vector<int64_t> dim_map,
                      std::vector<int64_t> dims, ElementType etype = ElementType::F32);
Instruction reduce(const std::string& id, const InstrId& operand, std::vector<int64_t> dims,
                   std::vector<int64_t> reduce_dims, Reducer reducer = Reducer::Sum,
                   ElementType etype = ElementType::F32);
Instruction bmm(const std::string& id, const InstrId& lhs, const InstrId& rhs,
                std::vector<int64_t> dims, ElementType etype = ElementType::F32);
Instruction libcall(const std::string& id, std::vector<InstrId> operands,
                    std::vector<int64_t> dims, const std::string& callee = "matmul");

// outputs default to every sink node
TensorGraph build(std::vector<Instruction> instrs, std::vector<InstrId> outputs = {});

struct RandomGraphConfig {
  int max_ops = 25;
  int64_t max_extent = 32;
  int64_t max_elements = 4096;  // per-tensor cap
  bool allow_library_calls = true;
  bool allow_i32 = true;
};

TensorGraph random_graph(std::mt19937_64& rng, const RandomGraphConfig& config = {});

std::map<InstrId, TensorValue> random_inputs(const TensorGraph& graph, std::mt19937_64& rng);

// nan/inf aware relative comparison; exact for i32
bool values_close(const TensorValue& a, const TensorValue& b, double rel);

// brute-force longest path to a same-frame sink, per instruction
std::map<InstrId, int64_t> span_oracle(const TensorGraph& graph);

// a dominates b over reverse dataflow (virtual root joining comp.roots) iff
// removing a disconnects b from the root; checked by path search
bool dominates_oracle(const FusedComputation& comp, const TensorGraph& graph, const InstrId& a,
                      const InstrId& b);

}  // namespace testsupport
