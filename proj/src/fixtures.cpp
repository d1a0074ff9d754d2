// SPDX-License-Identifier: Apache-2.0

#include "stitchfuse/fixtures.hpp"

#include "json.hpp"

namespace stitchfuse {

namespace {

using json = nlohmann::json;

json instr(const std::string& id, const std::string& op, std::vector<std::string> operands,
           std::vector<int64_t> shape) {
  json j;
  j["id"] = id;
  j["op"] = op;
  if (!operands.empty()) j["operands"] = operands;
  j["shape"] = shape;
  return j;
}

std::string softmax_batchdot() {
  json doc;
  json& ins = doc["instructions"] = json::array();
  ins.push_back(instr("Param.0", "parameter", {}, {8, 32, 64}));
  ins.push_back(instr("Exponential.1", "exp", {"Param.0"}, {8, 32, 64}));
  {
    json j = instr("Reduce.1", "reduce", {"Exponential.1"}, {8, 32});
    j["reduce_dims"] = {2};
    j["reducer"] = "sum";
    ins.push_back(j);
  }
  ins.push_back(instr("Sqrt.1", "sqrt", {"Reduce.1"}, {8, 32}));
  ins.push_back(instr("Multiply.1", "mul", {"Sqrt.1", "Sqrt.1"}, {8, 32}));
  {
    json j = instr("Reduce.2", "reduce", {"Multiply.1"}, {8});
    j["reduce_dims"] = {1};
    j["reducer"] = "sum";
    ins.push_back(j);
  }
  {
    json j = instr("Broadcast.1", "broadcast", {"Reduce.2"}, {8, 32, 64});
    j["broadcast_dim_map"] = {0};
    ins.push_back(j);
  }
  ins.push_back(instr("Divide.1", "div", {"Exponential.1", "Broadcast.1"}, {8, 32, 64}));
  ins.push_back(instr("Bitcast.1", "bitcast", {"Divide.1"}, {8, 32, 64}));
  {
    json j = instr("Transpose.1", "transpose", {"Divide.1"}, {8, 64, 32});
    j["permutation"] = {0, 2, 1};
    ins.push_back(j);
  }
  ins.push_back(instr("Dot.1", "batch_matmul", {"Bitcast.1", "Transpose.1"}, {8, 32, 32}));
  doc["outputs"] = {"Dot.1"};
  return doc.dump(2) + "\n";
}

std::string elementwise_chain() {
  json doc;
  json& ins = doc["instructions"] = json::array();
  ins.push_back(instr("Param.0", "parameter", {}, {1024}));
  std::string prev = "Param.0";
  for (int i = 1; i <= 10; ++i) {
    std::string id = "Chain." + std::to_string(i);
    ins.push_back(instr(id, i % 2 ? "add" : "mul", {prev, prev}, {1024}));
    prev = id;
  }
  doc["outputs"] = {prev};
  return doc.dump(2) + "\n";
}

std::string reduce_transpose_mix() {
  json doc;
  json& ins = doc["instructions"] = json::array();
  ins.push_back(instr("Param.0", "parameter", {}, {4, 8, 16}));
  ins.push_back(instr("Exp.1", "exp", {"Param.0"}, {4, 8, 16}));
  {
    json j = instr("Transpose.1", "transpose", {"Exp.1"}, {8, 4, 16});
    j["permutation"] = {1, 0, 2};
    ins.push_back(j);
  }
  {
    json j = instr("Reduce.1", "reduce", {"Transpose.1"}, {8, 4});
    j["reduce_dims"] = {2};
    j["reducer"] = "sum";
    ins.push_back(j);
  }
  ins.push_back(instr("Tanh.1", "tanh", {"Reduce.1"}, {8, 4}));
  doc["outputs"] = {"Tanh.1"};
  return doc.dump(2) + "\n";
}

std::string libcall_mix() {
  json doc;
  json& ins = doc["instructions"] = json::array();
  ins.push_back(instr("Param.0", "parameter", {}, {16, 16}));
  ins.push_back(instr("Add.1", "add", {"Param.0", "Param.0"}, {16, 16}));
  {
    json j = instr("Lib.1", "library_call", {"Add.1", "Param.0"}, {16, 16});
    j["callee"] = "matmul";
    ins.push_back(j);
  }
  ins.push_back(instr("Exp.1", "exp", {"Lib.1"}, {16, 16}));
  doc["outputs"] = {"Exp.1"};
  return doc.dump(2) + "\n";
}

}  // namespace

std::map<std::string, std::string> fixture_graphs() {
  return {
      {"softmax_batchdot", softmax_batchdot()},
      {"elementwise_chain", elementwise_chain()},
      {"reduce_transpose_mix", reduce_transpose_mix()},
      {"libcall_mix", libcall_mix()},
  };
}

}  // namespace stitchfuse
