// SPDX-License-Identifier: Apache-2.0

#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace testsupport {

Instruction param(const std::string& id, std::vector<int64_t> dims, ElementType etype) {
  Instruction instr;
  instr.id = id;
  instr.opcode = Opcode::Parameter;
  instr.shape = {std::move(dims), etype};
  return instr;
}

Instruction constant(const std::string& id, std::vector<int64_t> dims, double value) {
  Instruction instr;
  instr.id = id;
  instr.opcode = Opcode::Constant;
  instr.shape = {std::move(dims), ElementType::F32};
  instr.literal = {value};
  return instr;
}

Instruction ew(const std::string& id, ElementwiseKind kind, std::vector<InstrId> operands,
               std::vector<int64_t> dims, ElementType etype) {
  Instruction instr;
  instr.id = id;
  instr.opcode = Opcode::Elementwise;
  instr.kind = kind;
  instr.operands = std::move(operands);
  instr.shape = {std::move(dims), etype};
  if (kind == ElementwiseKind::Scale) instr.scalar = 1.0;
  return instr;
}

Instruction reshape(const std::string& id, const InstrId& operand, std::vector<int64_t> dims,
                    ElementType etype) {
  Instruction instr;
  instr.id = id;
  instr.opcode = Opcode::Reshape;
  instr.operands = {operand};
  instr.shape = {std::move(dims), etype};
  return instr;
}

Instruction bitcast(const std::string& id, const InstrId& operand, std::vector<int64_t> dims,
                    ElementType etype) {
  Instruction instr = reshape(id, operand, std::move(dims), etype);
  instr.opcode = Opcode::Bitcast;
  return instr;
}

Instruction transpose(const std::string& id, const InstrId& operand, std::vector<int64_t> perm,
                      const Shape& in_shape) {
  Instruction instr;
  instr.id = id;
  instr.opcode = Opcode::Transpose;
  instr.operands = {operand};
  instr.permutation = perm;
  instr.shape.etype = in_shape.etype;
  instr.shape.dims.resize(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) instr.shape.dims[i] = in_shape.dims[perm[i]];
  return instr;
}

Instruction broadcast(const std::string& id, const InstrId& operand, std::vector<int64_t> dim_map,
                      std::vector<int64_t> dims, ElementType etype) {
  Instruction instr;
  instr.id = id;
  instr.opcode = Opcode::Broadcast;
  instr.operands = {operand};
  instr.broadcast_dim_map = std::move(dim_map);
  instr.shape = {std::move(dims), etype};
  return instr;
}

Instruction reduce(const std::string& id, const InstrId& operand, std::vector<int64_t> dims,
                   std::vector<int64_t> reduce_dims, Reducer reducer, ElementType etype) {
  Instruction instr;
  instr.id = id;
  instr.opcode = Opcode::Reduce;
  instr.operands = {operand};
  instr.reduce_dims = std::move(reduce_dims);
  instr.reducer = reducer;
  instr.shape = {std::move(dims), etype};
  return instr;
}

Instruction bmm(const std::string& id, const InstrId& lhs, const InstrId& rhs,
                std::vector<int64_t> dims, ElementType etype) {
  Instruction instr;
  instr.id = id;
  instr.opcode = Opcode::BatchMatMul;
  instr.operands = {lhs, rhs};
  instr.shape = {std::move(dims), etype};
  return instr;
}

Instruction libcall(const std::string& id, std::vector<InstrId> operands,
                    std::vector<int64_t> dims, const std::string& callee) {
  Instruction instr;
  instr.id = id;
  instr.opcode = Opcode::LibraryCall;
  instr.operands = std::move(operands);
  instr.callee = callee;
  instr.shape = {std::move(dims), ElementType::F32};
  return instr;
}

TensorGraph build(std::vector<Instruction> instrs, std::vector<InstrId> outputs) {
  if (outputs.empty()) {
    std::set<InstrId> used;
    for (const Instruction& instr : instrs)
      for (const InstrId& op : instr.operands) used.insert(op);
    for (const Instruction& instr : instrs)
      if (!used.count(instr.id)) outputs.push_back(instr.id);
  }
  return TensorGraph(std::move(instrs), std::move(outputs));
}

namespace {

int64_t product(const std::vector<int64_t>& dims) {
  return std::accumulate(dims.begin(), dims.end(), int64_t{1}, std::multiplies<>());
}

std::vector<int64_t> random_dims(std::mt19937_64& rng, const RandomGraphConfig& config,
                                 int max_rank = 3) {
  std::uniform_int_distribution<int> rank_dist(1, max_rank);
  int rank = rank_dist(rng);
  std::vector<int64_t> dims;
  int64_t total = 1;
  for (int i = 0; i < rank; ++i) {
    int64_t room = std::min<int64_t>(config.max_extent, config.max_elements / total);
    if (room < 1) room = 1;
    std::uniform_int_distribution<int64_t> d(1, room);
    int64_t extent = d(rng);
    dims.push_back(extent);
    total *= extent;
  }
  return dims;
}

std::vector<int64_t> random_factorization(std::mt19937_64& rng, int64_t n) {
  std::vector<int64_t> dims;
  for (int i = 0; i < 2 && n > 1; ++i) {
    std::vector<int64_t> divisors;
    for (int64_t d = 1; d * d <= n; ++d)
      if (n % d == 0) {
        divisors.push_back(d);
        divisors.push_back(n / d);
      }
    std::uniform_int_distribution<size_t> pick(0, divisors.size() - 1);
    int64_t d = divisors[pick(rng)];
    dims.push_back(d);
    n /= d;
  }
  dims.push_back(n);
  return dims;
}

}  // namespace

TensorGraph random_graph(std::mt19937_64& rng, const RandomGraphConfig& config) {
  std::vector<Instruction> instrs;
  int next_id = 0;
  auto fresh = [&](const std::string& stem) { return stem + "." + std::to_string(next_id++); };
  auto rand_int = [&](int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };

  auto make_param = [&](std::vector<int64_t> dims, ElementType etype) -> const Instruction& {
    instrs.push_back(param(fresh("P"), std::move(dims), etype));
    return instrs.back();
  };

  int n_params = rand_int(1, 3);
  for (int i = 0; i < n_params; ++i) {
    ElementType etype =
        config.allow_i32 && rand_int(0, 4) == 0 ? ElementType::I32 : ElementType::F32;
    make_param(random_dims(rng, config), etype);
  }

  int ops = rand_int(4, std::max(4, config.max_ops - 3));
  for (int step = 0; step < ops; ++step) {
    // uniform pick over current pool
    const Instruction v = instrs[rand_int(0, static_cast<int>(instrs.size()) - 1)];
    int choice = rand_int(0, 99);

    if (choice < 40) {
      bool i32 = v.shape.etype == ElementType::I32;
      static const ElementwiseKind cheap[] = {
          ElementwiseKind::Add, ElementwiseKind::Sub,     ElementwiseKind::Mul,
          ElementwiseKind::Max, ElementwiseKind::Min,     ElementwiseKind::Neg,
          ElementwiseKind::Compare, ElementwiseKind::Select, ElementwiseKind::Scale};
      static const ElementwiseKind expensive[] = {
          ElementwiseKind::Exp,  ElementwiseKind::Log,   ElementwiseKind::Divide,
          ElementwiseKind::Power, ElementwiseKind::Tanh, ElementwiseKind::Sqrt,
          ElementwiseKind::Rsqrt};
      ElementwiseKind kind;
      if (i32 || rand_int(0, 1) == 0)
        kind = cheap[rand_int(0, 8)];
      else
        kind = expensive[rand_int(0, 6)];
      std::vector<InstrId> same;
      for (const Instruction& c : instrs)
        if (c.shape == v.shape) same.push_back(c.id);
      std::vector<InstrId> operands;
      for (int k = 0; k < arity(kind); ++k)
        operands.push_back(same[rand_int(0, static_cast<int>(same.size()) - 1)]);
      Instruction instr = ew(fresh("E"), kind, operands, v.shape.dims, v.shape.etype);
      if (kind == ElementwiseKind::Scale)
        instr.scalar = 0.25 * rand_int(1, 8);
      instrs.push_back(instr);
    } else if (choice < 50) {
      instrs.push_back(reshape(fresh("R"), v.id,
                               random_factorization(rng, v.shape.element_count()),
                               v.shape.etype));
    } else if (choice < 60) {
      if (v.shape.rank() < 1) continue;
      std::vector<int64_t> perm(v.shape.rank());
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      instrs.push_back(transpose(fresh("T"), v.id, perm, v.shape));
    } else if (choice < 70) {
      int64_t r = v.shape.rank();
      if (r >= 3) continue;
      int extra = rand_int(1, static_cast<int>(3 - r));
      int out_rank = static_cast<int>(r) + extra;
      std::vector<int> positions(out_rank);
      std::iota(positions.begin(), positions.end(), 0);
      std::shuffle(positions.begin(), positions.end(), rng);
      std::vector<int64_t> dim_map(positions.begin(), positions.begin() + r);
      std::sort(dim_map.begin(), dim_map.end());
      std::vector<int64_t> dims(out_rank, 0);
      for (int64_t i = 0; i < r; ++i) dims[dim_map[i]] = v.shape.dims[i];
      int64_t total = v.shape.element_count();
      bool ok = true;
      for (int64_t& d : dims)
        if (d == 0) {
          int64_t room = std::min<int64_t>(8, std::max<int64_t>(1, config.max_elements / total));
          d = rand_int(1, static_cast<int>(room));
          total *= d;
          if (total > config.max_elements) ok = false;
        }
      if (!ok) continue;
      instrs.push_back(broadcast(fresh("B"), v.id, dim_map, dims, v.shape.etype));
    } else if (choice < 85) {
      if (v.shape.rank() < 1) continue;
      std::vector<int64_t> rd;
      for (int64_t d = 0; d < v.shape.rank(); ++d)
        if (rand_int(0, 1)) rd.push_back(d);
      if (rd.empty()) rd.push_back(rand_int(0, static_cast<int>(v.shape.rank()) - 1));
      std::set<int64_t> rdset(rd.begin(), rd.end());
      std::vector<int64_t> dims;
      for (int64_t d = 0; d < v.shape.rank(); ++d)
        if (!rdset.count(d)) dims.push_back(v.shape.dims[d]);
      Reducer reducer = static_cast<Reducer>(rand_int(0, 2));
      instrs.push_back(reduce(fresh("Rd"), v.id, dims, std::vector<int64_t>(rdset.begin(), rdset.end()),
                              reducer, v.shape.etype));
    } else if (choice < 93) {
      if (v.shape.rank() != 3) continue;
      int64_t B = v.shape.dims[0], M = v.shape.dims[1], K = v.shape.dims[2];
      int64_t N = rand_int(1, 8);
      if (B * K * N > config.max_elements || B * M * N > config.max_elements) continue;
      std::string rhs_id = make_param({B, K, N}, v.shape.etype).id;
      instrs.push_back(bmm(fresh("D"), v.id, rhs_id, {B, M, N}, v.shape.etype));
    } else {
      if (!config.allow_library_calls || v.shape.rank() != 2 ||
          v.shape.etype != ElementType::F32)
        continue;
      int64_t M = v.shape.dims[0], K = v.shape.dims[1];
      int64_t N = rand_int(1, 8);
      if (K * N > config.max_elements || M * N > config.max_elements) continue;
      std::string rhs_id = make_param({K, N}, ElementType::F32).id;
      instrs.push_back(libcall(fresh("L"), {v.id, rhs_id}, {M, N}));
    }
  }
  return build(std::move(instrs));
}

std::map<InstrId, TensorValue> random_inputs(const TensorGraph& graph, std::mt19937_64& rng) {
  std::map<InstrId, TensorValue> inputs;
  std::uniform_real_distribution<float> df(0.5f, 1.5f);
  std::uniform_int_distribution<int32_t> di(1, 4);
  for (const Instruction& instr : graph.instructions()) {
    if (instr.opcode != Opcode::Parameter) continue;
    TensorValue v = TensorValue::zeros(instr.shape);
    for (int64_t i = 0; i < instr.shape.element_count(); ++i)
      v.set(i, instr.shape.etype == ElementType::F32 ? Scalar{df(rng)} : Scalar{di(rng)});
    inputs[instr.id] = std::move(v);
  }
  return inputs;
}

bool values_close(const TensorValue& a, const TensorValue& b, double rel) {
  if (a.shape != b.shape) return false;
  for (int64_t i = 0; i < a.shape.element_count(); ++i) {
    if (a.shape.etype == ElementType::I32) {
      if (std::get<int32_t>(a.get(i)) != std::get<int32_t>(b.get(i))) return false;
      continue;
    }
    double x = std::get<float>(a.get(i)), y = std::get<float>(b.get(i));
    if (std::isnan(x) && std::isnan(y)) continue;
    if (std::isinf(x) || std::isinf(y)) {
      if (x != y) return false;
      continue;
    }
    if (std::abs(x - y) > rel * std::max({1.0, std::abs(x), std::abs(y)})) return false;
  }
  return true;
}

std::map<InstrId, int64_t> span_oracle(const TensorGraph& graph) {
  // Bellman-Ford style relaxation to a fixpoint (independent of the
  // production single-pass computation)
  std::map<InstrId, int64_t> span;
  for (const Instruction& instr : graph.instructions()) span[instr.id] = 0;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const Instruction& instr : graph.instructions()) {
      int64_t best = 0;
      for (const InstrId& user : graph.users_of(instr.id)) {
        if (graph.at(user).frame_id != instr.frame_id) continue;
        best = std::max(best, span.at(user) + 1);
      }
      if (best != span[instr.id]) {
        span[instr.id] = best;
        changed = true;
      }
    }
  }
  return span;
}

bool dominates_oracle(const FusedComputation& comp, const TensorGraph& graph, const InstrId& a,
                      const InstrId& b) {
  if (a == b) return true;
  // reachability from the virtual root (all roots) down operand edges,
  // with `a` removed
  std::set<InstrId> seen;
  std::vector<InstrId> stack;
  for (const InstrId& root : comp.roots)
    if (root != a) {
      stack.push_back(root);
      seen.insert(root);
    }
  while (!stack.empty()) {
    InstrId cur = stack.back();
    stack.pop_back();
    if (cur == b) return false;
    for (const InstrId& op : graph.at(cur).operands)
      if (comp.members.count(op) && op != a && seen.insert(op).second) stack.push_back(op);
  }
  return true;
}

}  // namespace testsupport
