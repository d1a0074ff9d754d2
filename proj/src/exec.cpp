// SPDX-License-Identifier: Apache-2.0

#include "stitchfuse/exec.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

namespace stitchfuse {

namespace {

float as_f(const Scalar& s) { return std::get<float>(s); }
int32_t as_i(const Scalar& s) { return std::get<int32_t>(s); }
bool is_f(const Scalar& s) { return std::holds_alternative<float>(s); }

Scalar apply_unary(ElementwiseKind kind, const Scalar& a, double scalar) {
  if (is_f(a)) {
    float x = as_f(a);
    switch (kind) {
      case ElementwiseKind::Neg: return -x;
      case ElementwiseKind::Scale: return static_cast<float>(x * scalar);
      case ElementwiseKind::Exp: return std::exp(x);
      case ElementwiseKind::Log: return std::log(x);
      case ElementwiseKind::Tanh: return std::tanh(x);
      case ElementwiseKind::Sqrt: return std::sqrt(x);
      case ElementwiseKind::Rsqrt: return 1.0f / std::sqrt(x);
      default: throw ExecError("bad unary kind");
    }
  }
  int32_t x = as_i(a);
  switch (kind) {
    case ElementwiseKind::Neg: return -x;
    case ElementwiseKind::Scale: return static_cast<int32_t>(x * scalar);
    default: throw ExecError("bad i32 unary kind");
  }
}

Scalar apply_binary(ElementwiseKind kind, const Scalar& a, const Scalar& b) {
  if (is_f(a)) {
    float x = as_f(a), y = as_f(b);
    switch (kind) {
      case ElementwiseKind::Add: return x + y;
      case ElementwiseKind::Sub: return x - y;
      case ElementwiseKind::Mul: return x * y;
      case ElementwiseKind::Max: return std::max(x, y);
      case ElementwiseKind::Min: return std::min(x, y);
      case ElementwiseKind::Compare: return x > y ? 1.0f : 0.0f;
      case ElementwiseKind::Divide: return x / y;
      case ElementwiseKind::Power: return std::pow(x, y);
      default: throw ExecError("bad binary kind");
    }
  }
  int32_t x = as_i(a), y = as_i(b);
  switch (kind) {
    case ElementwiseKind::Add: return x + y;
    case ElementwiseKind::Sub: return x - y;
    case ElementwiseKind::Mul: return x * y;
    case ElementwiseKind::Max: return std::max(x, y);
    case ElementwiseKind::Min: return std::min(x, y);
    case ElementwiseKind::Compare: return x > y ? 1 : 0;
    default: throw ExecError("bad i32 binary kind");
  }
}

Scalar reduce_fold(Reducer reducer, const Scalar& acc, const Scalar& v) {
  switch (reducer) {
    case Reducer::Sum: return apply_binary(ElementwiseKind::Add, acc, v);
    case Reducer::Max: return apply_binary(ElementwiseKind::Max, acc, v);
    case Reducer::Min: return apply_binary(ElementwiseKind::Min, acc, v);
  }
  throw ExecError("bad reducer");
}

bool advance(std::vector<int64_t>& index, const std::vector<int64_t>& dims) {
  for (int64_t d = static_cast<int64_t>(dims.size()) - 1; d >= 0; --d) {
    if (++index[d] < dims[d]) return true;
    index[d] = 0;
  }
  return false;
}

Scalar matmul_element(const Instruction& instr, const std::vector<Shape>& operand_shapes,
                      const std::vector<int64_t>& index, const OperandAccessor& operand) {
  const Shape& lhs = operand_shapes[0];
  int64_t rank = instr.shape.rank();
  int64_t contraction = lhs.dims[lhs.rank() - 1];
  std::vector<int64_t> li(index.begin(), index.end());
  std::vector<int64_t> ri(index.begin(), index.end());
  bool floats = instr.shape.etype == ElementType::F32;
  Scalar acc = floats ? Scalar{0.0f} : Scalar{int32_t{0}};
  for (int64_t k = 0; k < contraction; ++k) {
    li[rank - 1] = k;
    ri[rank - 2] = k;
    acc = apply_binary(ElementwiseKind::Add, acc,
                       apply_binary(ElementwiseKind::Mul, operand(0, li), operand(1, ri)));
  }
  return acc;
}

}  // namespace

TensorValue TensorValue::zeros(const Shape& shape) {
  TensorValue v;
  v.shape = shape;
  if (shape.etype == ElementType::F32)
    v.f32.assign(shape.element_count(), 0.0f);
  else
    v.i32.assign(shape.element_count(), 0);
  return v;
}

Scalar TensorValue::get(int64_t linear) const {
  if (shape.etype == ElementType::F32) return f32.at(linear);
  return i32.at(linear);
}

void TensorValue::set(int64_t linear, Scalar v) {
  if (shape.etype == ElementType::F32)
    f32.at(linear) = as_f(v);
  else
    i32.at(linear) = as_i(v);
}

int64_t linearize(const std::vector<int64_t>& index, const std::vector<int64_t>& dims) {
  int64_t linear = 0;
  for (size_t d = 0; d < dims.size(); ++d) linear = linear * dims[d] + index[d];
  return linear;
}

std::vector<int64_t> delinearize(int64_t linear, const std::vector<int64_t>& dims) {
  std::vector<int64_t> index(dims.size(), 0);
  for (int64_t d = static_cast<int64_t>(dims.size()) - 1; d >= 0; --d) {
    index[d] = linear % dims[d];
    linear /= dims[d];
  }
  return index;
}

Scalar compute_element(const Instruction& instr, const std::vector<Shape>& operand_shapes,
                       const std::vector<int64_t>& index, const OperandAccessor& operand) {
  switch (instr.opcode) {
    case Opcode::Elementwise: {
      if (instr.kind == ElementwiseKind::Select) {
        Scalar pred = operand(0, index);
        bool take = is_f(pred) ? as_f(pred) != 0.0f : as_i(pred) != 0;
        return take ? operand(1, index) : operand(2, index);
      }
      if (arity(instr.kind) == 1) return apply_unary(instr.kind, operand(0, index), instr.scalar);
      return apply_binary(instr.kind, operand(0, index), operand(1, index));
    }
    case Opcode::Reshape: {
      int64_t linear = linearize(index, instr.shape.dims);
      return operand(0, delinearize(linear, operand_shapes[0].dims));
    }
    case Opcode::Bitcast: {
      int64_t linear = linearize(index, instr.shape.dims);
      Scalar src = operand(0, delinearize(linear, operand_shapes[0].dims));
      if (operand_shapes[0].etype == instr.shape.etype) return src;
      if (instr.shape.etype == ElementType::F32) {
        int32_t bits = as_i(src);
        float out;
        std::memcpy(&out, &bits, sizeof(out));
        return out;
      }
      float f = as_f(src);
      int32_t out;
      std::memcpy(&out, &f, sizeof(out));
      return out;
    }
    case Opcode::Transpose: {
      std::vector<int64_t> in(index.size());
      for (size_t i = 0; i < index.size(); ++i) in[instr.permutation[i]] = index[i];
      return operand(0, in);
    }
    case Opcode::Broadcast: {
      std::vector<int64_t> in(instr.broadcast_dim_map.size());
      for (size_t j = 0; j < in.size(); ++j) in[j] = index[instr.broadcast_dim_map[j]];
      return operand(0, in);
    }
    case Opcode::Reduce: {
      const Shape& in_shape = operand_shapes[0];
      std::set<int64_t> reduced(instr.reduce_dims.begin(), instr.reduce_dims.end());
      std::vector<int64_t> in(in_shape.rank(), 0);
      std::vector<int64_t> red_dims;
      for (int64_t d = 0, o = 0; d < in_shape.rank(); ++d) {
        if (reduced.count(d))
          red_dims.push_back(in_shape.dims[d]);
        else
          in[d] = index[o++];
      }
      std::vector<int64_t> red_index(red_dims.size(), 0);
      bool first = true;
      Scalar acc{};
      do {
        for (size_t j = 0, r = 0; j < in.size(); ++j)
          if (reduced.count(static_cast<int64_t>(j))) in[j] = red_index[r++];
        Scalar v = operand(0, in);
        acc = first ? v : reduce_fold(instr.reducer, acc, v);
        first = false;
      } while (advance(red_index, red_dims));
      return acc;
    }
    case Opcode::BatchMatMul:
      return matmul_element(instr, operand_shapes, index, operand);
    case Opcode::LibraryCall:
      if (instr.callee == "matmul") return matmul_element(instr, operand_shapes, index, operand);
      throw ExecError("library call '" + instr.callee + "' is not executable");
    default:
      throw ExecError("compute_element on " + opcode_name(instr));
  }
}

TensorValue constant_value(const Instruction& instr) {
  TensorValue v = TensorValue::zeros(instr.shape);
  int64_t n = instr.shape.element_count();
  bool splat = instr.literal.size() == 1;
  if (!splat && static_cast<int64_t>(instr.literal.size()) != n)
    throw ExecError("constant literal size mismatch for " + instr.id);
  for (int64_t i = 0; i < n; ++i) {
    double raw = instr.literal[splat ? 0 : i];
    if (instr.shape.etype == ElementType::F32)
      v.set(i, static_cast<float>(raw));
    else
      v.set(i, static_cast<int32_t>(raw));
  }
  return v;
}

TensorValue eval_dense(const TensorGraph& graph, const InstrId& id,
                       const std::map<InstrId, TensorValue>& values) {
  const Instruction& instr = graph.at(id);
  std::vector<Shape> operand_shapes;
  for (const InstrId& op : instr.operands) operand_shapes.push_back(graph.at(op).shape);
  OperandAccessor accessor = [&](size_t k, const std::vector<int64_t>& op_index) {
    const TensorValue& opv = values.at(instr.operands[k]);
    return opv.get(linearize(op_index, opv.shape.dims));
  };
  TensorValue out = TensorValue::zeros(instr.shape);
  std::vector<int64_t> index(instr.shape.rank(), 0);
  int64_t linear = 0;
  do {
    out.set(linear++, compute_element(instr, operand_shapes, index, accessor));
  } while (advance(index, instr.shape.dims));
  return out;
}

std::map<InstrId, TensorValue> interpret(const TensorGraph& graph,
                                         const std::map<InstrId, TensorValue>& inputs) {
  std::map<InstrId, TensorValue> values;
  for (const InstrId& id : graph.topological_order()) {
    const Instruction& instr = graph.at(id);
    if (instr.opcode == Opcode::Parameter) {
      auto it = inputs.find(id);
      if (it == inputs.end()) throw ExecError("missing input for parameter " + id);
      if (it->second.shape != instr.shape) throw ExecError("input shape mismatch for " + id);
      values[id] = it->second;
      continue;
    }
    if (instr.opcode == Opcode::Constant) {
      values[id] = constant_value(instr);
      continue;
    }
    values[id] = eval_dense(graph, id, values);
  }
  return values;
}

namespace {

struct BlockArena {
  std::vector<uint8_t> bytes;
  std::vector<InstrId> owner;  // per byte; stale reads are detected against it

  explicit BlockArena(int64_t size) : bytes(size, 0), owner(size) {}
};

int64_t box_local_linear(const std::vector<std::pair<int64_t, int64_t>>& box,
                         const std::vector<int64_t>& index) {
  int64_t linear = 0;
  for (size_t d = 0; d < box.size(); ++d)
    linear = linear * (box[d].second - box[d].first) + (index[d] - box[d].first);
  return linear;
}

bool box_contains(const std::vector<std::pair<int64_t, int64_t>>& box,
                  const std::vector<int64_t>& index) {
  for (size_t d = 0; d < box.size(); ++d)
    if (index[d] < box[d].first || index[d] >= box[d].second) return false;
  return true;
}

}  // namespace

std::vector<TensorValue> run_program(const KernelProgram& program, const TensorGraph& graph,
                                     const std::map<InstrId, TensorValue>& externals) {
  const FusedComputation& comp = program.comp;
  const SchedulePlan& plan = program.plan;

  std::vector<TensorValue> outputs;
  std::vector<std::vector<bool>> covered;
  for (const InstrId& root : comp.roots) {
    outputs.push_back(TensorValue::zeros(graph.at(root).shape));
    covered.emplace_back(graph.at(root).shape.element_count(), false);
  }

  for (int64_t block = 0; block < plan.blocks; ++block) {
    BlockArena arena(program.arena_bytes);
    std::set<InstrId> ready;

    std::function<Scalar(const InstrId&, const std::vector<int64_t>&)> eval_element =
        [&](const InstrId& id, const std::vector<int64_t>& index) -> Scalar {
      if (!comp.members.count(id)) {
        auto it = externals.find(id);
        if (it == externals.end()) throw ExecError("missing external value " + id);
        return it->second.get(linearize(index, it->second.shape.dims));
      }
      const Instruction& instr = graph.at(id);
      if (ready.count(id)) {
        auto box = chunk_box(instr.shape, plan.per_instruction.at(id), block);
        if (!box_contains(box, index))
          throw ExecError("chunk containment violation reading " + id);
        int esize = element_size(instr.shape.etype);
        int64_t at = program.arena_offsets.at(id) + box_local_linear(box, index) * esize;
        for (int64_t b = 0; b < esize; ++b)
          if (arena.owner[at + b] != id) throw ExecError("stale arena read of " + id);
        if (instr.shape.etype == ElementType::F32) {
          float v;
          std::memcpy(&v, arena.bytes.data() + at, sizeof(v));
          return v;
        }
        int32_t v;
        std::memcpy(&v, arena.bytes.data() + at, sizeof(v));
        return v;
      }
      std::vector<Shape> operand_shapes;
      for (const InstrId& op : instr.operands) operand_shapes.push_back(graph.at(op).shape);
      OperandAccessor accessor = [&](size_t k, const std::vector<int64_t>& op_index) {
        return eval_element(instr.operands[k], op_index);
      };
      return compute_element(instr, operand_shapes, index, accessor);
    };

    for (const Statement& stmt : program.statements) {
      const auto* mat = std::get_if<MaterializeStmt>(&stmt);
      if (!mat) continue;
      const Instruction& instr = graph.at(mat->instr);
      auto box = chunk_box(instr.shape, mat->schedule, block);
      std::vector<int64_t> box_dims;
      std::vector<int64_t> index;
      for (const auto& [lo, hi] : box) {
        box_dims.push_back(hi - lo);
        index.push_back(lo);
      }
      int64_t chunk_elems = 1;
      for (int64_t d : box_dims) chunk_elems *= d;

      // two-phase: compute the whole chunk first, then commit the writes
      std::vector<Scalar> temp;
      temp.reserve(chunk_elems);
      std::vector<int64_t> local(box_dims.size(), 0);
      for (int64_t i = 0; i < chunk_elems; ++i) {
        for (size_t d = 0; d < box.size(); ++d) index[d] = box[d].first + local[d];
        temp.push_back(eval_element(mat->instr, index));
        advance(local, box_dims);
      }

      if (const auto* shared = std::get_if<SharedDest>(&mat->dest)) {
        for (auto it = ready.begin(); it != ready.end();) {
          int64_t off = program.arena_offsets.at(*it);
          int64_t len = graph.at(*it).shape.element_count() / plan.blocks *
                        element_size(graph.at(*it).shape.etype);
          bool overlap = off < shared->offset + shared->bytes && shared->offset < off + len;
          if (overlap && *it != mat->instr)
            it = ready.erase(it);
          else
            ++it;
        }
        int esize = element_size(instr.shape.etype);
        for (int64_t i = 0; i < chunk_elems; ++i) {
          int64_t at = shared->offset + i * esize;
          if (instr.shape.etype == ElementType::F32) {
            float v = as_f(temp[i]);
            std::memcpy(arena.bytes.data() + at, &v, sizeof(v));
          } else {
            int32_t v = as_i(temp[i]);
            std::memcpy(arena.bytes.data() + at, &v, sizeof(v));
          }
          for (int64_t b = 0; b < esize; ++b) arena.owner[at + b] = mat->instr;
        }
        ready.insert(mat->instr);
      } else {
        int root = std::get<OutputDest>(mat->dest).root_index;
        std::fill(local.begin(), local.end(), 0);
        for (int64_t i = 0; i < chunk_elems; ++i) {
          for (size_t d = 0; d < box.size(); ++d) index[d] = box[d].first + local[d];
          int64_t linear = linearize(index, instr.shape.dims);
          if (covered[root][linear]) throw ExecError("overlapping write to root " + mat->instr);
          covered[root][linear] = true;
          outputs[root].set(linear, temp[i]);
          advance(local, box_dims);
        }
      }
    }
  }

  for (size_t r = 0; r < covered.size(); ++r)
    for (bool bit : covered[r])
      if (!bit) throw ExecError("incomplete coverage of root " + comp.roots[r]);
  return outputs;
}

}  // namespace stitchfuse
