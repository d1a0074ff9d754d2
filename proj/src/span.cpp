// SPDX-License-Identifier: Apache-2.0

#include "stitchfuse/span.hpp"

#include <algorithm>

namespace stitchfuse {

namespace {

std::string frame_key(const Instruction& instr) { return instr.frame_id.value_or(""); }

}  // namespace

SpanMap compute_span(const TensorGraph& graph) {
  SpanMap result;
  std::vector<InstrId> topo = graph.topological_order();
  // users have smaller span; walk users-first (reverse topological order)
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    const Instruction& instr = graph.at(*it);
    int64_t span = 0;
    for (const InstrId& user : graph.users_of(*it)) {
      if (frame_key(graph.at(user)) != frame_key(instr)) continue;
      span = std::max(span, result.span.at(user) + 1);
    }
    result.span[*it] = span;
    result.critical_path_length = std::max(result.critical_path_length, span);
  }
  for (const auto& [id, span] : result.span) result.layers[span].push_back(id);
  // std::map iteration already yields ids in ascending order per layer
  return result;
}

bool is_fusion_barrier(const Instruction& instr, const PipelineOptions& options) {
  if (instr.opcode == Opcode::LibraryCall) return true;
  if (instr.opcode == Opcode::BatchMatMul && !options.fuse_dot) return true;
  return false;
}

std::vector<FusionRegion> layers_between(const SpanMap& span_map, const TensorGraph& graph,
                                         const PipelineOptions& options) {
  // Collect, per frame, the layer values present and the barrier layers.
  std::map<std::string, std::map<int64_t, bool>> frame_layers;  // layer -> has barrier
  for (const Instruction& instr : graph.instructions()) {
    int64_t layer = span_map.span.at(instr.id);
    bool& barrier = frame_layers[frame_key(instr)][layer];
    barrier = barrier || is_fusion_barrier(instr, options);
  }

  std::vector<FusionRegion> regions;
  for (const auto& [frame, layers] : frame_layers) {
    FusionRegion current;
    current.frame = frame.empty() ? std::nullopt : std::optional<std::string>(frame);
    bool open = false;
    std::optional<int64_t> last_barrier;
    for (const auto& [layer, barrier] : layers) {
      if (barrier) {
        if (open) {
          current.upper_lc = layer;
          regions.push_back(current);
          open = false;
        }
        last_barrier = layer;
        current = FusionRegion{};
        current.frame = frame.empty() ? std::nullopt : std::optional<std::string>(frame);
        continue;
      }
      if (!open) {
        current.lower_lc = last_barrier;
        current.lower_layer = layer;
        open = true;
      }
      current.upper_layer = layer;
      current.layers.push_back(layer);
    }
    if (open) regions.push_back(current);
  }
  return regions;
}

}  // namespace stitchfuse
