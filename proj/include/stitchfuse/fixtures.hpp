// SPDX-License-Identifier: Apache-2.0
//
// Bundled example graphs used by tests and the `fixtures` subcommand.

#pragma once

#include <map>
#include <string>

namespace stitchfuse {

// name -> graph file text; names: softmax_batchdot, elementwise_chain,
// reduce_transpose_mix, libcall_mix
std::map<std::string, std::string> fixture_graphs();

}  // namespace stitchfuse
