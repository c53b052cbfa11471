/* Copyright 2026 the rornet authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License. */

#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "rornet/arch.hpp"
#include "rornet/ops.hpp"
#include "rornet/rng.hpp"
#include "rornet/stochastic_depth.hpp"
#include "rornet/tape.hpp"
#include "rornet/tensor.hpp"

namespace rornet {

enum class NodeOp {
  kInput,
  kConv,
  kBatchNorm,
  kRelu,
  kSubsamplePad,
  kGlobalAvgPool,
  kLinear,
  kJunction
};

enum class ShortcutLevel { kNone, kRoot, kMiddle, kFinal };
enum class ShortcutKind { kNone, kIdentity, kTypeA, kTypeB };
enum class JunctionRole { kFinalShortcut, kBranch, kMiddleShortcut, kRootShortcut };

inline const char* to_string(NodeOp op) {
  switch (op) {
    case NodeOp::kInput: return "input";
    case NodeOp::kConv: return "conv";
    case NodeOp::kBatchNorm: return "batch_norm";
    case NodeOp::kRelu: return "relu";
    case NodeOp::kSubsamplePad: return "subsample_pad";
    case NodeOp::kGlobalAvgPool: return "global_avg_pool";
    case NodeOp::kLinear: return "linear";
    case NodeOp::kJunction: return "junction";
  }
  return "?";
}

inline const char* to_string(ShortcutLevel l) {
  switch (l) {
    case ShortcutLevel::kNone: return "none";
    case ShortcutLevel::kRoot: return "root";
    case ShortcutLevel::kMiddle: return "middle";
    case ShortcutLevel::kFinal: return "final";
  }
  return "?";
}

inline const char* to_string(ShortcutKind k) {
  switch (k) {
    case ShortcutKind::kNone: return "none";
    case ShortcutKind::kIdentity: return "identity";
    case ShortcutKind::kTypeA: return "A";
    case ShortcutKind::kTypeB: return "B";
  }
  return "?";
}

/// One operation in a built network. Parameter tensors are owned by the
/// node; shortcut-producing nodes carry level/kind annotations; junction
/// nodes know the role of each operand so drop-path can gate the residual
/// branch.
template <class Real>
struct GraphNode {
  NodeOp op = NodeOp::kInput;
  std::vector<int> inputs;
  int stride = 1;
  int pad = 0;
  std::size_t out_channels = 0;  // subsample_pad target channel count

  Tensor<Real> weight;  // conv kernel or linear weight
  Tensor<Real> bias;    // linear
  Tensor<Real> gamma, beta;
  RunningStats<Real> stats;

  std::string name;
  int block = 0;          // 1..L when the node belongs to block l
  bool in_branch = false; // node is part of the residual branch F of `block`
  ShortcutLevel sc_level = ShortcutLevel::kNone;
  ShortcutKind sc_kind = ShortcutKind::kNone;

  // Junction bookkeeping, parallel to `inputs`.
  std::vector<JunctionRole> roles;
  std::vector<ShortcutKind> role_kinds;

  Shape out_shape;  // without the batch extent
};

template <class Real>
struct Graph {
  ArchSpec spec;
  std::vector<GraphNode<Real>> nodes;
  int input_node = 0;
  int logits_node = -1;
  int block_count = 0;
};

// ---------------------------------------------------------------------
// Shortcut fragments
// ---------------------------------------------------------------------

template <class Real>
struct ShortcutFragment {
  ShortcutKind kind = ShortcutKind::kIdentity;
  std::optional<GraphNode<Real>> node;  // absent for identity
};

namespace detail {

template <class Real>
Tensor<Real> he_conv_init(std::size_t cout, std::size_t cin, std::size_t kh,
                          std::size_t kw, Rng& rng) {
  const double fan_in = static_cast<double>(cin * kh * kw);
  return random_normal<Real>(Shape{cout, cin, kh, kw}, rng, 0.0,
                             std::sqrt(2.0 / fan_in), true);
}

}  // namespace detail

/// Builds the body of one shortcut. Type B is a learned 1x1 projection;
/// Type A is parameter-free strided subsampling plus zero channel padding;
/// identity requires matching shapes and emits no node.
template <class Real>
ShortcutFragment<Real> make_shortcut(ShortcutKind kind, std::size_t in_ch,
                                     std::size_t out_ch, int stride,
                                     ShortcutLevel level,
                                     const std::string& name, Rng& rng) {
  ShortcutFragment<Real> frag;
  frag.kind = kind;
  switch (kind) {
    case ShortcutKind::kIdentity:
      if (in_ch != out_ch || stride != 1)
        throw std::invalid_argument(
            "make_shortcut: identity requires matching shapes, got " +
            std::to_string(in_ch) + "->" + std::to_string(out_ch) +
            " stride " + std::to_string(stride));
      return frag;
    case ShortcutKind::kTypeA: {
      if (out_ch < in_ch)
        throw std::invalid_argument(
            "make_shortcut: type A cannot reduce channels (" +
            std::to_string(in_ch) + "->" + std::to_string(out_ch) + ")");
      GraphNode<Real> n;
      n.op = NodeOp::kSubsamplePad;
      n.stride = stride;
      n.out_channels = out_ch;
      n.name = name;
      n.sc_level = level;
      n.sc_kind = ShortcutKind::kTypeA;
      frag.node = std::move(n);
      return frag;
    }
    case ShortcutKind::kTypeB: {
      GraphNode<Real> n;
      n.op = NodeOp::kConv;
      n.stride = stride;
      n.pad = 0;
      n.weight = detail::he_conv_init<Real>(out_ch, in_ch, 1, 1, rng);
      n.name = name;
      n.sc_level = level;
      n.sc_kind = ShortcutKind::kTypeB;
      frag.node = std::move(n);
      return frag;
    }
    default:
      throw std::invalid_argument("make_shortcut: invalid kind");
  }
}

// ---------------------------------------------------------------------
// Builder
// ---------------------------------------------------------------------

namespace detail {

inline std::size_t conv_out(std::size_t in, std::size_t k, int stride,
                            int pad) {
  return (in + 2 * static_cast<std::size_t>(pad) - k) /
             static_cast<std::size_t>(stride) +
         1;
}

}  // namespace detail

/// Compiles an ArchSpec into an executable graph. The wiring follows the
/// multi-level shortcut scheme: every block keeps its final-level
/// shortcut; with m = 3 the last block of each group additionally
/// receives a middle-level shortcut from its group input, and the last
/// block receives the root-level shortcut from the stem output. With
/// m = 2 only root and final levels are wired. Dimension-changing
/// final-level shortcuts follow the spec's policy (all-B or A+B);
/// root- and middle-level shortcuts are always type B projections.
template <class Real>
Graph<Real> build(const ArchSpec& spec, std::uint64_t init_seed = 0x1209) {
  spec.validate();
  Rng rng(derive_seed(init_seed, "graph-init"));

  Graph<Real> g;
  g.spec = spec;
  g.block_count = spec.total_blocks();

  auto push = [&g](GraphNode<Real> n) {
    g.nodes.push_back(std::move(n));
    return static_cast<int>(g.nodes.size()) - 1;
  };

  const std::size_t in_c = static_cast<std::size_t>(spec.in_channels);
  std::size_t h = static_cast<std::size_t>(spec.in_height);
  std::size_t w = static_cast<std::size_t>(spec.in_width);

  GraphNode<Real> input;
  input.op = NodeOp::kInput;
  input.name = "input";
  input.out_shape = {in_c, h, w};
  g.input_node = push(std::move(input));

  // Stem: 3x3 stride-1 convolution to the first group width. Post-order
  // networks activate it immediately; pre-order defers to block BNs.
  std::size_t cur_c = static_cast<std::size_t>(spec.base_widths[0]);
  {
    GraphNode<Real> stem;
    stem.op = NodeOp::kConv;
    stem.inputs = {g.input_node};
    stem.stride = 1;
    stem.pad = 1;
    stem.weight = detail::he_conv_init<Real>(cur_c, in_c, 3, 3, rng);
    stem.name = "stem.conv";
    stem.out_shape = {cur_c, h, w};
    push(std::move(stem));
  }
  if (spec.order == ActivationOrder::kPost) {
    GraphNode<Real> bn;
    bn.op = NodeOp::kBatchNorm;
    bn.inputs = {static_cast<int>(g.nodes.size()) - 1};
    bn.gamma = Tensor<Real>(Shape{cur_c}, Real(1), true);
    bn.beta = Tensor<Real>(Shape{cur_c}, Real(0), true);
    bn.stats = RunningStats<Real>::identity(cur_c);
    bn.name = "stem.bn";
    bn.out_shape = {cur_c, h, w};
    push(std::move(bn));
    GraphNode<Real> act;
    act.op = NodeOp::kRelu;
    act.inputs = {static_cast<int>(g.nodes.size()) - 1};
    act.name = "stem.relu";
    act.out_shape = {cur_c, h, w};
    push(std::move(act));
  }

  const int stem_out = static_cast<int>(g.nodes.size()) - 1;
  int cur = stem_out;

  auto add_bn = [&](int src, std::size_t c, const Shape& shp,
                    const std::string& name, int block) {
    GraphNode<Real> n;
    n.op = NodeOp::kBatchNorm;
    n.inputs = {src};
    n.gamma = Tensor<Real>(Shape{c}, Real(1), true);
    n.beta = Tensor<Real>(Shape{c}, Real(0), true);
    n.stats = RunningStats<Real>::identity(c);
    n.name = name;
    n.block = block;
    n.in_branch = true;
    n.out_shape = shp;
    return push(std::move(n));
  };
  auto add_relu = [&](int src, const Shape& shp, const std::string& name,
                      int block, bool in_branch) {
    GraphNode<Real> n;
    n.op = NodeOp::kRelu;
    n.inputs = {src};
    n.name = name;
    n.block = block;
    n.in_branch = in_branch;
    n.out_shape = shp;
    return push(std::move(n));
  };
  auto add_conv = [&](int src, std::size_t cin, std::size_t cout,
                      std::size_t k, int stride, int pad, const Shape& in_shp,
                      const std::string& name, int block) {
    GraphNode<Real> n;
    n.op = NodeOp::kConv;
    n.inputs = {src};
    n.stride = stride;
    n.pad = pad;
    n.weight = detail::he_conv_init<Real>(cout, cin, k, k, rng);
    n.name = name;
    n.block = block;
    n.in_branch = true;
    n.out_shape = {cout, detail::conv_out(in_shp[1], k, stride, pad),
                   detail::conv_out(in_shp[2], k, stride, pad)};
    return push(std::move(n));
  };

  const auto widths = spec.block_type == BlockType::kBottleneck
                          ? bottleneck_widths(spec)
                          : std::array<GroupWidths, 4>{};

  int block_index = 0;
  for (int gi = 0; gi < 4; ++gi) {
    const int group_input = cur;
    const std::size_t group_in_c = cur_c;
    const std::size_t group_in_h = h, group_in_w = w;
    const int group_stride = gi > 0 ? 2 : 1;

    for (int bi = 1; bi <= spec.group_blocks[static_cast<std::size_t>(gi)];
         ++bi) {
      ++block_index;
      const int l = block_index;
      const int stride = (gi > 0 && bi == 1) ? 2 : 1;
      const std::size_t in_ch = cur_c;
      const std::size_t out_ch =
          static_cast<std::size_t>(spec.group_out_width(gi));
      const Shape in_shp{in_ch, h, w};
      const std::size_t oh = stride == 1 ? h : detail::conv_out(h, 3, 2, 1);
      const std::size_t ow = stride == 1 ? w : detail::conv_out(w, 3, 2, 1);
      const std::string base =
          "g" + std::to_string(gi + 1) + ".b" + std::to_string(bi);
      const int block_input = cur;

      // Residual branch F.
      int t;
      if (spec.block_type == BlockType::kBasic) {
        if (spec.order == ActivationOrder::kPre) {
          t = add_bn(block_input, in_ch, in_shp, base + ".bn1", l);
          t = add_relu(t, in_shp, base + ".relu1", l, true);
          t = add_conv(t, in_ch, out_ch, 3, stride, 1, in_shp, base + ".conv1",
                       l);
          const Shape mid{out_ch, oh, ow};
          t = add_bn(t, out_ch, mid, base + ".bn2", l);
          t = add_relu(t, mid, base + ".relu2", l, true);
          t = add_conv(t, out_ch, out_ch, 3, 1, 1, mid, base + ".conv2", l);
        } else {
          t = add_conv(block_input, in_ch, out_ch, 3, stride, 1, in_shp,
                       base + ".conv1", l);
          const Shape mid{out_ch, oh, ow};
          t = add_bn(t, out_ch, mid, base + ".bn1", l);
          t = add_relu(t, mid, base + ".relu1", l, true);
          t = add_conv(t, out_ch, out_ch, 3, 1, 1, mid, base + ".conv2", l);
          t = add_bn(t, out_ch, mid, base + ".bn2", l);
        }
      } else {
        const std::size_t inner =
            static_cast<std::size_t>(widths[static_cast<std::size_t>(gi)].inner);
        if (spec.order == ActivationOrder::kPre) {
          t = add_bn(block_input, in_ch, in_shp, base + ".bn1", l);
          t = add_relu(t, in_shp, base + ".relu1", l, true);
          t = add_conv(t, in_ch, inner, 1, 1, 0, in_shp, base + ".conv1", l);
          const Shape s1{inner, h, w};
          t = add_bn(t, inner, s1, base + ".bn2", l);
          t = add_relu(t, s1, base + ".relu2", l, true);
          t = add_conv(t, inner, inner, 3, stride, 1, s1, base + ".conv2", l);
          const Shape s2{inner, oh, ow};
          t = add_bn(t, inner, s2, base + ".bn3", l);
          t = add_relu(t, s2, base + ".relu3", l, true);
          t = add_conv(t, inner, out_ch, 1, 1, 0, s2, base + ".conv3", l);
        } else {
          t = add_conv(block_input, in_ch, inner, 1, 1, 0, in_shp,
                       base + ".conv1", l);
          const Shape s1{inner, h, w};
          t = add_bn(t, inner, s1, base + ".bn1", l);
          t = add_relu(t, s1, base + ".relu1", l, true);
          t = add_conv(t, inner, inner, 3, stride, 1, s1, base + ".conv2", l);
          const Shape s2{inner, oh, ow};
          t = add_bn(t, inner, s2, base + ".bn2", l);
          t = add_relu(t, s2, base + ".relu2", l, true);
          t = add_conv(t, inner, out_ch, 1, 1, 0, s2, base + ".conv3", l);
          const Shape s3{out_ch, oh, ow};
          t = add_bn(t, out_ch, s3, base + ".bn3", l);
        }
      }
      const int branch_out = t;
      const Shape out_shp{out_ch, oh, ow};

      // Final-level shortcut.
      ShortcutKind final_kind;
      if (in_ch == out_ch && stride == 1) {
        final_kind = ShortcutKind::kIdentity;
      } else {
        final_kind = spec.policy == ShortcutPolicy::kAPlusB
                         ? ShortcutKind::kTypeA
                         : ShortcutKind::kTypeB;
      }
      int final_src = block_input;
      auto frag = make_shortcut<Real>(final_kind, in_ch, out_ch, stride,
                                      ShortcutLevel::kFinal, base + ".sc", rng);
      if (frag.node) {
        frag.node->inputs = {block_input};
        frag.node->block = l;
        frag.node->out_shape = out_shp;
        final_src = push(std::move(*frag.node));
      }

      GraphNode<Real> junction;
      junction.op = NodeOp::kJunction;
      junction.inputs = {final_src, branch_out};
      junction.roles = {JunctionRole::kFinalShortcut, JunctionRole::kBranch};
      junction.role_kinds = {final_kind, ShortcutKind::kNone};
      junction.name = base + ".sum";
      junction.block = l;
      junction.out_shape = out_shp;

      const bool group_final =
          bi == spec.group_blocks[static_cast<std::size_t>(gi)];
      if (group_final && spec.level_count == 3) {
        auto mid = make_shortcut<Real>(
            ShortcutKind::kTypeB, group_in_c, out_ch, group_stride,
            ShortcutLevel::kMiddle, "g" + std::to_string(gi + 1) + ".mid_sc",
            rng);
        mid.node->inputs = {group_input};
        mid.node->out_shape = out_shp;
        const int mid_id = push(std::move(*mid.node));
        junction.inputs.push_back(mid_id);
        junction.roles.push_back(JunctionRole::kMiddleShortcut);
        junction.role_kinds.push_back(ShortcutKind::kTypeB);
      }
      if (l == g.block_count) {
        auto root = make_shortcut<Real>(
            ShortcutKind::kTypeB, static_cast<std::size_t>(spec.base_widths[0]),
            out_ch, 8, ShortcutLevel::kRoot, "root_sc", rng);
        root.node->inputs = {stem_out};
        root.node->out_shape = out_shp;
        const int root_id = push(std::move(*root.node));
        junction.inputs.push_back(root_id);
        junction.roles.push_back(JunctionRole::kRootShortcut);
        junction.role_kinds.push_back(ShortcutKind::kTypeB);
      }
      cur = push(std::move(junction));

      if (spec.order == ActivationOrder::kPost)
        cur = add_relu(cur, out_shp, base + ".post_relu", l, false);

      cur_c = out_ch;
      h = oh;
      w = ow;
    }
    (void)group_in_h;
    (void)group_in_w;
  }

  // Head: global average pool into the class projection.
  {
    GraphNode<Real> pool;
    pool.op = NodeOp::kGlobalAvgPool;
    pool.inputs = {cur};
    pool.name = "pool";
    pool.out_shape = {cur_c};
    cur = push(std::move(pool));
  }
  {
    GraphNode<Real> head;
    head.op = NodeOp::kLinear;
    head.inputs = {cur};
    const std::size_t classes = static_cast<std::size_t>(spec.num_classes);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cur_c));
    head.weight =
        random_uniform<Real>(Shape{classes, cur_c}, rng, -bound, bound, true);
    head.bias = Tensor<Real>(Shape{classes}, Real(0), true);
    head.name = "head";
    head.out_shape = {classes};
    g.logits_node = push(std::move(head));
  }
  return g;
}

// ---------------------------------------------------------------------
// Policy rewiring
// ---------------------------------------------------------------------

/// Reassigns shortcut types on a built graph: all-B puts type B on every
/// dimension-changing shortcut; A+B puts type A on dimension-changing
/// final-level shortcuts (root/middle stay type B). Dimension-preserving
/// final-level shortcuts remain identity. Converted type-B projections
/// are freshly initialized from the node name.
template <class Real>
void apply_policy(Graph<Real>& g, ShortcutPolicy policy) {
  for (auto& node : g.nodes) {
    if (node.op != NodeOp::kJunction) continue;
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      if (node.roles[i] != JunctionRole::kFinalShortcut) continue;
      if (node.role_kinds[i] == ShortcutKind::kIdentity) continue;
      const ShortcutKind want = policy == ShortcutPolicy::kAPlusB
                                    ? ShortcutKind::kTypeA
                                    : ShortcutKind::kTypeB;
      if (node.role_kinds[i] == want) continue;
      auto& sc = g.nodes[static_cast<std::size_t>(node.inputs[i])];
      const std::size_t in_ch =
          g.nodes[static_cast<std::size_t>(sc.inputs[0])].out_shape[0];
      const std::size_t out_ch = sc.out_shape[0];
      if (want == ShortcutKind::kTypeA) {
        sc.op = NodeOp::kSubsamplePad;
        sc.out_channels = out_ch;
        sc.weight = Tensor<Real>();
        sc.sc_kind = ShortcutKind::kTypeA;
      } else {
        Rng rng(derive_seed(fnv1a(sc.name), "policy-b"));
        sc.op = NodeOp::kConv;
        sc.pad = 0;
        sc.weight = detail::he_conv_init<Real>(out_ch, in_ch, 1, 1, rng);
        sc.sc_kind = ShortcutKind::kTypeB;
      }
      node.role_kinds[i] = want;
    }
  }
  g.spec.policy = policy;
}

// ---------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------

enum class RunMode { kTrain, kEval };

/// Runs the graph on a batch. In train mode with a schedule and mask,
/// dropped blocks skip their residual branch entirely (their batch-norm
/// statistics are left untouched); in eval mode with a schedule, every
/// branch output is scaled by its survival probability.
template <class Real>
Tensor<Real> graph_forward(Graph<Real>& g, Tape<Real>* tape,
                           const Tensor<Real>& x, RunMode mode,
                           const DropSchedule* sd = nullptr,
                           const std::vector<std::uint8_t>* mask = nullptr) {
  if (x.rank() != 4 || x.extent(1) != g.nodes[0].out_shape[0] ||
      x.extent(2) != g.nodes[0].out_shape[1] ||
      x.extent(3) != g.nodes[0].out_shape[2])
    throw std::invalid_argument(
        "forward: input " + shape_str(x.shape()) + " does not match network input " +
        shape_str(g.nodes[0].out_shape));
  if (mask && static_cast<int>(mask->size()) != g.block_count)
    throw std::invalid_argument("forward: drop mask length " +
                                std::to_string(mask->size()) +
                                " does not match block count " +
                                std::to_string(g.block_count));

  const bool training = mode == RunMode::kTrain;
  auto dropped = [&](int block) {
    return training && mask && !(*mask)[static_cast<std::size_t>(block - 1)];
  };

  std::vector<Tensor<Real>> vals(g.nodes.size());
  std::vector<char> alive(g.nodes.size(), 1);

  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    auto& n = g.nodes[i];
    if (n.in_branch && dropped(n.block)) {
      alive[i] = 0;
      continue;
    }
    switch (n.op) {
      case NodeOp::kInput:
        vals[i] = x;
        break;
      case NodeOp::kConv:
        vals[i] = ops::conv2d(tape, vals[static_cast<std::size_t>(n.inputs[0])],
                              n.weight, n.stride, n.pad);
        break;
      case NodeOp::kBatchNorm:
        vals[i] = ops::batch_norm(
            tape, vals[static_cast<std::size_t>(n.inputs[0])], n.gamma, n.beta,
            training ? BnMode::kTrain : BnMode::kEval, n.stats);
        break;
      case NodeOp::kRelu:
        vals[i] = ops::relu(tape, vals[static_cast<std::size_t>(n.inputs[0])]);
        break;
      case NodeOp::kSubsamplePad:
        vals[i] =
            ops::subsample_pad(tape, vals[static_cast<std::size_t>(n.inputs[0])],
                               n.stride, n.out_channels);
        break;
      case NodeOp::kGlobalAvgPool:
        vals[i] = ops::global_avg_pool(
            tape, vals[static_cast<std::size_t>(n.inputs[0])]);
        break;
      case NodeOp::kLinear:
        vals[i] = ops::linear(tape, vals[static_cast<std::size_t>(n.inputs[0])],
                              n.weight, n.bias);
        break;
      case NodeOp::kJunction: {
        Tensor<Real> acc;
        for (std::size_t j = 0; j < n.inputs.size(); ++j) {
          const auto src = static_cast<std::size_t>(n.inputs[j]);
          Tensor<Real> v;
          if (n.roles[j] == JunctionRole::kBranch) {
            if (!alive[src]) continue;  // branch dropped this mini-batch
            v = vals[src];
            if (!training && sd)
              v = ops::scale(tape, v,
                             static_cast<Real>(sd->survival(n.block)));
          } else {
            v = vals[src];
          }
          acc = acc.defined() ? ops::add(tape, acc, v) : v;
        }
        vals[i] = acc;
        break;
      }
    }
  }
  return vals[static_cast<std::size_t>(g.logits_node)];
}

// ---------------------------------------------------------------------
// Introspection
// ---------------------------------------------------------------------

template <class Real>
struct ParamRef {
  std::string name;
  Tensor<Real>* tensor;
  bool decay_exempt;  // batch-norm scales/offsets and biases skip weight decay
  bool is_head;
};

template <class Real>
std::vector<ParamRef<Real>> parameters(Graph<Real>& g) {
  std::vector<ParamRef<Real>> out;
  for (auto& n : g.nodes) {
    const bool head = static_cast<int>(&n - g.nodes.data()) == g.logits_node;
    if (n.weight.defined())
      out.push_back({n.name + ".w", &n.weight, false, head});
    if (n.bias.defined())
      out.push_back({n.name + ".bias", &n.bias, true, head});
    if (n.gamma.defined())
      out.push_back({n.name + ".gamma", &n.gamma, true, false});
    if (n.beta.defined())
      out.push_back({n.name + ".beta", &n.beta, true, false});
  }
  return out;
}

template <class Real>
struct BufferRef {
  std::string name;
  RunningStats<Real>* stats;
};

template <class Real>
std::vector<BufferRef<Real>> buffers(Graph<Real>& g) {
  std::vector<BufferRef<Real>> out;
  for (auto& n : g.nodes)
    if (n.op == NodeOp::kBatchNorm) out.push_back({n.name, &n.stats});
  return out;
}

template <class Real>
std::size_t param_count(const Graph<Real>& g) {
  std::size_t total = 0;
  for (const auto& n : g.nodes) {
    if (n.weight.defined()) total += n.weight.size();
    if (n.bias.defined()) total += n.bias.size();
    if (n.gamma.defined()) total += n.gamma.size();
    if (n.beta.defined()) total += n.beta.size();
  }
  return total;
}

/// Weighted-layer count measured on the built graph (stem and block
/// convolutions plus the head; shortcut projections excluded). Agrees
/// with count_depth(spec) by construction.
template <class Real>
int graph_depth(const Graph<Real>& g) {
  int depth = 0;
  for (const auto& n : g.nodes) {
    if (n.op == NodeOp::kConv && n.sc_level == ShortcutLevel::kNone) ++depth;
    if (n.op == NodeOp::kLinear) ++depth;
  }
  return depth;
}

struct ShortcutCensus {
  int final_identity = 0;
  int final_a = 0;
  int final_b = 0;
  int middle_b = 0;
  int root_b = 0;

  int total() const {
    return final_identity + final_a + final_b + middle_b + root_b;
  }
};

template <class Real>
ShortcutCensus census(const Graph<Real>& g) {
  ShortcutCensus c;
  for (const auto& n : g.nodes) {
    if (n.op != NodeOp::kJunction) continue;
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      switch (n.roles[i]) {
        case JunctionRole::kFinalShortcut:
          if (n.role_kinds[i] == ShortcutKind::kIdentity) ++c.final_identity;
          if (n.role_kinds[i] == ShortcutKind::kTypeA) ++c.final_a;
          if (n.role_kinds[i] == ShortcutKind::kTypeB) ++c.final_b;
          break;
        case JunctionRole::kMiddleShortcut:
          ++c.middle_b;
          break;
        case JunctionRole::kRootShortcut:
          ++c.root_b;
          break;
        case JunctionRole::kBranch:
          break;
      }
    }
  }
  return c;
}

/// Symbolic unroll of the group-final junctions: each returned multiset
/// holds tags of the summands flowing into that junction, written in
/// terms of block inputs ("h(x3)", "F(x3)") and shortcut sources
/// ("g(x1)"). Vector entries are ordered by group.
template <class Real>
std::vector<std::multiset<std::string>> junction_summands(
    const Graph<Real>& g) {
  const auto& spec = g.spec;
  std::array<int, 4> last{};
  std::array<int, 4> first{};
  int cum = 0;
  for (int gi = 0; gi < 4; ++gi) {
    first[static_cast<std::size_t>(gi)] = cum + 1;
    cum += spec.group_blocks[static_cast<std::size_t>(gi)];
    last[static_cast<std::size_t>(gi)] = cum;
  }
  std::vector<std::multiset<std::string>> out;
  for (const auto& n : g.nodes) {
    if (n.op != NodeOp::kJunction) continue;
    int gi = -1;
    for (int k = 0; k < 4; ++k)
      if (n.block == last[static_cast<std::size_t>(k)]) gi = k;
    if (gi < 0) continue;
    std::multiset<std::string> tags;
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      switch (n.roles[i]) {
        case JunctionRole::kFinalShortcut:
          tags.insert("h(x" + std::to_string(n.block) + ")");
          break;
        case JunctionRole::kBranch:
          tags.insert("F(x" + std::to_string(n.block) + ")");
          break;
        case JunctionRole::kMiddleShortcut:
          tags.insert("g(x" +
                      std::to_string(first[static_cast<std::size_t>(gi)]) +
                      ")");
          break;
        case JunctionRole::kRootShortcut:
          tags.insert("g(x1)");
          break;
      }
    }
    out.push_back(std::move(tags));
  }
  return out;
}

/// Deep copy: the clone shares no tensor storage with the source.
template <class Real>
Graph<Real> clone(const Graph<Real>& g) {
  Graph<Real> out = g;
  for (auto& n : out.nodes) {
    if (n.weight.defined()) n.weight = n.weight.clone();
    if (n.bias.defined()) n.bias = n.bias.clone();
    if (n.gamma.defined()) n.gamma = n.gamma.clone();
    if (n.beta.defined()) n.beta = n.beta.clone();
  }
  return out;
}

/// Structural validation of a built graph: topological input order and
/// the per-level shortcut counts implied by the level number.
template <class Real>
void check_graph(const Graph<Real>& g) {
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    for (int in : g.nodes[i].inputs)
      if (in < 0 || static_cast<std::size_t>(in) >= i)
        throw std::logic_error("graph: node " + std::to_string(i) +
                               " depends on node " + std::to_string(in) +
                               " that does not precede it");
  const auto c = census(g);
  if (c.final_identity + c.final_a + c.final_b != g.block_count)
    throw std::logic_error("graph: expected one final-level shortcut per block");
  if (g.spec.level_count == 3 && (c.root_b != 1 || c.middle_b != 4))
    throw std::logic_error(
        "graph: m=3 requires exactly 1 root and 4 middle shortcuts");
  if (g.spec.level_count == 2 && (c.root_b != 1 || c.middle_b != 0))
    throw std::logic_error(
        "graph: m=2 requires exactly 1 root and 0 middle shortcuts");
}

}  // namespace rornet
