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

#include <array>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rornet {

enum class BlockType { kBasic, kBottleneck };
enum class ShortcutPolicy { kAllB, kAPlusB };
enum class ActivationOrder { kPre, kPost };

/// Declarative description of a RoR network: residual block flavor,
/// per-group block counts L1..L4, shortcut level count m, bottleneck
/// width factor k, shortcut policy and activation ordering.
struct ArchSpec {
  BlockType block_type = BlockType::kBasic;
  std::array<int, 4> group_blocks{3, 4, 6, 3};
  int level_count = 3;  // m: 2 = root+final, 3 = root+middle+final
  int width_factor = 1; // k, bottleneck blocks only
  std::array<int, 4> base_widths{64, 128, 256, 512};
  ShortcutPolicy policy = ShortcutPolicy::kAPlusB;
  ActivationOrder order = ActivationOrder::kPre;
  int num_classes = 8;
  int in_channels = 3;
  int in_height = 32;
  int in_width = 32;
  /// Optional layer count declared in the spec file; 0 when absent. A
  /// mismatch against the computed depth is reported as a warning, not an
  /// error.
  int declared_layers = 0;

  int total_blocks() const {
    return group_blocks[0] + group_blocks[1] + group_blocks[2] +
           group_blocks[3];
  }

  /// Output channel count of a block in the given group (0-based).
  int group_out_width(int group) const {
    return block_type == BlockType::kBottleneck
               ? width_factor * base_widths[static_cast<std::size_t>(group)]
               : base_widths[static_cast<std::size_t>(group)];
  }

  void validate() const {
    for (int g = 0; g < 4; ++g) {
      if (group_blocks[static_cast<std::size_t>(g)] < 1)
        throw std::invalid_argument("arch: groups must all be >= 1");
      if (base_widths[static_cast<std::size_t>(g)] < 1)
        throw std::invalid_argument("arch: widths must all be >= 1");
    }
    if (level_count != 2 && level_count != 3)
      throw std::invalid_argument("arch: m " + std::to_string(level_count) +
                                  " is not supported (m must be 2 or 3)");
    if (block_type == BlockType::kBottleneck && width_factor != 1 &&
        width_factor != 2 && width_factor != 4)
      throw std::invalid_argument("arch: k " + std::to_string(width_factor) +
                                  " is not supported (k must be 1, 2 or 4)");
    if (num_classes < 2)
      throw std::invalid_argument("arch: classes must be >= 2");
    if (in_channels < 1)
      throw std::invalid_argument("arch: input channels must be >= 1");
    if (in_height < 8 || in_width < 8)
      throw std::invalid_argument(
          "arch: input " + std::to_string(in_height) + "x" +
          std::to_string(in_width) +
          " is too small for the four block groups (need >= 8x8)");
  }
};

/// Weighted-layer count: convolutions inside residual blocks plus the
/// stem convolution and the final fully-connected layer. Shortcut
/// projections do not contribute.
inline int count_depth(const ArchSpec& spec) {
  const int per_block = spec.block_type == BlockType::kBasic ? 2 : 3;
  return per_block * spec.total_blocks() + 2;
}

/// Warning text when the declared layer count disagrees with the computed
/// depth; empty string otherwise.
inline std::string depth_warning(const ArchSpec& spec) {
  if (spec.declared_layers == 0) return {};
  const int computed = count_depth(spec);
  if (computed == spec.declared_layers) return {};
  std::ostringstream os;
  os << "warning: declared layer count " << spec.declared_layers
     << " does not match computed depth " << computed << " for groups {"
     << spec.group_blocks[0] << "," << spec.group_blocks[1] << ","
     << spec.group_blocks[2] << "," << spec.group_blocks[3]
     << "}; reporting the computed depth";
  return os.str();
}

struct GroupWidths {
  int inner = 0;  // channel count of the reducing 1x1 / 3x3 stack
  int outer = 0;  // block output channels, k * inner
};

/// Bottleneck channel widths per group: the inner 1x1/3x3 layers use the
/// group base width; the block output is scaled by k.
inline std::array<GroupWidths, 4> bottleneck_widths(const ArchSpec& spec) {
  if (spec.block_type != BlockType::kBottleneck)
    throw std::invalid_argument(
        "bottleneck_widths: spec does not use bottleneck blocks");
  if (spec.width_factor != 1 && spec.width_factor != 2 &&
      spec.width_factor != 4)
    throw std::invalid_argument("bottleneck_widths: k " +
                                std::to_string(spec.width_factor) +
                                " is not supported (k must be 1, 2 or 4)");
  std::array<GroupWidths, 4> out;
  for (int g = 0; g < 4; ++g) {
    const int base = spec.base_widths[static_cast<std::size_t>(g)];
    out[static_cast<std::size_t>(g)] = {base, spec.width_factor * base};
  }
  return out;
}

// ---------------------------------------------------------------------
// Flat key-value spec file:
//
//   block_type = basic          # or bottleneck
//   groups     = 3,4,6,3
//   m          = 3
//   k          = 1
//   widths     = 64,128,256,512 # optional
//   policy     = A+B            # or all-B
//   order      = pre            # or post
//   classes    = 8
//   input      = 3,32,32
//   layers     = 34             # optional declared depth
// ---------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<int> parse_int_list(const std::string& v,
                                       const std::string& field) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(trim(item)));
    } catch (const std::exception&) {
      throw std::invalid_argument("arch: field '" + field +
                                  "' has a non-integer entry: " + item);
    }
  }
  return out;
}

}  // namespace detail

inline ArchSpec parse_arch_text(const std::string& text) {
  ArchSpec spec;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("arch: line " + std::to_string(lineno) +
                                  " is not a key = value pair");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));

    if (key == "block_type") {
      if (val == "basic")
        spec.block_type = BlockType::kBasic;
      else if (val == "bottleneck")
        spec.block_type = BlockType::kBottleneck;
      else
        throw std::invalid_argument("arch: field 'block_type' must be basic "
                                    "or bottleneck, got " +
                                    val);
    } else if (key == "groups") {
      auto v = detail::parse_int_list(val, key);
      if (v.size() != 4)
        throw std::invalid_argument(
            "arch: field 'groups' needs exactly 4 entries");
      for (int g = 0; g < 4; ++g)
        spec.group_blocks[static_cast<std::size_t>(g)] =
            v[static_cast<std::size_t>(g)];
    } else if (key == "m") {
      spec.level_count = std::stoi(val);
    } else if (key == "k") {
      spec.width_factor = std::stoi(val);
    } else if (key == "widths") {
      auto v = detail::parse_int_list(val, key);
      if (v.size() != 4)
        throw std::invalid_argument(
            "arch: field 'widths' needs exactly 4 entries");
      for (int g = 0; g < 4; ++g)
        spec.base_widths[static_cast<std::size_t>(g)] =
            v[static_cast<std::size_t>(g)];
    } else if (key == "policy") {
      if (val == "A+B" || val == "a+b")
        spec.policy = ShortcutPolicy::kAPlusB;
      else if (val == "all-B" || val == "all-b" || val == "B")
        spec.policy = ShortcutPolicy::kAllB;
      else
        throw std::invalid_argument(
            "arch: field 'policy' must be A+B or all-B, got " + val);
    } else if (key == "order") {
      if (val == "pre")
        spec.order = ActivationOrder::kPre;
      else if (val == "post")
        spec.order = ActivationOrder::kPost;
      else
        throw std::invalid_argument(
            "arch: field 'order' must be pre or post, got " + val);
    } else if (key == "classes") {
      spec.num_classes = std::stoi(val);
    } else if (key == "input") {
      auto v = detail::parse_int_list(val, key);
      if (v.size() != 3)
        throw std::invalid_argument(
            "arch: field 'input' needs channels,height,width");
      spec.in_channels = v[0];
      spec.in_height = v[1];
      spec.in_width = v[2];
    } else if (key == "layers") {
      spec.declared_layers = std::stoi(val);
    } else {
      throw std::invalid_argument("arch: unknown field '" + key + "'");
    }
  }
  spec.validate();
  return spec;
}

inline ArchSpec parse_arch_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("arch: cannot open spec file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_arch_text(ss.str());
}

inline std::string arch_to_text(const ArchSpec& spec) {
  std::ostringstream os;
  os << "block_type = "
     << (spec.block_type == BlockType::kBasic ? "basic" : "bottleneck")
     << "\n";
  os << "groups = " << spec.group_blocks[0] << "," << spec.group_blocks[1]
     << "," << spec.group_blocks[2] << "," << spec.group_blocks[3] << "\n";
  os << "m = " << spec.level_count << "\n";
  os << "k = " << spec.width_factor << "\n";
  os << "widths = " << spec.base_widths[0] << "," << spec.base_widths[1] << ","
     << spec.base_widths[2] << "," << spec.base_widths[3] << "\n";
  os << "policy = "
     << (spec.policy == ShortcutPolicy::kAPlusB ? "A+B" : "all-B") << "\n";
  os << "order = " << (spec.order == ActivationOrder::kPre ? "pre" : "post")
     << "\n";
  os << "classes = " << spec.num_classes << "\n";
  os << "input = " << spec.in_channels << "," << spec.in_height << ","
     << spec.in_width << "\n";
  if (spec.declared_layers) os << "layers = " << spec.declared_layers << "\n";
  return os.str();
}

}  // namespace rornet
