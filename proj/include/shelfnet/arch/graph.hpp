#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace shelfnet::arch {

// Spatial levels, finest first. Level A sits at output stride 4.
enum class Level { A = 0, B = 1, C = 2, D = 3 };

char level_letter(Level level);
Level level_from_letter(char c);
int level_index(Level level);

enum class BlockKind { backbone_stage, channel_reduce, s_block, relay, head, lw_up_block };
enum class EdgeKind { lateral, down, up };
// How an edge changes resolution on the way to its target block.
enum class Transition { none, down_conv, up_conv, up_bilinear };
enum class LayerKind { conv, conv_transpose, batch_norm, linear, max_pool, bilinear_upsample, global_avg_pool };

std::string to_string(BlockKind kind);
std::string to_string(EdgeKind kind);
std::string to_string(Transition t);
std::string to_string(LayerKind kind);
BlockKind block_kind_from_string(const std::string& s);
EdgeKind edge_kind_from_string(const std::string& s);
Transition transition_from_string(const std::string& s);
LayerKind layer_kind_from_string(const std::string& s);

// One parameterized (or geometry-only) layer. `out_stride` is the stride of
// the layer's output relative to the network input; analysis uses it to
// derive feature-map sizes (0 marks a globally pooled 1x1 map). Layers
// sharing a `sharing_group` share weights.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::conv;
  std::int64_t in_c = 0;
  std::int64_t out_c = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int output_padding = 0;
  int out_stride = 1;
  bool bias = false;
  std::string sharing_group;

  bool operator==(const LayerSpec&) const = default;
};

struct BlockId {
  Level level = Level::A;
  int column = 0;
  std::string role;  // "head" for the prediction head, empty otherwise

  std::string str() const;
  bool operator==(const BlockId&) const = default;
};

struct Block {
  BlockId id;
  BlockKind kind = BlockKind::s_block;
  std::int64_t channels = 0;  // output channels; 0 for unweighted comparison graphs
  int out_stride = 1;
  int upsample = 1;           // head only: bilinear factor back to input resolution
  std::vector<LayerSpec> layers;

  std::string name() const { return id.str(); }
  bool operator==(const Block&) const = default;
};

struct Edge {
  std::string from;
  std::string to;
  EdgeKind kind = EdgeKind::lateral;
  Transition transition = Transition::none;
  std::vector<LayerSpec> layers;

  std::string name() const { return from + "-" + to; }
  bool operator==(const Edge&) const = default;
};

enum class BackboneFamily { resnet_basic, resnet_bottleneck, mini };
std::string to_string(BackboneFamily f);
BackboneFamily backbone_family_from_string(const std::string& s);

struct BackboneSpec {
  std::string name = "resnet18";
  BackboneFamily family = BackboneFamily::resnet_basic;
  std::vector<int> blocks{2, 2, 2, 2};
  int base_width = 64;
  bool dilated = false;
  // The ImageNet classifier (global pool + 1000-way linear with bias).
  // Counted for backbone cost rows; never executed by segmentation nets.
  bool classifier = true;
  int classifier_classes = 1000;

  int expansion() const { return family == BackboneFamily::resnet_bottleneck ? 4 : 1; }
  // Output channels of stage i (0..3).
  std::int64_t stage_channels(int stage) const;
  // Output stride of stage i: 4, 8, 16, 32, or 4, 8, 8, 8 when dilated.
  int stage_stride(int stage) const;
  int stage_dilation(int stage) const;

  bool operator==(const BackboneSpec&) const = default;
};

// Named presets: resnet18, resnet34, resnet50, resnet101, mini.
BackboneSpec backbone_preset(const std::string& name, bool dilated = false);

enum class Variant { fcn, segnet, wnet, shelfnet, shelfnet_lw, shelfnet_simplified, gridnet_simplified };
std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct ShelfSpec {
  Variant variant = Variant::shelfnet;
  BackboneSpec backbone;
  std::map<Level, std::int64_t> widths{{Level::A, 64}, {Level::B, 128}, {Level::C, 256}, {Level::D, 512}};
  int num_classes = 21;
  bool shared_weights = true;
  double dropout = 0.1;

  bool operator==(const ShelfSpec&) const = default;
};

// Directed acyclic block graph with (level, column) coordinates.
class BlockGraph {
 public:
  BlockGraph() = default;

  void add_block(Block block);
  void add_edge(Edge edge);

  const std::vector<Block>& blocks() const { return blocks_; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::vector<Edge>& mutable_edges() { return edges_; }
  bool has_block(const std::string& name) const { return index_.count(name) != 0; }
  const Block& block(const std::string& name) const;
  std::size_t block_index(const std::string& name) const;

  // Edges into / out of a block, in insertion order.
  std::vector<const Edge*> in_edges(const std::string& name) const;
  std::vector<const Edge*> out_edges(const std::string& name) const;

  // Kahn order; ties broken by insertion order so the result is stable.
  std::vector<std::string> topological_order() const;

  // Throws ConfigError on cycles, unreachable blocks, or edges whose kind
  // disagrees with the level/column geometry.
  void validate() const;

  void remove_edge(const std::string& from, const std::string& to);

  std::string source;
  std::string sink;
  ShelfSpec spec;

  bool operator==(const BlockGraph& o) const {
    return blocks_ == o.blocks_ && edges_ == o.edges_ && source == o.source && sink == o.sink && spec == o.spec;
  }

 private:
  std::vector<Block> blocks_;
  std::vector<Edge> edges_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace shelfnet::arch
