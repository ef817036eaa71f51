#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shelfnet/arch/graph.hpp"

namespace shelfnet::arch {

// Column-0 chain A0 -> B0 -> C0 -> D0. Stage A carries the stem
// (7x7 stride-2 conv, BN, 3x3 stride-2 max pool) plus the first residual
// stage; stage D also carries the classifier when enabled.
BlockGraph build_backbone(const BackboneSpec& spec);

// Layer list of one backbone stage (0..3), names relative to the stage block.
std::vector<LayerSpec> backbone_stage_layers(const BackboneSpec& spec, int stage);

BlockGraph build_shelf(const ShelfSpec& spec);

// Desk-scale ShelfNet on the "mini" backbone with shelf widths w, 2w, 4w, 8w.
ShelfSpec mini_shelf_spec(int num_classes = 4, std::int64_t width = 8, Variant variant = Variant::shelfnet);

// 3x3 kernel used twice (one sharing group when `shared`), two BN layers.
std::vector<LayerSpec> s_block_layers(const std::string& prefix, std::int64_t channels, int out_stride,
                                      bool shared);

// Transition layers from a block with `channels` at `in_stride`.
// Down: stride-2 3x3 conv c -> 2c + BN. Up: stride-2 3x3 transposed conv
// (output_padding 1) c -> c/2 + BN. Up bilinear: x2 resize, 1x1 conv
// c -> c/2 + BN. ReLU follows each.
std::vector<LayerSpec> transition_layers(Transition t, std::int64_t channels, int in_stride);

}  // namespace shelfnet::arch
