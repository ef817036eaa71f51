#include "shelfnet/arch/builders.hpp"

#include <iterator>

#include "shelfnet/errors.hpp"

namespace shelfnet::arch {

namespace {

LayerSpec conv(std::string name, std::int64_t in_c, std::int64_t out_c, int k, int stride, int pad, int dil,
               int out_stride) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::conv;
  l.in_c = in_c;
  l.out_c = out_c;
  l.kernel = k;
  l.stride = stride;
  l.padding = pad;
  l.dilation = dil;
  l.out_stride = out_stride;
  return l;
}

LayerSpec bn(std::string name, std::int64_t c, int out_stride) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::batch_norm;
  l.in_c = l.out_c = c;
  l.out_stride = out_stride;
  return l;
}

LayerSpec geometry(std::string name, LayerKind kind, std::int64_t c, int k, int stride, int pad, int out_stride) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = kind;
  l.in_c = l.out_c = c;
  l.kernel = k;
  l.stride = stride;
  l.padding = pad;
  l.out_stride = out_stride;
  return l;
}

void append_residual_block(std::vector<LayerSpec>& out, const BackboneSpec& spec, const std::string& p,
                           std::int64_t in_c, std::int64_t planes, int stride, int dilation, int out_stride) {
  const std::int64_t out_c = planes * spec.expansion();
  if (spec.family == BackboneFamily::resnet_bottleneck) {
    out.push_back(conv(p + "conv1", in_c, planes, 1, 1, 0, 1, out_stride / stride));
    out.push_back(bn(p + "bn1", planes, out_stride / stride));
    out.push_back(conv(p + "conv2", planes, planes, 3, stride, dilation, dilation, out_stride));
    out.push_back(bn(p + "bn2", planes, out_stride));
    out.push_back(conv(p + "conv3", planes, out_c, 1, 1, 0, 1, out_stride));
    out.push_back(bn(p + "bn3", out_c, out_stride));
  } else {
    out.push_back(conv(p + "conv1", in_c, planes, 3, stride, dilation, dilation, out_stride));
    out.push_back(bn(p + "bn1", planes, out_stride));
    out.push_back(conv(p + "conv2", planes, planes, 3, 1, dilation, dilation, out_stride));
    out.push_back(bn(p + "bn2", planes, out_stride));
  }
  if (stride != 1 || in_c != out_c) {
    out.push_back(conv(p + "downsample.conv", in_c, out_c, 1, stride, 0, 1, out_stride));
    out.push_back(bn(p + "downsample.bn", out_c, out_stride));
  }
}

Block make_block(Level level, int column, BlockKind kind, std::int64_t channels, int out_stride) {
  Block b;
  b.id = {level, column, ""};
  b.kind = kind;
  b.channels = channels;
  b.out_stride = out_stride;
  return b;
}

std::string node(Level level, int column) { return std::string(1, level_letter(level)) + std::to_string(column); }

Level below(Level l) { return static_cast<Level>(level_index(l) + 1); }

std::vector<LayerSpec> lw_up_block_layers(std::int64_t c, int out_stride) {
  std::vector<LayerSpec> out;
  out.push_back(conv("conv", c, c, 3, 1, 1, 1, out_stride));
  out.push_back(bn("bn", c, out_stride));
  out.push_back(geometry("pool", LayerKind::global_avg_pool, c, 1, 1, 0, 0));
  out.push_back(conv("attention", c, c, 1, 1, 0, 1, 0));
  return out;
}

void add_head(BlockGraph& g, const std::string& from, int column, const ShelfSpec& spec) {
  const Block& src = g.block(from);
  Block head;
  head.id = {src.id.level, column, "head"};
  head.kind = BlockKind::head;
  head.channels = spec.num_classes;
  head.out_stride = 1;
  head.upsample = src.out_stride;
  head.layers.push_back(conv("conv", src.channels, spec.num_classes, 1, 1, 0, 1, src.out_stride));
  head.layers.push_back(geometry("upsample", LayerKind::bilinear_upsample, spec.num_classes, src.out_stride,
                                 src.out_stride, 0, 1));
  g.add_block(std::move(head));
  g.add_edge({from, "head", EdgeKind::lateral, Transition::none, {}});
  g.sink = "head";
}

BlockGraph simplified_grid(const ShelfSpec& spec) {
  BlockGraph g;
  g.spec = spec;
  const bool shelf = spec.variant == Variant::shelfnet_simplified;
  for (int col = 1; col <= 4; ++col)
    for (int l = 0; l < 4; ++l) g.add_block(make_block(static_cast<Level>(l), col, BlockKind::s_block, 0, 4 << l));
  for (int col = 1; col <= 4; ++col) {
    // ShelfNet alternates down/up/down/up; GridNet goes down, down, up, up.
    const bool down = shelf ? (col % 2 == 1) : (col <= 2);
    for (int l = 0; l < 3; ++l) {
      const Level hi = static_cast<Level>(l), lo = static_cast<Level>(l + 1);
      if (down)
        g.add_edge({node(hi, col), node(lo, col), EdgeKind::down, Transition::none, {}});
      else
        g.add_edge({node(lo, col), node(hi, col), EdgeKind::up, Transition::none, {}});
    }
  }
  for (int col = 1; col < 4; ++col)
    for (int l = 0; l < 4; ++l) {
      const Level lv = static_cast<Level>(l);
      g.add_edge({node(lv, col), node(lv, col + 1), EdgeKind::lateral, Transition::none, {}});
    }
  g.source = "A1";
  g.sink = "A4";
  g.validate();
  return g;
}

}  // namespace

std::vector<LayerSpec> backbone_stage_layers(const BackboneSpec& spec, int stage) {
  if (stage < 0 || stage > 3) throw ConfigError("backbone stage out of range");
  if (spec.blocks.size() != 4) throw ConfigError("backbone needs four stage block counts");
  if (spec.blocks[static_cast<std::size_t>(stage)] < 1) throw ConfigError("backbone stage needs at least one block");
  if (spec.base_width < 1) throw ConfigError("backbone base width must be positive");

  std::vector<LayerSpec> out;
  const std::int64_t base = spec.base_width;
  std::int64_t in_c;
  if (stage == 0) {
    out.push_back(conv("stem.conv", 3, base, 7, 2, 3, 1, 2));
    out.push_back(bn("stem.bn", base, 2));
    out.push_back(geometry("stem.pool", LayerKind::max_pool, base, 3, 2, 1, 4));
    in_c = base;
  } else {
    in_c = spec.stage_channels(stage - 1);
  }
  const std::int64_t planes = base << stage;
  const int prev_stride = stage == 0 ? 4 : spec.stage_stride(stage - 1);
  const int stride = spec.stage_stride(stage) / prev_stride;
  const int first_dilation = stage == 0 ? 1 : spec.stage_dilation(stage - 1);
  const int dilation = spec.stage_dilation(stage);
  const int out_stride = spec.stage_stride(stage);
  for (int i = 0; i < spec.blocks[static_cast<std::size_t>(stage)]; ++i) {
    const std::string p = "layer" + std::to_string(stage + 1) + "." + std::to_string(i) + ".";
    append_residual_block(out, spec, p, in_c, planes, i == 0 ? stride : 1, i == 0 ? first_dilation : dilation,
                          out_stride);
    in_c = planes * spec.expansion();
  }
  if (stage == 3 && spec.classifier) {
    out.push_back(geometry("avgpool", LayerKind::global_avg_pool, in_c, 1, 1, 0, 0));
    LayerSpec fc;
    fc.name = "fc";
    fc.kind = LayerKind::linear;
    fc.in_c = in_c;
    fc.out_c = spec.classifier_classes;
    fc.bias = true;
    fc.out_stride = 0;
    out.push_back(fc);
  }
  return out;
}

BlockGraph build_backbone(const BackboneSpec& spec) {
  BlockGraph g;
  g.spec.backbone = spec;
  g.spec.variant = Variant::fcn;
  for (int s = 0; s < 4; ++s) {
    Block b = make_block(static_cast<Level>(s), 0, BlockKind::backbone_stage, spec.stage_channels(s),
                         spec.stage_stride(s));
    b.layers = backbone_stage_layers(spec, s);
    g.add_block(std::move(b));
    if (s > 0) g.add_edge({node(static_cast<Level>(s - 1), 0), node(static_cast<Level>(s), 0), EdgeKind::down,
                           Transition::none, {}});
  }
  g.source = "A0";
  g.sink = "D0";
  return g;
}

std::vector<LayerSpec> s_block_layers(const std::string& prefix, std::int64_t channels, int out_stride,
                                      bool shared) {
  std::vector<LayerSpec> out;
  LayerSpec c1 = conv("conv1", channels, channels, 3, 1, 1, 1, out_stride);
  LayerSpec c2 = conv("conv2", channels, channels, 3, 1, 1, 1, out_stride);
  if (shared) c1.sharing_group = c2.sharing_group = prefix + ".conv";
  out.push_back(c1);
  out.push_back(bn("bn1", channels, out_stride));
  out.push_back(c2);
  out.push_back(bn("bn2", channels, out_stride));
  return out;
}

std::vector<LayerSpec> transition_layers(Transition t, std::int64_t channels, int in_stride) {
  std::vector<LayerSpec> out;
  switch (t) {
    case Transition::none:
      break;
    case Transition::down_conv:
      out.push_back(conv("conv", channels, 2 * channels, 3, 2, 1, 1, in_stride * 2));
      out.push_back(bn("bn", 2 * channels, in_stride * 2));
      break;
    case Transition::up_conv: {
      if (channels % 2 != 0) throw ConfigError("up transition needs an even channel count");
      if (in_stride % 2 != 0) throw ConfigError("up transition would go below stride 1");
      LayerSpec l = conv("conv", channels, channels / 2, 3, 2, 1, 1, in_stride / 2);
      l.kind = LayerKind::conv_transpose;
      l.output_padding = 1;
      out.push_back(l);
      out.push_back(bn("bn", channels / 2, in_stride / 2));
      break;
    }
    case Transition::up_bilinear:
      if (channels % 2 != 0) throw ConfigError("up transition needs an even channel count");
      if (in_stride % 2 != 0) throw ConfigError("up transition would go below stride 1");
      out.push_back(geometry("resize", LayerKind::bilinear_upsample, channels, 2, 2, 0, in_stride / 2));
      out.push_back(conv("conv", channels, channels / 2, 1, 1, 0, 1, in_stride / 2));
      out.push_back(bn("bn", channels / 2, in_stride / 2));
      break;
  }
  return out;
}

ShelfSpec mini_shelf_spec(int num_classes, std::int64_t width, Variant variant) {
  ShelfSpec s;
  s.variant = variant;
  s.backbone = backbone_preset("mini");
  s.widths = {{Level::A, width}, {Level::B, 2 * width}, {Level::C, 4 * width}, {Level::D, 8 * width}};
  s.num_classes = num_classes;
  return s;
}

BlockGraph build_shelf(const ShelfSpec& spec) {
  if (spec.variant == Variant::shelfnet_simplified || spec.variant == Variant::gridnet_simplified)
    return simplified_grid(spec);
  if (spec.num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (spec.dropout < 0.0 || spec.dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");

  BlockGraph g = build_backbone(spec.backbone);
  g.spec = spec;
  if (spec.variant == Variant::fcn) {
    add_head(g, "D0", 1, spec);
    g.validate();
    return g;
  }
  if (spec.backbone.dilated) throw ConfigError("shelf variants need a non-dilated backbone");

  const bool lw = spec.variant == Variant::shelfnet_lw;
  const Level top = lw ? Level::B : Level::A;
  std::vector<Level> levels;
  for (int l = level_index(top); l < 4; ++l) levels.push_back(static_cast<Level>(l));
  for (Level l : levels) {
    auto it = spec.widths.find(l);
    if (it == spec.widths.end() || it->second < 1)
      throw ConfigError(std::string("missing width for level ") + level_letter(l));
    if (l != Level::D) {
      auto next = spec.widths.find(below(l));
      if (next == spec.widths.end() || next->second != 2 * it->second)
        throw ConfigError("shelf widths must double from one level to the next");
    }
  }
  const auto width = [&](Level l) { return spec.widths.at(l); };
  const auto stride = [&](Level l) { return spec.backbone.stage_stride(level_index(l)); };

  // Column 1: channel reduction of each backbone tap.
  for (Level l : levels) {
    Block b = make_block(l, 1, BlockKind::channel_reduce, width(l), stride(l));
    b.layers.push_back(conv("conv", spec.backbone.stage_channels(level_index(l)), width(l), 1, 1, 0, 1, stride(l)));
    b.layers.push_back(bn("bn", width(l), stride(l)));
    g.add_block(std::move(b));
    g.add_edge({node(l, 0), node(l, 1), EdgeKind::lateral, Transition::none, {}});
  }

  const Transition up = lw ? Transition::up_bilinear : Transition::up_conv;
  const auto decoder_block = [&](Level l, int column) {
    Block b = make_block(l, column, lw ? BlockKind::lw_up_block : BlockKind::s_block, width(l), stride(l));
    b.layers = lw ? lw_up_block_layers(width(l), stride(l))
                  : s_block_layers(node(l, column), width(l), stride(l), spec.shared_weights);
    return b;
  };
  const auto add_up_column = [&](int column) {
    for (auto it = levels.rbegin(); it != levels.rend(); ++it) {
      if (it == levels.rbegin()) continue;
      const Level lower = *std::prev(it);
      g.add_edge({node(lower, column), node(*it, column), EdgeKind::up, up,
                  transition_layers(up, width(lower), stride(lower))});
    }
  };

  // Column 2: first decoder.
  for (Level l : levels) {
    g.add_block(decoder_block(l, 2));
    g.add_edge({node(l, 1), node(l, 2), EdgeKind::lateral, Transition::none, {}});
  }
  add_up_column(2);
  if (spec.variant == Variant::segnet) {
    add_head(g, node(top, 2), 3, spec);
    g.validate();
    return g;
  }

  // Column 3: encoder. The bottom level takes only the vertical input.
  for (Level l : levels) {
    Block b = make_block(l, 3, BlockKind::s_block, width(l), stride(l));
    b.layers = s_block_layers(node(l, 3), width(l), stride(l), spec.shared_weights);
    g.add_block(std::move(b));
  }
  for (Level l : levels) {
    if (l == Level::D) continue;
    const bool skip_removed = spec.variant == Variant::wnet && (l == Level::B || l == Level::C);
    if (!skip_removed) g.add_edge({node(l, 2), node(l, 3), EdgeKind::lateral, Transition::none, {}});
    g.add_edge({node(l, 3), node(below(l), 3), EdgeKind::down, Transition::down_conv,
                transition_layers(Transition::down_conv, width(l), stride(l))});
  }

  // Column 4: second decoder. D4 merges into D3 and only relays it.
  for (Level l : levels) {
    if (l == Level::D) {
      g.add_block(make_block(l, 4, BlockKind::relay, width(l), stride(l)));
    } else {
      g.add_block(decoder_block(l, 4));
    }
    g.add_edge({node(l, 3), node(l, 4), EdgeKind::lateral, Transition::none, {}});
  }
  add_up_column(4);
  add_head(g, node(top, 4), 5, spec);
  g.validate();
  return g;
}

}  // namespace shelfnet::arch
