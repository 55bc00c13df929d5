#include "flatconv/blocks.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace flatconv {

namespace {

struct VariantName {
  Variant variant;
  std::string_view name;
};

constexpr std::array<VariantName, 8> kNames{{{Variant::Conv3D, "Conv3D"},
                                             {Variant::ProposedAdd, "ProposedAdd"},
                                             {Variant::ProposedCat, "ProposedCat"},
                                             {Variant::R2Plus1D, "R2Plus1D"},
                                             {Variant::P3D_A, "P3D_A"},
                                             {Variant::P3D_B, "P3D_B"},
                                             {Variant::P3D_C, "P3D_C"},
                                             {Variant::Rank1, "Rank1"}}};

bool is_proposed(Variant v) { return v == Variant::ProposedAdd || v == Variant::ProposedCat; }

// Every s-th frame of a [B*T, X, Y, C] fold.
Tensor subsample_frames(const Tensor& fold, const VideoShape& vs, std::size_t s) {
  if (s == 1) return fold;
  const Tensor grouped = reshape(fold, {vs.batch, vs.frames, vs.width, vs.height * vs.channels});
  const Tensor kept = stride_slice(grouped, 1, s);
  return reshape(kept, {vs.batch * kept.dim(1), vs.width, vs.height, vs.channels});
}

// Every s-th frame of a [B, T, P, C] tensor.
Tensor subsample_time(const Tensor& t, std::size_t s) { return stride_slice(t, 1, s); }

KernelSpec kernel(std::size_t t, std::size_t w, std::size_t h, std::size_t c, std::size_t s,
                  std::array<std::size_t, 3> strides) {
  KernelSpec k;
  k.t = t;
  k.w = w;
  k.h = h;
  k.c = c;
  k.out_channels = s;
  k.strides = strides;
  return k;
}

std::uint64_t conv_flops(const KernelSpec& k, std::uint64_t positions) {
  return 2ULL * k.taps() * k.c * k.out_channels * positions;
}

}  // namespace

std::string_view variant_name(Variant v) {
  for (const auto& n : kNames) {
    if (n.variant == v) return n.name;
  }
  return "unknown";
}

std::optional<Variant> parse_variant(std::string_view name) {
  for (const auto& n : kNames) {
    if (n.name.size() != name.size()) continue;
    if (std::equal(n.name.begin(), n.name.end(), name.begin(), [](char a, char b) {
          return std::tolower(static_cast<unsigned char>(a)) ==
                 std::tolower(static_cast<unsigned char>(b));
        })) {
      return n.variant;
    }
  }
  return std::nullopt;
}

void BlockConfig::validate() const {
  if (in_channels == 0 || out_channels == 0) throw GeometryError("channel counts must be >= 1");
  if (spatial_kernel % 2 == 0 || temporal_kernel % 2 == 0) {
    throw GeometryError("kernel extents must be odd (d=" + std::to_string(spatial_kernel) +
                        ", t=" + std::to_string(temporal_kernel) + ")");
  }
  if (stride == 0) throw GeometryError("stride must be >= 1");
  if (variant_name(variant) == "unknown") throw Error("unknown block variant");
}

std::size_t r2plus1d_mid_channels(std::size_t in_channels, std::size_t out_channels,
                                  std::size_t d, std::size_t t) {
  const std::uint64_t full = static_cast<std::uint64_t>(t) * d * d * in_channels * out_channels;
  const std::uint64_t per_mid = static_cast<std::uint64_t>(d) * d * in_channels + t * out_channels;
  return std::max<std::size_t>(1, full / per_mid);
}

std::vector<SubConvSpec> block_inventory(const BlockConfig& config) {
  config.validate();
  const std::size_t cin = config.in_channels;
  const std::size_t out = config.out_channels;
  const std::size_t d = config.spatial_kernel;
  const std::size_t t = config.temporal_kernel;
  const std::size_t s = config.stride;
  const bool bias = !config.linear_mode;
  std::vector<SubConvSpec> inv;
  auto push = [&](std::string name, KernelSpec k, Shape layout) {
    k.bias = bias;
    inv.push_back(SubConvSpec{std::move(name), k, std::move(layout)});
  };

  switch (config.variant) {
    case Variant::Conv3D:
      push("kernel", kernel(t, d, d, cin, out, {s, s, s}), {t, d, d, cin, out});
      break;
    case Variant::ProposedAdd:
    case Variant::ProposedCat:
      push("spatial", kernel(1, d, d, cin, out, {1, s, s}), {d, d, cin, out});
      // Learnable temporal pooling of the spatial branch, only when striding.
      if (s > 1) push("temporal_pool", kernel(1, 1, 1, out, out, {s, 1, 1}), {1, 1, out, out});
      push("temporal", kernel(t, 1, 1, cin, out, {s, s, s}), {t, 1, cin, out});
      break;
    case Variant::R2Plus1D: {
      const std::size_t mid = r2plus1d_mid_channels(cin, out, d, t);
      push("spatial", kernel(1, d, d, cin, mid, {1, s, s}), {d, d, cin, mid});
      push("temporal", kernel(t, 1, 1, mid, out, {s, 1, 1}), {t, 1, mid, out});
      break;
    }
    case Variant::P3D_A:
    case Variant::P3D_C:
      push("spatial", kernel(1, d, d, cin, out, {1, s, s}), {d, d, cin, out});
      push("temporal", kernel(t, 1, 1, out, out, {s, 1, 1}), {t, 1, out, out});
      break;
    case Variant::P3D_B:
      push("spatial", kernel(1, d, d, cin, out, {1, s, s}), {d, d, cin, out});
      push("temporal", kernel(t, 1, 1, cin, out, {s, 1, 1}), {t, 1, cin, out});
      break;
    case Variant::Rank1:
      push("horizontal", kernel(1, d, 1, cin, out, {1, s, 1}), {d, 1, cin, out});
      push("vertical", kernel(1, 1, d, out, out, {1, 1, s}), {d, out, out});
      push("temporal", kernel(t, 1, 1, out, out, {s, 1, 1}), {t, 1, out, out});
      break;
  }
  return inv;
}

VideoShape block_output_shape(const BlockConfig& config, const VideoShape& in) {
  config.validate();
  in.validate();
  if (in.channels != config.in_channels) {
    throw DimensionError("block expects " + std::to_string(config.in_channels) +
                         " input channels, got " + std::to_string(in.channels));
  }
  const std::size_t s = config.stride;
  if (s > 1 && (in.frames % s != 0 || in.width % s != 0 || in.height % s != 0)) {
    throw GeometryError("stride " + std::to_string(s) + " requires T, X, Y divisible by it; got " +
                        to_string(in));
  }
  const std::size_t channels =
      config.variant == Variant::ProposedCat ? 2 * config.out_channels : config.out_channels;
  return VideoShape{in.batch, in.frames / s, in.width / s, in.height / s, channels};
}

std::size_t block_param_count(const BlockConfig& config) {
  std::size_t n = 0;
  for (const auto& sc : block_inventory(config)) n += sc.spec.weight_count();
  return n;
}

std::uint64_t block_flops(const BlockConfig& config, const VideoShape& in) {
  const VideoShape out = block_output_shape(config, in);
  const auto inv = block_inventory(config);
  auto spec = [&inv](std::string_view name) -> const KernelSpec& {
    return std::find_if(inv.begin(), inv.end(), [&](const SubConvSpec& s) { return s.name == name; })->spec;
  };
  // Output positions at full frame rate and at the strided frame rate.
  const std::uint64_t all_frames = static_cast<std::uint64_t>(in.batch) * in.frames * out.width * out.height;
  const std::uint64_t kept_frames = static_cast<std::uint64_t>(out.batch) * out.frames * out.width * out.height;

  switch (config.variant) {
    case Variant::Conv3D:
      return conv_flops(spec("kernel"), kept_frames);
    case Variant::ProposedAdd:
    case Variant::ProposedCat: {
      std::uint64_t flops = conv_flops(spec("spatial"), all_frames) + conv_flops(spec("temporal"), kept_frames);
      if (config.stride > 1) flops += conv_flops(spec("temporal_pool"), kept_frames);
      return flops;
    }
    case Variant::R2Plus1D:
    case Variant::P3D_A:
    case Variant::P3D_C:
      return conv_flops(spec("spatial"), all_frames) + conv_flops(spec("temporal"), kept_frames);
    case Variant::P3D_B:
      return conv_flops(spec("spatial"), kept_frames) + conv_flops(spec("temporal"), kept_frames);
    case Variant::Rank1: {
      // The horizontal pass has not yet strided the vertical axis.
      const std::uint64_t half_strided = all_frames / out.height * in.height;
      return conv_flops(spec("horizontal"), half_strided) + conv_flops(spec("vertical"), all_frames) +
             conv_flops(spec("temporal"), kept_frames);
    }
  }
  return 0;
}

Block::Block(BlockConfig config) : config_(config) {
  SplitMix64 rng(config_.seed);
  for (auto& sc : block_inventory(config_)) {
    const double gain = 1.0 / std::sqrt(static_cast<double>(sc.spec.taps() * sc.spec.c));
    WeightTensor w{scale(fill_random(sc.layout, rng.next()), gain), std::nullopt};
    if (sc.spec.bias) w.bias = scale(fill_random({sc.spec.out_channels}, rng.next()), gain);
    convs_.push_back(SubConv{std::move(sc.name), sc.spec, std::move(w)});
  }
}

Block build_block(const BlockConfig& config) { return Block(config); }

const SubConv& Block::sub_conv(std::string_view name) const {
  for (const auto& c : convs_) {
    if (c.name == name) return c;
  }
  throw Error("block " + std::string(variant_name(config_.variant)) + " has no sub-convolution '" +
              std::string(name) + "'");
}

SubConv& Block::mutable_sub_conv(std::string_view name) {
  return const_cast<SubConv&>(std::as_const(*this).sub_conv(name));
}

void Block::set_weights(std::string_view name, Tensor weights) {
  auto& conv = mutable_sub_conv(name);
  if (weights.shape() != conv.weights.weights.shape()) {
    throw ShapeError("weights for '" + std::string(name) + "' must have shape " +
                     to_string(conv.weights.weights.shape()) + ", got " + to_string(weights.shape()));
  }
  conv.weights.weights = std::move(weights);
}

std::size_t Block::output_channels() const {
  return config_.variant == Variant::ProposedCat ? 2 * config_.out_channels : config_.out_channels;
}

VideoShape Block::output_shape(const VideoShape& in) const { return block_output_shape(config_, in); }

Tensor Block::activate(const Tensor& t) const { return config_.linear_mode ? t : relu(t); }

Tensor Block::spatial_branch(const Tensor& fold, const VideoShape& in) const {
  const std::size_t s = config_.stride;
  const Tensor frames = activate(conv2d(fold, sub_conv("spatial").weights, {s, s}));
  Tensor flat = reshape(frames, {in.batch, in.frames, frames.dim(1) * frames.dim(2), frames.dim(3)});
  if (s > 1) flat = activate(conv2d(flat, sub_conv("temporal_pool").weights, {s, 1}));
  return flat;
}

Tensor Block::temporal_branch(const Tensor& fold, const VideoShape& in) const {
  const std::size_t s = config_.stride;
  const std::size_t pixel_stride = config_.linear_pixel_stride_fault ? s : s * s;
  const Tensor pixels = reshape(fold, in.pixel_fold());
  return activate(conv2d(pixels, sub_conv("temporal").weights, {s, pixel_stride}));
}

std::pair<Tensor, Tensor> Block::branch_outputs(const Tensor& x, const VideoShape& in) const {
  if (!is_proposed(config_.variant)) {
    throw Error("branch_outputs is only defined for the proposed variants");
  }
  output_shape(in);
  if (x.size() != in.elements()) {
    throw ShapeError("input holds " + std::to_string(x.size()) + " values, video shape " +
                     to_string(in) + " needs " + std::to_string(in.elements()));
  }
  const Tensor fold = reshape(x, in.frame_fold());
  return {spatial_branch(fold, in), temporal_branch(fold, in)};
}

BlockOutput Block::forward(const Tensor& x, const VideoShape& in) const {
  const VideoShape out = output_shape(in);
  if (x.size() != in.elements()) {
    throw ShapeError("input holds " + std::to_string(x.size()) + " values, video shape " +
                     to_string(in) + " needs " + std::to_string(in.elements()));
  }
  const std::size_t s = config_.stride;
  const Tensor fold = reshape(x, in.frame_fold());
  Tensor result;  // [B, T', X'*Y', S'] or the frame fold

  switch (config_.variant) {
    case Variant::Conv3D: {
      const Tensor y = conv3d_oracle(reshape(fold, in.as_5d()), sub_conv("kernel").weights, {s, s, s});
      result = activate(y);
      break;
    }
    case Variant::ProposedAdd:
    case Variant::ProposedCat: {
      auto [spatial, temporal] = branch_outputs(fold, in);
      if (spatial.shape() != temporal.shape()) {
        throw GeometryError("branch shape mismatch: spatial " + to_string(spatial.shape()) +
                            " vs temporal " + to_string(temporal.shape()));
      }
      result = config_.variant == Variant::ProposedAdd ? add(spatial, temporal)
                                                        : concat_last(spatial, temporal);
      break;
    }
    case Variant::R2Plus1D:
    case Variant::P3D_A:
    case Variant::P3D_C: {
      const Tensor frames = activate(conv2d(fold, sub_conv("spatial").weights, {s, s}));
      const Tensor flat =
          reshape(frames, {in.batch, in.frames, frames.dim(1) * frames.dim(2), frames.dim(3)});
      const Tensor temporal = activate(conv2d(flat, sub_conv("temporal").weights, {s, 1}));
      result = config_.variant == Variant::P3D_C ? add(temporal, subsample_time(flat, s)) : temporal;
      break;
    }
    case Variant::P3D_B: {
      const Tensor kept = subsample_frames(fold, in, s);
      const Tensor frames = activate(conv2d(kept, sub_conv("spatial").weights, {s, s}));
      const Tensor spatial =
          reshape(frames, {in.batch, out.frames, out.width * out.height, out.channels});
      const Tensor grid = stride_slice(stride_slice(fold, 1, s), 2, s);
      const Tensor pixels = reshape(grid, {in.batch, in.frames, out.width * out.height, in.channels});
      const Tensor temporal = activate(conv2d(pixels, sub_conv("temporal").weights, {s, 1}));
      result = add(spatial, temporal);
      break;
    }
    case Variant::Rank1: {
      const Tensor h = activate(conv2d(fold, sub_conv("horizontal").weights, {s, 1}));
      const Tensor rows = reshape(h, {h.dim(0) * h.dim(1), h.dim(2), h.dim(3)});
      const Tensor v = activate(conv1d(rows, sub_conv("vertical").weights, s));
      const Tensor flat = reshape(v, {in.batch, in.frames, out.width * out.height, out.channels});
      result = activate(conv2d(flat, sub_conv("temporal").weights, {s, 1}));
      break;
    }
  }
  return {reshape(result, out.frame_fold()), out};
}

std::size_t Block::param_count() const {
  std::size_t n = 0;
  for (const auto& c : convs_) n += c.weights.element_count();
  return n;
}

std::uint64_t Block::flops_count(const VideoShape& in) const { return block_flops(config_, in); }

}  // namespace flatconv
