#include "flatconv/network.hpp"

#include <cmath>

namespace flatconv {

namespace {

WeightTensor random_weights(Shape shape, std::size_t fan_in, bool with_bias, SplitMix64& rng) {
  const double gain = 1.0 / std::sqrt(static_cast<double>(fan_in));
  const std::size_t out = shape.back();
  WeightTensor w{scale(fill_random(std::move(shape), rng.next()), gain), std::nullopt};
  if (with_bias) w.bias = scale(fill_random({out}, rng.next()), gain);
  return w;
}

Tensor shortcut(const ResidualUnit& unit, const Tensor& fold, const VideoShape& in) {
  if (!unit.projection) return fold;
  const std::size_t s = unit.stride;
  Tensor kept = fold;
  if (s > 1) {
    const Tensor grouped = reshape(fold, {in.batch, in.frames, in.width, in.height * in.channels});
    const Tensor sliced = stride_slice(grouped, 1, s);
    kept = reshape(sliced, {in.batch * sliced.dim(1), in.width, in.height, in.channels});
  }
  return conv2d(kept, *unit.projection, {s, s});
}

}  // namespace

void NetSpec::validate() const {
  if (in_channels == 0 || classes == 0 || units_per_stage == 0) {
    throw GeometryError("network channel, class and unit counts must be >= 1");
  }
  std::size_t t = frames, x = width, y = height;
  for (std::size_t i = 0; i < stage_widths.size(); ++i) {
    const std::size_t s = stage_strides[i];
    if (stage_widths[i] == 0 || s == 0) throw GeometryError("stage widths and strides must be >= 1");
    if (t % s != 0 || x % s != 0 || y % s != 0) {
      throw GeometryError("stage " + std::to_string(i + 1) + " stride " + std::to_string(s) +
                          " does not divide " + std::to_string(t) + "x" + std::to_string(x) + "x" +
                          std::to_string(y));
    }
    t /= s;
    x /= s;
    y /= s;
  }
}

VideoShape NetSpec::input_shape(std::size_t batch) const {
  return VideoShape{batch, frames, width, height, in_channels};
}

EcoPlan plan_eco3dnet(Variant variant, const NetSpec& spec) {
  spec.validate();
  EcoPlan plan;
  plan.variant = variant;
  plan.spec = spec;
  SplitMix64 rng(spec.seed);
  std::size_t channels = spec.in_channels;

  for (std::size_t stage = 0; stage < spec.stage_widths.size(); ++stage) {
    for (std::size_t u = 0; u < spec.units_per_stage; ++u) {
      UnitPlan unit;
      unit.in_channels = channels;
      unit.stride = u == 0 ? spec.stage_strides[stage] : 1;

      BlockConfig cfg;
      cfg.variant = variant;
      cfg.in_channels = channels;
      cfg.out_channels = spec.stage_widths[stage];
      cfg.spatial_kernel = spec.spatial_kernel;
      cfg.temporal_kernel = spec.temporal_kernel;
      cfg.stride = unit.stride;
      cfg.linear_mode = spec.linear_mode;
      cfg.seed = rng.next();
      unit.first = cfg;

      // ProposedCat doubles the width, so the second block reads 2S channels.
      cfg.in_channels = variant == Variant::ProposedCat ? 2 * cfg.out_channels : cfg.out_channels;
      cfg.stride = 1;
      cfg.seed = rng.next();
      unit.second = cfg;

      unit.out_channels = cfg.in_channels;
      unit.projection = unit.out_channels != channels || unit.stride != 1;
      plan.units.push_back(unit);
      channels = unit.out_channels;
    }
  }
  return plan;
}

std::vector<VideoShape> EcoPlan::stage_shapes(const VideoShape& in) const {
  std::vector<VideoShape> shapes;
  VideoShape cur = in;
  for (std::size_t i = 0; i < units.size(); ++i) {
    cur = block_output_shape(units[i].second, block_output_shape(units[i].first, cur));
    if ((i + 1) % spec.units_per_stage == 0) shapes.push_back(cur);
  }
  return shapes;
}

std::size_t EcoPlan::param_count(bool include_classifier) const {
  const std::size_t bias = spec.linear_mode ? 0 : 1;
  std::size_t n = 0;
  for (const auto& unit : units) {
    n += block_param_count(unit.first) + block_param_count(unit.second);
    if (unit.projection) n += unit.in_channels * unit.out_channels + bias * unit.out_channels;
  }
  if (include_classifier) n += feature_channels() * spec.classes + spec.classes;
  return n;
}

std::uint64_t EcoPlan::flops_count(const VideoShape& in, bool include_classifier) const {
  std::uint64_t flops = 0;
  VideoShape cur = in;
  for (const auto& unit : units) {
    const VideoShape mid = block_output_shape(unit.first, cur);
    const VideoShape out = block_output_shape(unit.second, mid);
    flops += block_flops(unit.first, cur) + block_flops(unit.second, mid);
    if (unit.projection) {
      const std::uint64_t positions =
          static_cast<std::uint64_t>(out.batch) * out.frames * out.width * out.height;
      flops += 2ULL * cur.channels * out.channels * positions;
    }
    cur = out;
  }
  if (include_classifier) flops += 2ULL * cur.batch * cur.channels * spec.classes;
  return flops;
}

Network::Network(Variant variant, NetSpec spec) : plan_(plan_eco3dnet(variant, spec)) {
  SplitMix64 rng(plan_.spec.seed ^ 0xEC0EC0ULL);
  const bool with_bias = !plan_.spec.linear_mode;
  for (const auto& unit : plan_.units) {
    std::optional<WeightTensor> projection;
    if (unit.projection) {
      projection = random_weights({1, 1, unit.in_channels, unit.out_channels}, unit.in_channels,
                                  with_bias, rng);
    }
    units_.push_back(ResidualUnit{Block(unit.first), Block(unit.second), std::move(projection), unit.stride});
  }
  classifier_ = random_weights({1, feature_channels(), plan_.spec.classes}, feature_channels(), true, rng);
}

Network build_eco3dnet(Variant variant, const NetSpec& spec) { return Network(variant, spec); }

std::size_t Network::feature_channels() const { return plan_.feature_channels(); }

NetOutput Network::forward(const Tensor& x, const VideoShape& in) const {
  NetOutput out;
  Tensor cur = reshape(x, in.frame_fold());
  VideoShape shape = in;
  const std::size_t per_stage = plan_.spec.units_per_stage;
  for (std::size_t i = 0; i < units_.size(); ++i) {
    const auto& unit = units_[i];
    const BlockOutput a = unit.first.forward(cur, shape);
    const BlockOutput b = unit.second.forward(a.tensor, a.shape);
    const Tensor sum = add(b.tensor, shortcut(unit, cur, shape));
    cur = plan_.spec.linear_mode ? sum : relu(sum);
    shape = b.shape;
    if ((i + 1) % per_stage == 0) out.stage_shapes.push_back(shape);
  }

  // Global average pool over T', X', Y'.
  const std::size_t positions = shape.frames * shape.width * shape.height;
  const auto src = cur.data();
  Tensor pooled({shape.batch, 1, shape.channels});
  auto dst = pooled.mutable_data();
  for (std::size_t b = 0; b < shape.batch; ++b) {
    for (std::size_t p = 0; p < positions; ++p) {
      for (std::size_t c = 0; c < shape.channels; ++c) {
        dst[b * shape.channels + c] += src[(b * positions + p) * shape.channels + c];
      }
    }
  }
  for (auto& v : dst) v /= static_cast<double>(positions);

  const Tensor logits = conv1d(pooled, classifier_, 1);
  out.logits = reshape(logits, {shape.batch, plan_.spec.classes});
  return out;
}

std::size_t Network::param_count(bool include_classifier) const {
  std::size_t n = 0;
  for (const auto& unit : units_) {
    n += unit.first.param_count() + unit.second.param_count();
    if (unit.projection) n += unit.projection->element_count();
  }
  if (include_classifier) n += classifier_.element_count();
  return n;
}

}  // namespace flatconv
