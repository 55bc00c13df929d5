#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "flatconv/blocks.hpp"

namespace flatconv {

// Geometry of the residual 3D tail of ECO-Lite: three stages of residual
// units, each unit holding two 3D-convolution replacements.
struct NetSpec {
  std::size_t in_channels = 96;
  std::array<std::size_t, 3> stage_widths{128, 256, 512};
  std::array<std::size_t, 3> stage_strides{1, 2, 2};
  std::size_t units_per_stage = 2;
  std::size_t frames = 16;  // N
  std::size_t width = 28;
  std::size_t height = 28;
  std::size_t classes = 400;
  std::size_t spatial_kernel = 3;
  std::size_t temporal_kernel = 3;
  bool linear_mode = false;
  std::uint64_t seed = 0;

  void validate() const;
  VideoShape input_shape(std::size_t batch) const;
};

// Configuration of one residual unit, before any weight is allocated.
struct UnitPlan {
  BlockConfig first;
  BlockConfig second;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  bool projection = false;  // pointwise strided shortcut when shapes change
};

// Allocation-free layout of the 3D-Net; the cost model for full-size
// networks runs on this.
struct EcoPlan {
  Variant variant = Variant::Conv3D;
  NetSpec spec;
  std::vector<UnitPlan> units;

  std::size_t feature_channels() const { return units.back().out_channels; }
  std::vector<VideoShape> stage_shapes(const VideoShape& in) const;
  std::size_t param_count(bool include_classifier = false) const;
  std::uint64_t flops_count(const VideoShape& in, bool include_classifier = true) const;
};

EcoPlan plan_eco3dnet(Variant variant, const NetSpec& spec);

struct ResidualUnit {
  Block first;
  Block second;
  std::optional<WeightTensor> projection;  // [1, 1, Cin, Cout] pointwise
  std::size_t stride = 1;
};

struct NetOutput {
  Tensor logits;                         // [B, classes]
  std::vector<VideoShape> stage_shapes;  // logical output of every stage
};

class Network {
 public:
  Network(Variant variant, NetSpec spec);

  Variant variant() const { return plan_.variant; }
  const NetSpec& spec() const { return plan_.spec; }
  const EcoPlan& plan() const { return plan_; }
  const std::vector<ResidualUnit>& units() const { return units_; }
  std::size_t feature_channels() const;

  NetOutput forward(const Tensor& x, const VideoShape& in) const;

  // Counts allocated weight elements.
  std::size_t param_count(bool include_classifier = false) const;
  std::uint64_t flops_count(const VideoShape& in, bool include_classifier = true) const {
    return plan_.flops_count(in, include_classifier);
  }

 private:
  EcoPlan plan_;
  std::vector<ResidualUnit> units_;
  WeightTensor classifier_;  // [1, C, classes]
};

Network build_eco3dnet(Variant variant, const NetSpec& spec);

}  // namespace flatconv
