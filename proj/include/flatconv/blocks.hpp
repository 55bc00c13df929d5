#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "flatconv/conv.hpp"
#include "flatconv/tensor.hpp"

namespace flatconv {

enum class Variant { Conv3D, ProposedAdd, ProposedCat, R2Plus1D, P3D_A, P3D_B, P3D_C, Rank1 };

inline constexpr std::array<Variant, 8> kAllVariants{
    Variant::Conv3D, Variant::ProposedAdd, Variant::ProposedCat, Variant::R2Plus1D,
    Variant::P3D_A,  Variant::P3D_B,       Variant::P3D_C,       Variant::Rank1};

std::string_view variant_name(Variant v);
std::optional<Variant> parse_variant(std::string_view name);

struct BlockConfig {
  Variant variant = Variant::Conv3D;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;   // S
  std::size_t spatial_kernel = 3;   // d, with w == h == d
  std::size_t temporal_kernel = 3;  // t
  std::size_t stride = 1;           // applied to T, X and Y alike
  bool linear_mode = false;         // no bias, no rectifier
  std::uint64_t seed = 0;

  // Fault injection for mutation tests: the temporal branch of the proposed
  // blocks strides the flattened pixel axis by s instead of s^2.
  bool linear_pixel_stride_fault = false;

  void validate() const;
};

// Intermediate width M of the (2+1)D factorization that keeps the parameter
// count of a t x d x d convolution.
std::size_t r2plus1d_mid_channels(std::size_t in_channels, std::size_t out_channels,
                                  std::size_t d, std::size_t t);

// One convolution inside a block. `spec` describes the filter in (t, w, h, c)
// terms; `weights` holds it in the layout the executing kernel consumes.
struct SubConv {
  std::string name;
  KernelSpec spec;
  WeightTensor weights;
};

// Allocation-free description of one sub-convolution.
struct SubConvSpec {
  std::string name;
  KernelSpec spec;
  Shape layout;  // weight tensor shape consumed by the kernel
};

// Sub-convolution inventory of a variant, in execution order.
std::vector<SubConvSpec> block_inventory(const BlockConfig& config);

// Analytic cost model: no weights are allocated.
VideoShape block_output_shape(const BlockConfig& config, const VideoShape& in);
std::size_t block_param_count(const BlockConfig& config);
std::uint64_t block_flops(const BlockConfig& config, const VideoShape& in);

struct BlockOutput {
  Tensor tensor;  // stored as the frame fold [B*T', X', Y', S']
  VideoShape shape;
};

class Block {
 public:
  explicit Block(BlockConfig config);

  const BlockConfig& config() const { return config_; }
  const std::vector<SubConv>& sub_convs() const { return convs_; }
  const SubConv& sub_conv(std::string_view name) const;

  // Replaces the weights of one sub-convolution. The shape must match.
  void set_weights(std::string_view name, Tensor weights);

  std::size_t output_channels() const;

  // Logical output shape; throws GeometryError on invalid input geometry.
  VideoShape output_shape(const VideoShape& in) const;

  // x may have any storage shape holding in.elements() values in [B,T,X,Y,C]
  // row-major order.
  BlockOutput forward(const Tensor& x, const VideoShape& in) const;

  // Proposed variants only: (spatial, temporal) branch outputs, each stored
  // as [B, T', X'*Y', S], before fusion.
  std::pair<Tensor, Tensor> branch_outputs(const Tensor& x, const VideoShape& in) const;

  std::size_t param_count() const;
  std::uint64_t flops_count(const VideoShape& in) const;

 private:
  SubConv& mutable_sub_conv(std::string_view name);
  Tensor activate(const Tensor& t) const;
  Tensor spatial_branch(const Tensor& fold, const VideoShape& in) const;
  Tensor temporal_branch(const Tensor& fold, const VideoShape& in) const;

  BlockConfig config_;
  std::vector<SubConv> convs_;
};

Block build_block(const BlockConfig& config);

}  // namespace flatconv
