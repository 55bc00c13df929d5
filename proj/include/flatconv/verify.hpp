#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "flatconv/blocks.hpp"
#include "flatconv/network.hpp"

namespace flatconv::verify {

struct CaseResult {
  std::string suite;
  std::string config;
  bool passed = true;
  double max_abs_diff = 0.0;
  double rel_diff = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct SuiteReport {
  std::string name;
  std::size_t cases_run = 0;
  std::vector<CaseResult> cases;  // config order
  double wall_seconds = 0.0;

  bool passed() const;
  std::vector<CaseResult> failures() const;
};

// max|a - b| / (max|a| + 1e-30)
double relative_diff(const Tensor& reference, const Tensor& candidate);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

// Twelve small (B, T, X, Y, C) points with even T, X, Y so that s = 2 applies.
std::vector<VideoShape> default_shape_grid();

// One separable configuration: K[tau, a, b] = q[tau] * u[a] * v[b] applied
// channel-wise (identity channel mixing).
struct SeparableCase {
  VideoShape shape;
  std::vector<double> u;  // horizontal taps (X)
  std::vector<double> v;  // vertical taps (Y)
  std::vector<double> q;  // temporal taps (T)
  std::size_t stride = 1;
  std::uint64_t input_seed = 0;
};

std::vector<SeparableCase> random_separable_cases(std::uint64_t seed, std::size_t count);

// Rank1 block vs conv3d_oracle with the outer-product kernel, <= 1e-8 relative.
SuiteReport check_separable_equivalence(const std::vector<SeparableCase>& cases);

// Conv3D with a [1, d, d] kernel vs the spatial branch on the [B*T, X, Y, C]
// fold, and a [t, 1, 1] kernel vs the temporal branch on the [B, T, X*Y, C]
// fold, both at s = 1 and <= 1e-10 relative.
SuiteReport check_spatial_only_equivalence(std::uint64_t seed, std::size_t count);

// ProposedAdd with zeroed temporal weights equals its spatial branch, bit-exactly.
SuiteReport check_zero_branch_reduction(std::uint64_t seed, const std::vector<VideoShape>& grid);

// Every variant x s in {1, 2} x grid: logical output shape is (B, T/s, X/s, Y/s, S or 2S).
SuiteReport check_shape_contracts(std::uint64_t seed, const std::vector<VideoShape>& grid);

// Proposed variants: spatial and temporal branch outputs have equal shapes.
SuiteReport check_branch_shapes(std::uint64_t seed, const std::vector<VideoShape>& grid,
                                bool inject_pixel_stride_fault = false);

// Full network forward under RankTracker: 4 for factorized variants, 5 for Conv3D.
SuiteReport check_rank_ceiling(std::uint64_t seed, const NetSpec& spec);
NetSpec tiny_net_spec(std::uint64_t seed);

// Runs forward with the multiply counter active and returns the multiplies.
std::uint64_t count_macs_instrumented(const Block& block, const VideoShape& shape,
                                      std::uint64_t input_seed = 1);
std::uint64_t count_macs_instrumented(const Network& net, const VideoShape& shape,
                                      std::uint64_t input_seed = 1);

// 2 * instrumented MACs == analytic flops_count for blocks and networks.
SuiteReport check_mac_counts(std::uint64_t seed, const std::vector<VideoShape>& grid);

// Forward outputs bit-identical for 1, 2 and 8 workers.
SuiteReport check_determinism(std::uint64_t seed, const std::vector<VideoShape>& grid);

struct VerifyOptions {
  std::uint64_t seed = 7;
  std::vector<VideoShape> grid = default_shape_grid();
  std::size_t separable_cases = 60;
  std::size_t factor_cases = 20;
  std::string suite = "all";  // all | equivalence | shape | rank | macs | determinism
};

// Valid values for VerifyOptions::suite.
const std::vector<std::string>& suite_groups();

std::vector<SuiteReport> run_all_suites(const VerifyOptions& options);

// One JSON object per case.
void write_json_lines(std::ostream& os, const std::vector<SuiteReport>& reports);

}  // namespace flatconv::verify
