#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "flatconv/blocks.hpp"
#include "flatconv/network.hpp"

namespace flatconv::bench {

struct BenchRecord {
  Variant variant = Variant::Conv3D;
  VideoShape shape;
  std::size_t params = 0;
  std::uint64_t flops = 0;
  std::size_t reps = 0;
  std::size_t warmup = 0;
  double mean_ms = 0.0;
  double std_ms = 0.0;
  double throughput_fps = 0.0;  // B * T * reps / timed seconds
};

struct BenchConfig {
  std::vector<Variant> variants{kAllVariants.begin(), kAllVariants.end()};
  VideoShape shape{1, 16, 28, 28, 96};
  std::size_t out_channels = 128;
  std::size_t stride = 1;
  std::size_t spatial_kernel = 3;
  std::size_t temporal_kernel = 3;
  std::uint64_t seed = 7;
  std::size_t reps = 20;
  std::size_t warmup = 3;
  std::size_t workers = 1;

  BlockConfig block_config(Variant v) const;
  // Throws GeometryError / Error before anything is allocated.
  void validate() const;
};

// Untimed warmup runs followed by individually timed forward passes. The
// input tensor is allocated outside the timed region.
std::vector<BenchRecord> run_bench(const BenchConfig& config,
                                   const std::function<void(const BenchRecord&)>& on_record = {});

enum class TableFormat { Csv, Markdown };
std::optional<TableFormat> parse_format(std::string_view name);

inline constexpr std::string_view kCsvHeader =
    "variant,B,T,X,Y,C,params,flops,reps,mean_ms,std_ms,throughput_fps";

// Six significant digits, as printf "%.6g".
std::string format_sig6(double value);

std::string emit_table(const std::vector<BenchRecord>& records, TableFormat format);
std::vector<BenchRecord> parse_csv(std::string_view text);

// Parameters and analytic FLOPs of the 3D-Net for every variant, with deltas
// against the Conv3D network.
struct CountRow {
  Variant variant = Variant::Conv3D;
  std::size_t params = 0;
  std::uint64_t flops = 0;
  long long delta_params = 0;  // Conv3D - variant
  long long delta_flops = 0;   // Conv3D - variant
  double flops_ratio = 0.0;    // variant / Conv3D
};

std::vector<CountRow> count_eco3dnet(const NetSpec& spec, std::size_t batch = 1,
                                     bool include_classifier = false);
std::string emit_count_table(const std::vector<CountRow>& rows, TableFormat format);

// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace flatconv::bench
