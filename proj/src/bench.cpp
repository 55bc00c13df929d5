#include "flatconv/bench.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "flatconv/parallel.hpp"

namespace flatconv::bench {

namespace {

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string> csv_fields(const BenchRecord& r) {
  return {std::string(variant_name(r.variant)),
          std::to_string(r.shape.batch),
          std::to_string(r.shape.frames),
          std::to_string(r.shape.width),
          std::to_string(r.shape.height),
          std::to_string(r.shape.channels),
          std::to_string(r.params),
          std::to_string(r.flops),
          std::to_string(r.reps),
          format_sig6(r.mean_ms),
          format_sig6(r.std_ms),
          format_sig6(r.throughput_fps)};
}

std::string render(const std::vector<std::string>& header,
                   const std::vector<std::vector<std::string>>& rows, TableFormat format) {
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    if (format == TableFormat::Csv) {
      for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    } else {
      os << '|';
      for (const auto& c : cells) os << ' ' << c << " |";
    }
    os << '\n';
  };
  line(header);
  if (format == TableFormat::Markdown) {
    os << '|';
    for (std::size_t i = 0; i < header.size(); ++i) os << "---|";
    os << '\n';
  }
  for (const auto& r : rows) line(r);
  return os.str();
}

}  // namespace

BlockConfig BenchConfig::block_config(Variant v) const {
  BlockConfig cfg;
  cfg.variant = v;
  cfg.in_channels = shape.channels;
  cfg.out_channels = out_channels;
  cfg.spatial_kernel = spatial_kernel;
  cfg.temporal_kernel = temporal_kernel;
  cfg.stride = stride;
  cfg.seed = seed;
  return cfg;
}

void BenchConfig::validate() const {
  if (variants.empty()) throw Error("no variants selected");
  if (reps == 0) throw Error("reps must be >= 1");
  if (workers == 0) throw Error("threads must be >= 1");
  for (Variant v : variants) block_output_shape(block_config(v), shape);
}

std::vector<BenchRecord> run_bench(const BenchConfig& config,
                                   const std::function<void(const BenchRecord&)>& on_record) {
  config.validate();
  WorkerScope workers(config.workers);
  using Clock = std::chrono::steady_clock;
  std::vector<BenchRecord> records;

  for (Variant v : config.variants) {
    const Block block(config.block_config(v));
    const Tensor x = fill_random(config.shape.frame_fold(), config.seed);
    for (std::size_t i = 0; i < config.warmup; ++i) block.forward(x, config.shape);

    std::vector<double> ms;
    ms.reserve(config.reps);
    for (std::size_t i = 0; i < config.reps; ++i) {
      const auto start = Clock::now();
      block.forward(x, config.shape);
      ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - start).count());
    }

    BenchRecord r;
    r.variant = v;
    r.shape = config.shape;
    r.params = block.param_count();
    r.flops = block.flops_count(config.shape);
    r.reps = config.reps;
    r.warmup = config.warmup;
    double total = 0.0;
    for (double t : ms) total += t;
    r.mean_ms = total / static_cast<double>(ms.size());
    double var = 0.0;
    for (double t : ms) var += (t - r.mean_ms) * (t - r.mean_ms);
    r.std_ms = std::sqrt(var / static_cast<double>(ms.size()));
    const double seconds = std::max(total / 1000.0, 1e-9);
    r.throughput_fps =
        static_cast<double>(config.shape.batch * config.shape.frames * config.reps) / seconds;
    if (on_record) on_record(r);
    records.push_back(r);
  }
  return records;
}

std::optional<TableFormat> parse_format(std::string_view name) {
  if (name == "csv") return TableFormat::Csv;
  if (name == "md" || name == "markdown") return TableFormat::Markdown;
  return std::nullopt;
}

std::string format_sig6(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", value);
  return buf;
}

std::string emit_table(const std::vector<BenchRecord>& records, TableFormat format) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back(csv_fields(r));
  return render(split(kCsvHeader, ','), rows, format);
}

std::vector<BenchRecord> parse_csv(std::string_view text) {
  std::vector<BenchRecord> records;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw Error("benchmark CSV must start with the header: " + std::string(kCsvHeader));
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 12) throw Error("line " + std::to_string(lineno) + ": expected 12 fields");
    const auto v = parse_variant(f[0]);
    if (!v) throw Error("line " + std::to_string(lineno) + ": unknown variant '" + f[0] + "'");
    try {
      BenchRecord r;
      r.variant = *v;
      r.shape = VideoShape{std::stoul(f[1]), std::stoul(f[2]), std::stoul(f[3]), std::stoul(f[4]),
                           std::stoul(f[5])};
      r.params = std::stoul(f[6]);
      r.flops = std::stoull(f[7]);
      r.reps = std::stoul(f[8]);
      r.mean_ms = std::stod(f[9]);
      r.std_ms = std::stod(f[10]);
      r.throughput_fps = std::stod(f[11]);
      records.push_back(r);
    } catch (const std::logic_error&) {
      throw Error("line " + std::to_string(lineno) + ": malformed number");
    }
  }
  return records;
}

std::vector<CountRow> count_eco3dnet(const NetSpec& spec, std::size_t batch, bool include_classifier) {
  const VideoShape in = spec.input_shape(batch);
  const EcoPlan baseline = plan_eco3dnet(Variant::Conv3D, spec);
  const auto base_params = static_cast<long long>(baseline.param_count(include_classifier));
  const auto base_flops = static_cast<long long>(baseline.flops_count(in, include_classifier));

  std::vector<CountRow> rows;
  for (Variant v : kAllVariants) {
    const EcoPlan plan = plan_eco3dnet(v, spec);
    CountRow row;
    row.variant = v;
    row.params = plan.param_count(include_classifier);
    row.flops = plan.flops_count(in, include_classifier);
    row.delta_params = base_params - static_cast<long long>(row.params);
    row.delta_flops = base_flops - static_cast<long long>(row.flops);
    row.flops_ratio = static_cast<double>(row.flops) / static_cast<double>(base_flops);
    rows.push_back(row);
  }
  return rows;
}

std::string emit_count_table(const std::vector<CountRow>& rows, TableFormat format) {
  const std::vector<std::string> header{"variant",          "params",          "flops",
                                        "delta_params_vs_conv3d", "delta_flops_vs_conv3d",
                                        "flops_ratio_vs_conv3d"};
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    cells.push_back({std::string(variant_name(r.variant)), std::to_string(r.params),
                     std::to_string(r.flops), std::to_string(r.delta_params),
                     std::to_string(r.delta_flops), format_sig6(r.flops_ratio)});
  }
  return render(header, cells, format);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error("cannot move output into place at " + path.string());
  }
}

}  // namespace flatconv::bench
