// flatconv: verification, cost tables and forward-pass benchmarks for the
// rank-4 3D-convolution replacements.
//
// Exit codes: 0 success, 1 verification or benchmark failure, 2 usage error.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "flatconv/bench.hpp"
#include "flatconv/verify.hpp"

namespace {

using namespace flatconv;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t default_seed() {
  if (const char* env = std::getenv("FLATCONV_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError("FLATCONV_SEED is not an unsigned integer: " + std::string(env));
    }
  }
  return 7;
}

VideoShape parse_shape(const std::string& text) {
  std::vector<std::size_t> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long n = std::stoll(item, &used);
      if (used != item.size() || n <= 0) throw std::invalid_argument(item);
      v.push_back(static_cast<std::size_t>(n));
    } catch (const std::exception&) {
      throw UsageError("shape entries must be positive integers: '" + text + "'");
    }
  }
  if (v.size() != 5) throw UsageError("shape must be B,T,X,Y,C: '" + text + "'");
  return {v[0], v[1], v[2], v[3], v[4]};
}

std::vector<Variant> parse_variants(const std::vector<std::string>& names) {
  std::vector<Variant> out;
  for (const auto& entry : names) {
    std::stringstream ss(entry);
    std::string name;
    while (std::getline(ss, name, ',')) {
      if (name == "all") {
        out.insert(out.end(), kAllVariants.begin(), kAllVariants.end());
        continue;
      }
      const auto v = parse_variant(name);
      if (!v) throw UsageError("unknown block variant '" + name + "'");
      out.push_back(*v);
    }
  }
  return out;
}

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("invalid JSON in " + path + ": " + e.what());
  }
}

// Applies `key` from the config file unless the flag was given explicitly.
template <typename T>
void from_config(const json& cfg, const char* key, const CLI::Option* flag, T& target) {
  if (!cfg.contains(key) || flag->count() > 0) return;
  try {
    target = cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("config key '") + key + "': " + e.what());
  }
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
  } else {
    bench::write_file_atomic(out_path, text);
  }
}

bench::TableFormat require_format(const std::string& name) {
  const auto f = bench::parse_format(name);
  if (!f) throw UsageError("format must be csv or md, got '" + name + "'");
  return *f;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flatconv: 3D convolution with rank-4 tensors"};
  app.require_subcommand(1);

  // verify
  auto* verify_cmd = app.add_subcommand("verify", "Run the equivalence and property suites");
  std::string suite = "all";
  std::uint64_t verify_seed = 0;
  std::string jsonl_path;
  std::size_t separable_cases = 60;
  std::string verify_config;
  auto* suite_opt = verify_cmd->add_option("--suite", suite, "Suite group")
                        ->check(CLI::IsMember(verify::suite_groups()));
  auto* vseed_opt = verify_cmd->add_option("--seed", verify_seed, "Seed (default: $FLATCONV_SEED or 7)");
  auto* jsonl_opt = verify_cmd->add_option("--jsonl", jsonl_path, "Write one JSON object per case");
  auto* sep_opt = verify_cmd->add_option("--separable-cases", separable_cases, "Seeded separable configs")
                      ->check(CLI::PositiveNumber);
  verify_cmd->add_option("--config", verify_config, "JSON config file");

  // count
  auto* count_cmd = app.add_subcommand("count", "Parameter and FLOP table for the ECO-Lite 3D-Net");
  std::string net_name = "eco-lite";
  NetSpec net_spec;
  std::size_t count_batch = 1;
  std::string count_format = "md";
  std::string count_out;
  bool with_classifier = false;
  count_cmd->add_option("--net", net_name, "Network")->check(CLI::IsMember({"eco-lite"}));
  count_cmd->add_option("--frames", net_spec.frames, "Frames N")->check(CLI::PositiveNumber);
  count_cmd->add_option("--classes", net_spec.classes, "Classifier classes")->check(CLI::PositiveNumber);
  count_cmd->add_option("--batch", count_batch, "Batch size for FLOPs")->check(CLI::PositiveNumber);
  count_cmd->add_option("--format", count_format, "csv or md")->check(CLI::IsMember({"csv", "md"}));
  count_cmd->add_option("--out", count_out, "Output file (default stdout)");
  count_cmd->add_flag("--with-classifier", with_classifier, "Include the classifier in counts");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Time block forward passes");
  bench::BenchConfig bench_cfg;
  std::vector<std::string> block_names{"all"};
  std::string shape_text = "1,16,28,28,96";
  std::uint64_t bench_seed = 0;
  std::string bench_out;
  std::string bench_format = "csv";
  std::string bench_config;
  auto* blocks_opt = bench_cmd->add_option("--block", block_names, "Variant name(s), comma list, or all");
  auto* shape_opt = bench_cmd->add_option("--shape", shape_text, "Logical input B,T,X,Y,C");
  auto* outch_opt = bench_cmd->add_option("--out-channels", bench_cfg.out_channels, "Output channels S")
                        ->check(CLI::PositiveNumber);
  auto* stride_opt = bench_cmd->add_option("--stride", bench_cfg.stride, "Stride s")->check(CLI::PositiveNumber);
  auto* reps_opt = bench_cmd->add_option("--reps", bench_cfg.reps, "Timed repetitions")->check(CLI::PositiveNumber);
  auto* warm_opt = bench_cmd->add_option("--warmup", bench_cfg.warmup, "Untimed warmup runs");
  auto* threads_opt = bench_cmd->add_option("--threads", bench_cfg.workers, "Worker threads")
                          ->check(CLI::PositiveNumber);
  auto* bseed_opt = bench_cmd->add_option("--seed", bench_seed, "Seed (default: $FLATCONV_SEED or 7)");
  auto* bout_opt = bench_cmd->add_option("--out", bench_out, "Output file (default stdout)");
  auto* bfmt_opt = bench_cmd->add_option("--format", bench_format, "csv or md");
  bench_cmd->add_option("--config", bench_config, "JSON config file");

  // table
  auto* table_cmd = app.add_subcommand("table", "Re-emit a benchmark CSV as csv or md");
  std::string table_in;
  std::string table_format = "md";
  std::string table_out;
  table_cmd->add_option("--in", table_in, "Benchmark CSV")->required();
  table_cmd->add_option("--format", table_format, "csv or md")->check(CLI::IsMember({"csv", "md"}));
  table_cmd->add_option("--out", table_out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*verify_cmd) {
      verify::VerifyOptions options;
      options.seed = default_seed();
      if (!verify_config.empty()) {
        const json cfg = load_config(verify_config);
        from_config(cfg, "suite", suite_opt, suite);
        from_config(cfg, "seed", vseed_opt, options.seed);
        from_config(cfg, "jsonl", jsonl_opt, jsonl_path);
        from_config(cfg, "separable_cases", sep_opt, separable_cases);
        const auto& groups = verify::suite_groups();
        if (std::find(groups.begin(), groups.end(), suite) == groups.end()) {
          throw UsageError("unknown suite '" + suite + "'");
        }
      }
      if (vseed_opt->count() > 0) options.seed = verify_seed;
      options.suite = suite;
      options.separable_cases = separable_cases;

      const auto reports = verify::run_all_suites(options);
      bool ok = true;
      for (const auto& r : reports) {
        const auto failures = r.failures();
        std::cout << (failures.empty() ? "PASS " : "FAIL ") << r.name << ": " << r.cases_run
                  << " cases, " << failures.size() << " failures, "
                  << bench::format_sig6(r.wall_seconds) << " s\n";
        for (const auto& f : failures) {
          std::cout << "  " << f.config << ": " << f.detail << " rel=" << f.rel_diff
                    << " tol=" << f.tolerance << '\n';
        }
        ok = ok && failures.empty();
      }
      if (!jsonl_path.empty()) {
        std::ostringstream os;
        verify::write_json_lines(os, reports);
        bench::write_file_atomic(jsonl_path, os.str());
      }
      std::cout << (ok ? "all suites passed" : "verification FAILED") << '\n';
      return ok ? kExitOk : kExitFailure;
    }

    if (*count_cmd) {
      const auto format = require_format(count_format);
      try {
        net_spec.validate();
      } catch (const Error& e) {
        throw UsageError(e.what());
      }
      const auto rows = bench::count_eco3dnet(net_spec, count_batch, with_classifier);
      emit(bench::emit_count_table(rows, format), count_out);
      return kExitOk;
    }

    if (*bench_cmd) {
      bench_cfg.seed = default_seed();
      if (!bench_config.empty()) {
        const json cfg = load_config(bench_config);
        if (cfg.contains("blocks") && blocks_opt->count() == 0) {
          const auto& b = cfg.at("blocks");
          block_names = b.is_array() ? b.get<std::vector<std::string>>()
                                     : std::vector<std::string>{b.get<std::string>()};
        }
        if (cfg.contains("shape") && shape_opt->count() == 0) {
          const auto& s = cfg.at("shape");
          if (s.is_array()) {
            std::string joined;
            for (const auto& e : s) joined += (joined.empty() ? "" : ",") + std::to_string(e.get<long long>());
            shape_text = joined;
          } else {
            shape_text = s.get<std::string>();
          }
        }
        from_config(cfg, "out_channels", outch_opt, bench_cfg.out_channels);
        from_config(cfg, "stride", stride_opt, bench_cfg.stride);
        from_config(cfg, "reps", reps_opt, bench_cfg.reps);
        from_config(cfg, "warmup", warm_opt, bench_cfg.warmup);
        from_config(cfg, "threads", threads_opt, bench_cfg.workers);
        from_config(cfg, "seed", bseed_opt, bench_cfg.seed);
        from_config(cfg, "out", bout_opt, bench_out);
        from_config(cfg, "format", bfmt_opt, bench_format);
      }
      if (bseed_opt->count() > 0) bench_cfg.seed = bench_seed;
      bench_cfg.variants = parse_variants(block_names);
      bench_cfg.shape = parse_shape(shape_text);
      const auto format = require_format(bench_format);
      if (bench_cfg.reps == 0) throw UsageError("--reps must be >= 1");
      if (bench_cfg.out_channels == 0 || bench_cfg.stride == 0 || bench_cfg.workers == 0) {
        throw UsageError("--out-channels, --stride and --threads must be >= 1");
      }
      try {
        bench_cfg.validate();
      } catch (const Error& e) {
        throw UsageError(e.what());
      }
      if (!bench_out.empty()) {
        const auto parent = std::filesystem::absolute(bench_out).parent_path();
        if (!std::filesystem::is_directory(parent)) {
          std::cerr << "error: output directory does not exist: " << parent << '\n';
          return kExitFailure;
        }
      }

      const auto records = bench::run_bench(bench_cfg, [](const bench::BenchRecord& r) {
        std::cerr << variant_name(r.variant) << ": " << bench::format_sig6(r.mean_ms) << " ms/forward\n";
      });
      emit(bench::emit_table(records, format), bench_out);
      return kExitOk;
    }

    if (*table_cmd) {
      const auto format = require_format(table_format);
      std::ifstream in(table_in);
      if (!in) throw UsageError("cannot read " + table_in);
      std::stringstream buf;
      buf << in.rdbuf();
      emit(bench::emit_table(bench::parse_csv(buf.str()), format), table_out);
      return kExitOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
