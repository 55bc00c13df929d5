#include "flatconv/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "flatconv/parallel.hpp"

namespace flatconv::verify {

namespace {

constexpr double kComposedTolerance = 1e-8;
constexpr double kSingleFactorTolerance = 1e-10;

class SuiteRun {
 public:
  explicit SuiteRun(std::string name) : start_(std::chrono::steady_clock::now()) {
    report_.name = std::move(name);
  }

  void record(CaseResult c) {
    c.suite = report_.name;
    report_.cases.push_back(std::move(c));
    ++report_.cases_run;
  }

  // Runs one case; an exception thrown by the body becomes a failure entry.
  void run(const std::string& config, const std::function<CaseResult()>& body) {
    CaseResult result;
    try {
      result = body();
    } catch (const std::exception& e) {
      result.passed = false;
      result.detail = std::string("exception: ") + e.what();
    }
    result.config = config;
    record(std::move(result));
  }

  SuiteReport finish() {
    report_.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return std::move(report_);
  }

 private:
  SuiteReport report_;
  std::chrono::steady_clock::time_point start_;
};

CaseResult compare(const Tensor& reference, const Tensor& candidate, double tolerance) {
  CaseResult r;
  r.tolerance = tolerance;
  if (reference.shape() != candidate.shape()) {
    r.passed = false;
    r.detail = "shape mismatch " + to_string(reference.shape()) + " vs " + to_string(candidate.shape());
    return r;
  }
  if (!all_finite(reference) || !all_finite(candidate)) {
    r.passed = false;
    r.detail = "non-finite value";
    return r;
  }
  r.max_abs_diff = max_abs_diff(reference, candidate);
  r.rel_diff = relative_diff(reference, candidate);
  r.passed = r.rel_diff <= tolerance;
  return r;
}

CaseResult bit_compare(const Tensor& reference, const Tensor& candidate) {
  CaseResult r = compare(reference, candidate, 0.0);
  if (r.detail.empty()) {
    r.passed = bit_equal(reference, candidate);
    if (!r.passed) r.detail = "not bit-identical";
  }
  return r;
}

CaseResult expect(bool ok, std::string detail) {
  CaseResult r;
  r.passed = ok;
  if (!ok) r.detail = std::move(detail);
  return r;
}

std::string describe(const VideoShape& vs, std::string_view extra = {}) {
  std::ostringstream os;
  os << "shape=" << to_string(vs);
  if (!extra.empty()) os << ' ' << extra;
  return os.str();
}

std::string describe(Variant v, std::size_t s, const VideoShape& vs) {
  std::ostringstream os;
  os << "variant=" << variant_name(v) << " s=" << s;
  return describe(vs, os.str());
}

std::size_t pick(SplitMix64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.next() % (hi - lo + 1));
}

std::size_t pick_odd(SplitMix64& rng, std::size_t max_odd) {
  return 2 * pick(rng, 0, max_odd / 2) + 1;
}

std::vector<double> random_taps(SplitMix64& rng, std::size_t n) {
  const Tensor t = fill_random({n}, rng.next());
  return {t.data().begin(), t.data().end()};
}

bool fits(const VideoShape& vs, std::size_t s) {
  return vs.frames % s == 0 && vs.width % s == 0 && vs.height % s == 0;
}

BlockConfig small_config(Variant v, const VideoShape& vs, std::size_t s, std::uint64_t seed,
                         bool linear) {
  BlockConfig cfg;
  cfg.variant = v;
  cfg.in_channels = vs.channels;
  cfg.out_channels = 3;
  cfg.stride = s;
  cfg.linear_mode = linear;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

bool SuiteReport::passed() const {
  return std::all_of(cases.begin(), cases.end(), [](const CaseResult& c) { return c.passed; });
}

std::vector<CaseResult> SuiteReport::failures() const {
  std::vector<CaseResult> out;
  std::copy_if(cases.begin(), cases.end(), std::back_inserter(out),
               [](const CaseResult& c) { return !c.passed; });
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  const auto x = a.data();
  const auto y = b.data();
  double m = 0.0;
  for (std::size_t i = 0; i < std::min(x.size(), y.size()); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

double relative_diff(const Tensor& reference, const Tensor& candidate) {
  double peak = 0.0;
  for (double v : reference.data()) peak = std::max(peak, std::abs(v));
  return max_abs_diff(reference, candidate) / (peak + 1e-30);
}

bool all_finite(const Tensor& t) {
  const auto d = t.data();
  return std::all_of(d.begin(), d.end(), [](double v) { return std::isfinite(v); });
}

std::vector<VideoShape> default_shape_grid() {
  return {
      {1, 2, 2, 2, 1},  {1, 4, 4, 4, 2},  {2, 2, 4, 6, 3},  {1, 6, 6, 4, 2},
      {2, 4, 2, 8, 1},  {1, 8, 8, 8, 4},  {2, 6, 4, 4, 2},  {1, 2, 10, 6, 3},
      {1, 4, 12, 2, 1}, {2, 2, 6, 10, 2}, {1, 8, 4, 12, 4}, {1, 10, 2, 4, 3},
  };
}

std::vector<SeparableCase> random_separable_cases(std::uint64_t seed, std::size_t count) {
  SplitMix64 rng(seed ^ 0x5E9A7AB1EULL);
  std::vector<SeparableCase> cases;
  cases.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SeparableCase c;
    c.stride = pick(rng, 1, 2);
    const std::size_t s = c.stride;
    c.shape = VideoShape{pick(rng, 1, 2), s * pick(rng, 1, 6 / s), s * pick(rng, 1, 8 / s),
                         s * pick(rng, 1, 8 / s), pick(rng, 1, 3)};
    const std::size_t d = pick_odd(rng, 5);
    const std::size_t t = pick_odd(rng, 3);
    c.u = random_taps(rng, d);
    c.v = random_taps(rng, d);
    c.q = random_taps(rng, t);
    c.input_seed = rng.next();
    cases.push_back(std::move(c));
  }
  return cases;
}

SuiteReport check_separable_equivalence(const std::vector<SeparableCase>& cases) {
  SuiteRun run("separable");
  for (const auto& c : cases) {
    std::ostringstream extra;
    extra << "d=" << c.u.size() << " t=" << c.q.size() << " s=" << c.stride;
    run.run(describe(c.shape, extra.str()), [&] {
      const std::size_t d = c.u.size();
      const std::size_t t = c.q.size();
      const std::size_t ch = c.shape.channels;
      if (c.v.size() != d) throw Error("u and v must have equal length");

      BlockConfig cfg;
      cfg.variant = Variant::Rank1;
      cfg.in_channels = ch;
      cfg.out_channels = ch;
      cfg.spatial_kernel = d;
      cfg.temporal_kernel = t;
      cfg.stride = c.stride;
      cfg.linear_mode = true;
      Block block(cfg);

      Tensor horizontal({d, 1, ch, ch});
      Tensor vertical({d, ch, ch});
      Tensor temporal({t, 1, ch, ch});
      Tensor full({t, d, d, ch, ch});
      {
        auto h = horizontal.mutable_data();
        auto v = vertical.mutable_data();
        auto q = temporal.mutable_data();
        auto k = full.mutable_data();
        for (std::size_t i = 0; i < ch; ++i) {
          for (std::size_t a = 0; a < d; ++a) {
            h[(a * ch + i) * ch + i] = c.u[a];
            v[(a * ch + i) * ch + i] = c.v[a];
          }
          for (std::size_t tau = 0; tau < t; ++tau) {
            q[(tau * ch + i) * ch + i] = c.q[tau];
            for (std::size_t a = 0; a < d; ++a) {
              for (std::size_t b = 0; b < d; ++b) {
                k[(((tau * d + a) * d + b) * ch + i) * ch + i] = c.q[tau] * c.u[a] * c.v[b];
              }
            }
          }
        }
      }
      block.set_weights("horizontal", horizontal);
      block.set_weights("vertical", vertical);
      block.set_weights("temporal", temporal);

      const Tensor x = fill_random(c.shape.frame_fold(), c.input_seed);
      const BlockOutput factored = block.forward(x, c.shape);
      const std::size_t s = c.stride;
      const Tensor reference = conv3d_oracle(reshape(x, c.shape.as_5d()), full, {s, s, s});
      return compare(reshape(reference, factored.shape.frame_fold()), factored.tensor,
                     kComposedTolerance);
    });
  }
  return run.finish();
}

SuiteReport check_spatial_only_equivalence(std::uint64_t seed, std::size_t count) {
  SuiteRun run("factor_only");
  SplitMix64 rng(seed ^ 0xFAC7012ULL);
  for (std::size_t i = 0; i < count; ++i) {
    const VideoShape vs{pick(rng, 1, 2), pick(rng, 1, 6), pick(rng, 1, 8), pick(rng, 1, 8),
                        pick(rng, 1, 4)};
    const std::size_t d = pick_odd(rng, 5);
    const std::size_t t = pick_odd(rng, 5);
    const std::size_t out_channels = pick(rng, 1, 4);
    const std::uint64_t block_seed = rng.next();
    const std::uint64_t input_seed = rng.next();

    BlockConfig cfg;
    cfg.variant = Variant::ProposedAdd;
    cfg.in_channels = vs.channels;
    cfg.out_channels = out_channels;
    cfg.spatial_kernel = d;
    cfg.temporal_kernel = t;
    cfg.linear_mode = true;
    cfg.seed = block_seed;
    const Block block(cfg);
    const Tensor x = fill_random(vs.frame_fold(), input_seed);
    const Shape flat{vs.batch, vs.frames, vs.width * vs.height, out_channels};

    std::ostringstream extra;
    extra << "d=" << d << " t=" << t << " S=" << out_channels;
    run.run(describe(vs, extra.str() + " path=spatial"), [&] {
      const Tensor spatial = block.branch_outputs(x, vs).first;
      const Tensor kernel = reshape(block.sub_conv("spatial").weights.weights, {1, d, d, vs.channels, out_channels});
      const Tensor reference = conv3d_oracle(reshape(x, vs.as_5d()), kernel, {1, 1, 1});
      return compare(reshape(reference, flat), spatial, kSingleFactorTolerance);
    });
    run.run(describe(vs, extra.str() + " path=temporal"), [&] {
      const Tensor temporal = block.branch_outputs(x, vs).second;
      const Tensor kernel = reshape(block.sub_conv("temporal").weights.weights, {t, 1, 1, vs.channels, out_channels});
      const Tensor reference = conv3d_oracle(reshape(x, vs.as_5d()), kernel, {1, 1, 1});
      return compare(reshape(reference, flat), temporal, kSingleFactorTolerance);
    });
  }
  return run.finish();
}

SuiteReport check_zero_branch_reduction(std::uint64_t seed, const std::vector<VideoShape>& grid) {
  SuiteRun run("zero_branch");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const VideoShape& vs = grid[i];
    run.run(describe(vs), [&] {
      Block block(small_config(Variant::ProposedAdd, vs, 1, seed + i, true));
      block.set_weights("temporal", Tensor::zeros(block.sub_conv("temporal").weights.weights.shape()));
      const Tensor x = fill_random(vs.frame_fold(), seed * 31 + i);
      const BlockOutput out = block.forward(x, vs);
      const Tensor spatial = block.branch_outputs(x, vs).first;
      return bit_compare(reshape(spatial, out.shape.frame_fold()), out.tensor);
    });
  }
  return run.finish();
}

SuiteReport check_shape_contracts(std::uint64_t seed, const std::vector<VideoShape>& grid) {
  SuiteRun run("shape_contract");
  for (Variant v : kAllVariants) {
    for (std::size_t s : {std::size_t{1}, std::size_t{2}}) {
      for (std::size_t i = 0; i < grid.size(); ++i) {
        const VideoShape& vs = grid[i];
        run.run(describe(v, s, vs), [&] {
          const Block block(small_config(v, vs, s, seed + i, false));
          const std::size_t channels = v == Variant::ProposedCat ? 6 : 3;
          const VideoShape expected{vs.batch, vs.frames / s, vs.width / s, vs.height / s, channels};
          const BlockOutput out = block.forward(fill_random(vs.frame_fold(), seed + 100 + i), vs);
          const bool ok = out.shape == expected && out.tensor.shape() == expected.frame_fold() &&
                          out.tensor.rank() <= 4;
          return expect(ok, "got " + to_string(out.shape) + " stored " + to_string(out.tensor.shape()) +
                                ", expected " + to_string(expected));
        });
      }
    }
  }
  return run.finish();
}

SuiteReport check_branch_shapes(std::uint64_t seed, const std::vector<VideoShape>& grid,
                                bool inject_pixel_stride_fault) {
  SuiteRun run("branch_shapes");
  for (Variant v : {Variant::ProposedAdd, Variant::ProposedCat}) {
    for (std::size_t s : {std::size_t{1}, std::size_t{2}}) {
      for (std::size_t i = 0; i < grid.size(); ++i) {
        const VideoShape& vs = grid[i];
        run.run(describe(v, s, vs), [&] {
          BlockConfig cfg = small_config(v, vs, s, seed + i, true);
          cfg.linear_pixel_stride_fault = inject_pixel_stride_fault;
          const Block block(cfg);
          const auto [spatial, temporal] = block.branch_outputs(fill_random(vs.frame_fold(), seed + i), vs);
          return expect(spatial.shape() == temporal.shape(),
                        "spatial " + to_string(spatial.shape()) + " vs temporal " + to_string(temporal.shape()));
        });
      }
    }
  }
  return run.finish();
}

NetSpec tiny_net_spec(std::uint64_t seed) {
  NetSpec spec;
  spec.in_channels = 3;
  spec.stage_widths = {4, 6, 8};
  spec.frames = 4;
  spec.width = 8;
  spec.height = 8;
  spec.classes = 5;
  spec.seed = seed;
  return spec;
}

SuiteReport check_rank_ceiling(std::uint64_t seed, const NetSpec& spec) {
  SuiteRun run("rank_ceiling");
  for (Variant v : kAllVariants) {
    const VideoShape vs = spec.input_shape(2);
    run.run(describe(v, 0, vs), [&] {
      const Network net = build_eco3dnet(v, spec);
      const Tensor x = fill_random(vs.frame_fold(), seed);
      std::size_t observed = 0;
      {
        RankTracker::Session session;
        const NetOutput out = net.forward(x, vs);
        observed = session.max_rank();
        if (!all_finite(out.logits)) return expect(false, "non-finite logits");
      }
      const std::size_t expected = v == Variant::Conv3D ? 5 : 4;
      return expect(observed == expected, "max rank " + std::to_string(observed) + ", expected " +
                                              std::to_string(expected));
    });
  }
  return run.finish();
}

std::uint64_t count_macs_instrumented(const Block& block, const VideoShape& shape,
                                      std::uint64_t input_seed) {
  const Tensor x = fill_random(shape.frame_fold(), input_seed);
  MacCounter counter;
  block.forward(x, shape);
  return counter.count();
}

std::uint64_t count_macs_instrumented(const Network& net, const VideoShape& shape,
                                      std::uint64_t input_seed) {
  const Tensor x = fill_random(shape.frame_fold(), input_seed);
  MacCounter counter;
  net.forward(x, shape);
  return counter.count();
}

SuiteReport check_mac_counts(std::uint64_t seed, const std::vector<VideoShape>& grid) {
  SuiteRun run("mac_count");
  for (Variant v : kAllVariants) {
    for (std::size_t s : {std::size_t{1}, std::size_t{2}}) {
      for (std::size_t i = 0; i < grid.size(); ++i) {
        const VideoShape& vs = grid[i];
        run.run(describe(v, s, vs), [&] {
          const Block block(small_config(v, vs, s, seed + i, false));
          const std::uint64_t macs = count_macs_instrumented(block, vs, seed);
          const std::uint64_t flops = block.flops_count(vs);
          return expect(2 * macs == flops, "2*macs=" + std::to_string(2 * macs) +
                                               " flops=" + std::to_string(flops));
        });
      }
    }
    const NetSpec spec = tiny_net_spec(seed);
    const VideoShape vs = spec.input_shape(1);
    run.run(describe(v, 0, vs) + " net=eco3d", [&] {
      const Network net = build_eco3dnet(v, spec);
      const std::uint64_t macs = count_macs_instrumented(net, vs, seed);
      const std::uint64_t flops = net.flops_count(vs);
      return expect(2 * macs == flops,
                    "2*macs=" + std::to_string(2 * macs) + " flops=" + std::to_string(flops));
    });
  }

  // 12/27 cost ratio of the proposed block at s = 1, d = t = 3, Cin == S.
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const VideoShape& vs = grid[i];
    run.run(describe(vs, "ratio=ProposedAdd/Conv3D"), [&] {
      BlockConfig cfg = small_config(Variant::Conv3D, vs, 1, seed, true);
      cfg.out_channels = vs.channels;
      const std::uint64_t conv = count_macs_instrumented(Block(cfg), vs, seed);
      cfg.variant = Variant::ProposedAdd;
      const std::uint64_t proposed = count_macs_instrumented(Block(cfg), vs, seed);
      return expect(proposed * 27 == conv * 12,
                    "proposed=" + std::to_string(proposed) + " conv3d=" + std::to_string(conv));
    });
  }
  return run.finish();
}

SuiteReport check_determinism(std::uint64_t seed, const std::vector<VideoShape>& grid) {
  SuiteRun run("determinism");
  for (Variant v : kAllVariants) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const VideoShape& vs = grid[i];
      const std::size_t s = fits(vs, 2) ? 2 : 1;
      run.run(describe(v, s, vs), [&] {
        const Block block(small_config(v, vs, s, seed + i, false));
        const Tensor x = fill_random(vs.frame_fold(), seed ^ i);
        std::vector<Tensor> outs;
        for (std::size_t workers : {1, 2, 8}) {
          WorkerScope scope(workers);
          outs.push_back(block.forward(x, vs).tensor);
        }
        return expect(bit_equal(outs[0], outs[1]) && bit_equal(outs[0], outs[2]),
                      "outputs differ across worker counts");
      });
    }
  }
  return run.finish();
}

const std::vector<std::string>& suite_groups() {
  static const std::vector<std::string> groups{"all", "equivalence", "shape", "rank", "macs",
                                               "determinism"};
  return groups;
}

std::vector<SuiteReport> run_all_suites(const VerifyOptions& options) {
  const auto& groups = suite_groups();
  if (std::find(groups.begin(), groups.end(), options.suite) == groups.end()) {
    throw Error("unknown suite '" + options.suite + "'");
  }
  auto wants = [&](std::string_view group) { return options.suite == "all" || options.suite == group; };
  const std::uint64_t seed = options.seed;
  std::vector<SuiteReport> reports;
  if (options.grid.empty()) return reports;

  if (wants("equivalence")) {
    reports.push_back(check_separable_equivalence(random_separable_cases(seed, options.separable_cases)));
    reports.push_back(check_spatial_only_equivalence(seed, options.factor_cases));
    reports.push_back(check_zero_branch_reduction(seed, options.grid));
  }
  if (wants("shape")) {
    reports.push_back(check_shape_contracts(seed, options.grid));
    reports.push_back(check_branch_shapes(seed, options.grid));
  }
  if (wants("rank")) reports.push_back(check_rank_ceiling(seed, tiny_net_spec(seed)));
  if (wants("macs")) reports.push_back(check_mac_counts(seed, options.grid));
  if (wants("determinism")) reports.push_back(check_determinism(seed, options.grid));
  return reports;
}

void write_json_lines(std::ostream& os, const std::vector<SuiteReport>& reports) {
  for (const auto& report : reports) {
    for (const auto& c : report.cases) {
      nlohmann::json j{{"suite", c.suite},           {"config", c.config},
                       {"passed", c.passed},         {"max_abs_diff", c.max_abs_diff},
                       {"rel_diff", c.rel_diff},     {"tolerance", c.tolerance},
                       {"detail", c.detail}};
      os << j.dump() << '\n';
    }
  }
}

}  // namespace flatconv::verify
