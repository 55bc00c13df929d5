// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any selected criterion fails.
//
//   acceptance            run every criterion
//   acceptance c1 c4      run a subset

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "flatconv/bench.hpp"
#include "flatconv/parallel.hpp"
#include "flatconv/verify.hpp"

using namespace flatconv;

namespace {

// Pinned targets and tolerances.
constexpr double kAddDeltaTarget = 17.4e6;
constexpr double kAddDeltaRelTol = 0.05;
constexpr double kCatDeltaTarget = 1.5e6;
constexpr double kCatDeltaAbsTol = 0.6e6;
constexpr double kCountSeconds = 1.0;
constexpr double kNetFlopRatioTarget = 0.480;
constexpr double kNetFlopRatioTol = 0.05;
constexpr std::size_t kMinSeparableCases = 50;
constexpr double kSeparableTol = 1e-8;
constexpr double kFactorTol = 1e-10;
constexpr double kEquivalenceSeconds = 60.0;
constexpr double kBenchSeconds = 300.0;
constexpr std::size_t kBenchReps = 20;
constexpr std::uint64_t kSeed = 7;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string millions(double v) { return fmt("%.3fM", v / 1e6); }

// Appends every failing case of `r` to `out` and returns r.passed().
bool absorb(const verify::SuiteReport& r, Outcome& out) {
  for (const auto& f : r.failures()) out.detail += "\n    " + r.name + " " + f.config + ": " + f.detail;
  return r.passed();
}

long long param_delta(Variant v) {
  const NetSpec spec;
  return static_cast<long long>(plan_eco3dnet(Variant::Conv3D, spec).param_count()) -
         static_cast<long long>(plan_eco3dnet(v, spec).param_count());
}

Outcome c1() {
  const auto start = Clock::now();
  const double delta = static_cast<double>(param_delta(Variant::ProposedAdd));
  const double elapsed = seconds_since(start);
  Outcome o;
  o.pass = std::abs(delta - kAddDeltaTarget) <= kAddDeltaRelTol * kAddDeltaTarget && elapsed < kCountSeconds;
  o.detail = "Conv3D - ProposedAdd = " + millions(delta) + " (target " + millions(kAddDeltaTarget) +
             " +/- 5%), " + fmt("%.3g s", elapsed);
  return o;
}

Outcome c2() {
  const auto start = Clock::now();
  const double delta = static_cast<double>(param_delta(Variant::ProposedCat));
  const double elapsed = seconds_since(start);
  Outcome o;
  o.pass = std::abs(delta - kCatDeltaTarget) <= kCatDeltaAbsTol && elapsed < kCountSeconds;
  o.detail = "Conv3D - ProposedCat = " + millions(delta) + " (target " + millions(kCatDeltaTarget) +
             " +/- " + millions(kCatDeltaAbsTol) + ")";
  return o;
}

Outcome c3() {
  Outcome o;
  std::size_t checked = 0;
  for (std::size_t cin : {96u, 128u, 256u, 512u}) {
    for (std::size_t out : {96u, 128u, 256u, 512u}) {
      BlockConfig cfg;
      cfg.in_channels = cin;
      cfg.out_channels = out;
      cfg.linear_mode = true;
      cfg.variant = Variant::Conv3D;
      const auto conv = static_cast<long long>(block_param_count(cfg));
      cfg.variant = Variant::R2Plus1D;
      const auto r21 = static_cast<long long>(block_param_count(cfg));
      const long long bound = 9LL * cin + 3LL * out;
      if (std::llabs(r21 - conv) >= bound) {
        o.pass = false;
        o.detail += " " + std::to_string(cin) + "x" + std::to_string(out);
      }
      ++checked;
    }
  }
  o.detail = std::to_string(checked) + " channel pairs, |R2Plus1D - Conv3D| < d^2*Cin + t*S" +
             (o.pass ? "" : "; violated at" + o.detail);
  return o;
}

Outcome c4() {
  Outcome o;
  auto cfg = [](Variant v, std::size_t c) {
    BlockConfig b;
    b.variant = v;
    b.in_channels = b.out_channels = c;
    return b;
  };
  // Analytic: any shape at equal channels.
  for (const VideoShape& vs : {VideoShape{1, 16, 28, 28, 128}, VideoShape{3, 5, 7, 9, 11}, VideoShape{2, 8, 14, 14, 512}}) {
    const auto c = block_flops(cfg(Variant::Conv3D, vs.channels), vs);
    const auto p = block_flops(cfg(Variant::ProposedAdd, vs.channels), vs);
    if (27 * p != 12 * c) {
      o.pass = false;
      o.detail += "\n    analytic ratio off at " + to_string(vs);
    }
  }
  // Instrumented.
  for (const VideoShape& vs : {VideoShape{1, 4, 6, 6, 4}, VideoShape{2, 3, 5, 7, 3}}) {
    const Block conv(cfg(Variant::Conv3D, vs.channels));
    const Block prop(cfg(Variant::ProposedAdd, vs.channels));
    const auto mc = verify::count_macs_instrumented(conv, vs);
    const auto mp = verify::count_macs_instrumented(prop, vs);
    if (2 * mc != conv.flops_count(vs) || 2 * mp != prop.flops_count(vs) || 27 * mp != 12 * mc) {
      o.pass = false;
      o.detail += "\n    instrumented count mismatch at " + to_string(vs);
    }
  }
  const NetSpec spec;
  const VideoShape in = spec.input_shape(1);
  const double ratio = static_cast<double>(plan_eco3dnet(Variant::ProposedAdd, spec).flops_count(in)) /
                       static_cast<double>(plan_eco3dnet(Variant::Conv3D, spec).flops_count(in));
  if (std::abs(ratio - kNetFlopRatioTarget) > kNetFlopRatioTol) o.pass = false;
  o.detail = "block ratio 12/27 exact, 2*MACs == flops; network ratio " + fmt("%.4f", ratio) +
             " (target 0.480 +/- 0.05)" + o.detail;
  return o;
}

Outcome c5() {
  Outcome o;
  const auto start = Clock::now();
  const auto cases = verify::random_separable_cases(kSeed, 60);
  const auto sep = verify::check_separable_equivalence(cases);
  const auto fac = verify::check_spatial_only_equivalence(kSeed, 20);
  const auto zero = verify::check_zero_branch_reduction(kSeed, verify::default_shape_grid());
  const double elapsed = seconds_since(start);

  double sep_worst = 0.0, fac_worst = 0.0, zero_worst = 0.0;
  bool tolerances_pinned = true;
  for (const auto& c : sep.cases) {
    sep_worst = std::max(sep_worst, c.rel_diff);
    tolerances_pinned = tolerances_pinned && c.tolerance <= kSeparableTol;
  }
  for (const auto& c : fac.cases) {
    fac_worst = std::max(fac_worst, c.rel_diff);
    tolerances_pinned = tolerances_pinned && c.tolerance <= kFactorTol;
  }
  for (const auto& c : zero.cases) zero_worst = std::max(zero_worst, c.max_abs_diff);

  o.pass = absorb(sep, o) & absorb(fac, o) & absorb(zero, o);
  o.pass = o.pass && sep.cases_run >= kMinSeparableCases && sep_worst <= kSeparableTol &&
           fac_worst <= kFactorTol && zero_worst == 0.0 && tolerances_pinned && elapsed < kEquivalenceSeconds;
  o.detail = std::to_string(sep.cases_run) + " separable (worst rel " + fmt("%.2e", sep_worst) + "), " +
             std::to_string(fac.cases_run) + " factor-only (worst rel " + fmt("%.2e", fac_worst) + "), " +
             std::to_string(zero.cases_run) + " zero-branch (max abs " + fmt("%g", zero_worst) + "), " +
             fmt("%.3g s", elapsed) + o.detail;
  return o;
}

Outcome c6() {
  Outcome o;
  const NetSpec spec = verify::tiny_net_spec(kSeed);
  const VideoShape in = spec.input_shape(2);
  const Tensor x = fill_random(in.frame_fold(), kSeed);
  std::ostringstream ranks;
  for (Variant v : kAllVariants) {
    const Network net(v, spec);
    std::size_t rank = 0;
    {
      RankTracker::Session session;
      net.forward(x, in);
      rank = session.max_rank();
    }
    const std::size_t want = v == Variant::Conv3D ? 5 : 4;
    o.pass = o.pass && rank == want;
    ranks << ' ' << variant_name(v) << '=' << rank;
  }
  o.detail = "max rank over network forward:" + ranks.str();
  return o;
}

Outcome c7() {
  Outcome o;
  const auto grid = verify::default_shape_grid();
  const auto shapes = verify::check_shape_contracts(kSeed, grid);
  const auto branches = verify::check_branch_shapes(kSeed, grid);
  o.pass = absorb(shapes, o) & absorb(branches, o);
  const std::size_t want = kAllVariants.size() * 2 * grid.size();
  o.pass = o.pass && grid.size() == 12 && shapes.cases_run == want;
  o.detail = std::to_string(shapes.cases_run) + " shape contracts (8 variants x 2 strides x " +
             std::to_string(grid.size()) + " shapes), " + std::to_string(branches.cases_run) +
             " branch-shape checks" + o.detail;
  return o;
}

// Digest of every variant's network logits at a fixed seed.
std::uint64_t forward_digest(std::uint64_t seed) {
  const NetSpec spec = verify::tiny_net_spec(seed);
  const VideoShape in = spec.input_shape(2);
  const Tensor x = fill_random(in.frame_fold(), seed);
  std::uint64_t h = 0;
  for (Variant v : kAllVariants) {
    h = h * 0x100000001b3ULL ^ digest(Network(v, spec).forward(x, in).logits);
  }
  return h;
}

std::string self_path;

std::string run_self_digest() {
  const std::string cmd = "\"" + self_path + "\" --forward-digest " + std::to_string(kSeed);
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return "spawn failed";
  char buf[64] = {};
  std::string out;
  while (fgets(buf, sizeof buf, pipe)) out += buf;
  pclose(pipe);
  while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
  return out;
}

std::string hex(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

Outcome c8() {
  Outcome o;
  const auto workers = verify::check_determinism(kSeed, verify::default_shape_grid());
  o.pass = absorb(workers, o);

  std::vector<std::string> digests;
  for (std::size_t n : {1u, 2u, 8u}) {
    WorkerScope scope(n);
    digests.push_back(hex(forward_digest(kSeed)));
  }
  const std::string a = run_self_digest();
  const std::string b = run_self_digest();
  const bool same = digests[0] == digests[1] && digests[0] == digests[2] && a == digests[0] && b == digests[0];
  o.pass = o.pass && same;
  o.detail = std::to_string(workers.cases_run) + " block cases at 1/2/8 workers; network digest " + digests[0] +
             (same ? " identical across workers and two processes"
                   : " differs: in-process " + digests[1] + "/" + digests[2] + ", processes " + a + "/" + b) +
             o.detail;
  return o;
}

Outcome c9() {
  Outcome o;
  bench::BenchConfig cfg;
  cfg.shape = {1, 16, 28, 28, 96};
  cfg.reps = kBenchReps;
  cfg.seed = kSeed;
  const auto start = Clock::now();
  const auto records = bench::run_bench(cfg);
  const double elapsed = seconds_since(start);

  std::uint64_t conv = 0, add = 0, p3da = 0;
  bool reps_ok = records.size() == kAllVariants.size();
  for (const auto& r : records) {
    reps_ok = reps_ok && r.reps == kBenchReps;
    if (r.variant == Variant::Conv3D) conv = r.flops;
    if (r.variant == Variant::ProposedAdd) add = r.flops;
    if (r.variant == Variant::P3D_A) p3da = r.flops;
  }
  const bool ordered = add > 0 && add < p3da && p3da < conv;
  o.pass = reps_ok && ordered && elapsed < kBenchSeconds;
  o.detail = std::to_string(records.size()) + " variants x " + std::to_string(kBenchReps) + " reps in " +
             fmt("%.1f s", elapsed) + " (limit 300 s); flops ProposedAdd " + std::to_string(add) +
             " < P3D_A " + std::to_string(p3da) + " < Conv3D " + std::to_string(conv) +
             (ordered ? "" : " VIOLATED");
  return o;
}

struct Criterion {
  const char* id;
  const char* title;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  self_path = argv[0];
  if (argc == 3 && std::string(argv[1]) == "--forward-digest") {
    std::cout << hex(forward_digest(std::stoull(argv[2]))) << '\n';
    return 0;
  }

  const std::vector<Criterion> criteria{
      {"c1", "parameter delta, add fusion", c1},
      {"c2", "parameter delta, concat fusion", c2},
      {"c3", "(2+1)D parameter preservation", c3},
      {"c4", "FLOP ratio", c4},
      {"c5", "oracle equivalences", c5},
      {"c6", "rank ceiling", c6},
      {"c7", "shape contracts", c7},
      {"c8", "determinism", c8},
      {"c9", "benchmark sanity", c9},
  };

  std::vector<std::string> selected(argv + 1, argv + argc);
  for (const auto& id : selected) {
    bool known = false;
    for (const auto& c : criteria) known = known || id == c.id;
    if (!known) {
      std::cerr << "unknown criterion '" << id << "'\n";
      return 2;
    }
  }

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.id << " " << c.title << ": " << o.detail << std::endl;
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
