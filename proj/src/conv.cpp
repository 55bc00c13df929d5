#include "flatconv/conv.hpp"

#include <algorithm>
#include <atomic>
#include <string>
#include <vector>

#include "flatconv/parallel.hpp"

namespace flatconv {

struct MacCounter::State {
  std::atomic<std::uint64_t> macs{0};
};

namespace {

std::atomic<MacCounter::State*> g_active_counter{nullptr};

struct NoCount {
  void tick() {}
  void flush() {}
};

struct CountMacs {
  std::atomic<std::uint64_t>* sink;
  std::uint64_t local = 0;
  void tick() { ++local; }
  void flush() { sink->fetch_add(local, std::memory_order_relaxed); }
};

void require_odd(std::size_t k, const char* what) {
  if (k == 0 || k % 2 == 0) {
    throw GeometryError(std::string(what) + " kernel extent must be odd, got " + std::to_string(k));
  }
}

void require_stride(std::size_t s) {
  if (s == 0) throw GeometryError("stride must be >= 1");
}

void check_bias(const WeightTensor& w, std::size_t out_channels) {
  if (w.bias && (w.bias->rank() != 1 || w.bias->dim(0) != out_channels)) {
    throw DimensionError("bias must have shape [" + std::to_string(out_channels) + "], got " +
                         to_string(w.bias->shape()));
  }
}

// acc[s] += sum_c x[c] * w[c, s], summed in increasing c. Channels are
// taken four at a time; the left-to-right evaluation keeps the rounding
// sequence of the plain loop.
constexpr std::size_t kTile = 8;

template <typename Counter>
inline void accumulate_row(double* __restrict acc, const double* __restrict x,
                           const double* __restrict w, std::size_t cin, std::size_t cout,
                           Counter& counter) {
  std::size_t c = 0;
  for (; c + 4 <= cin; c += 4) {
    const double x0 = x[c], x1 = x[c + 1], x2 = x[c + 2], x3 = x[c + 3];
    const double* __restrict w0 = w + c * cout;
    const double* __restrict w1 = w0 + cout;
    const double* __restrict w2 = w1 + cout;
    const double* __restrict w3 = w2 + cout;
    for (std::size_t s = 0; s < cout; ++s) {
      acc[s] = acc[s] + x0 * w0[s] + x1 * w1[s] + x2 * w2[s] + x3 * w3[s];
      counter.tick();
      counter.tick();
      counter.tick();
      counter.tick();
    }
  }
  for (; c < cin; ++c) {
    const double xv = x[c];
    const double* __restrict wc = w + c * cout;
    for (std::size_t s = 0; s < cout; ++s) {
      acc[s] += xv * wc[s];
      counter.tick();
    }
  }
}

// out[n,i,j,:] = sum_{a,b,c} xp[n, i*sa + a, j*sb + b, c] * w[a,b,c,:] over a
// pre-padded input.
template <typename Counter>
void conv2d_padded(const Tensor& xp, const WeightTensor& w, std::array<std::size_t, 2> strides,
                   Tensor& out, Counter proto) {
  const auto& xs = xp.shape();
  const auto& ws = w.weights.shape();
  const auto& os = out.shape();
  const std::size_t pa = xs[1], pb = xs[2], cin = xs[3];
  const std::size_t ka = ws[0], kb = ws[1], cout = ws[3];
  const std::size_t oa = os[1], ob = os[2];
  const auto x = xp.data();
  const auto wt = w.weights.data();
  const std::span<const double> bias = w.bias ? w.bias->data() : std::span<const double>{};
  auto y = out.mutable_data();

  parallel_for(os[0] * oa * ob, [&](std::size_t begin, std::size_t end) {
    Counter counter = proto;
    // Tiles of consecutive outputs share each tap's weight slab while it is
    // still in cache. Per-output summation order is unchanged.
    const double* xrows[kTile];
    for (std::size_t r0 = begin; r0 < end; r0 += kTile) {
      const std::size_t tile = std::min(kTile, end - r0);
      for (std::size_t p = 0; p < tile * cout; ++p) y[r0 * cout + p] = 0.0;
      for (std::size_t a = 0; a < ka; ++a) {
        for (std::size_t b = 0; b < kb; ++b) {
          for (std::size_t p = 0; p < tile; ++p) {
            const std::size_t r = r0 + p;
            const std::size_t n = r / (oa * ob);
            const std::size_t i = (r / ob) % oa;
            const std::size_t j = r % ob;
            xrows[p] = x.data() + ((n * pa + i * strides[0] + a) * pb + j * strides[1] + b) * cin;
          }
          const double* wrow = wt.data() + (a * kb + b) * cin * cout;
          for (std::size_t p = 0; p < tile; ++p) {
            accumulate_row(y.data() + (r0 + p) * cout, xrows[p], wrow, cin, cout, counter);
          }
        }
      }
      if (!bias.empty()) {
        for (std::size_t p = 0; p < tile; ++p) {
          for (std::size_t s = 0; s < cout; ++s) y[(r0 + p) * cout + s] += bias[s];
        }
      }
    }
    counter.flush();
  });
}

template <typename Counter>
void conv3d_padded(const Tensor& xp, const WeightTensor& w, std::array<std::size_t, 3> strides,
                   Tensor& out, Counter proto) {
  const auto& xs = xp.shape();
  const auto& ws = w.weights.shape();
  const auto& os = out.shape();
  const std::size_t pt = xs[1], px = xs[2], py = xs[3], cin = xs[4];
  const std::size_t kt = ws[0], kx = ws[1], ky = ws[2], cout = ws[4];
  const std::size_t ot = os[1], ox = os[2], oy = os[3];
  const auto x = xp.data();
  const auto wt = w.weights.data();
  const std::span<const double> bias = w.bias ? w.bias->data() : std::span<const double>{};
  auto y = out.mutable_data();

  parallel_for(os[0] * ot * ox * oy, [&](std::size_t begin, std::size_t end) {
    Counter counter = proto;
    const double* xrows[kTile];
    for (std::size_t r0 = begin; r0 < end; r0 += kTile) {
      const std::size_t tile = std::min(kTile, end - r0);
      for (std::size_t p = 0; p < tile * cout; ++p) y[r0 * cout + p] = 0.0;
      for (std::size_t dt = 0; dt < kt; ++dt) {
        for (std::size_t dx = 0; dx < kx; ++dx) {
          for (std::size_t dy = 0; dy < ky; ++dy) {
            for (std::size_t p = 0; p < tile; ++p) {
              const std::size_t r = r0 + p;
              const std::size_t b = r / (ot * ox * oy);
              const std::size_t it = (r / (ox * oy)) % ot * strides[0] + dt;
              const std::size_t ix = (r / oy) % ox * strides[1] + dx;
              const std::size_t iy = r % oy * strides[2] + dy;
              xrows[p] = x.data() + (((b * pt + it) * px + ix) * py + iy) * cin;
            }
            const double* wrow = wt.data() + ((dt * kx + dx) * ky + dy) * cin * cout;
            for (std::size_t p = 0; p < tile; ++p) {
              accumulate_row(y.data() + (r0 + p) * cout, xrows[p], wrow, cin, cout, counter);
            }
          }
        }
      }
      if (!bias.empty()) {
        for (std::size_t p = 0; p < tile; ++p) {
          for (std::size_t s = 0; s < cout; ++s) y[(r0 + p) * cout + s] += bias[s];
        }
      }
    }
    counter.flush();
  });
}

}  // namespace

void KernelSpec::validate() const {
  if (t == 0 || w == 0 || h == 0 || c == 0 || out_channels == 0) {
    throw GeometryError("kernel extents and channel counts must be >= 1");
  }
  require_odd(t, "temporal");
  require_odd(w, "horizontal");
  require_odd(h, "vertical");
  for (auto s : strides) require_stride(s);
}

std::size_t out_extent(std::size_t in, std::size_t /*kernel*/, std::size_t stride) {
  return (in + stride - 1) / stride;
}

Tensor conv2d(const Tensor& x, const WeightTensor& w, std::array<std::size_t, 2> strides) {
  if (x.rank() != 4) throw RankError("conv2d expects a rank-4 input, got rank " + std::to_string(x.rank()));
  if (w.weights.rank() != 4) throw RankError("conv2d expects rank-4 weights [ka,kb,Cin,S]");
  const auto& ws = w.weights.shape();
  require_odd(ws[0], "conv2d");
  require_odd(ws[1], "conv2d");
  require_stride(strides[0]);
  require_stride(strides[1]);
  if (ws[2] != x.dim(3)) {
    throw DimensionError("conv2d channel mismatch: input has " + std::to_string(x.dim(3)) +
                         " channels, weights expect " + std::to_string(ws[2]));
  }
  check_bias(w, ws[3]);

  const Tensor xp = pad_same(pad_same(x, 1, ws[0]), 2, ws[1]);
  Tensor out({x.dim(0), out_extent(x.dim(1), ws[0], strides[0]),
              out_extent(x.dim(2), ws[1], strides[1]), ws[3]});
  if (auto* state = g_active_counter.load()) {
    conv2d_padded(xp, w, strides, out, CountMacs{&state->macs});
  } else {
    conv2d_padded(xp, w, strides, out, NoCount{});
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, std::array<std::size_t, 2> strides) {
  return conv2d(x, WeightTensor{w, std::nullopt}, strides);
}

Tensor conv1d(const Tensor& x, const WeightTensor& w, std::size_t stride) {
  if (x.rank() != 3) throw RankError("conv1d expects a rank-3 input, got rank " + std::to_string(x.rank()));
  if (w.weights.rank() != 3) throw RankError("conv1d expects rank-3 weights [k,Cin,S]");
  const auto& ws = w.weights.shape();
  WeightTensor as2d{reshape(w.weights, {ws[0], 1, ws[1], ws[2]}), w.bias};
  const Tensor y = conv2d(reshape(x, {x.dim(0), x.dim(1), 1, x.dim(2)}), as2d, {stride, 1});
  return reshape(y, {y.dim(0), y.dim(1), y.dim(3)});
}

Tensor conv1d(const Tensor& x, const Tensor& w, std::size_t stride) {
  return conv1d(x, WeightTensor{w, std::nullopt}, stride);
}

Tensor conv3d_oracle(const Tensor& x, const WeightTensor& w, std::array<std::size_t, 3> strides) {
  if (x.rank() != 5) throw RankError("conv3d_oracle expects a rank-5 input, got rank " + std::to_string(x.rank()));
  if (w.weights.rank() != 5) throw RankError("conv3d_oracle expects rank-5 weights [t,w,h,C,S]");
  const auto& ws = w.weights.shape();
  for (std::size_t a = 0; a < 3; ++a) {
    require_odd(ws[a], "conv3d");
    require_stride(strides[a]);
  }
  if (ws[3] != x.dim(4)) {
    throw DimensionError("conv3d channel mismatch: input has " + std::to_string(x.dim(4)) +
                         " channels, weights expect " + std::to_string(ws[3]));
  }
  check_bias(w, ws[4]);

  const Tensor xp = pad_same(pad_same(pad_same(x, 1, ws[0]), 2, ws[1]), 3, ws[2]);
  Tensor out({x.dim(0), out_extent(x.dim(1), ws[0], strides[0]),
              out_extent(x.dim(2), ws[1], strides[1]), out_extent(x.dim(3), ws[2], strides[2]),
              ws[4]});
  if (auto* state = g_active_counter.load()) {
    conv3d_padded(xp, w, strides, out, CountMacs{&state->macs});
  } else {
    conv3d_padded(xp, w, strides, out, NoCount{});
  }
  return out;
}

Tensor conv3d_oracle(const Tensor& x, const Tensor& w, std::array<std::size_t, 3> strides) {
  return conv3d_oracle(x, WeightTensor{w, std::nullopt}, strides);
}

MacCounter::MacCounter()
    : state_(std::make_unique<State>()), previous_(g_active_counter.exchange(state_.get())) {}

MacCounter::~MacCounter() {
  g_active_counter.store(previous_);
}

std::uint64_t MacCounter::count() const { return state_->macs.load(); }

}  // namespace flatconv
