#include <gtest/gtest.h>

#include <cmath>

#include "flatconv/conv.hpp"
#include "flatconv/parallel.hpp"

using namespace flatconv;

namespace {

// Bounds-checked direct convolution; taps that fall outside the input are
// skipped instead of reading padding.
Tensor brute_conv2d(const Tensor& x, const Tensor& w, std::size_t sa, std::size_t sb) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  const std::size_t oa = (xs[1] + sa - 1) / sa, ob = (xs[2] + sb - 1) / sb;
  Tensor out({xs[0], oa, ob, ws[3]});
  auto y = out.mutable_data();
  const long pa = static_cast<long>(ws[0] / 2), pb = static_cast<long>(ws[1] / 2);
  for (std::size_t n = 0; n < xs[0]; ++n)
    for (std::size_t i = 0; i < oa; ++i)
      for (std::size_t j = 0; j < ob; ++j)
        for (std::size_t s = 0; s < ws[3]; ++s) {
          double acc = 0.0;
          for (std::size_t a = 0; a < ws[0]; ++a)
            for (std::size_t b = 0; b < ws[1]; ++b) {
              const long ia = static_cast<long>(i * sa + a) - pa;
              const long ib = static_cast<long>(j * sb + b) - pb;
              if (ia < 0 || ib < 0 || ia >= static_cast<long>(xs[1]) || ib >= static_cast<long>(xs[2])) continue;
              for (std::size_t c = 0; c < xs[3]; ++c) {
                acc += x.at({n, static_cast<std::size_t>(ia), static_cast<std::size_t>(ib), c}) *
                       w.at({a, b, c, s});
              }
            }
          y[((n * oa + i) * ob + j) * ws[3] + s] = acc;
        }
  return out;
}

double max_abs(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST(OutExtent, CeilOfInputOverStride) {
  EXPECT_EQ(out_extent(28, 3, 1), 28u);
  EXPECT_EQ(out_extent(28, 3, 2), 14u);
  EXPECT_EQ(out_extent(7, 3, 2), 4u);
  EXPECT_EQ(out_extent(1, 5, 3), 1u);
}

TEST(Conv2d, OnesKernelCountsInBoundsNeighbours) {
  const Tensor x = Tensor::full({1, 3, 3, 1}, 1.0);
  const Tensor w = Tensor::full({3, 3, 1, 1}, 1.0);
  const Tensor y = conv2d(x, w, {1, 1});
  EXPECT_EQ(y.at({0, 1, 1, 0}), 9.0);
  EXPECT_EQ(y.at({0, 0, 1, 0}), 6.0);
  EXPECT_EQ(y.at({0, 0, 0, 0}), 4.0);
}

TEST(Conv2d, PointwiseIdentityKernel) {
  const Tensor x = fill_random({2, 4, 5, 3}, 1);
  Tensor w({1, 1, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) w.mutable_data()[c * 3 + c] = 1.0;
  EXPECT_TRUE(bit_equal(conv2d(x, w, {1, 1}), x));
}

TEST(Conv2d, MatchesBruteForceWithStride) {
  const Tensor x = fill_random({1, 5, 5, 2}, 2);
  const Tensor w = fill_random({3, 3, 2, 4}, 3);
  const Tensor y = conv2d(x, w, {2, 2});
  EXPECT_EQ(y.shape(), (Shape{1, 3, 3, 4}));
  EXPECT_LT(max_abs(y, brute_conv2d(x, w, 2, 2)), 1e-12);
}

TEST(Conv2d, IndependentAxisStrides) {
  const Tensor x = fill_random({2, 6, 9, 3}, 4);
  const Tensor w = fill_random({3, 1, 3, 2}, 5);
  const Tensor y = conv2d(x, w, {2, 3});
  EXPECT_EQ(y.shape(), (Shape{2, 3, 3, 2}));
  EXPECT_LT(max_abs(y, brute_conv2d(x, w, 2, 3)), 1e-12);
}

TEST(Conv2d, BiasIsAddedOncePerOutput) {
  const Tensor x({1, 2, 2, 1});
  WeightTensor w{fill_random({3, 3, 1, 2}, 1), Tensor({2}, {0.5, -1.5})};
  const Tensor y = conv2d(x, w, {1, 1});
  EXPECT_EQ(y.at({0, 1, 1, 0}), 0.5);
  EXPECT_EQ(y.at({0, 0, 1, 1}), -1.5);
}

TEST(Conv1d, OnesKernel) {
  const Tensor x = Tensor::full({1, 3, 1}, 1.0);
  const Tensor w = Tensor::full({3, 1, 1}, 1.0);
  const Tensor y = conv1d(x, w, 1);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{2, 3, 2}));
}

TEST(Conv1d, MatchesBruteForceWithStride) {
  const Tensor x = fill_random({2, 9, 3}, 6);
  const Tensor w = fill_random({3, 3, 5}, 7);
  const Tensor y = conv1d(x, w, 3);
  EXPECT_EQ(y.shape(), (Shape{2, 3, 5}));
  const Tensor ref = brute_conv2d(reshape(x, {2, 9, 1, 3}), reshape(w, {3, 1, 3, 5}), 3, 1);
  EXPECT_LT(max_abs(y, ref), 1e-12);
}

TEST(Conv3dOracle, OnesKernel) {
  const Tensor x = Tensor::full({1, 3, 3, 3, 1}, 1.0);
  const Tensor w = Tensor::full({3, 3, 3, 1, 1}, 1.0);
  const Tensor y = conv3d_oracle(x, w, {1, 1, 1});
  EXPECT_EQ(y.at({0, 1, 1, 1, 0}), 27.0);
  EXPECT_EQ(y.at({0, 0, 0, 0, 0}), 8.0);
  EXPECT_EQ(y.at({0, 0, 1, 1, 0}), 18.0);
}

TEST(Conv3dOracle, StridedShape) {
  const Tensor x = fill_random({2, 4, 6, 8, 3}, 1);
  const Tensor w = fill_random({3, 3, 3, 3, 5}, 2);
  EXPECT_EQ(conv3d_oracle(x, w, {2, 2, 2}).shape(), (Shape{2, 2, 3, 4, 5}));
}

TEST(Conv3dOracle, OneHotKernelIsShift) {
  // A single unit tap at (0, 1, 1) reads the previous frame at the same pixel.
  const Tensor x = fill_random({1, 4, 3, 3, 1}, 8);
  Tensor w({3, 3, 3, 1, 1});
  w.mutable_data()[(0 * 3 + 1) * 3 + 1] = 1.0;
  const Tensor y = conv3d_oracle(x, w, {1, 1, 1});
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        const double want = t == 0 ? 0.0 : x.at({0, t - 1, i, j, 0});
        EXPECT_EQ(y.at({0, t, i, j, 0}), want);
      }
}

TEST(Conv3dOracle, SpatialOnlyKernelMatchesConv2dOnFrames) {
  const Tensor x = fill_random({2, 3, 5, 4, 2}, 9);
  const Tensor w = fill_random({1, 3, 3, 2, 3}, 10);
  const Tensor y3 = conv3d_oracle(x, w, {1, 1, 1});
  const Tensor y2 = conv2d(reshape(x, {6, 5, 4, 2}), reshape(w, {3, 3, 2, 3}), {1, 1});
  EXPECT_LT(max_abs(reshape(y3, {6, 5, 4, 3}), y2), 1e-12);
}

TEST(Conv, Linearity) {
  const Tensor x1 = fill_random({1, 6, 6, 3}, 11);
  const Tensor x2 = fill_random({1, 6, 6, 3}, 12);
  const Tensor w = fill_random({3, 3, 3, 4}, 13);
  const Tensor lhs = conv2d(add(scale(x1, 2.0), x2), w, {1, 1});
  const Tensor rhs = add(scale(conv2d(x1, w, {1, 1}), 2.0), conv2d(x2, w, {1, 1}));
  EXPECT_LT(max_abs(lhs, rhs), 1e-12);
}

TEST(Conv, SeparableKernelEqualsTwoPasses) {
  // K[a,b] = u[a] v[b] applied channel-wise equals the [d,1] pass then the [1,d] pass.
  const Tensor x = fill_random({2, 7, 6, 2}, 14);
  const std::vector<double> u{0.3, -1.1, 0.7}, v{1.5, 0.2, -0.4};
  Tensor full({3, 3, 2, 2}), wu({3, 1, 2, 2}), wv({1, 3, 2, 2});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t a = 0; a < 3; ++a) {
      wu.mutable_data()[(a * 2 + c) * 2 + c] = u[a];
      wv.mutable_data()[(a * 2 + c) * 2 + c] = v[a];
      for (std::size_t b = 0; b < 3; ++b) full.mutable_data()[((a * 3 + b) * 2 + c) * 2 + c] = u[a] * v[b];
    }
  const Tensor direct = conv2d(x, full, {1, 1});
  const Tensor passes = conv2d(conv2d(x, wu, {1, 1}), wv, {1, 1});
  EXPECT_LT(max_abs(direct, passes), 1e-12);
}

TEST(Conv, WorkerCountDoesNotChangeBits) {
  const Tensor x = fill_random({3, 9, 7, 5}, 15);
  const Tensor w = fill_random({3, 3, 5, 6}, 16);
  const Tensor x5 = fill_random({1, 4, 5, 6, 3}, 17);
  const Tensor w5 = fill_random({3, 3, 3, 3, 4}, 18);
  Tensor ref2, ref3;
  {
    WorkerScope one(1);
    ref2 = conv2d(x, w, {2, 1});
    ref3 = conv3d_oracle(x5, w5, {1, 2, 1});
  }
  for (std::size_t n : {2u, 3u, 8u}) {
    WorkerScope scope(n);
    EXPECT_TRUE(bit_equal(conv2d(x, w, {2, 1}), ref2)) << n;
    EXPECT_TRUE(bit_equal(conv3d_oracle(x5, w5, {1, 2, 1}), ref3)) << n;
  }
}

TEST(MacCounter, CountsEveryMultiplyIncludingPadding) {
  const Tensor x = fill_random({2, 6, 6, 3}, 1);
  const Tensor w = fill_random({3, 3, 3, 4}, 2);
  MacCounter counter;
  conv2d(x, w, {2, 2});
  EXPECT_EQ(counter.count(), 2u * 3 * 3 * 9 * 3 * 4);
}

TEST(MacCounter, NestedScopesReceiveOwnCounts) {
  const Tensor x = fill_random({1, 4, 1}, 1);
  const Tensor w = fill_random({3, 1, 2}, 2);
  MacCounter outer;
  conv1d(x, w, 1);
  {
    MacCounter inner;
    conv1d(x, w, 2);
    EXPECT_EQ(inner.count(), 2u * 3 * 2);
  }
  EXPECT_EQ(outer.count(), 4u * 3 * 2);
}

TEST(Conv, ErrorPaths) {
  const Tensor x({1, 4, 4, 2});
  EXPECT_THROW(conv2d(x, Tensor({2, 3, 2, 1}), {1, 1}), GeometryError);  // even kernel
  EXPECT_THROW(conv2d(x, Tensor({3, 3, 3, 1}), {1, 1}), DimensionError);  // channel mismatch
  EXPECT_THROW(conv2d(x, Tensor({3, 3, 2, 1}), {0, 1}), GeometryError);
  EXPECT_THROW(conv2d(Tensor({4, 4, 2}), Tensor({3, 3, 2, 1}), {1, 1}), Error);
  EXPECT_THROW(conv1d(Tensor({1, 4, 2}), Tensor({3, 2, 1}), 0), GeometryError);
  KernelSpec spec;
  spec.w = 4;
  EXPECT_THROW(spec.validate(), GeometryError);
}
