#include "flatconv/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

namespace flatconv {

namespace {

std::atomic<bool> g_rank_tracking{false};
std::atomic<std::size_t> g_max_rank{0};

void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > kMaxRank) {
    throw RankError("tensor rank must be in [1, 5], got " + std::to_string(shape.size()));
  }
  for (auto e : shape) {
    if (e == 0) throw ShapeError("zero extent in shape " + to_string(shape));
  }
}

// Splits shape around `axis` into (outer, extent, inner) for axis-wise ops.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

}  // namespace

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void RankTracker::enable() { g_rank_tracking.store(true); }
void RankTracker::disable() { g_rank_tracking.store(false); }
void RankTracker::reset() { g_max_rank.store(0); }
bool RankTracker::enabled() { return g_rank_tracking.load(); }
std::size_t RankTracker::max_rank_observed() { return g_max_rank.load(); }

void RankTracker::observe(std::size_t rank) {
  if (!g_rank_tracking.load(std::memory_order_relaxed)) return;
  auto cur = g_max_rank.load(std::memory_order_relaxed);
  while (rank > cur && !g_max_rank.compare_exchange_weak(cur, rank)) {
  }
}

RankTracker::Session::Session() : was_enabled_(RankTracker::enabled()) {
  RankTracker::reset();
  RankTracker::enable();
}

RankTracker::Session::~Session() {
  if (!was_enabled_) RankTracker::disable();
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_ = std::make_shared<std::vector<double>>(element_count(shape_), 0.0);
  RankTracker::observe(shape_.size());
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  validate_shape(shape_);
  if (values.size() != element_count(shape_)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     to_string(shape_) + " (" + std::to_string(element_count(shape_)) + ")");
  }
  data_ = std::make_shared<std::vector<double>>(std::move(values));
  RankTracker::observe(shape_.size());
}

Tensor Tensor::full(Shape shape, double value) {
  const auto n = element_count(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape_));
  }
  return shape_[axis];
}

std::span<const double> Tensor::data() const {
  if (!data_) return {};
  return {data_->data(), data_->size()};
}

std::span<double> Tensor::mutable_data() {
  if (!data_) return {};
  if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
  return {data_->data(), data_->size()};
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw RankError("index rank " + std::to_string(index.size()) + " vs tensor rank " +
                    std::to_string(shape_.size()));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw ShapeError("index out of range on axis " + std::to_string(axis));
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double Tensor::at(std::initializer_list<std::size_t> index) const { return (*data_)[offset(index)]; }

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const auto da = a.data();
  const auto db = b.data();
  return std::memcmp(da.data(), db.data(), da.size() * sizeof(double)) == 0;
}

void VideoShape::validate() const {
  if (batch == 0 || frames == 0 || width == 0 || height == 0 || channels == 0) {
    throw ShapeError("video extents must be >= 1, got " + to_string(*this));
  }
}

std::string to_string(const VideoShape& vs) { return to_string(vs.as_5d()); }

Tensor reshape(const Tensor& t, Shape new_shape) {
  validate_shape(new_shape);
  const auto want = element_count(new_shape);
  if (want != t.size()) {
    throw ShapeError("reshape element-count mismatch: " + to_string(t.shape()) + " has " +
                     std::to_string(t.size()) + " elements, " + to_string(new_shape) + " has " +
                     std::to_string(want));
  }
  Tensor out;
  out.shape_ = std::move(new_shape);
  out.data_ = t.data_;
  RankTracker::observe(out.shape_.size());
  return out;
}

Tensor pad_same(const Tensor& t, std::size_t axis, std::size_t kernel_extent) {
  if (kernel_extent == 0 || kernel_extent % 2 == 0) {
    throw GeometryError("pad_same requires an odd kernel extent, got " +
                        std::to_string(kernel_extent));
  }
  const auto split = split_at(t.shape(), axis);
  if (kernel_extent == 1) return t;
  const std::size_t pad = kernel_extent / 2;
  Shape shape = t.shape();
  shape[axis] += 2 * pad;
  Tensor out(shape);
  auto dst = out.mutable_data();
  const auto src = t.data();
  const std::size_t row = split.extent * split.inner;
  const std::size_t padded_row = shape[axis] * split.inner;
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(src.begin() + o * row, row, dst.begin() + o * padded_row + pad * split.inner);
  }
  return out;
}

Tensor crop(const Tensor& t, std::size_t axis, std::size_t begin, std::size_t extent) {
  const auto split = split_at(t.shape(), axis);
  if (extent == 0 || begin + extent > split.extent) {
    throw ShapeError("crop range out of bounds on axis " + std::to_string(axis));
  }
  Shape shape = t.shape();
  shape[axis] = extent;
  Tensor out(shape);
  auto dst = out.mutable_data();
  const auto src = t.data();
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(src.begin() + (o * split.extent + begin) * split.inner, extent * split.inner,
                dst.begin() + o * extent * split.inner);
  }
  return out;
}

Tensor stride_slice(const Tensor& t, std::size_t axis, std::size_t step) {
  if (step == 0) throw GeometryError("stride_slice step must be >= 1");
  const auto split = split_at(t.shape(), axis);
  if (step == 1) return t;
  const std::size_t kept = (split.extent + step - 1) / step;
  Shape shape = t.shape();
  shape[axis] = kept;
  Tensor out(shape);
  auto dst = out.mutable_data();
  const auto src = t.data();
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t k = 0; k < kept; ++k) {
      std::copy_n(src.begin() + (o * split.extent + k * step) * split.inner, split.inner,
                  dst.begin() + (o * kept + k) * split.inner);
    }
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto dst = out.mutable_data();
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = x[i] + y[i];
  return out;
}

Tensor relu(const Tensor& t) {
  Tensor out(t.shape());
  auto dst = out.mutable_data();
  const auto src = t.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
  return out;
}

Tensor scale(const Tensor& t, double factor) {
  Tensor out(t.shape());
  auto dst = out.mutable_data();
  const auto src = t.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i] * factor;
  return out;
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw ShapeError("concat_last: leading extents differ " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  const std::size_t ca = a.shape().back();
  const std::size_t cb = b.shape().back();
  Shape shape = a.shape();
  shape.back() = ca + cb;
  Tensor out(shape);
  auto dst = out.mutable_data();
  const auto xa = a.data();
  const auto xb = b.data();
  const std::size_t rows = a.size() / ca;
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xa.begin() + r * ca, ca, dst.begin() + r * (ca + cb));
    std::copy_n(xb.begin() + r * cb, cb, dst.begin() + r * (ca + cb) + ca);
  }
  return out;
}

std::uint64_t SplitMix64::next() {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Tensor fill_random(Shape shape, std::uint64_t seed) {
  const auto n = element_count(shape);
  std::vector<double> values(n);
  SplitMix64 rng(seed);
  constexpr double kScale = 1.0 / static_cast<double>(1u << 23);
  for (auto& v : values) v = static_cast<double>(rng.next() >> 40) * kScale - 1.0;
  return Tensor(std::move(shape), std::move(values));
}

std::uint64_t digest(const Tensor& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (auto e : t.shape()) {
    const std::uint64_t e64 = e;
    mix(&e64, sizeof e64);
  }
  const auto d = t.data();
  mix(d.data(), d.size() * sizeof(double));
  return h;
}

}  // namespace flatconv
