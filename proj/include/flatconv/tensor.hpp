#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace flatconv {

// Error hierarchy shared by every module.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ShapeError : public Error {
 public:
  using Error::Error;
};
class RankError : public Error {
 public:
  using Error::Error;
};
class DimensionError : public Error {
 public:
  using Error::Error;
};
class GeometryError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline constexpr std::size_t kMaxRank = 5;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

// Process-wide high-water mark of tensor ranks. Every Tensor construction
// reports its rank while tracking is enabled.
class RankTracker {
 public:
  static void enable();
  static void disable();
  static void reset();
  static bool enabled();
  static std::size_t max_rank_observed();
  static void observe(std::size_t rank);

  // Enables and resets on construction, restores the prior enabled state on
  // destruction.
  class Session {
   public:
    Session();
    ~Session();
    Session(const Session&) = delete;
    Session& operator=(const Session&) = delete;
    std::size_t max_rank() const { return RankTracker::max_rank_observed(); }

   private:
    bool was_enabled_;
  };
};

// Dense row-major tensor of doubles. Storage is shared between copies and
// reshapes; writes through mutable_data() detach first.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape);  // zero filled
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  std::size_t dim(std::size_t axis) const;

  std::span<const double> data() const;
  std::span<double> mutable_data();

  double at(std::initializer_list<std::size_t> index) const;
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  bool shares_storage_with(const Tensor& other) const { return data_ == other.data_; }

 private:
  friend Tensor reshape(const Tensor& t, Shape new_shape);

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
};

bool bit_equal(const Tensor& a, const Tensor& b);

// Logical [B, T, X, Y, C] descriptor for a video whose storage stays rank <= 4.
struct VideoShape {
  std::size_t batch = 1;
  std::size_t frames = 1;
  std::size_t width = 1;
  std::size_t height = 1;
  std::size_t channels = 1;

  void validate() const;
  std::size_t elements() const { return batch * frames * width * height * channels; }
  Shape as_5d() const { return {batch, frames, width, height, channels}; }
  // [B*T, X, Y, C], the canonical storage layout between blocks.
  Shape frame_fold() const { return {batch * frames, width, height, channels}; }
  // [B, T, X*Y, C]
  Shape pixel_fold() const { return {batch, frames, width * height, channels}; }

  friend bool operator==(const VideoShape&, const VideoShape&) = default;
};

std::string to_string(const VideoShape& vs);

Tensor reshape(const Tensor& t, Shape new_shape);

// Zero-pads floor(k/2) entries on both sides of `axis`.
Tensor pad_same(const Tensor& t, std::size_t axis, std::size_t kernel_extent);

// Inverse of pad_same for a given per-side pad width.
Tensor crop(const Tensor& t, std::size_t axis, std::size_t begin, std::size_t extent);

// Every `step`-th entry along `axis`, starting at 0.
Tensor stride_slice(const Tensor& t, std::size_t axis, std::size_t step);

Tensor add(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& t);
Tensor concat_last(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, double factor);

struct SplitMix64 {
  std::uint64_t state;
  explicit SplitMix64(std::uint64_t seed) : state(seed) {}
  std::uint64_t next();
};

// Deterministic values in [-1, 1): (top 24 bits of each splitmix64 output)/2^23 - 1.
Tensor fill_random(Shape shape, std::uint64_t seed);

// 64-bit FNV-1a over the raw bytes of the shape and values.
std::uint64_t digest(const Tensor& t);

}  // namespace flatconv
