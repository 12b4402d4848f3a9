#include "efaprune/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "efaprune/error.hpp"

namespace efaprune {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::io: return "io";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::count_mismatch: return "count_mismatch";
    case ErrorCode::unsupported_version: return "unsupported_version";
    case ErrorCode::integrity: return "integrity";
    case ErrorCode::infeasible: return "infeasible";
    case ErrorCode::diverged: return "diverged";
    case ErrorCode::numerical: return "numerical";
    case ErrorCode::busy: return "busy";
  }
  return "unknown";
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '<';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << '>';
  return os.str();
}

std::size_t shape_volume(const Shape& shape) {
  std::size_t v = 1;
  for (auto e : shape) v *= e;
  return v;
}

namespace {

void check_extents(const Shape& shape) {
  require(!shape.empty(), ErrorCode::shape_mismatch, "tensor shape must have at least one extent");
  for (auto e : shape)
    require(e > 0, ErrorCode::shape_mismatch, "tensor extents must be positive: " + shape_string(shape));
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  values_.assign(shape_volume(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_extents(shape_);
  require(values_.size() == shape_volume(shape_), ErrorCode::shape_mismatch,
          "buffer of " + std::to_string(values_.size()) + " values does not fit shape " +
              shape_string(shape_));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  require(rows.size() > 0, ErrorCode::shape_mismatch, "matrix needs at least one row");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> values;
  values.reserve(rows.size() * cols);
  for (const auto& row : rows) {
    require(row.size() == cols, ErrorCode::shape_mismatch, "ragged matrix rows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), cols}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  require(axis < shape_.size(), ErrorCode::shape_mismatch,
          "axis " + std::to_string(axis) + " out of range for " + shape_string(shape_));
  return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_volume(shape) == values_.size(), ErrorCode::shape_mismatch,
          "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), values_);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

}  // namespace efaprune
