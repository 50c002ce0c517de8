#include "oodattack/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "oodattack/errors.hpp"

namespace oodattack {

namespace {

std::size_t extent_product(const Tensor::Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(extent_product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (extent_product(shape_) != data_.size()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string(shape_));
  }
}

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor({rows, cols}, std::move(v));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> flat;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("ragged matrix literal");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(flat));
}

std::size_t Tensor::rows() const noexcept {
  if (shape_.size() < 2) return 1;
  return shape_[0];
}

std::size_t Tensor::cols() const noexcept {
  if (shape_.empty()) return 1;
  return shape_.back();
}

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

std::string shape_string(const Tensor::Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor slice_rows(const Tensor& m, std::size_t begin, std::size_t end) {
  const std::size_t c = m.cols();
  if (end > m.rows() || begin > end) throw DimensionError("row slice out of range for " + shape_string(m.shape()));
  std::vector<double> out(m.data().begin() + begin * c, m.data().begin() + end * c);
  return Tensor({end - begin, c}, std::move(out));
}

Tensor gather_rows(const Tensor& m, std::span<const std::size_t> index) {
  const std::size_t c = m.cols();
  std::vector<double> out;
  out.reserve(index.size() * c);
  for (std::size_t r : index) {
    auto src = m.row(r);
    out.insert(out.end(), src.begin(), src.end());
  }
  return Tensor({index.size(), c}, std::move(out));
}

Tensor stack_rows(const Tensor& top, const Tensor& bottom) {
  if (top.cols() != bottom.cols()) {
    throw DimensionError("cannot stack " + shape_string(top.shape()) + " on " + shape_string(bottom.shape()));
  }
  std::vector<double> out(top.values());
  out.insert(out.end(), bottom.values().begin(), bottom.values().end());
  return Tensor({top.rows() + bottom.rows(), top.cols()}, std::move(out));
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw DimensionError("cannot stack zero rows");
  const std::size_t d = rows.front().size();
  std::vector<double> out;
  out.reserve(rows.size() * d);
  for (const Tensor& r : rows) {
    if (r.size() != d || r.rows() != 1) throw DimensionError("cannot stack row " + shape_string(r.shape()));
    out.insert(out.end(), r.values().begin(), r.values().end());
  }
  return Tensor({rows.size(), d}, std::move(out));
}

}  // namespace oodattack
