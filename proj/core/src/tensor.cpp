#include "codemix/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace codemix {

std::size_t shape_numel(const std::vector<std::size_t>& shape) noexcept {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::string name_, std::vector<std::size_t> shape_, bool decay_)
    : name(std::move(name_)), shape(std::move(shape_)), data(shape_numel(shape), 0.0), decay(decay_) {}

std::size_t TensorSet::add(Tensor t) {
  if (find(t.name)) throw std::invalid_argument("duplicate tensor '" + t.name + "'");
  tensors_.push_back(std::move(t));
  return tensors_.size() - 1;
}

std::optional<std::size_t> TensorSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name == name) return i;
  }
  return std::nullopt;
}

const Tensor& TensorSet::at(std::string_view name) const {
  if (auto i = find(name)) return tensors_[*i];
  throw std::out_of_range("no tensor named '" + std::string(name) + "'");
}

Tensor& TensorSet::at(std::string_view name) {
  if (auto i = find(name)) return tensors_[*i];
  throw std::out_of_range("no tensor named '" + std::string(name) + "'");
}

TensorSet TensorSet::zeros_like() const {
  TensorSet out;
  out.tensors_.reserve(tensors_.size());
  for (const auto& t : tensors_) out.tensors_.emplace_back(t.name, t.shape, t.decay);
  return out;
}

void TensorSet::fill(double value) {
  for (auto& t : tensors_) std::fill(t.data.begin(), t.data.end(), value);
}

std::size_t TensorSet::numel() const noexcept {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

bool TensorSet::all_finite() const noexcept {
  for (const auto& t : tensors_) {
    for (double v : t.data) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

bool TensorSet::same_layout(const TensorSet& other) const noexcept {
  if (tensors_.size() != other.tensors_.size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name != other.tensors_[i].name || tensors_[i].shape != other.tensors_[i].shape) return false;
  }
  return true;
}

double TensorSet::global_norm() const noexcept {
  double sq = 0.0;
  for (const auto& t : tensors_) {
    for (double v : t.data) sq += v * v;
  }
  return std::sqrt(sq);
}

void TensorSet::scale(double factor) {
  for (auto& t : tensors_) {
    for (auto& v : t.data) v *= factor;
  }
}

void TensorSet::add_scaled(const TensorSet& other, double factor) {
  if (!same_layout(other)) throw std::invalid_argument("tensor layouts differ");
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    auto& dst = tensors_[i].data;
    const auto& src = other.tensors_[i].data;
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += factor * src[k];
  }
}

}  // namespace codemix
