#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace codemix {

/// Named dense row-major array of doubles.
struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;
  /// Whether AdamW weight decay applies (false for biases and norm gains).
  bool decay = false;

  Tensor() = default;
  Tensor(std::string name, std::vector<std::size_t> shape, bool decay);

  std::size_t numel() const noexcept { return data.size(); }
  double* ptr() noexcept { return data.data(); }
  const double* ptr() const noexcept { return data.data(); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape) noexcept;

/// Ordered collection of tensors. Gradients and optimizer moments use the
/// same layout as the parameters they belong to.
class TensorSet {
 public:
  TensorSet() = default;

  std::size_t add(Tensor t);
  std::size_t size() const noexcept { return tensors_.size(); }
  Tensor& operator[](std::size_t i) { return tensors_.at(i); }
  const Tensor& operator[](std::size_t i) const { return tensors_.at(i); }
  std::optional<std::size_t> find(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);

  auto begin() noexcept { return tensors_.begin(); }
  auto end() noexcept { return tensors_.end(); }
  auto begin() const noexcept { return tensors_.begin(); }
  auto end() const noexcept { return tensors_.end(); }

  TensorSet zeros_like() const;
  void fill(double value);
  std::size_t numel() const noexcept;
  bool all_finite() const noexcept;
  bool same_layout(const TensorSet& other) const noexcept;
  double global_norm() const noexcept;
  void scale(double factor);
  /// this += factor * other (layouts must match).
  void add_scaled(const TensorSet& other, double factor);

  friend bool operator==(const TensorSet&, const TensorSet&) = default;

 private:
  std::vector<Tensor> tensors_;
};

}  // namespace codemix
