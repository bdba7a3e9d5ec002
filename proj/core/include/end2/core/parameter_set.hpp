#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <torch/types.h>

namespace end2 {

/// Ordered, named collection of parameter tensors for one model component.
///
/// Entries keep insertion order, which is the canonical order used for
/// serialization and for pairing entries between two sets. Two sets have the
/// same schema when names, shapes and dtypes agree entry by entry.
class ParameterSet {
 public:
  using Entry = std::pair<std::string, torch::Tensor>;

  ParameterSet() = default;

  /// Adds a contiguous leaf tensor. Throws ContractError on a duplicate name.
  void add(std::string name, torch::Tensor value);

  bool contains(std::string_view name) const;
  const torch::Tensor& at(std::string_view name) const;
  torch::Tensor& at(std::string_view name);

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::int64_t numel() const;

  auto begin() noexcept { return entries_.begin(); }
  auto end() noexcept { return entries_.end(); }
  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

  std::vector<std::string> names() const;
  std::vector<torch::Tensor> tensors() const;

  bool same_schema(const ParameterSet& other) const;
  /// Throws ContractError naming the first mismatching entry.
  void require_same_schema(const ParameterSet& other, std::string_view context) const;

  /// Deep copy; gradient tracking flags are preserved, gradients are not.
  ParameterSet clone() const;
  void set_requires_grad(bool on);
  void zero_grad();

  /// Bit-exact comparison of all values (schema must match).
  bool identical(const ParameterSet& other) const;

  ParameterSet scaled(double factor) const;
  ParameterSet operator+(const ParameterSet& other) const;

  /// Returns weight*a + (1 - weight)*b element-wise, evaluated in double and
  /// rounded once to the parameter dtype. weight = 1 yields a exactly and
  /// weight = 0 yields b exactly.
  static ParameterSet blend(const ParameterSet& a, double weight, const ParameterSet& b);

  /// In-place form of blend: target <- weight*target + (1 - weight)*source.
  static void blend_into(ParameterSet& target, double weight, const ParameterSet& source);

 private:
  std::vector<Entry> entries_;
};

}  // namespace end2
