#include "end2/core/parameter_set.hpp"

#include <algorithm>

#include <torch/torch.h>

#include "end2/core/errors.hpp"

namespace end2 {

namespace {

std::string shape_string(const torch::Tensor& t) {
  std::string s = "(";
  for (std::int64_t i = 0; i < t.dim(); ++i) {
    if (i) s += ",";
    s += std::to_string(t.size(i));
  }
  return s + ")";
}

}  // namespace

void ParameterSet::add(std::string name, torch::Tensor value) {
  if (contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  entries_.emplace_back(std::move(name), value.contiguous());
}

bool ParameterSet::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.first == name; });
}

const torch::Tensor& ParameterSet::at(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return e.second;
  }
  throw ContractError("no parameter named '" + std::string(name) + "'");
}

torch::Tensor& ParameterSet::at(std::string_view name) {
  return const_cast<torch::Tensor&>(std::as_const(*this).at(name));
}

std::int64_t ParameterSet::numel() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.first);
  return out;
}

std::vector<torch::Tensor> ParameterSet::tensors() const {
  std::vector<torch::Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

bool ParameterSet::same_schema(const ParameterSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& [na, ta] = entries_[i];
    const auto& [nb, tb] = other.entries_[i];
    if (na != nb || ta.sizes() != tb.sizes() || ta.scalar_type() != tb.scalar_type()) return false;
  }
  return true;
}

void ParameterSet::require_same_schema(const ParameterSet& other, std::string_view context) const {
  if (entries_.size() != other.entries_.size()) {
    throw ContractError(std::string(context) + ": parameter count " + std::to_string(entries_.size()) + " vs " +
                        std::to_string(other.entries_.size()));
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& [na, ta] = entries_[i];
    const auto& [nb, tb] = other.entries_[i];
    if (na != nb || ta.sizes() != tb.sizes() || ta.scalar_type() != tb.scalar_type()) {
      throw ContractError(std::string(context) + ": entry " + std::to_string(i) + " is '" + na + "' " +
                          shape_string(ta) + " vs '" + nb + "' " + shape_string(tb));
    }
  }
}

ParameterSet ParameterSet::clone() const {
  torch::NoGradGuard no_grad;
  ParameterSet out;
  for (const auto& [name, t] : entries_) {
    out.add(name, t.detach().clone().requires_grad_(t.requires_grad()));
  }
  return out;
}

void ParameterSet::set_requires_grad(bool on) {
  for (auto& e : entries_) e.second.requires_grad_(on);
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) {
    if (e.second.grad().defined()) e.second.mutable_grad() = torch::Tensor();
  }
}

bool ParameterSet::identical(const ParameterSet& other) const {
  if (!same_schema(other)) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (!torch::equal(entries_[i].second, other.entries_[i].second)) return false;
  }
  return true;
}

ParameterSet ParameterSet::scaled(double factor) const {
  torch::NoGradGuard no_grad;
  ParameterSet out;
  for (const auto& [name, t] : entries_) out.add(name, (t * factor).detach().requires_grad_(t.requires_grad()));
  return out;
}

ParameterSet ParameterSet::operator+(const ParameterSet& other) const {
  require_same_schema(other, "ParameterSet::operator+");
  torch::NoGradGuard no_grad;
  ParameterSet out;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& [name, t] = entries_[i];
    out.add(name, (t + other.entries_[i].second).detach().requires_grad_(t.requires_grad()));
  }
  return out;
}

ParameterSet ParameterSet::blend(const ParameterSet& a, double weight, const ParameterSet& b) {
  ParameterSet out = a.clone();
  blend_into(out, weight, b);
  return out;
}

void ParameterSet::blend_into(ParameterSet& target, double weight, const ParameterSet& source) {
  target.require_same_schema(source, "blend");
  torch::NoGradGuard no_grad;
  const double keep = weight;
  const double take = 1.0 - weight;
  for (std::size_t i = 0; i < target.entries_.size(); ++i) {
    auto& dst = target.entries_[i].second;
    auto src = source.entries_[i].second.contiguous();
    if (!dst.is_contiguous()) throw ContractError("blend target must be contiguous");
    AT_DISPATCH_FLOATING_TYPES(dst.scalar_type(), "blend_into", [&] {
      scalar_t* d = dst.data_ptr<scalar_t>();
      const scalar_t* s = src.data_ptr<scalar_t>();
      const std::int64_t n = dst.numel();
      for (std::int64_t j = 0; j < n; ++j) {
        d[j] = static_cast<scalar_t>(keep * static_cast<double>(d[j]) + take * static_cast<double>(s[j]));
      }
    });
  }
}

}  // namespace end2
