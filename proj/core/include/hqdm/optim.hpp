#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hqdm/tensor.hpp"

namespace hqdm {

/// A named view into trainable storage owned by a model.
struct ParamSlot {
  std::string name;
  std::span<double> value;
  double lr = 1e-3;
  double weight_decay = 0.0;
  /// Lower bound enforced after each update (scales use kMinScale).
  std::optional<double> floor;
};

/// Gradient for a slot. `only_index` restricts the update to one element,
/// leaving the other elements and their moments untouched.
struct Grad {
  Tensor value;
  std::optional<std::size_t> only_index;
};

using GradMap = std::map<std::string, Grad>;

/// Decoupled-weight-decay Adam with per-element step counts.
class AdamW {
 public:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
    std::vector<std::int64_t> steps;
  };

  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, bool round_to_f32 = false)
      : beta1_(beta1), beta2_(beta2), eps_(eps), round_to_f32_(round_to_f32) {}

  /// Applies every gradient whose name matches a slot; unknown names throw.
  void step(std::span<ParamSlot> slots, const GradMap& grads);

  const std::map<std::string, Moments>& state() const noexcept { return state_; }
  std::map<std::string, Moments>& state() noexcept { return state_; }

 private:
  double beta1_, beta2_, eps_;
  bool round_to_f32_;
  std::map<std::string, Moments> state_;
};

}  // namespace hqdm
