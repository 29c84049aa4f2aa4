#include "hqdm/optim.hpp"

#include <algorithm>
#include <cmath>

namespace hqdm {

namespace {

inline double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

void AdamW::step(std::span<ParamSlot> slots, const GradMap& grads) {
  for (const auto& [name, grad] : grads) {
    auto it = std::find_if(slots.begin(), slots.end(), [&](const ParamSlot& s) { return s.name == name; });
    if (it == slots.end()) throw ValidationError("gradient for unknown parameter '" + name + "'");
    ParamSlot& slot = *it;
    if (grad.value.size() != slot.value.size()) {
      throw ValidationError("gradient size mismatch for '" + name + "'");
    }
    Moments& mo = state_[name];
    if (mo.m.empty()) {
      mo.m.assign(slot.value.size(), 0.0);
      mo.v.assign(slot.value.size(), 0.0);
      mo.steps.assign(slot.value.size(), 0);
    }
    std::size_t lo = 0, hi = slot.value.size();
    if (grad.only_index) {
      lo = *grad.only_index;
      hi = lo + 1;
      if (hi > slot.value.size()) throw ValidationError("only_index out of range for '" + name + "'");
    }
    for (std::size_t i = lo; i < hi; ++i) {
      const double g = grad.value[i];
      if (!std::isfinite(g)) throw NumericError("non-finite gradient for parameter '" + name + "'");
      double m = beta1_ * mo.m[i] + (1.0 - beta1_) * g;
      double v = beta2_ * mo.v[i] + (1.0 - beta2_) * g * g;
      const std::int64_t n = ++mo.steps[i];
      const double mhat = m / (1.0 - std::pow(beta1_, static_cast<double>(n)));
      const double vhat = v / (1.0 - std::pow(beta2_, static_cast<double>(n)));
      double w = slot.value[i];
      w -= slot.lr * slot.weight_decay * w;
      w -= slot.lr * mhat / (std::sqrt(vhat) + eps_);
      if (slot.floor) w = std::max(w, *slot.floor);
      if (round_to_f32_) {
        m = f32(m);
        v = f32(v);
        w = f32(w);
        if (slot.floor) w = std::max(w, f32(*slot.floor));
      }
      mo.m[i] = m;
      mo.v[i] = v;
      slot.value[i] = w;
    }
  }
}

}  // namespace hqdm
