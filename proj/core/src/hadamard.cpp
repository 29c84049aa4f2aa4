#include "hqdm/hadamard.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace hqdm {

namespace {

void require_order(int k) {
  if (k < 0 || k > kMaxHadamardOrder) {
    throw ValidationError("Hadamard order " + std::to_string(k) + " outside [0, " +
                          std::to_string(kMaxHadamardOrder) + "]");
  }
}

}  // namespace

double hadamard_norm(int k) {
  const double half = (k % 2 != 0) ? std::sqrt(0.5) : 1.0;
  return std::ldexp(half, -(k / 2));
}

HadamardPlan make_plan(std::size_t dim, int k_preferred) {
  if (dim == 0) throw ValidationError("make_plan: dim must be >= 1");
  int k = 0;
  const int cap = std::min(std::max(k_preferred, 0), kMaxHadamardOrder);
  while (k < cap && dim % (std::size_t{1} << (k + 1)) == 0) ++k;
  return plan_with_order(dim, k);
}

HadamardPlan plan_with_order(std::size_t dim, int k) {
  require_order(k);
  const std::size_t block = std::size_t{1} << k;
  if (dim == 0 || dim % block != 0) {
    throw ValidationError("dimension " + std::to_string(dim) + " is not a multiple of 2^" + std::to_string(k));
  }
  return HadamardPlan{k, dim / block, dim, hadamard_norm(k)};
}

IntTensor build_hadamard_raw(int k) {
  require_order(k);
  const std::size_t n = std::size_t{1} << k;
  IntTensor h({n, n});
  h.at(0, 0) = 1;
  // Sylvester doubling: [[H, H], [H, -H]].
  for (std::size_t size = 1; size < n; size *= 2) {
    for (std::size_t i = 0; i < size; ++i) {
      for (std::size_t j = 0; j < size; ++j) {
        const std::int64_t v = h.at(i, j);
        h.at(i, j + size) = v;
        h.at(i + size, j) = v;
        h.at(i + size, j + size) = -v;
      }
    }
  }
  return h;
}

Tensor build_hadamard(int k) {
  const IntTensor raw = build_hadamard_raw(k);
  const double norm = hadamard_norm(k);
  Tensor h(raw.shape());
  for (std::size_t i = 0; i < raw.size(); ++i) h[i] = norm * static_cast<double>(raw[i]);
  return h;
}

Tensor build_block_hadamard(const HadamardPlan& plan) {
  const Tensor base = build_hadamard(plan.k);
  const std::size_t b = plan.block();
  Tensor h({plan.dim, plan.dim});
  for (std::size_t blk = 0; blk < plan.m; ++blk)
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j) h.at(blk * b + i, blk * b + j) = base.at(i, j);
  return h;
}

void fwht_raw_inplace(std::span<double> v) {
  const std::size_t n = v.size();
  for (std::size_t h = 1; h < n; h *= 2) {
    for (std::size_t i = 0; i < n; i += 2 * h) {
      for (std::size_t j = i; j < i + h; ++j) {
        const double a = v[j];
        const double b = v[j + h];
        v[j] = a + b;
        v[j + h] = a - b;
      }
    }
  }
}

void fwht_raw_inplace(std::span<std::int64_t> v) {
  const std::size_t n = v.size();
  for (std::size_t h = 1; h < n; h *= 2) {
    for (std::size_t i = 0; i < n; i += 2 * h) {
      for (std::size_t j = i; j < i + h; ++j) {
        std::int64_t s = 0, d = 0;
        if (__builtin_add_overflow(v[j], v[j + h], &s) || __builtin_sub_overflow(v[j], v[j + h], &d)) {
          throw OverflowError("integer Hadamard butterfly overflowed int64");
        }
        v[j] = s;
        v[j + h] = d;
      }
    }
  }
}

Tensor fwht(const Tensor& x, int k) {
  require_order(k);
  if (x.rank() == 0 || x.shape().back() != (std::size_t{1} << k)) {
    throw ValidationError("fwht: last axis of " + shape_str(x.shape()) + " is not 2^" + std::to_string(k));
  }
  return block_transform(x, plan_with_order(x.shape().back(), k));
}

Tensor block_transform(const Tensor& x, const HadamardPlan& plan) {
  if (x.rank() == 0 || x.shape().back() != plan.dim) {
    throw ValidationError("block_transform: last axis of " + shape_str(x.shape()) + " != plan dim " +
                          std::to_string(plan.dim));
  }
  Tensor out = x;
  if (plan.is_identity()) return out;
  const std::size_t b = plan.block();
  std::span<double> all = out.data();
  for (std::size_t off = 0; off < all.size(); off += b) {
    std::span<double> seg = all.subspan(off, b);
    fwht_raw_inplace(seg);
    for (double& v : seg) v *= plan.norm;
  }
  return out;
}

Tensor block_transform_rows(const Tensor& w, const HadamardPlan& plan) {
  if (w.rank() != 2) throw ValidationError("block_transform_rows expects a matrix");
  return transpose(block_transform(transpose(w), plan));
}

IntTensor block_transform_raw(const IntTensor& x, const HadamardPlan& plan) {
  if (x.rank() == 0 || x.shape().back() != plan.dim) {
    throw ValidationError("block_transform_raw: last axis of " + shape_str(x.shape()) + " != plan dim " +
                          std::to_string(plan.dim));
  }
  IntTensor out = x;
  if (plan.is_identity()) return out;
  const std::size_t b = plan.block();
  std::span<std::int64_t> all = out.data();
  for (std::size_t off = 0; off < all.size(); off += b) fwht_raw_inplace(all.subspan(off, b));
  return out;
}

}  // namespace hqdm
