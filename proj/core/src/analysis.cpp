#include "hqdm/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "hqdm/error.hpp"
#include "hqdm/nn_ops.hpp"
#include "hqdm/qkernels.hpp"
#include "hqdm/quantizer.hpp"
#include "hqdm/teacher.hpp"

namespace hqdm {

ChannelStats channel_outlier_stats(const Tensor& x) {
  if (x.rank() != 2 || x.size() == 0) throw ValidationError("channel_outlier_stats expects a nonempty [rows x channels] tensor");
  const std::size_t rows = x.rows(), ch = x.cols();
  ChannelStats s;
  s.max_abs.assign(ch, 0.0);
  s.rms.assign(ch, 0.0);
  s.min.assign(ch, x.at(0, 0));
  s.max.assign(ch, x.at(0, 0));
  for (std::size_t c = 0; c < ch; ++c) {
    s.min[c] = s.max[c] = x.at(0, c);
  }
  double sq = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < ch; ++c) {
      const double v = x.at(r, c);
      s.max_abs[c] = std::max(s.max_abs[c], std::abs(v));
      s.rms[c] += v * v;
      s.min[c] = std::min(s.min[c], v);
      s.max[c] = std::max(s.max[c], v);
    }
  }
  for (std::size_t c = 0; c < ch; ++c) {
    sq += s.rms[c];
    s.rms[c] = std::sqrt(s.rms[c] / static_cast<double>(rows));
  }
  const double n = static_cast<double>(x.size());
  s.global_max = *std::max_element(s.max_abs.begin(), s.max_abs.end());
  s.global_rms = std::sqrt(sq / n);
  s.ratio = s.global_rms > 0.0 ? s.global_max / s.global_rms : 0.0;

  double mean = 0.0;
  for (double v : x.data()) mean += v;
  mean /= n;
  double m2 = 0.0, m4 = 0.0;
  for (double v : x.data()) {
    const double d = (v - mean) * (v - mean);
    m2 += d;
    m4 += d * d;
  }
  m2 /= n;
  m4 /= n;
  s.kurtosis = m2 > 0.0 ? m4 / (m2 * m2) : 0.0;
  return s;
}

OutlierReport outlier_report(std::string layer, std::size_t timestep, const Tensor& x, const HadamardPlan& plan) {
  OutlierReport r;
  r.layer = std::move(layer);
  r.timestep = timestep;
  r.plan = plan;
  r.pre = channel_outlier_stats(x);
  r.post = channel_outlier_stats(block_transform(x, plan));
  return r;
}

double block_rms_deviation(const Tensor& x, const HadamardPlan& plan) {
  if (x.rank() != 2 || x.cols() != plan.dim) throw ValidationError("block_rms_deviation: width does not match plan");
  const Tensor y = block_transform(x, plan);
  const std::size_t b = plan.block();
  double worst = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < plan.m; ++j) {
      double e0 = 0.0, e1 = 0.0;
      for (std::size_t i = 0; i < b; ++i) {
        e0 += x.at(r, j * b + i) * x.at(r, j * b + i);
        e1 += y.at(r, j * b + i) * y.at(r, j * b + i);
      }
      const double r0 = std::sqrt(e0 / static_cast<double>(b)), r1 = std::sqrt(e1 / static_cast<double>(b));
      if (r0 > 0.0) worst = std::max(worst, std::abs(r1 - r0) / r0);
    }
  }
  return worst;
}

double dominance_ratio(const Tensor& x, const HadamardPlan& plan) {
  if (x.rank() != 2 || x.cols() != plan.dim) throw ValidationError("dominance_ratio: width does not match plan");
  const std::size_t b = plan.block();
  double l1 = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < plan.m; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < b; ++i) s += std::abs(x.at(r, j * b + i));
      l1 = std::max(l1, s);
    }
  }
  return l1 > 0.0 ? max_abs(x) / (plan.norm * l1) : 0.0;
}

Tensor activation_matrix(const Tensor& in) {
  if (in.rank() == 2) return in;
  if (in.rank() != 4) throw ValidationError("activation_matrix expects a rank-2 or rank-4 tensor");
  const std::size_t w = in.shape()[3];
  return reshape(in, {in.size() / w, w});
}

std::vector<std::size_t> capture_timesteps(std::size_t T, std::size_t n_steps) {
  const std::vector<std::size_t> ts = ddim_timesteps(T, n_steps);
  return {ts.front(), ts[ts.size() / 2], ts.back()};
}

Captures capture_activations(const ToyDenoiser& model, const NoiseSchedule& schedule, std::size_t n_steps,
                             std::size_t n_samples, std::uint64_t seed, const std::vector<std::size_t>& timesteps) {
  std::map<CaptureKey, std::vector<Tensor>> parts;
  const ToyDenoiser::Hook hook = [&](std::string_view name, std::size_t t, const Tensor& in) {
    if (std::find(timesteps.begin(), timesteps.end(), t) == timesteps.end()) return;
    parts[{std::string(name), t}].push_back(in);
  };
  ddim_sample(model, schedule, n_steps, n_samples, seed, &hook);
  Captures out;
  for (auto& [key, items] : parts) {
    // Concatenate along the leading axis (batch for conv inputs, tokens for linear).
    Shape shape = items.front().shape();
    std::vector<double> data;
    for (const Tensor& t : items) data.insert(data.end(), t.data().begin(), t.data().end());
    shape[0] = data.size() / (items.front().size() / shape[0]);
    out.emplace(key, Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

HadamardPlan layer_plan(const ToyDenoiser& model, std::string_view layer, const Tensor& layer_input, int k_preferred) {
  const auto& slot = model.slots()[layer_index(layer)];
  if (std::holds_alternative<QConvLayer>(slot.layer)) return make_plan(layer_input.shape().back(), k_preferred);
  return make_plan(std::get<QLinearLayer>(slot.layer).in_features(), k_preferred);
}

namespace {

double act_scale_for(const Tensor& x, const HadamardPlan& plan, const QuantParams& p) {
  return std::max(max_abs(block_transform(x, plan)) / static_cast<double>(p.q_max), kMinScale);
}

QLinearLayer make_linear(const Tensor& x, const Tensor& w, int bits, int k, Scheme scheme) {
  QLinearLayer l;
  l.weight = w;
  l.w_params = l.a_params = QuantParams::symmetric(bits);
  l.scheme = scheme;
  l.plan = make_plan(w.dim(0), scheme == Scheme::plain ? 0 : k);
  l.act_scales = ScaleTable(1, act_scale_for(x, l.plan, l.a_params));
  const Tensor wq = scheme == Scheme::double_hadamard ? block_transform_rows(w, l.plan) : w;
  l.w_scales = ScaleTable(1, init_scale(wq, l.w_params));
  return l;
}

QConvLayer make_conv(const QConvLayer& base, const Tensor& x, int bits, int k, Scheme scheme) {
  QConvLayer l;
  l.weight = base.weight;
  if (base.lora) l.weight = reshape(weight_effective(base), base.weight.shape());
  l.stride = base.stride;
  l.padding = base.padding;
  l.w_params = l.a_params = QuantParams::symmetric(bits);
  l.k_preferred = k;
  l.scheme = scheme;
  l.act_scales = ScaleTable(1, act_scale_for(x, l.plan_for_width(x.shape()[3]), l.a_params));
  l.w_scales = ScaleTable(1, init_scale(l.weight, l.w_params));
  return l;
}

}  // namespace

SchemeComparison compare_linear_schemes(const Tensor& x, const Tensor& w, int bits, int k_preferred) {
  if (x.rank() != 2 || w.rank() != 2 || x.cols() != w.rows()) throw ValidationError("compare_linear_schemes: shape mismatch");
  const Tensor ref = matmul(x, w);
  SchemeComparison c;
  c.bits = bits;
  const QLinearLayer plain = make_linear(x, w, bits, k_preferred, Scheme::plain);
  const QLinearLayer single = make_linear(x, w, bits, k_preferred, Scheme::single_hadamard);
  const QLinearLayer dbl = make_linear(x, w, bits, k_preferred, Scheme::double_hadamard);
  c.mse_plain = mse(qlinear_forward(plain, x, 0), ref);
  c.mse_single = mse(qlinear_forward(single, x, 0), ref);
  c.mse_double = mse(double_hadamard_linear(dbl, x, 0), ref);
  c.w_max_plain = max_abs(weight_effective(plain));
  c.w_max_single = max_abs(weight_effective(single));
  c.w_max_double = max_abs(block_transform_rows(w, dbl.plan));
  return c;
}

std::vector<SchemeComparison> compare_schemes(const ToyDenoiser& teacher, const Captures& captures,
                                              const std::vector<std::string>& layers,
                                              const std::vector<std::size_t>& timesteps,
                                              const std::vector<int>& bits_list, int k_preferred) {
  std::vector<SchemeComparison> rows;
  for (const std::string& name : layers) {
    const auto& layer = teacher.slots()[layer_index(name)].layer;
    for (std::size_t t : timesteps) {
      const auto it = captures.find({name, t});
      if (it == captures.end()) throw ValidationError("compare_schemes: no capture for " + name + " at t=" + std::to_string(t));
      const Tensor& x = it->second;
      for (int bits : bits_list) {
        SchemeComparison c;
        if (const auto* lin = std::get_if<QLinearLayer>(&layer)) {
          c = compare_linear_schemes(x, weight_effective(*lin), bits, k_preferred);
        } else {
          const auto& conv = std::get<QConvLayer>(layer);
          const QConvLayer plain = make_conv(conv, x, bits, k_preferred, Scheme::plain);
          const QConvLayer single = make_conv(conv, x, bits, k_preferred, Scheme::single_hadamard);
          const Tensor ref = conv2d(x, plain.weight, plain.stride, plain.padding);
          c.bits = bits;
          c.mse_plain = mse(qconv_forward(plain, x, 0), ref);
          c.mse_single = mse(qconv_forward(single, x, 0), ref);
          c.w_max_plain = max_abs(plain.weight);
          c.w_max_single = max_abs(single.weight);
        }
        c.layer = name;
        c.timestep = t;
        rows.push_back(std::move(c));
      }
    }
  }
  return rows;
}

namespace {

std::string g6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string g6(const std::optional<double>& v) { return v ? g6(*v) : "NA"; }

}  // namespace

void emit_report(std::ostream& os, const std::vector<OutlierReport>& reports) {
  os << "layer,timestep,channel,max_pre,max_post,rms_pre,rms_post\n";
  for (const auto& r : reports) {
    for (std::size_t c = 0; c < r.pre.max_abs.size(); ++c) {
      os << r.layer << ',' << r.timestep << ',' << c << ',' << g6(r.pre.max_abs[c]) << ',' << g6(r.post.max_abs[c])
         << ',' << g6(r.pre.rms[c]) << ',' << g6(r.post.rms[c]) << '\n';
    }
  }
  if (!os) throw IoError("failed to write outlier report");
}

void emit_report(const std::filesystem::path& path, const std::vector<OutlierReport>& reports) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  emit_report(os, reports);
}

void emit_comparison(std::ostream& os, const std::vector<SchemeComparison>& rows) {
  os << "layer,timestep,bits,mse_plain,mse_single,mse_double,wmax_plain,wmax_single,wmax_double\n";
  for (const auto& c : rows) {
    os << c.layer << ',' << c.timestep << ',' << c.bits << ',' << g6(c.mse_plain) << ',' << g6(c.mse_single) << ','
       << g6(c.mse_double) << ',' << g6(c.w_max_plain) << ',' << g6(c.w_max_single) << ',' << g6(c.w_max_double)
       << '\n';
  }
  if (!os) throw IoError("failed to write scheme comparison");
}

}  // namespace hqdm
