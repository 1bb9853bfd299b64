#include "h4w/nn.hpp"

#include <cmath>

#include "h4w/error.hpp"

namespace h4w::nn {

Tensor& Params::add(const std::string& name, Tensor value) {
  if (contains(name)) throw Error(ErrorKind::ConfigError, "duplicate parameter " + name);
  index_[name] = values_.size();
  names_.push_back(name);
  values_.push_back(std::move(value));
  return values_.back();
}

const Tensor& Params::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::ConfigError, "unknown parameter " + name);
  return values_[it->second];
}

Tensor& Params::get(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const Params&>(*this).get(name));
}

std::size_t Params::num_scalars() const {
  std::size_t n = 0;
  for (const Tensor& t : values_) n += t.size();
  return n;
}

Tensor he_normal(Rng& rng, Shape shape, int fan_in, double gain) {
  Tensor t(std::move(shape));
  const double sd = gain * std::sqrt(2.0 / fan_in);
  for (double& x : t.data) x = sd * rng.normal();
  return t;
}

ad::Var Bound::operator()(const std::string& name) {
  auto it = vars_.find(name);
  if (it != vars_.end()) return it->second;
  ad::Var v = tape_->leaf(params_->get(name), requires_grad_);
  vars_.emplace(name, v);
  return v;
}

std::map<std::string, std::vector<double>> Bound::grads() const {
  std::map<std::string, std::vector<double>> out;
  for (const std::string& name : params_->names()) {
    auto it = vars_.find(name);
    out[name] = it == vars_.end() ? std::vector<double>(params_->get(name).size(), 0.0) : tape_->grad(it->second);
  }
  return out;
}

std::vector<std::string> Bound::used() const {
  std::vector<std::string> out;
  for (const std::string& name : params_->names())
    if (vars_.count(name)) out.push_back(name);
  return out;
}

ad::Var conv(Bound& p, const std::string& prefix, ad::Var x, int stride) {
  return ad::conv2d(x, p(prefix + ".w"), p(prefix + ".b"), stride);
}

ad::Var dense(Bound& p, const std::string& prefix, ad::Var x) { return ad::linear(x, p(prefix + ".w"), p(prefix + ".b")); }

void add_conv(Params& params, Rng& rng, const std::string& prefix, int in, int out, int k, double gain) {
  params.add(prefix + ".w", he_normal(rng, {out, in, k, k}, in * k * k, gain));
  params.add(prefix + ".b", Tensor({out}));
}

void add_dense(Params& params, Rng& rng, const std::string& prefix, int in, int out, double gain) {
  params.add(prefix + ".w", he_normal(rng, {out, in}, in, gain));
  params.add(prefix + ".b", Tensor({out}));
}

void Adam::step(Params& params, const std::map<std::string, std::vector<double>>& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const std::string& name : params.names()) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    Tensor& w = params.get(name);
    if (g->second.size() != w.size()) throw Error(ErrorKind::ShapeMismatch, "gradient size mismatch for " + name);
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) m.assign(w.size(), 0.0), v.assign(w.size(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g->second[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      w[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
    }
  }
}

}  // namespace h4w::nn
