#pragma once

// Named trainable parameters, their binding onto a tape, and Adam.

#include <map>
#include <string>
#include <vector>

#include "h4w/autodiff.hpp"
#include "h4w/random.hpp"

namespace h4w::nn {

// Ordered name -> tensor store. Iteration follows insertion order, which
// fixes checkpoint layout and optimizer traversal.
class Params {
 public:
  Tensor& add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::size_t num_scalars() const;
  bool operator==(const Params& o) const { return names_ == o.names_ && values_ == o.values_; }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::map<std::string, std::size_t> index_;
};

// He-normal weights for a layer with `fan_in` inputs.
Tensor he_normal(Rng& rng, Shape shape, int fan_in, double gain = 1.0);

// Lazily creates one leaf per parameter on first use within a step.
class Bound {
 public:
  Bound(ad::Tape& tape, const Params& params, bool requires_grad = true)
      : tape_(&tape), params_(&params), requires_grad_(requires_grad) {}

  ad::Var operator()(const std::string& name);
  // Uses `v` for `name` in this step instead of a fresh leaf.
  void bind(const std::string& name, ad::Var v) { vars_.insert_or_assign(name, v); }
  ad::Tape& tape() const { return *tape_; }

  // Gradients of every parameter after tape.backward(); zeros for unused ones.
  std::map<std::string, std::vector<double>> grads() const;
  // Names touched during this step.
  std::vector<std::string> used() const;

 private:
  ad::Tape* tape_;
  const Params* params_;
  bool requires_grad_;
  std::map<std::string, ad::Var> vars_;
};

// Standard layers over Bound parameters `<prefix>.w`, `<prefix>.b`.
ad::Var conv(Bound& p, const std::string& prefix, ad::Var x, int stride = 1);
ad::Var dense(Bound& p, const std::string& prefix, ad::Var x);

void add_conv(Params& params, Rng& rng, const std::string& prefix, int in, int out, int k, double gain = 1.0);
void add_dense(Params& params, Rng& rng, const std::string& prefix, int in, int out, double gain = 1.0);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  void step(Params& params, const std::map<std::string, std::vector<double>>& grads);
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

}  // namespace h4w::nn
