#include "h4w/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "h4w/error.hpp"
#include "h4w/simd/kernels.hpp"

namespace h4w::ad {

const Tensor& Var::value() const { return tape->value(id); }

double Var::item() const {
  const Tensor& v = value();
  if (v.size() != 1) throw Error(ErrorKind::NotScalar, "item() on shape " + shape_str(v.shape));
  return v[0];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, std::vector<int> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (int in : inputs) n.requires_grad = n.requires_grad || requires_grad(in);
  if (n.requires_grad) {
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

std::vector<double> Tape::grad(Var v) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
  if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
  return n.grad;
}

std::vector<double>& Tape::grad_buffer(int id) {
  Node& n = nodes_.at(static_cast<std::size_t>(id));
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

std::span<const double> Tape::incoming(int id) const {
  return nodes_.at(static_cast<std::size_t>(id)).grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw Error(ErrorKind::DetachedGraph, "loss was recorded on a different tape");
  if (consumed_) throw Error(ErrorKind::DetachedGraph, "tape already consumed by a backward pass");
  if (value(loss.id).size() != 1)
    throw Error(ErrorKind::NotScalar, "backward() needs a scalar loss, got " + shape_str(value(loss.id).shape));
  consumed_ = true;
  if (!requires_grad(loss.id)) return;
  grad_buffer(loss.id)[0] += 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, id);
  }
}

Var check_same_tape(std::initializer_list<Var> vars) {
  Tape* t = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw Error(ErrorKind::DetachedGraph, "invalid variable handle");
    if (t != nullptr && v.tape != t) throw Error(ErrorKind::DetachedGraph, "variables live on different tapes");
    t = v.tape;
  }
  return *vars.begin();
}

namespace {

void require_same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape())
    throw Error(ErrorKind::ShapeMismatch,
                std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Adds src into the gradient of node `id` when that node needs one.
void accumulate(Tape& t, int id, std::span<const double> src) {
  if (!t.requires_grad(id)) return;
  auto& g = t.grad_buffer(id);
  for (std::size_t i = 0; i < src.size(); ++i) g[i] += src[i];
}

}  // namespace

Var add(Var a, Var b) {
  check_same_tape({a, b});
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, int self) {
    auto g = t.incoming(self);
    accumulate(t, ia, g);
    accumulate(t, ib, g);
  });
}

Var sub(Var a, Var b) {
  check_same_tape({a, b});
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, int self) {
    auto g = t.incoming(self);
    accumulate(t, ia, g);
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  check_same_tape({a, b});
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, int self) {
    auto g = t.incoming(self);
    const auto& av = t.value(ia).data;
    const auto& bv = t.value(ib).data;
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& x : out.data) x *= s;
  return a.tape->record(std::move(out), {a.id}, [ia = a.id, s](Tape& t, int self) {
    auto g = t.incoming(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var add_const(Var a, const Tensor& c) {
  if (a.shape() != c.shape)
    throw Error(ErrorKind::ShapeMismatch, "add_const: " + shape_str(a.shape()) + " vs " + shape_str(c.shape));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  return a.tape->record(std::move(out), {a.id}, [ia = a.id](Tape& t, int self) {
    accumulate(t, ia, t.incoming(self));
  });
}

Var mul_const(Var a, const Tensor& c) {
  if (a.shape() != c.shape)
    throw Error(ErrorKind::ShapeMismatch, "mul_const: " + shape_str(a.shape()) + " vs " + shape_str(c.shape));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
  return a.tape->record(std::move(out), {a.id}, [ia = a.id, c](Tape& t, int self) {
    auto g = t.incoming(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c[i] * g[i];
  });
}

Var matmul(Var a, Var b) {
  check_same_tape({a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw Error(ErrorKind::ShapeMismatch, "matmul: " + shape_str(av.shape) + " x " + shape_str(bv.shape));
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({static_cast<int>(m), static_cast<int>(n)});
  simd::active().gemm_nn(m, n, k, av.ptr(), k, bv.ptr(), n, out.ptr(), n);
  return a.tape->record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id, m, n, k](Tape& t, int self) {
    auto g = t.incoming(self);
    const auto& kr = simd::active();
    if (t.requires_grad(ia)) {
      // dA = G B^T
      kr.gemm_nt(m, k, n, g.data(), n, t.value(ib).ptr(), n, t.grad_buffer(ia).data(), k);
    }
    if (t.requires_grad(ib)) {
      // dB = A^T G
      kr.gemm_tn(k, n, m, t.value(ia).ptr(), k, g.data(), n, t.grad_buffer(ib).data(), n);
    }
  });
}

Var linear(Var x, Var w, Var b) {
  check_same_tape({x, w, b});
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (wv.rank() != 2 || static_cast<std::size_t>(wv.dim(1)) != xv.size() || bv.size() != static_cast<std::size_t>(wv.dim(0)))
    throw Error(ErrorKind::ShapeMismatch, "linear: x " + shape_str(xv.shape) + ", w " + shape_str(wv.shape) +
                                              ", b " + shape_str(bv.shape));
  const std::size_t n_out = wv.dim(0), n_in = wv.dim(1);
  const auto& kr = simd::active();
  Tensor out({static_cast<int>(n_out)});
  for (std::size_t o = 0; o < n_out; ++o) out[o] = bv[o] + kr.dot(wv.ptr() + o * n_in, xv.ptr(), n_in);
  return x.tape->record(std::move(out), {x.id, w.id, b.id},
                        [ix = x.id, iw = w.id, ib = b.id, n_out, n_in](Tape& t, int self) {
                          auto g = t.incoming(self);
                          const auto& kr = simd::active();
                          if (t.requires_grad(ix)) {
                            auto& gx = t.grad_buffer(ix);
                            const double* wp = t.value(iw).ptr();
                            for (std::size_t o = 0; o < n_out; ++o)
                              if (g[o] != 0.0) kr.axpy(g[o], wp + o * n_in, gx.data(), n_in);
                          }
                          if (t.requires_grad(iw)) {
                            auto& gw = t.grad_buffer(iw);
                            const double* xp = t.value(ix).ptr();
                            for (std::size_t o = 0; o < n_out; ++o)
                              if (g[o] != 0.0) kr.axpy(g[o], xp, gw.data() + o * n_in, n_in);
                          }
                          accumulate(t, ib, g);
                        });
}

namespace {

struct AxisSplit {
  std::size_t outer, mid, inner;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r{1, static_cast<std::size_t>(s[static_cast<std::size_t>(axis)]), 1};
  for (int i = 0; i < axis; ++i) r.outer *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= static_cast<std::size_t>(s[i]);
  return r;
}

int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw Error(ErrorKind::ShapeMismatch, std::string(op) + ": axis out of range for rank " + std::to_string(rank));
  return axis;
}

}  // namespace

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw Error(ErrorKind::ShapeMismatch, "concat of zero tensors");
  Tape* tape = parts[0].tape;
  const Shape& s0 = parts[0].shape();
  axis = normalize_axis(axis, static_cast<int>(s0.size()), "concat");
  Shape out_shape = s0;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  std::vector<int> ids;
  std::vector<std::size_t> mids;
  for (const Var& p : parts) {
    if (p.tape != tape) throw Error(ErrorKind::DetachedGraph, "concat: variables live on different tapes");
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (static_cast<int>(i) == axis) || s[i] == s0[i];
    if (!ok) throw Error(ErrorKind::ShapeMismatch, "concat: " + shape_str(s) + " vs " + shape_str(s0));
    out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
    ids.push_back(p.id);
    mids.push_back(static_cast<std::size_t>(s[static_cast<std::size_t>(axis)]));
  }
  Tensor out(out_shape);
  const AxisSplit os = split_at(out_shape, axis);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& src = parts[k].value().data;
    const std::size_t block = mids[k] * os.inner;
    for (std::size_t o = 0; o < os.outer; ++o)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                  out.data.begin() + static_cast<std::ptrdiff_t>(o * os.mid * os.inner + offset));
    offset += block;
  }
  auto ids_copy = ids;
  return tape->record(std::move(out), std::move(ids_copy), [ids, mids, os](Tape& t, int self) {
    auto g = t.incoming(self);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t block = mids[k] * os.inner;
      if (t.requires_grad(ids[k])) {
        auto& gk = t.grad_buffer(ids[k]);
        for (std::size_t o = 0; o < os.outer; ++o)
          for (std::size_t i = 0; i < block; ++i) gk[o * block + i] += g[o * os.mid * os.inner + offset + i];
      }
      offset += block;
    }
  });
}

Var concat(std::initializer_list<Var> parts, int axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice(Var a, int axis, int start, int length) {
  const Shape& s = a.shape();
  axis = normalize_axis(axis, static_cast<int>(s.size()), "slice");
  if (start < 0 || length < 0 || start + length > s[static_cast<std::size_t>(axis)])
    throw Error(ErrorKind::ShapeMismatch, "slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                                              ") out of range for " + shape_str(s));
  Shape out_shape = s;
  out_shape[static_cast<std::size_t>(axis)] = length;
  const AxisSplit is = split_at(s, axis);
  const std::size_t block = static_cast<std::size_t>(length) * is.inner;
  const std::size_t off = static_cast<std::size_t>(start) * is.inner;
  Tensor out(out_shape);
  const auto& src = a.value().data;
  for (std::size_t o = 0; o < is.outer; ++o)
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * is.mid * is.inner + off), block,
                out.data.begin() + static_cast<std::ptrdiff_t>(o * block));
  return a.tape->record(std::move(out), {a.id}, [ia = a.id, is, block, off](Tape& t, int self) {
    auto g = t.incoming(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t o = 0; o < is.outer; ++o)
      for (std::size_t i = 0; i < block; ++i) ga[o * is.mid * is.inner + off + i] += g[o * block + i];
  });
}

Var gather_rows(Var a, std::span<const int> rows) {
  const Shape& s = a.shape();
  if (s.empty()) throw Error(ErrorKind::ShapeMismatch, "gather_rows on a scalar");
  const std::size_t row = shape_numel(s) / static_cast<std::size_t>(s[0]);
  Shape out_shape = s;
  out_shape[0] = static_cast<int>(rows.size());
  Tensor out(out_shape);
  std::vector<int> idx(rows.begin(), rows.end());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= s[0])
      throw Error(ErrorKind::ShapeMismatch, "gather_rows: row " + std::to_string(idx[r]) + " outside " + shape_str(s));
    std::copy_n(a.value().data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(idx[r]) * row), row,
                out.data.begin() + static_cast<std::ptrdiff_t>(r * row));
  }
  return a.tape->record(std::move(out), {a.id}, [ia = a.id, idx, row](Tape& t, int self) {
    auto g = t.incoming(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t i = 0; i < row; ++i) ga[static_cast<std::size_t>(idx[r]) * row + i] += g[r * row + i];
  });
}

Var reshape(Var a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw Error(ErrorKind::ShapeMismatch, "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor out(std::move(shape), a.value().data);
  return a.tape->record(std::move(out), {a.id}, [ia = a.id](Tape& t, int self) {
    accumulate(t, ia, t.incoming(self));
  });
}

Var flatten(Var a) { return reshape(a, {static_cast<int>(a.size())}); }

Var relu(Var a) {
  Tensor out = a.value();
  for (double& x : out.data) x = x > 0.0 ? x : 0.0;
  return a.tape->record(std::move(out), {a.id}, [ia = a.id](Tape& t, int self) {
    auto g = t.incoming(self);
    const auto& av = t.value(ia).data;
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av[i] > 0.0) ga[i] += g[i];
  });
}

Var exp(Var a) {
  Tensor out = a.value();
  for (double& x : out.data) x = std::exp(x);
  return a.tape->record(std::move(out), {a.id}, [ia = a.id](Tape& t, int self) {
    auto g = t.incoming(self);
    const auto& y = t.value(self).data;
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

Var softmax(Var a) {
  const Shape& s = a.shape();
  if (s.empty()) throw Error(ErrorKind::ShapeMismatch, "softmax on a scalar");
  const std::size_t n = static_cast<std::size_t>(s.back());
  const std::size_t rows = a.size() / std::max<std::size_t>(n, 1);
  Tensor out = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    double* x = out.ptr() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += (x[i] = std::exp(x[i] - mx));
    for (std::size_t i = 0; i < n; ++i) x[i] /= z;
  }
  return a.tape->record(std::move(out), {a.id}, [ia = a.id, n, rows](Tape& t, int self) {
    auto g = t.incoming(self);
    const auto& y = t.value(self).data;
    auto& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += g[r * n + i] * y[r * n + i];
      for (std::size_t i = 0; i < n; ++i) ga[r * n + i] += y[r * n + i] * (g[r * n + i] - dot);
    }
  });
}

namespace {

struct ConvGeom {
  int c, h, w, o, k, stride, pad, ho, wo;
};

// col[(ci*k + ky)*k + kx, oy*wo + ox] = x[ci, oy*s + ky - pad, ox*s + kx - pad] (zero outside)
void im2col(const ConvGeom& g, const double* x, double* col) {
  const int npix = g.ho * g.wo;
  for (int ci = 0; ci < g.c; ++ci)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        double* row = col + static_cast<std::size_t>((ci * g.k + ky) * g.k + kx) * static_cast<std::size_t>(npix);
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            row[oy * g.wo + ox] = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w)
                                      ? x[(static_cast<std::size_t>(ci) * g.h + iy) * g.w + ix]
                                      : 0.0;
          }
        }
      }
}

void col2im_add(const ConvGeom& g, const double* col, double* dx) {
  const int npix = g.ho * g.wo;
  for (int ci = 0; ci < g.c; ++ci)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        const double* row = col + static_cast<std::size_t>((ci * g.k + ky) * g.k + kx) * static_cast<std::size_t>(npix);
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            if (ix >= 0 && ix < g.w) dx[(static_cast<std::size_t>(ci) * g.h + iy) * g.w + ix] += row[oy * g.wo + ox];
          }
        }
      }
}

}  // namespace

Var conv2d(Var x, Var w, Var b, int stride) {
  check_same_tape({x, w, b});
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(1) != xv.dim(0) || wv.dim(2) != wv.dim(3) ||
      (wv.dim(2) != 1 && wv.dim(2) != 3) || b.size() != static_cast<std::size_t>(wv.dim(0)) || stride < 1)
    throw Error(ErrorKind::ShapeMismatch, "conv2d: x " + shape_str(xv.shape) + ", w " + shape_str(wv.shape) +
                                              ", b " + shape_str(b.shape()) + ", stride " + std::to_string(stride));
  ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), wv.dim(0), wv.dim(2), stride, wv.dim(2) / 2, 0, 0};
  g.ho = (g.h - 1) / stride + 1;
  g.wo = (g.w - 1) / stride + 1;
  const std::size_t npix = static_cast<std::size_t>(g.ho) * g.wo;
  const std::size_t kdim = static_cast<std::size_t>(g.c) * g.k * g.k;

  // 1x1 stride-1 convs read the input directly as the column matrix.
  const bool direct = g.k == 1 && stride == 1;
  auto col = std::make_shared<std::vector<double>>();
  if (!direct) {
    col->resize(kdim * npix);
    im2col(g, xv.ptr(), col->data());
  }
  const double* colp = direct ? xv.ptr() : col->data();

  Tensor out({g.o, g.ho, g.wo});
  for (int o = 0; o < g.o; ++o) std::fill_n(out.ptr() + static_cast<std::size_t>(o) * npix, npix, b.value()[o]);
  const auto& kr = simd::active();
  kr.gemm_nn(g.o, npix, kdim, wv.ptr(), kdim, colp, npix, out.ptr(), npix);

  return x.tape->record(
      std::move(out), {x.id, w.id, b.id}, [ix = x.id, iw = w.id, ib = b.id, g, col, direct, npix, kdim](Tape& t, int self) {
        auto grad = t.incoming(self);
        const auto& kr = simd::active();
        if (t.requires_grad(iw)) {
          const double* colp = direct ? t.value(ix).ptr() : col->data();
          kr.gemm_nt(g.o, kdim, npix, grad.data(), npix, colp, npix, t.grad_buffer(iw).data(), kdim);
        }
        if (t.requires_grad(ib)) {
          auto& gb = t.grad_buffer(ib);
          for (int o = 0; o < g.o; ++o)
            for (std::size_t p = 0; p < npix; ++p) gb[o] += grad[static_cast<std::size_t>(o) * npix + p];
        }
        if (t.requires_grad(ix)) {
          auto& gx = t.grad_buffer(ix);
          if (direct) {
            kr.gemm_tn(kdim, npix, g.o, t.value(iw).ptr(), kdim, grad.data(), npix, gx.data(), npix);
          } else {
            std::vector<double> dcol(kdim * npix, 0.0);
            kr.gemm_tn(kdim, npix, g.o, t.value(iw).ptr(), kdim, grad.data(), npix, dcol.data(), npix);
            col2im_add(g, dcol.data(), gx.data());
          }
        }
      });
}

Var mean_pool_spatial(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3) throw Error(ErrorKind::ShapeMismatch, "mean_pool_spatial expects [C,H,W], got " + shape_str(xv.shape));
  const int c = xv.dim(0);
  const std::size_t hw = static_cast<std::size_t>(xv.dim(1)) * xv.dim(2);
  Tensor out({c});
  for (int ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t p = 0; p < hw; ++p) s += xv[static_cast<std::size_t>(ch) * hw + p];
    out[static_cast<std::size_t>(ch)] = s / static_cast<double>(hw);
  }
  return x.tape->record(std::move(out), {x.id}, [ix = x.id, c, hw](Tape& t, int self) {
    auto g = t.incoming(self);
    auto& gx = t.grad_buffer(ix);
    const double inv = 1.0 / static_cast<double>(hw);
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) gx[static_cast<std::size_t>(ch) * hw + p] += g[static_cast<std::size_t>(ch)] * inv;
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data) s += v;
  return a.tape->record(Tensor::scalar(s), {a.id}, [ia = a.id](Tape& t, int self) {
    const double g = t.incoming(self)[0];
    for (double& x : t.grad_buffer(ia)) x += g;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(std::max<std::size_t>(a.size(), 1))); }

Var l1_loss(Var a, Var b) {
  check_same_tape({a, b});
  if (a.size() != b.size())
    throw Error(ErrorKind::ShapeMismatch, "l1_loss: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  const std::size_t n = av.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(av[i] - bv[i]);
  const double inv = n ? 1.0 / static_cast<double>(n) : 0.0;
  return a.tape->record(Tensor::scalar(s * inv), {a.id, b.id}, [ia = a.id, ib = b.id, inv](Tape& t, int self) {
    const double g = t.incoming(self)[0] * inv;
    const auto& av = t.value(ia).data;
    const auto& bv = t.value(ib).data;
    // sign(0) = 0: the subgradient at a tie is zero.
    auto sgn = [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); };
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g * sgn(av[i] - bv[i]);
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= g * sgn(av[i] - bv[i]);
    }
  });
}

Var detach(Var a) { return a.tape->constant(a.value()); }

}  // namespace h4w::ad
