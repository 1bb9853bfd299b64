#include "h4w/grid_ops.hpp"

#include <algorithm>
#include <cmath>

#include "h4w/error.hpp"

namespace h4w::grid {
namespace {

// Four-neighbor stencil of a clamped sample point.
struct Stencil {
  int x0, x1, y0, y1;
  double fx, fy;
  bool inside_x, inside_y;  // false when clamping cut the coordinate
};

Stencil stencil(double x, double y, int h, int w) {
  Stencil s{};
  const double xmax = w - 1, ymax = h - 1;
  s.inside_x = x >= 0.0 && x <= xmax;
  s.inside_y = y >= 0.0 && y <= ymax;
  const double cx = std::clamp(x, 0.0, xmax);
  const double cy = std::clamp(y, 0.0, ymax);
  s.x0 = w > 1 ? std::min(static_cast<int>(std::floor(cx)), w - 2) : 0;
  s.y0 = h > 1 ? std::min(static_cast<int>(std::floor(cy)), h - 2) : 0;
  s.x1 = w > 1 ? s.x0 + 1 : 0;
  s.y1 = h > 1 ? s.y0 + 1 : 0;
  s.fx = cx - s.x0;
  s.fy = cy - s.y0;
  return s;
}

inline double sample(const double* plane, int w, const Stencil& s) {
  return (1 - s.fy) * ((1 - s.fx) * plane[s.y0 * w + s.x0] + s.fx * plane[s.y0 * w + s.x1]) +
         s.fy * ((1 - s.fx) * plane[s.y1 * w + s.x0] + s.fx * plane[s.y1 * w + s.x1]);
}

// Accumulates g into the four neighbors and returns d(sample)/dx, d/dy times g.
inline void sample_backward(const double* plane, double* gplane, int w, const Stencil& s, double g, double& gx,
                            double& gy) {
  if (gplane != nullptr) {
    gplane[s.y0 * w + s.x0] += g * (1 - s.fy) * (1 - s.fx);
    gplane[s.y0 * w + s.x1] += g * (1 - s.fy) * s.fx;
    gplane[s.y1 * w + s.x0] += g * s.fy * (1 - s.fx);
    gplane[s.y1 * w + s.x1] += g * s.fy * s.fx;
  }
  const double v00 = plane[s.y0 * w + s.x0], v01 = plane[s.y0 * w + s.x1];
  const double v10 = plane[s.y1 * w + s.x0], v11 = plane[s.y1 * w + s.x1];
  if (s.inside_x && s.x1 != s.x0) gx += g * ((1 - s.fy) * (v01 - v00) + s.fy * (v11 - v10));
  if (s.inside_y && s.y1 != s.y0) gy += g * ((1 - s.fx) * (v10 - v00) + s.fx * (v11 - v01));
}

void require_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank)
    throw Error(ErrorKind::ShapeMismatch, std::string(what) + ": unexpected shape " + shape_str(t.shape));
}

// Softmax expectation over a [K, D, H, W] stack; writes `dims` coordinates per row.
ad::Var soft_argmax_nd(ad::Var volume, int dims) {
  const Tensor& v = volume.value();
  const int k = v.dim(0), d = v.dim(1), h = v.dim(2), w = v.dim(3);
  const std::size_t n = static_cast<std::size_t>(d) * h * w;
  Tensor prob(v.shape);
  Tensor out({k, dims});
  for (int j = 0; j < k; ++j) {
    const double* lg = v.ptr() + j * n;
    double* p = prob.ptr() + j * n;
    const double mx = *std::max_element(lg, lg + n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += (p[i] = std::exp(lg[i] - mx));
    double ex = 0.0, ey = 0.0, ez = 0.0;
    for (int zi = 0; zi < d; ++zi)
      for (int yi = 0; yi < h; ++yi)
        for (int xi = 0; xi < w; ++xi) {
          double& pi = p[(static_cast<std::size_t>(zi) * h + yi) * w + xi];
          pi /= z;
          ex += pi * xi;
          ey += pi * yi;
          ez += pi * zi;
        }
    out[static_cast<std::size_t>(j * dims)] = ex;
    out[static_cast<std::size_t>(j * dims + 1)] = ey;
    if (dims == 3) out[static_cast<std::size_t>(j * dims + 2)] = ez;
  }
  return volume.tape->record(
      std::move(out), {volume.id}, [iv = volume.id, prob = std::move(prob), k, d, h, w, n, dims](ad::Tape& t, int self) {
        auto g = t.incoming(self);
        const Tensor& p = t.value(self);
        auto& gv = t.grad_buffer(iv);
        for (int j = 0; j < k; ++j) {
          const double gx = g[static_cast<std::size_t>(j * dims)], gy = g[static_cast<std::size_t>(j * dims + 1)];
          const double gz = dims == 3 ? g[static_cast<std::size_t>(j * dims + 2)] : 0.0;
          const double base = gx * p[static_cast<std::size_t>(j * dims)] + gy * p[static_cast<std::size_t>(j * dims + 1)] +
                              (dims == 3 ? gz * p[static_cast<std::size_t>(j * dims + 2)] : 0.0);
          const double* pj = prob.ptr() + j * n;
          double* gj = gv.data() + j * n;
          for (int zi = 0; zi < d; ++zi)
            for (int yi = 0; yi < h; ++yi)
              for (int xi = 0; xi < w; ++xi) {
                const std::size_t i = (static_cast<std::size_t>(zi) * h + yi) * w + xi;
                gj[i] += pj[i] * (gx * xi + gy * yi + gz * zi - base);
              }
        }
      });
}

}  // namespace

ad::Var reshape_to_volume(ad::Var features, int depth_bins) {
  const Tensor& f = features.value();
  require_rank(f, 3, "reshape_to_volume");
  if (depth_bins < 1 || f.dim(0) % depth_bins != 0)
    throw Error(ErrorKind::ShapeMismatch, "reshape_to_volume: " + std::to_string(f.dim(0)) +
                                              " channels not divisible into depth " + std::to_string(depth_bins));
  return ad::reshape(features, {f.dim(0) / depth_bins, depth_bins, f.dim(1), f.dim(2)});
}

Tensor volume_to_channels(const Tensor& volume) {
  require_rank(volume, 4, "volume_to_channels");
  return Tensor({volume.dim(0) * volume.dim(1), volume.dim(2), volume.dim(3)}, volume.data);
}

ad::Var soft_argmax_3d(ad::Var volume) {
  require_rank(volume.value(), 4, "soft_argmax_3d");
  return soft_argmax_nd(volume, 3);
}

ad::Var soft_argmax_2d(ad::Var maps) {
  const Tensor& m = maps.value();
  require_rank(m, 3, "soft_argmax_2d");
  return soft_argmax_nd(ad::reshape(maps, {m.dim(0), 1, m.dim(1), m.dim(2)}), 2);
}

ad::Var bilinear_sample(ad::Var features, ad::Var points) {
  ad::check_same_tape({features, points});
  const Tensor& f = features.value();
  const Tensor& p = points.value();
  require_rank(f, 3, "bilinear_sample features");
  if (p.rank() != 2 || p.dim(1) != 2)
    throw Error(ErrorKind::ShapeMismatch, "bilinear_sample points must be [N,2], got " + shape_str(p.shape));
  const int c = f.dim(0), h = f.dim(1), w = f.dim(2), n = p.dim(0);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor out({n, c});
  for (int i = 0; i < n; ++i) {
    const Stencil s = stencil(p[static_cast<std::size_t>(2 * i)], p[static_cast<std::size_t>(2 * i + 1)], h, w);
    for (int ch = 0; ch < c; ++ch) out[static_cast<std::size_t>(i * c + ch)] = sample(f.ptr() + ch * hw, w, s);
  }
  return features.tape->record(std::move(out), {features.id, points.id},
                               [jf = features.id, jp = points.id, c, h, w, n, hw](ad::Tape& t, int self) {
                                 auto g = t.incoming(self);
                                 const Tensor& f = t.value(jf);
                                 const Tensor& p = t.value(jp);
                                 double* gf = t.requires_grad(jf) ? t.grad_buffer(jf).data() : nullptr;
                                 double* gp = t.requires_grad(jp) ? t.grad_buffer(jp).data() : nullptr;
                                 for (int i = 0; i < n; ++i) {
                                   const Stencil s = stencil(p[static_cast<std::size_t>(2 * i)],
                                                             p[static_cast<std::size_t>(2 * i + 1)], h, w);
                                   double gx = 0.0, gy = 0.0;
                                   for (int ch = 0; ch < c; ++ch)
                                     sample_backward(f.ptr() + ch * hw, gf ? gf + ch * hw : nullptr, w, s,
                                                     g[static_cast<std::size_t>(i * c + ch)], gx, gy);
                                   if (gp) gp[2 * i] += gx, gp[2 * i + 1] += gy;
                                 }
                               });
}

Tensor bilinear_sample(const Tensor& features, double x, double y) {
  ad::Tape tape;
  return bilinear_sample(tape.constant(features), tape.constant(Tensor({1, 2}, {x, y}))).value();
}

ad::Var roi_align(ad::Var image, ad::Var box, int out_h, int out_w) {
  ad::check_same_tape({image, box});
  const Tensor& img = image.value();
  const Tensor& bx = box.value();
  require_rank(img, 3, "roi_align image");
  if (bx.size() != 4) throw Error(ErrorKind::ShapeMismatch, "roi_align box must have 4 values, got " + shape_str(bx.shape));
  if (out_h < 1 || out_w < 1) throw Error(ErrorKind::ShapeMismatch, "roi_align output size must be >= 1");
  const Box b{bx[0], bx[1], bx[2], bx[3]};
  if (!(b.w > 0.0) || !(b.h > 0.0))
    throw Error(ErrorKind::DegenerateBox, "box size (" + std::to_string(b.w) + ", " + std::to_string(b.h) + ")");
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const std::size_t ohw = static_cast<std::size_t>(out_h) * out_w;
  Tensor out({c, out_h, out_w});
  for (int r = 0; r < out_h; ++r)
    for (int q = 0; q < out_w; ++q) {
      const Stencil s = stencil(roi_source_x(b, q, out_w), roi_source_y(b, r, out_h), h, w);
      for (int ch = 0; ch < c; ++ch)
        out[ch * ohw + static_cast<std::size_t>(r * out_w + q)] = sample(img.ptr() + ch * hw, w, s);
    }
  return image.tape->record(
      std::move(out), {image.id, box.id}, [ji = image.id, jb = box.id, b, c, h, w, hw, ohw, out_h, out_w](ad::Tape& t, int self) {
        auto g = t.incoming(self);
        const Tensor& img = t.value(ji);
        double* gi = t.requires_grad(ji) ? t.grad_buffer(ji).data() : nullptr;
        double gcx = 0.0, gcy = 0.0, gw = 0.0, gh = 0.0;
        for (int r = 0; r < out_h; ++r)
          for (int q = 0; q < out_w; ++q) {
            const Stencil s = stencil(roi_source_x(b, q, out_w), roi_source_y(b, r, out_h), h, w);
            double gx = 0.0, gy = 0.0;
            for (int ch = 0; ch < c; ++ch)
              sample_backward(img.ptr() + ch * hw, gi ? gi + ch * hw : nullptr, w, s,
                              g[ch * ohw + static_cast<std::size_t>(r * out_w + q)], gx, gy);
            gcx += gx;
            gcy += gy;
            gw += gx * ((q + 0.5) / out_w - 0.5);
            gh += gy * ((r + 0.5) / out_h - 0.5);
          }
        if (t.requires_grad(jb)) {
          auto& gb = t.grad_buffer(jb);
          gb[0] += gcx, gb[1] += gcy, gb[2] += gw, gb[3] += gh;
        }
      });
}

Tensor roi_align(const Tensor& image, const Box& box, int out_h, int out_w) {
  ad::Tape tape;
  return roi_align(tape.constant(image), tape.constant(Tensor({4}, {box.cx, box.cy, box.w, box.h})), out_h, out_w).value();
}

Tensor hflip_image(const Tensor& image) {
  require_rank(image, 3, "hflip_image");
  Tensor out(image.shape);
  const int w = image.dim(2);
  const std::size_t rows = image.size() / static_cast<std::size_t>(w);
  for (std::size_t r = 0; r < rows; ++r)
    for (int x = 0; x < w; ++x) out[r * w + x] = image[r * w + static_cast<std::size_t>(w - 1 - x)];
  return out;
}

ad::Var hflip_image(ad::Var image) {
  return image.tape->record(hflip_image(image.value()), {image.id}, [ji = image.id](ad::Tape& t, int self) {
    auto g = t.incoming(self);
    auto& gi = t.grad_buffer(ji);
    const int w = t.value(ji).dim(2);
    const std::size_t rows = gi.size() / static_cast<std::size_t>(w);
    for (std::size_t r = 0; r < rows; ++r)
      for (int x = 0; x < w; ++x) gi[r * w + static_cast<std::size_t>(w - 1 - x)] += g[r * w + x];
  });
}

Tensor hflip_coords(const Tensor& coords, int width, std::span<const int> pairs) {
  if (coords.rank() != 2 || coords.dim(1) < 1)
    throw Error(ErrorKind::ShapeMismatch, "hflip_coords expects [J,D], got " + shape_str(coords.shape));
  const int j = coords.dim(0), d = coords.dim(1);
  if (!pairs.empty() && static_cast<int>(pairs.size()) != j)
    throw Error(ErrorKind::ShapeMismatch, "hflip_coords: pair table size does not match joint count");
  Tensor out(coords.shape);
  for (int r = 0; r < j; ++r) {
    const int src = pairs.empty() ? r : pairs[static_cast<std::size_t>(r)];
    for (int k = 0; k < d; ++k) out[static_cast<std::size_t>(r * d + k)] = coords[static_cast<std::size_t>(src * d + k)];
    out[static_cast<std::size_t>(r * d)] = (width - 1) - out[static_cast<std::size_t>(r * d)];
  }
  return out;
}

ad::Var hflip_coords(ad::Var coords, int width, std::span<const int> pairs) {
  const int d = coords.value().dim(1);
  std::vector<int> perm(pairs.begin(), pairs.end());
  return coords.tape->record(hflip_coords(coords.value(), width, pairs), {coords.id},
                             [jc = coords.id, perm, d](ad::Tape& t, int self) {
                               auto g = t.incoming(self);
                               auto& gc = t.grad_buffer(jc);
                               const int j = static_cast<int>(gc.size()) / d;
                               for (int r = 0; r < j; ++r) {
                                 const int src = perm.empty() ? r : perm[static_cast<std::size_t>(r)];
                                 for (int k = 0; k < d; ++k)
                                   gc[static_cast<std::size_t>(src * d + k)] +=
                                       (k == 0 ? -1.0 : 1.0) * g[static_cast<std::size_t>(r * d + k)];
                               }
                             });
}

Tensor downsample2(const Tensor& image) {
  require_rank(image, 3, "downsample2");
  const int c = image.dim(0), h = image.dim(1) / 2, w = image.dim(2) / 2, sw = image.dim(2);
  const std::size_t shw = static_cast<std::size_t>(image.dim(1)) * sw;
  Tensor out({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double* p = image.ptr() + ch * shw + static_cast<std::size_t>(2 * y) * sw + 2 * x;
        out[(static_cast<std::size_t>(ch) * h + y) * w + x] = 0.25 * (p[0] + p[1] + p[sw] + p[sw + 1]);
      }
  return out;
}

}  // namespace h4w::grid
