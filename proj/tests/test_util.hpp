#pragma once

#include <doctest.h>

#include <cmath>

#include "h4w/error.hpp"
#include "h4w/random.hpp"
#include "h4w/tensor.hpp"

namespace h4w::test {

inline Tensor rand_tensor(Rng& rng, Shape s, double lo = -1, double hi = 1) {
  Tensor t(std::move(s));
  for (double& x : t.data) x = rng.uniform(lo, hi);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape == b.shape);
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool all_finite(const Tensor& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

// Row-major element access by multi-index.
template <class T, class... I>
auto& at(T& t, I... idx) {
  REQUIRE(sizeof...(I) == t.shape.size());
  const int ix[] = {static_cast<int>(idx)...};
  std::size_t flat = 0;
  for (std::size_t d = 0; d < sizeof...(I); ++d) flat = flat * static_cast<std::size_t>(t.shape[d]) + static_cast<std::size_t>(ix[d]);
  return t.data[flat];
}

template <class F>
ErrorKind error_kind(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an h4w::Error");
  return ErrorKind::IOFailure;
}

}  // namespace h4w::test
