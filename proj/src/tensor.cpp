#include "h4w/tensor.hpp"

#include <sstream>

#include "h4w/error.hpp"

namespace h4w {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::NotARotation: return "NotARotation";
    case ErrorKind::DegenerateBox: return "DegenerateBox";
    case ErrorKind::InvalidTree: return "InvalidTree";
    case ErrorKind::BehindCamera: return "BehindCamera";
    case ErrorKind::UnknownMode: return "UnknownMode";
    case ErrorKind::NotScalar: return "NotScalar";
    case ErrorKind::DetachedGraph: return "DetachedGraph";
    case ErrorKind::MissingGT: return "MissingGT";
    case ErrorKind::Degenerate: return "Degenerate";
    case ErrorKind::IOFailure: return "IOFailure";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw Error(ErrorKind::ShapeMismatch, "negative dimension in " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_numel(shape))
    throw Error(ErrorKind::ShapeMismatch, "data length " + std::to_string(data.size()) +
                                              " does not match shape " + shape_str(shape));
}

void require_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape != expected)
    throw Error(ErrorKind::ShapeMismatch,
                std::string(what) + ": expected " + shape_str(expected) + ", got " + shape_str(t.shape));
}

}  // namespace h4w
