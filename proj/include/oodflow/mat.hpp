#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "oodflow/error.hpp"

namespace oodflow {

// Dense row-major matrix. Plain value type; all layers and feature sets
// store their numbers in one of these.
template <typename T>
struct Mat {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<T> v;

  Mat() = default;
  Mat(size_t r, size_t c, T fill = T(0)) : rows(r), cols(c), v(r * c, fill) {}

  T* row(size_t i) { return v.data() + i * cols; }
  const T* row(size_t i) const { return v.data() + i * cols; }
  std::span<T> row_span(size_t i) { return {row(i), cols}; }
  std::span<const T> row_span(size_t i) const { return {row(i), cols}; }

  T& at(size_t i, size_t j) { return v[i * cols + j]; }
  const T& at(size_t i, size_t j) const { return v[i * cols + j]; }

  size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }

  void require_width(size_t w, const char* what) const {
    if (cols != w)
      throw_error(ErrorKind::argument,
                  std::string(what) + ": expected width " + std::to_string(w) +
                      ", got " + std::to_string(cols));
  }
};

using MatF = Mat<float>;
using MatD = Mat<double>;

// Re-dimension, reusing existing storage (vector capacity) where possible.
// Contents are unspecified afterwards; callers must overwrite every element.
// Hot loops use this to keep scratch matrices warm across iterations.
template <typename T>
void reshape(Mat<T>& m, size_t rows, size_t cols) {
  m.rows = rows;
  m.cols = cols;
  m.v.resize(rows * cols);
}

template <typename T, typename U>
Mat<T> mat_cast(const Mat<U>& m) {
  Mat<T> out(m.rows, m.cols);
  for (size_t i = 0; i < m.v.size(); ++i) out.v[i] = static_cast<T>(m.v[i]);
  return out;
}

}  // namespace oodflow
