#include "oxygan/tensor.hpp"

#include <cmath>
#include <limits>

namespace oxygan {

template <typename T>
std::int64_t TensorT<T>::checked_numel(const std::vector<int>& dims) {
  std::int64_t n = 1;
  for (int d : dims) {
    if (d <= 0)
      throw ShapeError("non-positive dimension in " + dims_to_string(dims));
    n *= d;
    if (n > (std::int64_t(1) << 34))
      throw ShapeError("tensor too large: " + dims_to_string(dims));
  }
  return n;
}

template <typename T>
bool TensorT<T>::all_finite() const {
  for (const T& v : data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename T>
T TensorT<T>::min_value() const {
  T m = std::numeric_limits<T>::max();
  for (const T& v : data) m = v < m ? v : m;
  return m;
}

template <typename T>
T TensorT<T>::max_value() const {
  T m = std::numeric_limits<T>::lowest();
  for (const T& v : data) m = v > m ? v : m;
  return m;
}

template <typename T>
TensorT<T> take_channels(const TensorT<T>& t, int from, int to) {
  if (t.ndim() < 3) throw ShapeError("take_channels needs CHW/NCHW, got " + dims_to_string(t.dims));
  const int ch_axis = t.ndim() - 3;
  const int C = t.dim(ch_axis);
  if (from < 0 || to > C || from >= to)
    throw ShapeError("take_channels [" + std::to_string(from) + "," + std::to_string(to) +
                     ") out of " + std::to_string(C));
  std::vector<int> od = t.dims;
  od[static_cast<std::size_t>(ch_axis)] = to - from;
  TensorT<T> out(od);
  const int H = t.dim(t.ndim() - 2), W = t.dim(t.ndim() - 1);
  std::int64_t outer = 1;
  for (int i = 0; i < ch_axis; ++i) outer *= t.dim(i);
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  for (std::int64_t n = 0; n < outer; ++n)
    for (int c = from; c < to; ++c)
      for (std::int64_t p = 0; p < plane; ++p)
        out.data[static_cast<std::size_t>((n * (to - from) + (c - from)) * plane + p)] =
            t.data[static_cast<std::size_t>((n * C + c) * plane + p)];
  return out;
}

template struct TensorT<float>;
template struct TensorT<double>;
template TensorT<float> take_channels(const TensorT<float>&, int, int);
template TensorT<double> take_channels(const TensorT<double>&, int, int);

}  // namespace oxygan
