#include "caad/nn/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "caad/errors.hpp"

namespace caad::nn {

Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(numel(shape_)), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  require(numel(shape_) == static_cast<Index>(data_.size()), Errc::ShapeError,
          "tensor shape " + to_string(shape_) + " does not match " + std::to_string(data_.size()) + " values");
}

template <typename T>
typename Tensor<T>::MatrixMap Tensor<T>::matrix(Index rows, Index cols) {
  require(rows * cols == size(), Errc::ShapeError, "matrix view size mismatch");
  return MatrixMap(data_.data(), rows, cols);
}

template <typename T>
typename Tensor<T>::ConstMatrixMap Tensor<T>::matrix(Index rows, Index cols) const {
  require(rows * cols == size(), Errc::ShapeError, "matrix view size mismatch");
  return ConstMatrixMap(data_.data(), rows, cols);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

template <typename T>
void Tensor<T>::reshape(Shape shape) {
  require(numel(shape) == size(), Errc::ShapeError,
          "cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  shape_ = std::move(shape);
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace caad::nn
