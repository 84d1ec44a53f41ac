#include "egsa/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace egsa {

std::string Shape::str() const {
    return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " + std::to_string(w) +
           ")";
}

void require_valid(const Shape& shape) {
    if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
        throw DimensionError("tensor dimensions must be >= 1, got " + shape.str());
    }
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(shape) {
    require_valid(shape_);
    data_.assign(shape_.numel(), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    require_valid(shape_);
    if (data_.size() != shape_.numel()) {
        throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " + shape_.str());
    }
}

template <typename T>
T BasicTensor<T>::item() const {
    if (data_.size() != 1) throw ContractError("item() on non-scalar tensor " + shape_.str());
    return data_[0];
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void BasicTensor<T>::fill(T value) {
    std::fill(data_.begin(), data_.end(), value);
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace egsa
