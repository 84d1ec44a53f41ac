#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "egsa/errors.hpp"

namespace egsa {

/// (batch, channels, height, width). All dimensions are at least 1.
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
               static_cast<std::size_t>(w);
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

/// Dense rank-4 array stored row-major in (batch, channel, row, column) order.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() : shape_{}, data_(1, T(0)) {}
    explicit BasicTensor(Shape shape, T fill = T(0));
    BasicTensor(Shape shape, std::vector<T> data);

    static BasicTensor zeros(Shape shape) { return BasicTensor(shape, T(0)); }
    static BasicTensor full(Shape shape, T value) { return BasicTensor(shape, value); }
    static BasicTensor scalar(T value) { return BasicTensor(Shape{}, value); }
    static BasicTensor zeros_like(const BasicTensor& other) { return BasicTensor(other.shape_, T(0)); }

    const Shape& shape() const { return shape_; }
    int batch() const { return shape_.n; }
    int channels() const { return shape_.c; }
    int height() const { return shape_.h; }
    int width() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }

    std::size_t index(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    T& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
    T at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    T operator[](std::size_t i) const { return data_[i]; }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    /// Contiguous (h, w) plane for one (batch, channel) pair.
    std::span<T> plane(int n, int c) { return std::span<T>(data_).subspan(index(n, c, 0, 0), shape_.plane()); }
    std::span<const T> plane(int n, int c) const {
        return std::span<const T>(data_).subspan(index(n, c, 0, 0), shape_.plane());
    }

    T item() const;
    bool all_finite() const;
    void fill(T value);

    template <typename U>
    BasicTensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return BasicTensor<U>(shape_, std::move(out));
    }

    bool operator==(const BasicTensor& other) const = default;

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor4 = BasicTensor<float>;
using Tensor4d = BasicTensor<double>;

void require_valid(const Shape& shape);

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace egsa
