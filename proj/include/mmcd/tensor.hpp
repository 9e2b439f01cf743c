#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <vector>

#include "mmcd/errors.hpp"

namespace mmcd {

using Shape = std::vector<long>;

inline long shape_numel(const Shape& s) {
    long n = 1;
    for (const long d : s) n *= d;
    return n;
}

// Dense row-major double tensor. The buffer is shared between handles;
// operations never write their inputs, use clone() before mutating a
// tensor that may be aliased.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          numel_(shape_numel(shape_)),
          buf_(std::make_shared<std::vector<double>>(static_cast<std::size_t>(numel_), 0.0)) {
        if (numel_ < 0) throw ShapeError("negative tensor extent");
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape));
        for (double& x : *t.buf_) x = v;
        return t;
    }

    static Tensor from(Shape shape, std::vector<double> values) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.numel_ = shape_numel(t.shape_);
        if (t.numel_ != static_cast<long>(values.size())) throw ShapeError("value count does not match shape");
        t.buf_ = std::make_shared<std::vector<double>>(std::move(values));
        return t;
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    bool defined() const { return buf_ != nullptr; }
    const Shape& shape() const { return shape_; }
    long ndim() const { return static_cast<long>(shape_.size()); }
    long dim(long i) const { return shape_[static_cast<std::size_t>(i)]; }
    long numel() const { return numel_; }

    double* data() { return buf_->data(); }
    const double* data() const { return buf_->data(); }

    double& operator[](long i) { return (*buf_)[static_cast<std::size_t>(i)]; }
    double operator[](long i) const { return (*buf_)[static_cast<std::size_t>(i)]; }

    double at(std::initializer_list<long> idx) const {
        long flat = 0, k = 0;
        for (const long i : idx) flat = flat * shape_[static_cast<std::size_t>(k)] + i, ++k;
        return (*buf_)[static_cast<std::size_t>(flat)];
    }

    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.numel_ = numel_;
        t.buf_ = std::make_shared<std::vector<double>>(*buf_);
        return t;
    }

    // Shares the buffer under a new shape of equal element count.
    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != numel_) throw ShapeError("reshape changes element count");
        Tensor t = *this;
        t.shape_ = std::move(shape);
        return t;
    }

    void fill(double v) {
        for (double& x : *buf_) x = v;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    Shape shape_;
    long numel_ = 0;
    std::shared_ptr<std::vector<double>> buf_;
};

// Integer map used for labels and index-based bookkeeping.
struct IntTensor {
    Shape shape;
    std::vector<std::int32_t> v;

    IntTensor() = default;
    explicit IntTensor(Shape s) : shape(std::move(s)), v(static_cast<std::size_t>(shape_numel(shape)), 0) {}
    long numel() const { return static_cast<long>(v.size()); }
    std::int32_t& operator[](long i) { return v[static_cast<std::size_t>(i)]; }
    std::int32_t operator[](long i) const { return v[static_cast<std::size_t>(i)]; }
};

// Round-trip through IEEE float32; parameters are stored like this so that
// checkpoint serialization (float32 little-endian) is lossless.
inline double snap_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

inline void snap_f32(Tensor& t) {
    double* p = t.data();
    for (long i = 0; i < t.numel(); ++i) p[i] = snap_f32(p[i]);
}

}  // namespace mmcd
