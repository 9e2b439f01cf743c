#pragma once

#include <functional>
#include <string>

#include "mmcd/tensor.hpp"

namespace mmcd {

// A named leaf of the model tree. `trainable == false` marks frozen weights;
// `buffer == true` marks running statistics (serialized, never optimized,
// mutated directly by forward passes in training mode).
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;
    bool buffer = false;

    void init(Tensor v, bool trainable_ = true, bool buffer_ = false) {
        snap_f32(v);
        value = std::move(v);
        grad = Tensor::zeros(value.shape());
        trainable = trainable_;
        buffer = buffer_;
    }

    void zero_grad() { grad.fill(0.0); }

    void assign(const Tensor& v) {
        if (!v.same_shape(value)) throw ShapeError("parameter assignment shape mismatch: " + name);
        Tensor c = v.clone();
        snap_f32(c);
        value = std::move(c);
    }
};

using ParamVisitor = std::function<void(Parameter&)>;

}  // namespace mmcd
