#include "patchmix/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace patchmix {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_numel(shape_)) {
        throw std::invalid_argument("tensor: " + std::to_string(values_.size()) +
                                    " values do not fill shape " + shape_str(shape_));
    }
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != values_.size()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(shape_) + " as " +
                                    shape_str(shape));
    }
    return Tensor(std::move(shape), values_);
}

bool Tensor::all_finite() const {
    for (double v : values_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double Tensor::item() const {
    if (values_.size() != 1) {
        throw std::logic_error("item: tensor of shape " + shape_str(shape_) + " is not a scalar");
    }
    return values_[0];
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (a != b) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a) +
                                    " vs " + shape_str(b));
    }
}

}  // namespace patchmix
