#include "titanet/tensor.hpp"

#include <algorithm>
#include <stdexcept>

namespace titanet {

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    s += "]";
    return s;
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dimension must be positive, got shape " + shape_to_string(shape));
    }
    data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
}

Tensor Tensor::full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    t.fill(v);
    return t;
}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

std::string Tensor::shape_str() const { return shape_to_string(shape); }

void require_shape(const Tensor& t, const std::vector<int>& expected, const char* what) {
    if (t.shape != expected) {
        throw std::invalid_argument(std::string(what) + ": expected shape " + shape_to_string(expected) +
                                    ", got " + shape_to_string(t.shape));
    }
}

}  // namespace titanet
