#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace titanet {

// Dense row-major tensor of doubles. Shapes are small (rank <= 3 in practice):
// [B, C, T] activations, [C, k] / [Co, Ci] weights, [B, D] matrices.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, double v);

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    // Convenience accessors; no bounds checking beyond debug asserts.
    double& at(int i) { return data[static_cast<size_t>(i)]; }
    double at(int i) const { return data[static_cast<size_t>(i)]; }
    double& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
    double at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
    double& at(int i, int j, int k) {
        return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    double at(int i, int j, int k) const {
        return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
    }

    void fill(double v);

    std::string shape_str() const;
};

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

// Throws std::invalid_argument naming both shapes when they differ.
void require_shape(const Tensor& t, const std::vector<int>& expected, const char* what);

}  // namespace titanet
