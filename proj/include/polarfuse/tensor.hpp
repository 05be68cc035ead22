#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace polarfuse {

// Dense row-major tensor of doubles. Double precision everywhere; float32
// only appears at the weight-archive boundary (tensor_io.hpp).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0);

    // Validates product(dims) == data.size() and that every value is finite.
    static Tensor from_data(std::vector<std::size_t> dims, std::vector<double> data);

    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t rank() const { return dims_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    // Rank-checked multi-index accessors for the common layouts.
    double at2(std::size_t i, std::size_t j) const;
    double& at2(std::size_t i, std::size_t j);
    double at3(std::size_t c, std::size_t i, std::size_t j) const;
    double& at3(std::size_t c, std::size_t i, std::size_t j);

    bool same_dims(const Tensor& other) const { return dims_ == other.dims_; }
    bool all_finite() const;

    void fill(double value);

    std::string shape_str() const;

private:
    std::vector<std::size_t> dims_;
    std::vector<double> data_;
};

// Throws std::invalid_argument with a "<what>: got A, expected B" message.
void require_same_dims(const Tensor& a, const Tensor& b, const std::string& what);

}  // namespace polarfuse
