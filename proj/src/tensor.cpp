#include "polarfuse/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace polarfuse {

namespace {

std::size_t checked_numel(const std::vector<std::size_t>& dims) {
    std::size_t n = 1;
    for (std::size_t d : dims) {
        if (d == 0) throw std::invalid_argument("Tensor: zero extent in dims");
        n *= d;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> dims, double fill)
    : dims_(std::move(dims)), data_(checked_numel(dims_), fill) {}

Tensor Tensor::from_data(std::vector<std::size_t> dims, std::vector<double> data) {
    if (checked_numel(dims) != data.size())
        throw std::invalid_argument("Tensor::from_data: dims do not match data length");
    Tensor t;
    t.dims_ = std::move(dims);
    t.data_ = std::move(data);
    if (!t.all_finite())
        throw std::invalid_argument("Tensor::from_data: non-finite value in data");
    return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= dims_.size()) throw std::invalid_argument("Tensor::dim: axis out of range");
    return dims_[axis];
}

double Tensor::at2(std::size_t i, std::size_t j) const {
    return data_[i * dims_[1] + j];
}

double& Tensor::at2(std::size_t i, std::size_t j) {
    return data_[i * dims_[1] + j];
}

double Tensor::at3(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * dims_[1] + i) * dims_[2] + j];
}

double& Tensor::at3(std::size_t c, std::size_t i, std::size_t j) {
    return data_[(c * dims_[1] + i) * dims_[2] + j];
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::fill(double value) {
    for (double& v : data_) v = value;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        if (i) os << "x";
        os << dims_[i];
    }
    os << "]";
    return os.str();
}

void require_same_dims(const Tensor& a, const Tensor& b, const std::string& what) {
    if (!a.same_dims(b))
        throw std::invalid_argument(what + ": dimension mismatch, got " + a.shape_str() +
                                    " vs " + b.shape_str());
}

}  // namespace polarfuse
