#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace gat {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major tensor of doubles. Operations in the engine view a tensor as a
// matrix with rows() = leading dimension and cols() = product of the rest.
class Tensor {
   public:
    Tensor() : shape_{1}, values_(1, 0.0) {}
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double value) { return Tensor(Shape{1}, {value}); }
    static Tensor filled(Shape shape, double value);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
        return Tensor(Shape{rows, cols}, std::move(values));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return values_.size(); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t rows() const noexcept { return shape_.empty() ? 1 : shape_[0]; }
    std::size_t cols() const noexcept { return rows() == 0 ? 0 : size() / rows(); }

    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }
    const std::vector<double>& data() const noexcept { return values_; }
    double* raw() noexcept { return values_.data(); }
    const double* raw() const noexcept { return values_.data(); }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& at(std::size_t row, std::size_t col) { return values_[row * cols() + col]; }
    double at(std::size_t row, std::size_t col) const { return values_[row * cols() + col]; }

    // Value of a single-element tensor.
    double item() const;
    Tensor reshaped(Shape shape) const;
    std::span<const double> row(std::size_t r) const { return values().subspan(r * cols(), cols()); }
    std::span<double> row(std::size_t r) { return values().subspan(r * cols(), cols()); }
    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

   private:
    Shape shape_;
    std::vector<double> values_;
};

}  // namespace gat
