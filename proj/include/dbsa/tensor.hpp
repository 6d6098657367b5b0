#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace dbsa {

// Dense row-major float32 tensor.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> dims);
    Tensor(std::vector<std::size_t> dims, std::vector<float> data);

    static Tensor zeros(std::initializer_list<std::size_t> dims) { return Tensor(std::vector<std::size_t>(dims)); }
    static Tensor identity(std::size_t n);

    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t rank() const { return dims_.size(); }
    std::size_t dim(std::size_t i) const { return dims_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }
    const std::vector<float>& values() const { return data_; }

    // Leading-dimension slice: row i of a rank>=1 tensor.
    std::span<float> row(std::size_t i);
    std::span<const float> row(std::size_t i) const;
    std::size_t row_size() const;

    float& at(std::size_t i, std::size_t j) { return data_[i * dims_[1] + j]; }
    float at(std::size_t i, std::size_t j) const { return data_[i * dims_[1] + j]; }

    // Same data, new dims with identical element count.
    Tensor reshaped(std::vector<std::size_t> dims) const;

    bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<std::size_t> dims_;
    std::vector<float> data_;
};

// Dense boolean matrix used as an attention mask: true = allowed.
class Mask2D {
public:
    Mask2D() = default;
    Mask2D(std::size_t rows, std::size_t cols, bool fill = false)
        : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool operator()(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c] != 0; }
    void set(std::size_t r, std::size_t c, bool v) { bits_[r * cols_ + c] = v ? 1 : 0; }
    std::span<const std::uint8_t> row(std::size_t r) const { return {bits_.data() + r * cols_, cols_}; }
    std::span<std::uint8_t> row(std::size_t r) { return {bits_.data() + r * cols_, cols_}; }
    std::size_t count() const;

    // Lower-triangular (causal) mask of size n x n.
    static Mask2D causal(std::size_t n);

    friend bool operator==(const Mask2D&, const Mask2D&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::uint8_t> bits_;
};

// OpenMP-parallel kernels. Every output element is reduced by exactly one
// thread in a fixed order, so results are bit-identical to the serial
// references below regardless of thread count.
Tensor matmul(const Tensor& a, const Tensor& b);
// a[m x k] * b[n x k]^T
Tensor matmul_bt(const Tensor& a, const Tensor& b);
Tensor softmax_masked(const Tensor& scores, const Mask2D& mask);
Tensor rms_norm(const Tensor& x, std::span<const float> weight, float eps);
// silu(gate) * up, elementwise
Tensor swiglu(const Tensor& gate, const Tensor& up);
void add_inplace(Tensor& acc, const Tensor& other);

// Softmax over the allowed entries of one row; masked entries become 0.
// Throws MaskError when no entry is allowed.
void softmax_masked_row(std::span<float> row, std::span<const std::uint8_t> allowed);

namespace serial {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_bt(const Tensor& a, const Tensor& b);
Tensor softmax_masked(const Tensor& scores, const Mask2D& mask);

}  // namespace serial

// Worker count used by the parallel kernels (honours DBSA_THREADS).
int max_threads();
void set_max_threads(int n);

}  // namespace dbsa
