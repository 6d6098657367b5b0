#include "dbsa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <string>

#include <omp.h>

#include "dbsa/error.hpp"

namespace dbsa {

namespace {

std::size_t product(const std::vector<std::size_t>& dims) {
    std::size_t n = 1;
    for (std::size_t d : dims) {
        if (d == 0) throw ShapeError("tensor dims must be positive");
        n *= d;
    }
    return n;
}

std::string dims_str(const std::vector<std::size_t>& dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

void require_matrix(const Tensor& t, const char* name) {
    if (t.rank() != 2) throw ShapeError(std::string(name) + " must be rank 2, got " + dims_str(t.dims()));
}

int initial_threads() {
    int n = omp_get_max_threads();
    if (const char* env = std::getenv("DBSA_THREADS")) {
        int cap = std::atoi(env);
        if (cap > 0) n = std::min(n, cap);
    }
    return std::max(n, 1);
}

int g_threads = initial_threads();

}  // namespace

int max_threads() { return g_threads; }
void set_max_threads(int n) { g_threads = std::max(n, 1); }

Tensor::Tensor(std::vector<std::size_t> dims) : dims_(std::move(dims)), data_(product(dims_), 0.0f) {}

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<float> data) : dims_(std::move(dims)), data_(std::move(data)) {
    if (product(dims_) != data_.size())
        throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match dims " + dims_str(dims_));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0f;
    return t;
}

std::size_t Tensor::row_size() const { return dims_.empty() ? 0 : data_.size() / dims_[0]; }

std::span<float> Tensor::row(std::size_t i) {
    const std::size_t n = row_size();
    return {data_.data() + i * n, n};
}

std::span<const float> Tensor::row(std::size_t i) const {
    const std::size_t n = row_size();
    return {data_.data() + i * n, n};
}

Tensor Tensor::reshaped(std::vector<std::size_t> dims) const { return Tensor(std::move(dims), data_); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

std::size_t Mask2D::count() const { return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1)); }

Mask2D Mask2D::causal(std::size_t n) {
    Mask2D m(n, n);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c <= r; ++c) m.set(r, c, true);
    return m;
}

// Row kernels shared by the serial and parallel drivers. Summation order is
// always ascending over the reduction index.
namespace {

// Accumulates in double and rounds once per output element.
void matmul_row(const float* a_row, const Tensor& b, float* out_row, std::vector<double>& acc) {
    const std::size_t k = b.dim(0), n = b.dim(1);
    const float* bd = b.data().data();
    acc.assign(n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
        const double av = a_row[p];
        const float* b_row = bd + p * n;
        for (std::size_t j = 0; j < n; ++j) acc[j] += av * b_row[j];
    }
    for (std::size_t j = 0; j < n; ++j) out_row[j] = static_cast<float>(acc[j]);
}

void matmul_bt_row(const float* a_row, const Tensor& b, float* out_row) {
    const std::size_t n = b.dim(0), k = b.dim(1);
    const float* bd = b.data().data();
    for (std::size_t j = 0; j < n; ++j) {
        const float* b_row = bd + j * k;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += static_cast<double>(a_row[p]) * b_row[p];
        out_row[j] = static_cast<float>(acc);
    }
}

void check_matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul lhs");
    require_matrix(b, "matmul rhs");
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul inner dims differ: " + dims_str(a.dims()) + " x " + dims_str(b.dims()));
}

void check_matmul_bt(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_bt lhs");
    require_matrix(b, "matmul_bt rhs");
    if (a.dim(1) != b.dim(1))
        throw ShapeError("matmul_bt inner dims differ: " + dims_str(a.dims()) + " x " + dims_str(b.dims()) + "^T");
}

void check_mask(const Tensor& scores, const Mask2D& mask) {
    require_matrix(scores, "softmax scores");
    if (mask.rows() != scores.dim(0) || mask.cols() != scores.dim(1))
        throw ShapeError("softmax mask shape does not match scores " + dims_str(scores.dims()));
}

}  // namespace

void softmax_masked_row(std::span<float> row, std::span<const std::uint8_t> allowed) {
    float mx = -std::numeric_limits<float>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < row.size(); ++j) {
        if (allowed[j]) {
            mx = std::max(mx, row[j]);
            any = true;
        }
    }
    if (!any) throw MaskError("softmax row has no allowed position");
    float sum = 0.0f;
    for (std::size_t j = 0; j < row.size(); ++j) {
        if (allowed[j]) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        } else {
            row[j] = 0.0f;
        }
    }
    const float inv = 1.0f / sum;
    for (std::size_t j = 0; j < row.size(); ++j)
        if (allowed[j]) row[j] *= inv;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_matmul(a, b);
    const std::size_t m = a.dim(0), n = b.dim(1);
    Tensor out({m, n});
    const float* ad = a.data().data();
    float* od = out.data().data();
    const std::size_t k = a.dim(1);
#pragma omp parallel num_threads(g_threads) if (m * n * k > 32768)
    {
        std::vector<double> acc;
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) matmul_row(ad + i * k, b, od + i * n, acc);
    }
    return out;
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
    check_matmul_bt(a, b);
    const std::size_t m = a.dim(0), n = b.dim(0), k = a.dim(1);
    Tensor out({m, n});
    const float* ad = a.data().data();
    float* od = out.data().data();
#pragma omp parallel for schedule(static) num_threads(g_threads) if (m * n * k > 32768)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) matmul_bt_row(ad + i * k, b, od + i * n);
    return out;
}

Tensor softmax_masked(const Tensor& scores, const Mask2D& mask) {
    check_mask(scores, mask);
    Tensor out = scores;
    const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(scores.dim(0));
    bool failed = false;
#pragma omp parallel for schedule(static) num_threads(g_threads) reduction(|| : failed)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
        try {
            softmax_masked_row(out.row(r), mask.row(r));
        } catch (const MaskError&) {
            failed = true;
        }
    }
    if (failed) throw MaskError("softmax row has no allowed position");
    return out;
}

Tensor rms_norm(const Tensor& x, std::span<const float> weight, float eps) {
    require_matrix(x, "rms_norm input");
    if (weight.size() != x.dim(1)) throw ShapeError("rms_norm weight length mismatch");
    Tensor out({x.dim(0), x.dim(1)});
    const std::size_t n = x.dim(1);
    for (std::size_t r = 0; r < x.dim(0); ++r) {
        auto in = x.row(r);
        auto o = out.row(r);
        float ss = 0.0f;
        for (float v : in) ss += v * v;
        const float scale = 1.0f / std::sqrt(ss / static_cast<float>(n) + eps);
        for (std::size_t j = 0; j < n; ++j) o[j] = in[j] * scale * weight[j];
    }
    return out;
}

Tensor swiglu(const Tensor& gate, const Tensor& up) {
    if (gate.dims() != up.dims()) throw ShapeError("swiglu operand shapes differ");
    Tensor out(gate.dims());
    auto g = gate.data();
    auto u = up.data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = g[i] / (1.0f + std::exp(-g[i])) * u[i];
    return out;
}

void add_inplace(Tensor& acc, const Tensor& other) {
    if (acc.dims() != other.dims()) throw ShapeError("add operand shapes differ");
    auto a = acc.data();
    auto b = other.data();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

namespace serial {

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_matmul(a, b);
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    std::vector<double> acc;
    for (std::size_t i = 0; i < m; ++i) matmul_row(a.data().data() + i * k, b, out.data().data() + i * n, acc);
    return out;
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
    check_matmul_bt(a, b);
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) matmul_bt_row(a.data().data() + i * k, b, out.data().data() + i * n);
    return out;
}

Tensor softmax_masked(const Tensor& scores, const Mask2D& mask) {
    check_mask(scores, mask);
    Tensor out = scores;
    for (std::size_t r = 0; r < scores.dim(0); ++r) softmax_masked_row(out.row(r), mask.row(r));
    return out;
}

}  // namespace serial

}  // namespace dbsa
