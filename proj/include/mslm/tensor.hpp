#pragma once

#include <cstddef>
#include <vector>

namespace mslm {

/// Row-major matrix of scalars. The scalar type is a template parameter
/// throughout the model stack: production runs float, gradient checks run
/// the identical code in double.
template <typename S>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<S> v;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, S(0)) {}

    void resize(int r, int c) {
        rows = r;
        cols = c;
        v.assign(static_cast<size_t>(r) * c, S(0));
    }
    void zero() { std::fill(v.begin(), v.end(), S(0)); }

    S* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
    const S* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }
    S& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    S at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
    size_t size() const { return v.size(); }
};

// y[N,out] += x[N,in] * w[in,out]. Each output element accumulates in
// ascending k order no matter how rows are split across threads, so results
// do not depend on the thread count.
template <typename S>
void matmul_acc(S* y, const S* x, const S* w, int n_rows, int in, int out) {
#pragma omp parallel for schedule(static)
    for (int n0 = 0; n0 < n_rows; n0 += 4) {
        const int n1 = n0 + 4 <= n_rows ? n0 + 4 : n_rows;
        if (n1 - n0 == 4) {
            S* y0 = y + static_cast<size_t>(n0) * out;
            S* y1 = y0 + out;
            S* y2 = y1 + out;
            S* y3 = y2 + out;
            const S* x0 = x + static_cast<size_t>(n0) * in;
            const S* x1 = x0 + in;
            const S* x2 = x1 + in;
            const S* x3 = x2 + in;
            for (int k = 0; k < in; ++k) {
                const S* wr = w + static_cast<size_t>(k) * out;
                const S a0 = x0[k], a1 = x1[k], a2 = x2[k], a3 = x3[k];
                for (int o = 0; o < out; ++o) {
                    const S wv = wr[o];
                    y0[o] += a0 * wv;
                    y1[o] += a1 * wv;
                    y2[o] += a2 * wv;
                    y3[o] += a3 * wv;
                }
            }
        } else {
            for (int n = n0; n < n1; ++n) {
                S* yr = y + static_cast<size_t>(n) * out;
                const S* xr = x + static_cast<size_t>(n) * in;
                for (int k = 0; k < in; ++k) {
                    const S a = xr[k];
                    const S* wr = w + static_cast<size_t>(k) * out;
                    for (int o = 0; o < out; ++o) yr[o] += a * wr[o];
                }
            }
        }
    }
}

// dw[k,o] += sum_n x[n,k] * dy[n,o]. Parallel over k rows; the n loop is
// the reduction and runs in ascending order for every element.
template <typename S>
void matmul_grad_w(S* dw, const S* x, const S* dy, int n_rows, int in, int out) {
#pragma omp parallel for schedule(static)
    for (int k = 0; k < in; ++k) {
        S* dwr = dw + static_cast<size_t>(k) * out;
        for (int n = 0; n < n_rows; ++n) {
            const S a = x[static_cast<size_t>(n) * in + k];
            const S* dyr = dy + static_cast<size_t>(n) * out;
            for (int o = 0; o < out; ++o) dwr[o] += a * dyr[o];
        }
    }
}

template <typename S>
void transpose(const S* w, S* wt, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) wt[static_cast<size_t>(c) * rows + r] = w[static_cast<size_t>(r) * cols + c];
}

template <typename S>
void add_bias(S* y, const S* b, int n_rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int n = 0; n < n_rows; ++n) {
        S* yr = y + static_cast<size_t>(n) * cols;
        for (int c = 0; c < cols; ++c) yr[c] += b[c];
    }
}

// db[c] += sum_n dy[n,c], ascending n. Serial: bias gradients are a
// rounding error next to the matmuls.
template <typename S>
void bias_grad(S* db, const S* dy, int n_rows, int cols) {
    for (int n = 0; n < n_rows; ++n) {
        const S* dyr = dy + static_cast<size_t>(n) * cols;
        for (int c = 0; c < cols; ++c) db[c] += dyr[c];
    }
}

} // namespace mslm
