#include "peftbench/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace peftbench {

namespace {
constexpr int kMaxSweeps = 100;
constexpr double kSvdTol = 1e-12;

void require_finite(const Matrix& m, const char* who)
{
    for (double v : m.data) {
        if (!std::isfinite(v)) throw NumericError(std::string(who) + ": non-finite entry");
    }
}
}  // namespace

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values))
{
    if (data.size() != r * c) throw ShapeError("matrix: " + std::to_string(r) + "x" + std::to_string(c) + " needs " +
                                               std::to_string(r * c) + " values, got " + std::to_string(data.size()));
}

Matrix Matrix::identity(std::size_t n)
{
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_tensor(const Tensor& t)
{
    if (t.rank() != 2) throw ShapeError("matrix: expected rank-2 tensor, got " + shape_str(t.shape()));
    auto v = t.values();
    return Matrix(t.dim(0), t.dim(1), std::vector<double>(v.begin(), v.end()));
}

Matrix Matrix::transposed() const
{
    Matrix t(cols, rows);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
    return t;
}

Tensor Matrix::to_tensor() const { return Tensor({rows, cols}, data); }

Matrix matmul(const Matrix& a, const Matrix& b)
{
    if (a.cols != b.rows) throw ShapeError("matrix matmul: inner dims differ");
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t k = 0; k < a.cols; ++k) {
            double aik = a(i, k);
            for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

double max_abs_diff(const Matrix& a, const Matrix& b)
{
    if (a.rows != b.rows || a.cols != b.cols) throw ShapeError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

Matrix Svd::reconstruct() const
{
    Matrix us = u;
    for (std::size_t i = 0; i < us.rows; ++i)
        for (std::size_t j = 0; j < us.cols; ++j) us(i, j) *= sigma[j];
    return matmul(us, v.transposed());
}

Svd svd_small(const Matrix& w)
{
    require_finite(w, "svd_small");
    if (w.rows == 0 || w.cols == 0) throw ShapeError("svd_small: empty matrix");
    if (w.rows < w.cols) {
        Svd t = svd_small(w.transposed());
        return Svd{std::move(t.v), std::move(t.sigma), std::move(t.u)};
    }
    const std::size_t m = w.rows, n = w.cols;
    Matrix a = w;
    Matrix v = Matrix::identity(n);

    bool converged = false;
    for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
        converged = true;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    alpha += a(i, p) * a(i, p);
                    beta += a(i, q) * a(i, q);
                    gamma += a(i, p) * a(i, q);
                }
                if (alpha == 0.0 || beta == 0.0) continue;
                if (std::abs(gamma) <= kSvdTol * std::sqrt(alpha * beta)) continue;
                converged = false;
                double zeta = (beta - alpha) / (2.0 * gamma);
                double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    double ap = a(i, p), aq = a(i, q);
                    a(i, p) = c * ap - s * aq;
                    a(i, q) = s * ap + c * aq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    double vp = v(i, p), vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
    }
    if (!converged) throw NumericError("svd_small: Jacobi sweeps did not converge");

    std::vector<double> norms(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += a(i, j) * a(i, j);
        norms[j] = std::sqrt(s);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return norms[x] > norms[y]; });

    Svd out{Matrix(m, n), std::vector<double>(n), Matrix(n, n)};
    double scale = norms[order[0]];
    std::vector<std::size_t> empty_cols;
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t j = order[k];
        out.sigma[k] = norms[j];
        for (std::size_t i = 0; i < n; ++i) out.v(i, k) = v(i, j);
        if (norms[j] > scale * 1e-15 && norms[j] > 0.0) {
            for (std::size_t i = 0; i < m; ++i) out.u(i, k) = a(i, j) / norms[j];
        } else {
            empty_cols.push_back(k);
        }
    }
    // Complete U with orthonormal directions for (numerically) zero singular values.
    std::vector<bool> filled(n, true);
    for (auto k : empty_cols) filled[k] = false;
    for (auto k : empty_cols) {
        for (std::size_t e = 0; e < m; ++e) {
            std::vector<double> cand(m, 0.0);
            cand[e] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t j = 0; j < n; ++j) {
                    if (!filled[j]) continue;
                    double d = 0.0;
                    for (std::size_t i = 0; i < m; ++i) d += cand[i] * out.u(i, j);
                    for (std::size_t i = 0; i < m; ++i) cand[i] -= d * out.u(i, j);
                }
            }
            double nn = 0.0;
            for (double c : cand) nn += c * c;
            nn = std::sqrt(nn);
            if (nn > 1e-6) {
                for (std::size_t i = 0; i < m; ++i) out.u(i, k) = cand[i] / nn;
                filled[k] = true;
                break;
            }
        }
    }
    return out;
}

SymEigen sym_eigen(const Matrix& s)
{
    require_finite(s, "sym_eigen");
    if (s.rows != s.cols) throw ShapeError("sym_eigen: matrix must be square");
    const std::size_t n = s.rows;
    Matrix a = s;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = 0.5 * (s(i, j) + s(j, i));
    Matrix v = Matrix::identity(n);

    double total = 0.0;
    for (double x : a.data) total += x * x;
    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (off <= 1e-30 * total || off == 0.0) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (a(p, q) == 0.0) continue;
                double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double sn = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - sn * akq;
                    a(k, q) = sn * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - sn * aqk;
                    a(q, k) = sn * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - sn * vkq;
                    v(k, q) = sn * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return a(x, x) > a(y, y); });
    SymEigen out{std::vector<double>(n), Matrix(n, n)};
    for (std::size_t k = 0; k < n; ++k) {
        out.values[k] = a(order[k], order[k]);
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
    }
    return out;
}

Matrix sqrtm_psd(const Matrix& s)
{
    auto eig = sym_eigen(s);
    const std::size_t n = s.rows;
    Matrix out(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        double r = std::sqrt(std::max(eig.values[k], 0.0));
        if (r == 0.0) continue;
        for (std::size_t i = 0; i < n; ++i) {
            double vi = eig.vectors(i, k) * r;
            for (std::size_t j = 0; j < n; ++j) out(i, j) += vi * eig.vectors(j, k);
        }
    }
    return out;
}

}  // namespace peftbench
