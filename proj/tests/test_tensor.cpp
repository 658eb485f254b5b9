#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "peftbench/gradcheck.hpp"
#include "peftbench/linalg.hpp"
#include "peftbench/ops.hpp"
#include "peftbench/rng.hpp"
#include "support/support.hpp"

using namespace peftbench;
using peftbench::testing::random_tensor;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST(Tensor, ShapeAndValueCountMustAgree)
{
    EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
    Tensor t({2, 3}, std::vector<double>(6, 1.0));
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, CloneIsIndependent)
{
    Tensor a({2}, {1, 2}, true);
    Tensor b = a.clone();
    b.mutable_values()[0] = 9;
    EXPECT_EQ(a.at(0), 1.0);
    EXPECT_TRUE(b.requires_grad());
}

TEST(Ops, MatmulByIdentity)
{
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor id({2, 2}, {1, 0, 0, 1});
    EXPECT_EQ(vals(ops::matmul(a, id)), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Ops, ReluDefinition)
{
    EXPECT_EQ(vals(ops::relu(Tensor({3}, {-1, 0, 2}))), (std::vector<double>{0, 0, 2}));
}

TEST(Ops, SoftmaxOfEqualLogitsIsUniform)
{
    auto s = vals(ops::softmax(Tensor({2}, {0, 0})));
    EXPECT_DOUBLE_EQ(s[0], 0.5);
    EXPECT_DOUBLE_EQ(s[1], 0.5);
}

TEST(Ops, ShapeErrorsNameThePrimitive)
{
    try {
        ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
    }
    EXPECT_THROW(apply_primitive("no-such-op", {Tensor::zeros({1})}), ConfigError);
}

TEST(Ops, ConvMatchesDirectLoopOracle)
{
    RngStream rng(4);
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor y = ops::conv2d(x, w, b, {2, 1});
    ASSERT_EQ(y.shape(), (Shape{1, 3, 3, 3}));
    for (int o = 0; o < 3; ++o)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double acc = b.at(o);
                for (int c = 0; c < 2; ++c)
                    for (int ki = 0; ki < 3; ++ki)
                        for (int kj = 0; kj < 3; ++kj) {
                            int yi = 2 * i - 1 + ki, xj = 2 * j - 1 + kj;
                            if (yi < 0 || yi >= 5 || xj < 0 || xj >= 5) continue;
                            acc += x.at((c * 5 + yi) * 5 + xj) * w.at(((o * 2 + c) * 3 + ki) * 3 + kj);
                        }
                EXPECT_NEAR(y.at((o * 3 + i) * 3 + j), acc, 1e-12);
            }
}

TEST(Ops, BatchNormUpdatesRunningStatsWithMomentum)
{
    Tensor x({4, 1}, {1, 2, 3, 6});
    Tensor g = Tensor::full({1}, 1.0), b = Tensor::zeros({1});
    Tensor rm = Tensor::zeros({1}), rv = Tensor::full({1}, 1.0);
    ops::batch_norm(x, g, b, rm, rv, true);
    // batch mean 3, unbiased variance 14/3
    EXPECT_NEAR(rm.at(0), 0.1 * 3.0, 1e-12);
    EXPECT_NEAR(rv.at(0), 0.9 + 0.1 * 14.0 / 3.0, 1e-12);
    Tensor before = rm.clone();
    ops::batch_norm(x, g, b, rm, rv, false);
    EXPECT_EQ(rm.at(0), before.at(0));
}

TEST(Autodiff, SquareGradient)
{
    Tensor x({3}, {1, 2, 3}, true);
    backward(ops::sum(ops::mul(x, x)));
    EXPECT_EQ(vals(Tensor({3}, std::vector<double>(x.grad().begin(), x.grad().end()))), (std::vector<double>{2, 4, 6}));
}

TEST(Autodiff, FrozenLeafGetsNoGradBuffer)
{
    Tensor w({2, 2}, {1, 2, 3, 4});
    Tensor x({2, 1}, {1, 1}, true);
    backward(ops::mean(ops::matmul(w, x)));
    EXPECT_FALSE(w.has_grad());
    EXPECT_TRUE(x.has_grad());
}

TEST(Autodiff, NonScalarRootRejected)
{
    Tensor x({2}, {1, 2}, true);
    EXPECT_THROW(backward(ops::mul(x, x)), ShapeError);
}

TEST(Autodiff, UnreachableGradsUntouched)
{
    Tensor a({1}, {2}, true), b({1}, {3}, true);
    b.set_grad({7});
    backward(ops::sum(ops::mul(a, a)));
    EXPECT_EQ(b.grad()[0], 7.0);
}

TEST(Autodiff, ZeroGradsThenBackwardMatchesFreshGraph)
{
    RngStream rng(11);
    Tensor w = random_tensor({3, 4}, rng, 1.0, true);
    Tensor x = random_tensor({2, 4}, rng);
    auto loss = [&] { return ops::sum(ops::gelu(ops::linear(x, w, Tensor{}))); };
    backward(loss());
    backward(loss());  // stale accumulation: twice the single-pass gradient
    std::vector<Tensor> params{w};
    zero_grads(params);
    for (double g : w.grad()) EXPECT_EQ(g, 0.0);
    backward(loss());
    std::vector<double> after(w.grad().begin(), w.grad().end());

    Tensor fresh = w.clone();
    fresh.set_requires_grad(true);
    backward(ops::sum(ops::gelu(ops::linear(x, fresh, Tensor{}))));
    for (std::size_t i = 0; i < after.size(); ++i) EXPECT_EQ(after[i], fresh.grad()[i]);
    std::vector<Tensor> none;
    zero_grads(none);
}

TEST(Autodiff, TwoLayerMlpMatchesFiniteDifferences)
{
    RngStream rng(5);
    Tensor x = random_tensor({3, 4}, rng);
    Tensor w1 = random_tensor({5, 4}, rng, 0.5), w2 = random_tensor({2, 5}, rng, 0.5);
    ScalarFn f = [&](const Tensor& w) {
        return ops::mean(ops::mul(ops::linear(ops::gelu(ops::linear(x, w, Tensor{})), w2, Tensor{}),
                                  ops::linear(ops::gelu(ops::linear(x, w, Tensor{})), w2, Tensor{})));
    };
    EXPECT_LT(finite_diff_check(f, w1, 1e-5), 1e-4);
}

TEST(Gradcheck, ExactQuadratic)
{
    ScalarFn f = [](const Tensor& x) { return ops::sum(ops::mul(x, x)); };
    EXPECT_LT(finite_diff_check(f, Tensor({1}, {3.0}), 1e-5), 1e-6);
    EXPECT_THROW(finite_diff_check(f, Tensor({1}, {3.0}), 0.0), ConfigError);
}

TEST(Gradcheck, EveryPrimitive)
{
    auto cases = peftbench::testing::primitive_grad_cases(2024);
    std::set<std::string> covered;
    for (const auto& c : cases) {
        EXPECT_LT(finite_diff_check(c.f, c.x, 1e-5), 1e-4) << c.label;
        covered.insert(c.label.substr(0, c.label.find('/')));
    }
    EXPECT_EQ(covered.size(), primitive_names().size());
}

TEST(Rng, DeterministicPerSeedAndStream)
{
    RngStream a(42, 7), b(42, 7), c(42, 8);
    for (int i = 0; i < 100; ++i) {
        auto va = a.next_u64();
        EXPECT_EQ(va, b.next_u64());
        EXPECT_NE(va, c.next_u64());
    }
    RngStream s(1);
    for (int i = 0; i < 1000; ++i) {
        double u = s.uniform();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
        EXPECT_LT(s.below(7), 7u);
    }
}

TEST(Rng, NormalMoments)
{
    RngStream r(9);
    auto v = r.normals(20000);
    double m = 0, q = 0;
    for (double x : v) m += x;
    m /= v.size();
    for (double x : v) q += (x - m) * (x - m);
    q /= v.size() - 1;
    EXPECT_NEAR(m, 0.0, 0.03);
    EXPECT_NEAR(q, 1.0, 0.04);
}

TEST(Rng, ForwardIsBitwiseDeterministic)
{
    auto run = [] {
        RngStream r(3);
        Tensor x = random_tensor({2, 3, 4, 4}, r);
        Tensor w = random_tensor({2, 3, 3, 3}, r);
        return vals(ops::gelu(ops::conv2d(x, w, Tensor{}, {1, 1})));
    };
    EXPECT_EQ(run(), run());
}

TEST(Svd, Identity)
{
    Svd s = svd_small(Matrix::identity(3));
    for (double v : s.sigma) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(Svd, Diagonal)
{
    Svd s = svd_small(Matrix(2, 2, {3, 0, 0, 1}));
    EXPECT_NEAR(s.sigma[0], 3.0, 1e-12);
    EXPECT_NEAR(s.sigma[1], 1.0, 1e-12);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            EXPECT_NEAR(std::abs(s.u(i, j)), i == j ? 1.0 : 0.0, 1e-12);
            EXPECT_NEAR(std::abs(s.v(i, j)), i == j ? 1.0 : 0.0, 1e-12);
        }
}

TEST(Svd, RejectsNonFinite)
{
    EXPECT_THROW(svd_small(Matrix(2, 2, {1, NAN, 0, 1})), NumericError);
}

class SvdRandom : public ::testing::TestWithParam<std::pair<std::size_t, std::size_t>> {};

TEST_P(SvdRandom, ReconstructsAndMatchesEigenOracle)
{
    auto [m, n] = GetParam();
    RngStream rng(m * 100 + n);
    Matrix w(m, n, rng.normals(m * n));
    Svd s = svd_small(w);
    const std::size_t k = std::min(m, n);
    ASSERT_EQ(s.sigma.size(), k);
    EXPECT_LT(max_abs_diff(s.reconstruct(), w), 1e-6);
    for (std::size_t i = 1; i < k; ++i) EXPECT_GE(s.sigma[i - 1], s.sigma[i]);
    for (double v : s.sigma) EXPECT_GE(v, 0.0);
    EXPECT_LT(max_abs_diff(matmul(s.u.transposed(), s.u), Matrix::identity(k)), 1e-8);
    EXPECT_LT(max_abs_diff(matmul(s.v.transposed(), s.v), Matrix::identity(k)), 1e-8);

    // Oracle: sigma_i = sqrt(eigenvalue_i(WᵀW)) from Eigen's self-adjoint solver.
    Eigen::MatrixXd e(m, n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) e(i, j) = w(i, j);
    Eigen::MatrixXd gram = m >= n ? Eigen::MatrixXd(e.transpose() * e) : Eigen::MatrixXd(e * e.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    auto ev = es.eigenvalues();  // ascending
    for (std::size_t i = 0; i < k; ++i) EXPECT_NEAR(s.sigma[i], std::sqrt(std::max(0.0, ev(k - 1 - i))), 1e-9);
}

INSTANTIATE_TEST_SUITE_P(Shapes, SvdRandom,
                         ::testing::Values(std::pair<std::size_t, std::size_t>{8, 5},
                                           std::pair<std::size_t, std::size_t>{5, 8},
                                           std::pair<std::size_t, std::size_t>{16, 16},
                                           std::pair<std::size_t, std::size_t>{32, 72}));

TEST(Svd, RankDeficientStillOrthonormal)
{
    // Rank-1 outer product: trailing singular values vanish.
    Matrix w(4, 3);
    double a[4] = {1, 2, -1, 0.5}, b[3] = {3, -1, 2};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) w(i, j) = a[i] * b[j];
    Svd s = svd_small(w);
    EXPECT_LT(max_abs_diff(s.reconstruct(), w), 1e-10);
    EXPECT_LT(s.sigma[1], 1e-10);
    EXPECT_LT(max_abs_diff(matmul(s.u.transposed(), s.u), Matrix::identity(3)), 1e-8);
}

TEST(Linalg, SqrtmPsdSquaresBack)
{
    RngStream rng(8);
    Matrix a(6, 6, rng.normals(36));
    Matrix spd = matmul(a, a.transposed());
    Matrix r = sqrtm_psd(spd);
    EXPECT_LT(max_abs_diff(matmul(r, r), spd), 1e-9);
    EXPECT_LT(max_abs_diff(r, r.transposed()), 1e-10);
}

TEST(Linalg, SymEigenMatchesEigen)
{
    RngStream rng(12);
    Matrix a(5, 5, rng.normals(25));
    Matrix s = matmul(a, a.transposed());
    SymEigen mine = sym_eigen(s);
    Eigen::MatrixXd e(5, 5);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) e(i, j) = s(i, j);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(e);
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(mine.values[i], es.eigenvalues()(4 - i), 1e-9);
}
