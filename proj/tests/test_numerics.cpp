#include "vhvae/autodiff.hpp"
#include "vhvae/grad_check.hpp"
#include "vhvae/matrix.hpp"
#include "vhvae/pca.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace vhvae;

namespace {

Matrix random_matrix(Rng& rng, int r, int c, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = scale * rng.normal();
  return m;
}

}  // namespace

TEST(LuLogdetInverse, Identity) {
  const auto r = lu_logdet_inverse(Matrix::Identity(3, 3));
  EXPECT_DOUBLE_EQ(r.log_abs_det, 0.0);
  EXPECT_EQ(r.sign, 1);
  EXPECT_TRUE(r.inverse.isApprox(Matrix::Identity(3, 3)));
}

TEST(LuLogdetInverse, Diagonal) {
  Matrix a = Matrix::Zero(2, 2);
  a(0, 0) = 2;
  a(1, 1) = 3;
  const auto r = lu_logdet_inverse(a);
  EXPECT_NEAR(r.log_abs_det, std::log(6.0), 1e-15);
  EXPECT_EQ(r.sign, 1);
  EXPECT_NEAR(r.inverse(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(r.inverse(1, 1), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(r.inverse(0, 1), 0.0);
}

TEST(LuLogdetInverse, MultiplyBackAndDeterminantSign) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix a = random_matrix(rng, 5, 5) + 5.0 * Matrix::Identity(5, 5);
    const auto r = lu_logdet_inverse(a);
    EXPECT_LT((a * r.inverse - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-10);
    const double det = a.determinant();
    EXPECT_NEAR(r.log_abs_det, std::log(std::abs(det)), 1e-10);
    EXPECT_EQ(r.sign, det > 0 ? 1 : -1);
  }
}

TEST(LuLogdetInverse, SingularReportsPivot) {
  Matrix a(3, 3);
  a << 1, 2, 3, 2, 4, 6, 1, 0, 1;
  try {
    lu_logdet_inverse(a);
    FAIL() << "expected SingularMatrixError";
  } catch (const SingularMatrixError& e) {
    EXPECT_EQ(e.pivot_index(), 2);
  }
}

TEST(LuLogdetInverse, RejectsNonSquare) { EXPECT_THROW(lu_logdet_inverse(Matrix::Zero(2, 3)), std::invalid_argument); }

TEST(Rng, SameSeedSameStream) {
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
  Rng c(99);
  EXPECT_EQ(c.normal(), Rng(99).normal());
}

TEST(ParameterStore, RejectsDuplicateNames) {
  ParameterStore s;
  s.add("w", Matrix::Zero(2, 2));
  EXPECT_THROW(s.add("w", Matrix::Zero(1, 1)), std::invalid_argument);
  EXPECT_EQ(s.scalar_count(), 4u);
  ASSERT_NE(s.find("w"), nullptr);
  EXPECT_EQ(s.find("v"), nullptr);
}

TEST(Tape, GradientOfQuadraticForm) {
  ParameterStore s;
  Rng rng(3);
  const auto iw = s.add("w", random_matrix(rng, 3, 3));
  const auto ix = s.add("x", random_matrix(rng, 3, 1));
  Tape t;
  Var w = t.parameter(s[iw]);
  Var x = t.parameter(s[ix]);
  Var y = ops::dot(x, ops::matmul(w, x));
  s.zero_grad();
  t.backward(y);
  const Matrix& W = s[iw].value;
  const Matrix& X = s[ix].value;
  EXPECT_TRUE(s[iw].grad.isApprox(X * X.transpose(), 1e-12));
  EXPECT_TRUE(s[ix].grad.isApprox((W + W.transpose()) * X, 1e-12));
}

TEST(Tape, NoGradModeRecordsNoClosures) {
  ParameterStore s;
  const auto i = s.add("w", Matrix::Ones(2, 1));
  Tape t(false);
  Var w = t.parameter(s[i]);
  Var y = ops::sum(ops::tanh(w));
  EXPECT_FALSE(t.requires_grad(y));
  EXPECT_NEAR(y.scalar(), 2 * std::tanh(1.0), 1e-15);
}

TEST(GradCheck, AllOpsAgreeWithFiniteDifferences) {
  Rng rng(11);
  ParameterStore s;
  const auto iw = s.add("w", random_matrix(rng, 8, 3, 0.5));
  const auto ib = s.add("b", random_matrix(rng, 8, 1, 0.5));
  const auto ix = s.add("x", random_matrix(rng, 3, 1));
  const auto ie = s.add("e", random_matrix(rng, 5, 2));
  const auto il = s.add("lstm", random_matrix(rng, 8, 4, 0.5));
  std::vector<Parameter*> ps = {&s[iw], &s[ib], &s[ix], &s[ie], &s[il]};
  auto loss = [&] {
    Tape t;
    Var w = t.parameter(s[iw]), b = t.parameter(s[ib]), x = t.parameter(s[ix]), e = t.parameter(s[ie]);
    Var emb = ops::lookup(e, 3);
    LstmState st{t.constant(Matrix::Zero(2, 1)), t.constant(Matrix::Zero(2, 1))};
    st = lstm_step(t.parameter(s[il]), b, emb, st);
    st = lstm_step(t.parameter(s[il]), b, emb, st);
    Var p = ops::softmax(ops::affine(w, x, b));
    Var q = ops::clamp(ops::exp(ops::scale(ops::sigmoid(p), 2.0)), 1.0, 5.0);
    Var r = ops::hadamard(ops::square(ops::sub(q, p)), ops::add_constant(p, 0.5));
    std::vector<Var> cols = {ops::column(e, 1), ops::column(e, 0)};
    std::vector<Var> terms = {ops::sum(r), ops::sum(ops::concat({st.h, st.c})),
                              ops::scale_by(ops::entry(p, 2, 0), ops::dot(x, x)), ops::sum(ops::tanh(ops::mean_n(cols))),
                              ops::sum(ops::slice_rows(ops::hcat(cols), 1, 3))};
    Var total = ops::add_n(terms);
    t.backward(total);
    return total.scalar();
  };
  EXPECT_LT(grad_check(loss, ps), 1e-6);
}

TEST(Pca2d, AxisAlignedDataHasZeroSecondVariance) {
  std::vector<Vector> rows;
  for (int i = 0; i < 5; ++i) rows.push_back(Vector::Unit(3, 0) * (i - 2.0));
  const Pca2d p = pca_2d(rows);
  EXPECT_NEAR(p.components[0](0), 1.0, 1e-12);
  EXPECT_EQ(p.explained_variance[1], 0.0);
}

TEST(Pca2d, DegenerateInputs) {
  std::vector<Vector> two = {Vector::Ones(3), Vector::Zero(3)};
  EXPECT_THROW(pca_2d(two), DegenerateInputError);
  std::vector<Vector> same(4, Vector::Ones(3));
  EXPECT_THROW(pca_2d(same), DegenerateInputError);
}

TEST(Pca2d, MatchesEigenSolverOnRandomData) {
  Rng rng(5);
  std::vector<Vector> rows;
  for (int i = 0; i < 40; ++i) {
    Vector v(4);
    for (int k = 0; k < 4; ++k) v(k) = (4 - k) * rng.normal();
    rows.push_back(v);
  }
  const Pca2d p = pca_2d(rows);
  Matrix x(40, 4);
  for (int i = 0; i < 40; ++i) x.row(i) = (rows[static_cast<std::size_t>(i)] - p.mean).transpose();
  const Matrix cov = x.transpose() * x / 39.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  for (int c = 0; c < 2; ++c) {
    const Vector ref = es.eigenvectors().col(3 - c);
    EXPECT_NEAR(std::abs(ref.dot(p.components[c])), 1.0, 1e-10);
    EXPECT_NEAR(p.explained_variance[c], es.eigenvalues()(3 - c), 1e-8);
    EXPECT_NEAR(p.components[c].norm(), 1.0, 1e-12);
  }
  EXPECT_NEAR(p.projections[0][0], (rows[0] - p.mean).dot(p.components[0]), 1e-12);
}
