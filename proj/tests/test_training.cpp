#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "qnn/analysis.hpp"
#include "qnn/decomposition.hpp"
#include "qnn/training.hpp"

using namespace qnn;

namespace {

void three_points(Matrix& x, Matrix& y) {
  x.resize(3, 1);
  y.resize(3, 1);
  x << -1, 0, 1;
  y << -0.8539, 0.1619, 1.2425;
}

}  // namespace

TEST(Training, ProblemShape) {
  Matrix x, y;
  three_points(x, y);
  TrainingConfig cfg;
  const auto tp = build_problem(x, y, cfg);
  EXPECT_EQ(tp.problem.blocks().size(), 2u);
  EXPECT_EQ(tp.problem.blocks()[0].dim, 2);
  // 2 trace equalities and 3 prediction equalities.
  EXPECT_EQ(tp.problem.num_equalities(), 5);
  EXPECT_EQ(tp.residuals.size(), 3u);
  for (double q : tp.problem.linear_cost()) EXPECT_EQ(q, 0.0);

  cfg.loss = Loss::InfinityNorm;
  const auto ti = build_problem(x, y, cfg);
  EXPECT_EQ(ti.problem.epigraph_variables().size(), 1u);
  EXPECT_EQ(ti.problem.num_rows() - ti.problem.num_equalities(), 6);
}

TEST(Training, ProblemRejectsBadData) {
  TrainingConfig cfg;
  try {
    build_problem(Matrix(0, 1), Matrix(0, 1), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyData);
  }
  try {
    build_problem(Matrix::Zero(3, 1), Matrix::Zero(2, 1), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(Training, ThreePointMatchesOracle) {
  Matrix x, y;
  three_points(x, y);
  TrainingConfig cfg;
  const auto res = train(x, y, cfg);
  const Matrix oracle = oracle::constrained_least_squares(x, y.col(0), cfg.activation);
  EXPECT_LE((res.network.zbar(0) - oracle).cwiseAbs().maxCoeff(), 1e-5);
  EXPECT_TRUE(is_representable(res.network.zbar(0), cfg.activation, 1e-6));
}

TEST(Training, MinimalNeuronCount) {
  Matrix x, y;
  three_points(x, y);
  TrainingConfig cfg;
  cfg.beta = 1e-4;
  EXPECT_EQ(minimal_neuron_count(train(x, y, cfg).variables), 2);
  TrainingVariables zero{{OutputVariables{Matrix::Zero(3, 3), Matrix::Zero(3, 3)}}};
  EXPECT_EQ(minimal_neuron_count(zero), 0);
  Matrix a(3, 2);
  a << 1, 0, 0.5, 1, -1, 2;
  TrainingVariables two{{OutputVariables{a * a.transpose(), Matrix::Zero(3, 3)}}};
  EXPECT_EQ(minimal_neuron_count(two), 2);
}

TEST(Training, InfinityNormOptimumIsMaxResidual) {
  Matrix x(4, 1), y(4, 1);
  x << -2, -1, 1, 2;
  y << 1, -1, 0.5, 3;
  TrainingConfig cfg;
  cfg.loss = Loss::InfinityNorm;
  cfg.beta = 0.01;
  const auto res = train(x, y, cfg);
  const auto& o = res.variables.outputs[0];
  const double reg = cfg.beta * (o.zplus(1, 1) + o.zminus(1, 1));
  const double maxres = training_loss(res.network, x, y, Loss::InfinityNorm);
  EXPECT_NEAR(res.objective - reg, maxres, 1e-5);
}

TEST(Training, ZeroLabelsAndHeavyRegularization) {
  Matrix x(5, 2);
  x << 1, 2, -1, 0.5, 0.3, -0.7, 2, 1, 0, 0;
  TrainingConfig cfg;
  const auto zero = train(x, Matrix::Zero(5, 1), cfg);
  EXPECT_LE(zero.network.zbar(0).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_NEAR(zero.objective, 0.0, 1e-8);

  Matrix y(5, 1);
  y << 1, -2, 0.5, 3, 1;
  cfg.beta = 1e6;
  const auto heavy = train(x, y, cfg);
  EXPECT_LE(heavy.network.zbar(0).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Training, OutputsSeparate) {
  std::mt19937 rng(3);
  std::normal_distribution<double> nd;
  Matrix x(8, 2), y(8, 2);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = nd(rng);
  for (int i = 0; i < y.size(); ++i) y.data()[i] = nd(rng);
  TrainingConfig cfg;
  cfg.beta = 0.05;
  const auto sep = train(x, y, cfg);
  const auto tp = build_problem(x, y, cfg);
  const auto joint = sdp::solve(tp.problem, cfg.solver);
  ASSERT_EQ(joint.status, sdp::Status::Optimal);
  for (int k = 0; k < 2; ++k) {
    const Matrix zj = assemble_zbar(joint.block(tp.plus[static_cast<size_t>(k)]),
                                    joint.block(tp.minus[static_cast<size_t>(k)]), cfg.activation);
    EXPECT_LE((zj - sep.network.zbar(k)).cwiseAbs().maxCoeff(), 1e-7);
  }
}

TEST(Training, RemovingSampleNeverIncreasesOptimum) {
  std::mt19937 rng(9);
  std::normal_distribution<double> nd;
  Matrix x(7, 2), y(7, 1);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = nd(rng);
  for (int i = 0; i < y.size(); ++i) y.data()[i] = nd(rng);
  TrainingConfig cfg;
  cfg.beta = 0.1;
  const double full = train(x, y, cfg).objective;
  const double fewer = train(x.topRows(6), y.topRows(6), cfg).objective;
  EXPECT_LE(fewer, full + 1e-7);
}

TEST(Training, OffsetAugment) {
  Matrix x(4, 1), y(4, 1);
  x << -1, 0, 1, 2;
  y << 1, 2, 3, 4;
  TrainingConfig cfg;
  cfg.offset_augment = true;
  const auto res = train(x, y, cfg);
  EXPECT_EQ(res.network.n_inputs(), 2);
  EXPECT_TRUE(res.network.offset_augmented());
}

TEST(Training, PrimalOracleUpperBoundsDual) {
  Matrix x, y;
  three_points(x, y);
  TrainingConfig cfg;
  cfg.beta = 0.01;
  const double dual = train(x, y, cfg).objective;
  const auto primal = primal_descent_oracle(x, y, cfg, 2, 42);
  EXPECT_GE(primal.objective, dual - 1e-6);
  EXPECT_LE(primal.objective, dual * 1.01 + 1e-6);
  const auto none = primal_descent_oracle(x, y, cfg, 0, 1);
  EXPECT_DOUBLE_EQ(none.loss, y.squaredNorm());
}

TEST(Training, TrainDecomposeReconstruct) {
  std::mt19937 rng(17);
  std::normal_distribution<double> nd;
  const ActivationParams act;
  for (int trial = 0; trial < 4; ++trial) {
    const int n = 1 + trial % 3;
    const int p = 1 + trial % 2;
    Matrix x(30, n), y(30, p);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = nd(rng);
    for (int i = 0; i < y.size(); ++i) y.data()[i] = nd(rng);
    TrainingConfig cfg;
    cfg.beta = 0.1;
    const auto res = train(x, y, cfg);
    const auto dec = decompose_network(res.network, {1e-7});
    const auto back = reconstruct(dec.neurons, act);
    for (int k = 0; k < p; ++k) {
      const Matrix& z = res.network.zbar(k);
      EXPECT_LE((back.zbar(k) - z).norm(), 1e-6 * (1 + z.norm())) << trial;
    }
  }
}
