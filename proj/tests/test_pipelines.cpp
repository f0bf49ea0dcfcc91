#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "qnn/qnn.hpp"

using namespace qnn;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) out(i++) = d;
  return out;
}

std::string scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "qnn_pipelines";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

Dataset three_points() {
  Dataset d;
  d.x.resize(3, 1);
  d.y.resize(3, 1);
  d.x << -1, 0, 1;
  d.y << -0.8539, 0.1619, 1.2425;
  return d;
}

StateSpaceModel example5() {
  Matrix z(3, 3);
  z << 0, 0.5, 0, 0.5, 1, 0, 0, 0, 0;
  return StateSpaceModel(1, 1, 1, {z});
}

IoLog generator_log(int len) {
  const ActivationParams act;
  Matrix z(3, 3);
  z << 0.02, 0.05, 0.15, 0.05, -0.1, 0.25, 0.15, 0.25, 0.0;
  z(2, 2) = act.c_over_a() * (z(0, 0) + z(1, 1));
  const StateSpaceModel gen(1, 1, 1, {z});
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  IoLog log;
  log.u.resize(len, 1);
  log.y.resize(len, 1);
  Vector x = vec({0.0});
  for (int t = 0; t < len; ++t) {
    log.u(t, 0) = ud(rng);
    log.y(t, 0) = x(0);
    x = gen.step_direct(x, log.u.row(t).transpose());
  }
  return log;
}

}  // namespace

TEST(Pipelines, RegressionArtifactsReproduceMetrics) {
  const std::string prefix = scratch("three");
  const auto run = run_regression(three_points(), TrainingConfig{}, prefix);
  EXPECT_LE(run.report.metrics["max_abs_residual"].get<double>(), 1e-4);
  ASSERT_EQ(run.report.artifacts.size(), 2u);

  const ModelFile mf = load_model(prefix + ".model.json");
  ASSERT_TRUE(mf.network && mf.neurons);
  const Matrix fit = load_delimited(prefix + ".fit.txt");
  const Matrix yhat = mf.network->evaluate_rows(fit.col(0));
  EXPECT_LE((yhat.col(0) - fit.col(2)).cwiseAbs().maxCoeff(), 1e-9);
  const double loss = training_loss(*mf.network, fit.col(0), fit.col(1), Loss::SquaredL2);
  EXPECT_NEAR(loss, run.report.metrics["loss"].get<double>(), 1e-12);
  EXPECT_EQ(mf.neurons->total(), run.report.metrics["neurons"].get<int>());
  EXPECT_EQ(mf.metadata["training"]["beta"].get<double>(), 0.0);
}

TEST(Pipelines, RegressionBetaSweepShrinksRegularizer) {
  double prev = std::numeric_limits<double>::infinity();
  for (double beta : {0.0, 0.01, 0.1, 1.0, 100.0}) {
    TrainingConfig cfg;
    cfg.beta = beta;
    const auto run = run_regression(three_points(), cfg);
    const double tr = run.report.metrics["regularizer_trace_sum"].get<double>();
    EXPECT_LE(tr, prev + 1e-4) << "beta " << beta;
    prev = tr;
  }
  EXPECT_LE(prev, 1e-3);
}

TEST(Pipelines, SingleSampleRegression) {
  Dataset d;
  d.x = Matrix::Constant(1, 2, 0.5);
  d.y = Matrix::Constant(1, 2, 1.0);
  const auto run = run_regression(d, TrainingConfig{});
  EXPECT_LE(run.report.metrics["max_abs_residual"].get<double>(), 1e-4);
  EXPECT_EQ(run.report.metrics["outputs"].get<int>(), 2);
}

TEST(Pipelines, SeparableClassification) {
  Matrix xtr(4, 1), xte(2, 1);
  xtr << -1, -0.5, 0.5, 1;
  xte << -0.8, 0.7;
  const auto run = run_classification(xtr, {0, 0, 1, 1}, xte, {0, 1}, 2, TrainingConfig{}, scratch("sep"));
  EXPECT_EQ(run.report.metrics["train_accuracy"].get<double>(), 1.0);
  EXPECT_EQ(run.report.metrics["test_accuracy"].get<double>(), 1.0);
  const Matrix pred = load_delimited(scratch("sep") + ".predictions.txt");
  EXPECT_EQ(pred(1, 1), 1.0);
}

TEST(Pipelines, ArgmaxTieBreak) {
  EXPECT_EQ(predict_class(vec({0.2, 0.2, 0.2})), 0);
  EXPECT_EQ(predict_class(vec({0.1, 0.7, 0.7})), 1);
  EXPECT_EQ(predict_class(vec({-1, -2, -1})), 0);
  // A zero network outputs a tie everywhere.
  const QuadraticNetwork zero = QuadraticNetwork::zeros(2, 3);
  EXPECT_EQ(predict_classes(zero, Matrix::Random(5, 2)), std::vector<int>(5, 0));
  EXPECT_THROW(accuracy({0}, {0, 1}), Error);
}

TEST(Pipelines, SysidFractionAndDelays) {
  const IoLog log = generator_log(200);
  EXPECT_EQ(leading_fraction(log, 0.12).length(), 24);
  EXPECT_THROW(leading_fraction(log, 0.0), Error);

  const auto one = run_sysid(log, 1, 0.12, TrainingConfig{}, scratch("sys"));
  EXPECT_EQ(one.report.metrics["train_samples"].get<int>(), 24);
  EXPECT_LE(one.report.metrics["one_step_relative_error"].get<double>(), 1e-3);
  const ModelFile mf = load_model(scratch("sys") + ".model.json");
  EXPECT_EQ(mf.state_space_model().delays(), 1);

  const auto two = run_sysid(log, 2, 1.0, TrainingConfig{});
  EXPECT_EQ(two.table.rows(), 198);
  EXPECT_LE(two.report.metrics["one_step_relative_error"].get<double>(), 1e-3);
}

TEST(Pipelines, QuadrotorSynthesisSimulation) {
  SynthesisParams params;
  params.initial_states = {vec({-10, 0})};
  params.steps = 100;
  const auto run = run_synthesis(system_file(PolynomialSystem::quadrotor()), params, scratch("quad"));
  const auto& sim = run.report.metrics["simulations"][0];
  EXPECT_TRUE(sim["lyapunov_monotone"].get<bool>());
  EXPECT_LE(sim["final_norm"].get<double>(), 0.01);
  EXPECT_EQ(run.table.rows(), 101);
  // V column decreases along the stored trajectory.
  for (Eigen::Index k = 1; k < run.table.rows(); ++k) EXPECT_LE(run.table(k, 5), run.table(k - 1, 5));

  const ModelFile back = load_model(scratch("quad") + ".controller.json");
  ASSERT_TRUE(back.controller && back.certificate);
  EXPECT_EQ(back.certificate->kind, "lmi");
  EXPECT_NEAR(back.controller->input(vec({1, 2}))(0), run.controller.input(vec({1, 2}))(0), 1e-12);
}

TEST(Pipelines, ScalarCostBound) {
  PolynomialSystem sys;
  sys.nx = 1;
  sys.m = 1;
  sys.a = PolyMatrix::constant(Matrix::Constant(1, 1, 0.5), 1);
  sys.b = PolyMatrix::constant(Matrix::Constant(1, 1, 1.0), 1);
  sys.state_names = {"x"};
  SynthesisParams params;
  params.mode = SynthesisMode::CostBound;
  params.initial_states = {vec({1})};
  const auto run = run_synthesis(system_file(sys), params);
  EXPECT_NEAR(run.certificate.p(0, 0), 1.1328, 1e-3);
  EXPECT_TRUE(run.report.metrics["simulations"][0]["lyapunov_monotone"].get<bool>());
}

TEST(Pipelines, Example5DeadBeatVerification) {
  VerifyOptions opt;
  opt.method = VerifyMethod::Sos;
  const auto run = run_verification(state_space_file(example5()), Controller::constant(Matrix::Constant(1, 1, -1.0)),
                                    Matrix::Constant(1, 1, 1.0), Region::everywhere(), opt);
  EXPECT_TRUE(run.lyapunov.holds);
  EXPECT_TRUE(run.dead_beat);
  EXPECT_EQ(run.report.metrics["certificate"].get<std::string>(), "global, dead-beat");

  const auto weak = run_verification(state_space_file(example5()), Controller::constant(Matrix::Constant(1, 1, -0.5)),
                                     Matrix::Constant(1, 1, 1.0), Region::box(vec({-1}), vec({1})), VerifyOptions{});
  EXPECT_FALSE(weak.dead_beat);
}

TEST(Pipelines, AssumptionViolated) {
  Matrix z = Matrix::Zero(3, 3);
  z(0, 0) = 1.0;  // u^2 term
  try {
    system_of(state_space_file(StateSpaceModel(1, 1, 1, {z})));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AssumptionViolated);
  }
}

TEST(Pipelines, LipschitzReport) {
  Matrix z(2, 2);
  z << 0.0324, 0.5241, 0.5241, 0.1619;
  const QuadraticNetwork net(1, {}, {z});
  const auto rep = run_lipschitz(net, 1.0);
  EXPECT_NEAR(rep.metrics["max"].get<double>(), 1.7684, 1e-3);
  EXPECT_EQ(run_lipschitz(QuadraticNetwork::zeros(3, 2), 1.0).metrics["max"].get<double>(), 0.0);
  EXPECT_NEAR(run_lipschitz(net.scaled(3.0), 1.0).metrics["max"].get<double>(), 3.0 * rep.metrics["max"].get<double>(),
              1e-12);
}

TEST(Pipelines, ReportJson) {
  const auto rep = run_regression(three_points(), TrainingConfig{}).report;
  const auto j = rep.to_json();
  EXPECT_EQ(j["task"], "regression");
  EXPECT_EQ(j["solver"][0]["status"], "Optimal");
  EXPECT_TRUE(j.contains("timing_note"));
}
