#include <gtest/gtest.h>

#include "qnn/control.hpp"

using namespace qnn;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

StateSpaceModel example4() {
  Matrix z(3, 3);
  z << 1, 0.5, 0, 0.5, 1, 0, 0, 0, -1;
  return StateSpaceModel(1, 1, 1, {z});
}

// x+ = x^2 + x u
StateSpaceModel example5() {
  Matrix z(3, 3);
  z << 0, 0.5, 0, 0.5, 1, 0, 0, 0, 0;
  return StateSpaceModel(1, 1, 1, {z});
}

Matrix quadrotor_p() {
  Matrix p(2, 2);
  p << 1.4589, -1.6008, -1.6008, 2.6636;
  return p;
}

Controller quadrotor_published_controller() {
  PolyMatrix k(1, 2, 2);
  k(0, 0) = Polynomial::constant(2, -1.1556);
  k(0, 1) = Polynomial::constant(2, -1.1771) + 0.0023 * Polynomial::variable(2, 1);
  return Controller::polynomial(k);
}

template <class F>
void expect_code(ErrorCode code, F&& f) {
  try {
    f();
    FAIL() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

}  // namespace

TEST(Polynomial, ArithmeticAndMonomials) {
  const Polynomial x = Polynomial::variable(2, 0), y = Polynomial::variable(2, 1);
  const Polynomial p = (x + y) * (x - y);
  EXPECT_DOUBLE_EQ(p.evaluate(vec({3, 2})), 5.0);
  EXPECT_EQ(p.degree(), 2);
  EXPECT_EQ(monomials_up_to(2, 2).size(), 6u);
  EXPECT_EQ(monomials_up_to(3, 1).size(), 4u);
  EXPECT_EQ(p.pruned(0.0).terms().size(), 2u);
}

TEST(Sos, ScalarCertificates) {
  // 1 + x^2 >= 0 globally; 1 - x^2 >= 0 only on [-1, 1].
  const Polynomial x = Polynomial::variable(1, 0);
  PolyMatrix good(1, 1, 1), bad(1, 1, 1);
  good(0, 0) = Polynomial::constant(1, 1.0) + x * x;
  bad(0, 0) = Polynomial::constant(1, 1.0) - x * x;
  const auto g = sos_margin(good, Region::everywhere());
  EXPECT_EQ(g.status, sdp::Status::Optimal);
  EXPECT_NEAR(g.margin, 1.0, 1e-6);
  EXPECT_NE(sos_margin(bad, Region::everywhere()).status, sdp::Status::Optimal);
  const auto boxed = sos_margin(bad, Region::box(vec({-0.5}), vec({0.5})));
  EXPECT_EQ(boxed.status, sdp::Status::Optimal);
  EXPECT_NEAR(boxed.margin, 0.75, 1e-4);
}

TEST(Sos, RegionParse) {
  const Region r = Region::parse("-1:2", 2);
  EXPECT_TRUE(r.is_box());
  EXPECT_EQ(r.hi(1), 2.0);
  EXPECT_EQ(r.grid(3).size(), 9u);
  EXPECT_FALSE(Region::parse("global", 2).is_box());
  expect_code(ErrorCode::DimensionMismatch, [] { Region::parse("0:1,0:1", 3); });
  expect_code(ErrorCode::InvalidArgument, [] { Region::parse("0-1", 1); });
}

TEST(Control, Example4SteadyState) {
  const auto ss = solve_steady_state(example4(), vec({0}));
  ASSERT_EQ(ss.inputs.size(), 2u);
  EXPECT_NEAR(ss.inputs[0](0), -1.0, 1e-12);
  EXPECT_NEAR(ss.inputs[1](0), 1.0, 1e-12);
  EXPECT_FALSE(ss.arbitrary);
  EXPECT_LE(ss.residual, 1e-9);
}

TEST(Control, Example5SteadyStateArbitrary) {
  const auto ss = solve_steady_state(example5(), vec({0}));
  EXPECT_TRUE(ss.arbitrary);
  ASSERT_EQ(ss.inputs.size(), 1u);
  EXPECT_EQ(ss.inputs[0](0), 0.0);
  // x* = 1 needs 1 + u = 1.
  const auto one = solve_steady_state(example5(), vec({1}));
  ASSERT_EQ(one.inputs.size(), 1u);
  EXPECT_NEAR(one.inputs[0](0), 0.0, 1e-12);
}

TEST(Control, SteadyStateNoSolutionAndMultiInput) {
  Matrix z = Matrix::Zero(3, 3);
  z(0, 0) = 1.0;
  z(2, 2) = 1.0;  // y+ = u^2 + 1 never reaches 0
  expect_code(ErrorCode::NoSolution, [&] { solve_steady_state(StateSpaceModel(1, 1, 1, {z}), vec({0})); });

  // Two inputs: y+ = u1^2 + u2 + y; y* = 0 needs u2 = -u1^2.
  Matrix z2 = Matrix::Zero(4, 4);
  z2(0, 0) = 1.0;
  z2(1, 3) = z2(3, 1) = 0.5;
  z2(2, 3) = z2(3, 2) = 0.5;
  const auto ss = solve_steady_state(StateSpaceModel(1, 1, 2, {z2}), vec({0}));
  ASSERT_FALSE(ss.inputs.empty());
  for (const auto& u : ss.inputs) EXPECT_NEAR(u(1), -u(0) * u(0), 1e-9);
}

TEST(Control, Example5ClosedLoopAndCertificates) {
  const auto model = example5();
  const ClosedLoop dead(model, Controller::constant(Matrix::Constant(1, 1, -1.0)));
  const Matrix acl = dead.a_cl(vec({1.7}));
  EXPECT_NEAR(acl(0, 0), 0.0, 1e-15);
  EXPECT_EQ(acl(1, 1), 1.0);
  EXPECT_EQ(dead.step(vec({1.7}))(0), 0.0);
  const Matrix pbar = lyapunov_pbar(Matrix::Constant(1, 1, 1.0), vec({0}));
  VerifyOptions sos;
  sos.method = VerifyMethod::Sos;
  const auto rep = verify_lyapunov(dead, pbar, Region::everywhere(), sos);
  EXPECT_TRUE(rep.holds);
  EXPECT_TRUE(rep.reduced);
  EXPECT_NO_THROW(rep.require());

  const ClosedLoop open(model, Controller::constant(Matrix::Zero(1, 1)));
  EXPECT_NEAR(lyapunov_decrease_eigenvalue(open, pbar, vec({2})), 3.0, 1e-12);
  const auto grid = verify_lyapunov(open, pbar, Region::box(vec({-3}), vec({3})));
  EXPECT_FALSE(grid.holds);
  expect_code(ErrorCode::Violated, [&] { grid.require(); });
  EXPECT_FALSE(verify_lyapunov(open, pbar, Region::everywhere(), sos).holds);
  expect_code(ErrorCode::RegionUnsupported, [&] { verify_lyapunov(open, pbar, Region::everywhere()); });
}

TEST(Control, ClosedLoopMatchesPlantStep) {
  const auto model = example4();
  const Controller ctl = Controller::constant(Matrix::Constant(1, 1, -0.3), vec({0.2}), vec({0.1}));
  const ClosedLoop cl(model, ctl);
  for (double x : {-1.0, 0.0, 0.4, 2.0}) {
    const Vector xv = vec({x});
    EXPECT_NEAR(cl.step(xv)(0), model.step_direct(xv, ctl.input(xv))(0), 1e-12);
    const Matrix sym = cl.a_cl_poly().evaluate(xv);
    EXPECT_LE((sym - cl.a_cl(xv)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Control, PbarEvaluatesShiftedQuadratic) {
  Matrix p(2, 2);
  p << 2, 0.3, 0.3, 1;
  const Vector xs = vec({0.5, -1}), x = vec({1.2, 0.7});
  const Vector xb = linalg::augment(x);
  EXPECT_NEAR(xb.dot(lyapunov_pbar(p, xs) * xb), (x - xs).dot(p * (x - xs)), 1e-12);
}

TEST(Control, ModelToPolynomialSystem) {
  const auto sys = to_polynomial_system(example5());
  const Vector x = vec({0.7}), u = vec({-0.2});
  EXPECT_NEAR(sys.step(x, u)(0), example5().step_direct(x, u)(0), 1e-14);
  expect_code(ErrorCode::AssumptionViolated, [] { to_polynomial_system(example4()); });
}

TEST(Control, QuadrotorPublishedController) {
  const auto sys = PolynomialSystem::quadrotor();
  const Controller ctl = quadrotor_published_controller();
  const PolyMatrix acl = closed_loop_matrix(sys, ctl).pruned(1e-12);
  EXPECT_LE(acl.nonconstant_magnitude(), 1e-12);
  const auto ev = constant_part_eigenvalues(acl);
  EXPECT_NEAR(ev[0].real(), 0.8895, 1e-4);
  EXPECT_NEAR(ev[1].real(), -0.0666, 1e-4);

  // Published P with L = K(x) P on the flight envelope.
  const PolyMatrix l = ctl.gain * PolyMatrix::constant(quadrotor_p(), 2);
  double worst = 1e9;
  for (const auto& x : Region::box(vec({-5, -20}), vec({5, 20})).grid(41))
    worst = std::min(worst, synthesis_lmi_min_eigenvalue(sys, quadrotor_p(), l, 0.1, x));
  EXPECT_GE(worst, -1e-4);
  EXPECT_LE(worst, 1e-3);
}

TEST(Control, QuadrotorSynthesis) {
  const auto sys = PolynomialSystem::quadrotor();
  const auto res = synthesize_lmi(sys);
  const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(res.p).eigenvalues();
  EXPECT_GE(ev.minCoeff(), 1.0 - 1e-6);
  EXPECT_NEAR(res.eta, ev.maxCoeff(), 1e-4);
  EXPECT_FALSE(res.ill_conditioned);
  // Drag cancellation: the Vx^2 coefficient of u equals Td / Tg.
  const Polynomial u = res.controller.input_poly(0);
  EXPECT_NEAR(u.coefficient({0, 2}), 0.0023, 1e-4);
  const PolyMatrix acl = closed_loop_matrix(sys, res.controller);
  for (const auto& e : constant_part_eigenvalues(acl)) EXPECT_LT(std::abs(e), 1.0);

  const Region box = Region::box(vec({-20, -20}), vec({20, 20}));
  for (const auto& x : box.grid(21)) EXPECT_GE(synthesis_lmi_min_eigenvalue(sys, res.p, res.l, 0.1, x), -1e-6);
  const Matrix pinv = res.p.inverse();
  VerifyOptions opt;
  opt.tolerance = 1e-7;
  EXPECT_TRUE(verify_lyapunov(ClosedLoop(sys, res.controller), lyapunov_pbar(pinv, vec({0, 0})), box, opt).holds);
}

TEST(Control, SynthesisInfeasible) {
  PolyMatrix a = PolyMatrix::constant(Matrix::Constant(1, 1, 2.0), 1);
  PolyMatrix b = PolyMatrix::constant(Matrix::Zero(1, 1), 1);
  expect_code(ErrorCode::Infeasible, [&] { synthesize_lmi(PolynomialSystem(a, b)); });
}

TEST(Control, ScalarRiccatiBound) {
  const PolynomialSystem sys(PolyMatrix::constant(Matrix::Constant(1, 1, 0.5), 1),
                             PolyMatrix::constant(Matrix::Constant(1, 1, 1.0), 1));
  const Matrix one = Matrix::Constant(1, 1, 1.0);
  const auto cb = cost_lower_bound(sys, one, one);
  const double riccati = (0.25 + std::sqrt(0.0625 + 4.0)) / 2.0;
  EXPECT_NEAR(cb.p(0, 0), riccati, 1e-4);
  const Controller h = heuristic_controller(sys, cb.p, one);
  EXPECT_NEAR(h.gain_at(vec({0}))(0, 0), -0.5 * riccati / (1 + riccati), 1e-4);
}

TEST(Control, QuadrotorCostBoundAndHeuristic) {
  const auto sys = PolynomialSystem::quadrotor();
  Matrix pp(2, 2);
  pp << 11.3167, 1.0523, 1.0523, 1.1073;
  const Matrix q = Matrix::Identity(2, 2), r = Matrix::Constant(1, 1, 2.2e-16);
  double worst = 1e9;
  for (const auto& x : Region::box(vec({-5, -20}), vec({5, 20})).grid(41))
    worst = std::min(worst, cost_matrix_min_eigenvalue(sys, pp, q, r, x));
  EXPECT_GE(worst, -1e-4);

  const auto cb = cost_lower_bound(sys, q, r);
  EXPECT_NEAR(cb.trace, pp.trace(), 0.02 * pp.trace());

  const Controller h = heuristic_controller(sys, pp, r);
  const Polynomial u = h.input_poly(0);
  EXPECT_NEAR(u.coefficient({1, 0}), -0.9503, 1e-4);
  EXPECT_NEAR(u.coefficient({0, 1}), -1.097, 1e-3);
  EXPECT_NEAR(u.coefficient({0, 2}), 0.0023, 1e-10);
  const auto ev = constant_part_eigenvalues(closed_loop_matrix(sys, h));
  EXPECT_NEAR(ev[0].real(), 0.9031, 1e-3);
  EXPECT_NEAR(ev[1].real(), -0.0001, 1e-3);

  const Matrix uq = controller_as_quadratic_form(h);
  Matrix expect(3, 3);
  expect << 0, 0, -0.47515, 0, 0.0023, -0.5485, -0.47515, -0.5485, 0;
  EXPECT_LE((uq - expect).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Control, QuadraticFormRepresentability) {
  // u = x^2 with a = 1, c = 0.
  PolyMatrix k(1, 1, 1);
  k(0, 0) = Polynomial::variable(1, 0);
  const Matrix u = controller_as_quadratic_form(Controller::polynomial(k));
  EXPECT_EQ(u(0, 0), 1.0);
  EXPECT_EQ(u(1, 1), 0.0);
  EXPECT_TRUE(is_representable(u, ActivationParams{1.0, 0.5, 0.0}));
  PolyMatrix cubic(1, 1, 1);
  cubic(0, 0) = Polynomial::variable(1, 0) * Polynomial::variable(1, 0);
  expect_code(ErrorCode::DegreeTooHigh, [&] { controller_as_quadratic_form(Controller::polynomial(cubic)); });
}

TEST(Control, HeuristicSingularGain) {
  const PolynomialSystem sys(PolyMatrix::constant(Matrix::Constant(1, 1, 0.5), 1),
                             PolyMatrix::constant(Matrix::Zero(1, 1), 1));
  expect_code(ErrorCode::SingularGain,
              [&] { heuristic_controller(sys, Matrix::Constant(1, 1, 1.0), Matrix::Zero(1, 1)); });
}
