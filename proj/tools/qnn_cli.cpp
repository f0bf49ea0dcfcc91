#include <algorithm>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qnn/qnn.hpp"

using namespace qnn;

namespace {

enum Exit { kOk = 0, kBadArgs = 2, kDataError = 3, kSolverFailure = 4, kInfeasible = 5 };

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::RegionUnsupported:
      return kBadArgs;
    case ErrorCode::SolverFailed:
    case ErrorCode::Unbounded:
    case ErrorCode::NoSolution:
    case ErrorCode::NonFinite:
      return kSolverFailure;
    case ErrorCode::Infeasible:
    case ErrorCode::Violated:
    case ErrorCode::IllConditioned:
    case ErrorCode::SingularGain:
      return kInfeasible;
    default:
      return kDataError;
  }
}

Vector parse_vector(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      size_t used = 0;
      v.push_back(std::stod(tok, &used));
      QNN_THROW_UNLESS(tok.find_first_not_of(" \t", used) == std::string::npos, ErrorCode::InvalidArgument,
                       "bad number '" + tok + "'");
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::InvalidArgument, "bad number '" + tok + "' in '" + text + "'");
    }
  }
  QNN_THROW_UNLESS(!v.empty(), ErrorCode::InvalidArgument, "empty vector");
  return Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// Rows separated by ';', entries by ','.
Matrix parse_matrix(const std::string& text) {
  std::vector<Vector> rows;
  std::stringstream ss(text);
  std::string row;
  while (std::getline(ss, row, ';')) rows.push_back(parse_vector(row));
  QNN_THROW_UNLESS(!rows.empty(), ErrorCode::InvalidArgument, "empty matrix");
  Matrix m(static_cast<Eigen::Index>(rows.size()), rows[0].size());
  for (size_t i = 0; i < rows.size(); ++i) {
    QNN_THROW_UNLESS(rows[i].size() == m.cols(), ErrorCode::InvalidArgument, "ragged matrix '" + text + "'");
    m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  }
  return m;
}

void emit(const RunReport& rep, const std::string& out_prefix) {
  const auto j = rep.to_json();
  std::cout << j.dump(2) << "\n";
  if (!out_prefix.empty()) {
    std::ofstream(out_prefix + ".report.json") << j.dump(2) << "\n";
  }
}

void print_table(std::ostream& os, const Matrix& m) {
  os.precision(10);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? " " : "") << m(i, j);
    os << "\n";
  }
}

struct Common {
  double a = 0.0937, b = 0.5, c = 0.4688;
  double beta = 0.0;
  std::string loss = "l2";
  bool offset = false;
  double tol = 1e-5;
  double epsilon = 0.1;
  int delays = 1;
  double train_frac = 1.0;
  std::string region = "global";
  unsigned seed = 0;
  std::string out;
  int max_iter = 200000;
  double eps = 1e-7;
};

void add_activation(CLI::App* cmd, Common& o) {
  cmd->add_option("--a", o.a, "Activation a")->capture_default_str();
  cmd->add_option("--b", o.b, "Activation b")->capture_default_str();
  cmd->add_option("--c", o.c, "Activation c")->capture_default_str();
}

void add_training(CLI::App* cmd, Common& o) {
  add_activation(cmd, o);
  cmd->add_option("--beta", o.beta, "Regularization coefficient")->capture_default_str();
  cmd->add_option("--loss", o.loss, "Loss function")->check(CLI::IsMember({"l2", "linf"}))->capture_default_str();
  cmd->add_flag("--offset", o.offset, "Append a constant input");
  cmd->add_option("--max-iter", o.max_iter, "Solver iteration cap; the last iterate is kept when reached")
      ->capture_default_str();
  cmd->add_option("--eps", o.eps, "Solver absolute tolerance")->capture_default_str();
}

TrainingConfig training_config(const Common& o) {
  TrainingConfig cfg;
  cfg.activation = ActivationParams(o.a, o.b, o.c);
  cfg.beta = o.beta;
  cfg.loss = o.loss == "linf" ? Loss::InfinityNorm : Loss::SquaredL2;
  cfg.offset_augment = o.offset;
  cfg.solver.max_iterations = o.max_iter;
  cfg.solver.eps_abs = o.eps;
  cfg.allow_inaccurate = true;
  return cfg;
}

/// Labels in the last column.
std::pair<Matrix, std::vector<int>> labeled_table(const std::string& path) {
  const Matrix t = load_delimited(path);
  QNN_THROW_UNLESS(t.cols() >= 2, ErrorCode::DimensionMismatch, path + ": need features and a label column");
  std::vector<int> labels;
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    const double l = t(i, t.cols() - 1);
    QNN_THROW_UNLESS(l >= 0 && l == std::floor(l), ErrorCode::ParseError,
                     path + ": label on row " + std::to_string(i + 1) + " is not a class index");
    labels.push_back(static_cast<int>(l));
  }
  return {t.leftCols(t.cols() - 1), labels};
}

Controller controller_from(const ModelFile& mf, const std::string& gain, const std::string& x_star,
                           const std::string& u_star) {
  if (!gain.empty()) {
    const Matrix k = parse_matrix(gain);
    return Controller::constant(k, x_star.empty() ? Vector::Zero(k.cols()) : parse_vector(x_star),
                                u_star.empty() ? Vector::Zero(k.rows()) : parse_vector(u_star));
  }
  QNN_THROW_UNLESS(mf.controller.has_value(), ErrorCode::InvalidArgument, "model has no controller; pass --gain");
  return *mf.controller;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quadratic neural networks: convex training, identification and control"};
  app.require_subcommand(1);
  Common o;
  std::string data, model, train_file, test_file, mnist_dir, setpoint, gain, x_star, u_star, p_text, objective = "min-cond";
  std::string method = "grid", q_text, r_text, inputs_file;
  std::vector<std::string> x0s;
  int inputs = -1, batch = 100, steps = 50, classes = 0;
  double x_bound = 1.0, pixel_scale = 255.0;

  auto* train_cmd = app.add_subcommand("train", "Train a network on a delimited table and decompose it");
  add_training(train_cmd, o);
  train_cmd->add_option("--data", data, "Table: inputs then outputs")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--inputs", inputs, "Number of input columns (default: all but the last)");
  train_cmd->add_option("--tol", o.tol, "Decomposition tolerance")->capture_default_str();
  train_cmd->add_option("--out", o.out, "Output prefix");

  auto* dec_cmd = app.add_subcommand("decompose", "Extract explicit neurons from a model file");
  dec_cmd->add_option("--model", model, "Model file")->required()->check(CLI::ExistingFile);
  dec_cmd->add_option("--tol", o.tol, "Decomposition tolerance")->capture_default_str();
  dec_cmd->add_option("--out", o.out, "Write the model with neurons to this path");

  auto* pred_cmd = app.add_subcommand("predict", "Evaluate a model on an input table");
  pred_cmd->add_option("--model", model, "Model file")->required()->check(CLI::ExistingFile);
  pred_cmd->add_option("--data", data, "Input table; columns past the model inputs are ignored")->required()->check(CLI::ExistingFile);
  pred_cmd->add_option("--out", o.out, "Write predictions to this path");

  auto* cls_cmd = app.add_subcommand("classify", "Train a one-hot classifier and report test accuracy");
  add_training(cls_cmd, o);
  cls_cmd->add_option("--train", train_file, "Training table, label in the last column");
  cls_cmd->add_option("--test", test_file, "Test table, label in the last column");
  cls_cmd->add_option("--mnist-dir", mnist_dir, "Directory with the four MNIST IDX files");
  cls_cmd->add_option("--batch", batch, "MNIST training batch size")->capture_default_str();
  cls_cmd->add_option("--pixel-scale", pixel_scale, "MNIST pixel range upper end")->capture_default_str();
  cls_cmd->add_option("--classes", classes, "Class count (default: max label + 1)");
  cls_cmd->add_option("--seed", o.seed, "Shuffle seed for the MNIST batch (default: first images)");
  cls_cmd->add_option("--out", o.out, "Output prefix");

  auto* sysid_cmd = app.add_subcommand("sysid", "Identify a quadratic state-space model from an input/output log");
  add_training(sysid_cmd, o);
  sysid_cmd->add_option("--data", data, "Log table: inputs then outputs")->required()->check(CLI::ExistingFile);
  sysid_cmd->add_option("--inputs", inputs, "Number of input columns")->capture_default_str();
  sysid_cmd->add_option("--delays", o.delays, "Output delays n")->capture_default_str();
  sysid_cmd->add_option("--train-frac", o.train_frac, "Leading fraction used for training")->capture_default_str();
  sysid_cmd->add_option("--out", o.out, "Output prefix");

  auto* ss_cmd = app.add_subcommand("steady-state", "Inputs that hold an output set point");
  ss_cmd->add_option("--model", model, "State-space model file")->required()->check(CLI::ExistingFile);
  ss_cmd->add_option("--setpoint", setpoint, "Output set point y*, comma separated")->required();
  ss_cmd->add_option("--tol", o.tol, "Residual tolerance");

  auto* synth_cmd = app.add_subcommand("synth-lmi", "Synthesize a stabilizing controller");
  synth_cmd->add_option("--model", model, "Polynomial system or state-space model")->required()->check(CLI::ExistingFile);
  synth_cmd->add_option("--epsilon", o.epsilon, "Decrease rate epsilon in (0, 1)")->capture_default_str();
  synth_cmd->add_option("--region", o.region, "global or lo:hi[,lo:hi...]")->capture_default_str();
  synth_cmd->add_option("--objective", objective, "min-cond or feasibility")
      ->check(CLI::IsMember({"min-cond", "feasibility"}))
      ->capture_default_str();
  synth_cmd->add_option("--x0", x0s, "Initial state for the closed-loop simulation (repeatable)");
  synth_cmd->add_option("--steps", steps, "Simulation steps")->capture_default_str();
  synth_cmd->add_option("--out", o.out, "Output prefix");

  auto* cost_cmd = app.add_subcommand("cost-bound", "Guaranteed-cost bound and the associated controller");
  cost_cmd->add_option("--model", model, "Polynomial system or state-space model")->required()->check(CLI::ExistingFile);
  cost_cmd->add_option("--q", q_text, "State weight Q (rows ';', entries ','), default identity");
  cost_cmd->add_option("--r", r_text, "Input weight R, default identity");
  cost_cmd->add_option("--region", o.region, "global or lo:hi[,lo:hi...]")->capture_default_str();
  cost_cmd->add_option("--x0", x0s, "Initial state for the closed-loop simulation (repeatable)");
  cost_cmd->add_option("--steps", steps, "Simulation steps")->capture_default_str();
  cost_cmd->add_option("--out", o.out, "Output prefix");

  auto* ver_cmd = app.add_subcommand("verify", "Check the Lyapunov decrease condition for a controller");
  ver_cmd->add_option("--model", model, "Model file (may carry a controller and certificate)")->required()->check(CLI::ExistingFile);
  ver_cmd->add_option("--gain", gain, "Constant gain K (rows ';', entries ',')");
  ver_cmd->add_option("--x-star", x_star, "State set point");
  ver_cmd->add_option("--u-star", u_star, "Input set point");
  ver_cmd->add_option("--p", p_text, "Lyapunov matrix P of V = (x - x*)' P (x - x*)");
  ver_cmd->add_option("--region", o.region, "global or lo:hi[,lo:hi...]")->capture_default_str();
  ver_cmd->add_option("--method", method, "grid or sos")->check(CLI::IsMember({"grid", "sos"}))->capture_default_str();
  ver_cmd->add_option("--tol", o.tol, "Acceptance tolerance");

  auto* sim_cmd = app.add_subcommand("simulate", "Simulate a model open loop or under a controller");
  sim_cmd->add_option("--model", model, "Model file")->required()->check(CLI::ExistingFile);
  sim_cmd->add_option("--x0", x0s, "Initial state")->required()->expected(1);
  sim_cmd->add_option("--inputs", inputs_file, "Open-loop input table, one row per step");
  sim_cmd->add_option("--gain", gain, "Constant gain K for a closed-loop run");
  sim_cmd->add_option("--x-star", x_star, "State set point");
  sim_cmd->add_option("--u-star", u_star, "Input set point");
  sim_cmd->add_option("--steps", steps, "Closed-loop steps")->capture_default_str();
  sim_cmd->add_option("--out", o.out, "Write the trajectory to this path");

  auto* lip_cmd = app.add_subcommand("lipschitz", "Per-output Lipschitz bounds");
  lip_cmd->add_option("--model", model, "Model file")->required()->check(CLI::ExistingFile);
  lip_cmd->add_option("--x-bound", x_bound, "Bound on the input infinity norm")->capture_default_str();

  auto* prep_cmd = app.add_subcommand("mnist-prep", "Downsample MNIST to 10x10 delimited tables");
  prep_cmd->add_option("--mnist-dir", mnist_dir, "Directory with the four MNIST IDX files")->required();
  prep_cmd->add_option("--pixel-scale", pixel_scale, "Pixel range upper end")->capture_default_str();
  prep_cmd->add_option("--out", o.out, "Output prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kBadArgs;
  }

  try {
    if (*train_cmd) {
      const Matrix t = load_delimited(data);
      const int n = inputs >= 0 ? inputs : static_cast<int>(t.cols()) - 1;
      const auto run = run_regression(split_columns(t, n), training_config(o), o.out, o.tol);
      emit(run.report, o.out);
    } else if (*dec_cmd) {
      ModelFile mf = load_model(model);
      QNN_THROW_UNLESS(mf.network.has_value(), ErrorCode::SchemaError, "model file has no network");
      const auto dec = decompose_network(*mf.network, {o.tol});
      mf.neurons = dec.neurons;
      if (!o.out.empty()) save_model(o.out, mf);
      std::cout.precision(10);
      for (size_t k = 0; k < dec.neurons.outputs.size(); ++k)
        for (const auto& nr : dec.neurons.outputs[k]) {
          std::cout << "output " << k << " alpha " << nr.alpha << " w";
          for (Eigen::Index i = 0; i < nr.w.size(); ++i) std::cout << " " << nr.w(i);
          std::cout << "\n";
        }
      std::cout << "neurons " << dec.neurons.total() << "\n";
    } else if (*pred_cmd) {
      const ModelFile mf = load_model(model);
      QNN_THROW_UNLESS(mf.network.has_value(), ErrorCode::SchemaError, "model file has no network");
      const Matrix t = load_delimited(data);
      const int n = mf.network->n_inputs() - (mf.network->offset_augmented() ? 1 : 0);
      QNN_THROW_UNLESS(t.cols() >= n, ErrorCode::DimensionMismatch, "input table has too few columns");
      const Matrix x = detail::with_offset(t.leftCols(n), mf.network->offset_augmented());
      const Matrix y = mf.network->evaluate_rows(x);
      if (o.out.empty())
        print_table(std::cout, y);
      else
        save_delimited(o.out, y);
    } else if (*cls_cmd) {
      Matrix xtr, xte;
      std::vector<int> ytr, yte;
      double bound = 1.0;
      nlohmann::json extra;
      if (!mnist_dir.empty()) {
        const auto mn = load_mnist_dir(mnist_dir, pixel_scale);
        std::vector<int> order(static_cast<size_t>(mn.train_x.rows()));
        std::iota(order.begin(), order.end(), 0);
        if (cls_cmd->count("--seed")) std::shuffle(order.begin(), order.end(), std::mt19937(o.seed));
        QNN_THROW_UNLESS(batch >= 1 && batch <= static_cast<int>(order.size()), ErrorCode::InvalidArgument,
                         "batch size out of range");
        xtr.resize(batch, mn.train_x.cols());
        for (int i = 0; i < batch; ++i) {
          xtr.row(i) = mn.train_x.row(order[static_cast<size_t>(i)]);
          ytr.push_back(mn.train_labels[static_cast<size_t>(order[static_cast<size_t>(i)])]);
        }
        xte = mn.test_x;
        yte = mn.test_labels;
        bound = pixel_scale;
        extra = {{"pixel_scale", pixel_scale}, {"downsample", kDownsampleDescription}, {"batch", batch}};
      } else {
        QNN_THROW_UNLESS(!train_file.empty() && !test_file.empty(), ErrorCode::InvalidArgument,
                         "classify needs --train and --test, or --mnist-dir");
        std::tie(xtr, ytr) = labeled_table(train_file);
        std::tie(xte, yte) = labeled_table(test_file);
        bound = std::max(xtr.cwiseAbs().maxCoeff(), xte.cwiseAbs().maxCoeff());
      }
      if (classes == 0) classes = 1 + std::max(*std::max_element(ytr.begin(), ytr.end()), *std::max_element(yte.begin(), yte.end()));
      auto run = run_classification(xtr, ytr, xte, yte, classes, training_config(o), o.out, bound);
      run.report.metrics["seed"] = cls_cmd->count("--seed") ? nlohmann::json(o.seed) : nlohmann::json("none (first images)");
      if (!extra.is_null()) run.report.metrics["mnist"] = extra;
      emit(run.report, o.out);
    } else if (*sysid_cmd) {
      const Matrix t = load_delimited(data);
      const IoLog log = to_io_log(t, inputs >= 0 ? inputs : 1);
      const auto run = run_sysid(log, o.delays, o.train_frac, training_config(o), o.out);
      emit(run.report, o.out);
    } else if (*ss_cmd) {
      const auto ss = solve_steady_state(load_model(model).state_space_model(), parse_vector(setpoint),
                                         ss_cmd->count("--tol") ? o.tol : 1e-9);
      nlohmann::json j = {{"x_star", detail::vector_json(ss.x_star)}, {"arbitrary", ss.arbitrary}, {"residual", ss.residual}};
      for (const auto& u : ss.inputs) j["u_star"].push_back(detail::vector_json(u));
      std::cout << j.dump(2) << "\n";
    } else if (*synth_cmd || *cost_cmd) {
      const ModelFile mf = load_model(model);
      const PolynomialSystem sys = system_of(mf);
      SynthesisParams params;
      params.mode = *synth_cmd ? SynthesisMode::Lmi : SynthesisMode::CostBound;
      params.lmi.epsilon = o.epsilon;
      params.lmi.region = Region::parse(o.region, sys.nx);
      params.lmi.objective = objective == "feasibility" ? SynthesisObjective::Feasibility : SynthesisObjective::MinCondition;
      if (!q_text.empty()) params.q = parse_matrix(q_text);
      if (!r_text.empty()) params.r = parse_matrix(r_text);
      for (const auto& s : x0s) params.initial_states.push_back(parse_vector(s));
      params.steps = steps;
      const auto run = run_synthesis(mf, params, o.out);
      emit(run.report, o.out);
    } else if (*ver_cmd) {
      const ModelFile mf = load_model(model);
      const Controller ctl = controller_from(mf, gain, x_star, u_star);
      Matrix p;
      if (!p_text.empty()) {
        p = parse_matrix(p_text);
      } else {
        QNN_THROW_UNLESS(mf.certificate.has_value(), ErrorCode::InvalidArgument, "pass --p or a model with a certificate");
        p = mf.certificate->kind == "lmi" ? Matrix(mf.certificate->p.inverse()) : mf.certificate->p;
      }
      VerifyOptions opt;
      opt.method = method == "sos" ? VerifyMethod::Sos : VerifyMethod::Grid;
      if (ver_cmd->count("--tol")) opt.tolerance = o.tol;
      const auto run = run_verification(mf, ctl, p, Region::parse(o.region, ctl.nx()), opt);
      emit(run.report, "");
      return run.lyapunov.holds ? kOk : kInfeasible;
    } else if (*sim_cmd) {
      const ModelFile mf = load_model(model);
      const Vector x0 = parse_vector(x0s.at(0));
      std::vector<Vector> states;
      if (!inputs_file.empty()) {
        const Matrix u = load_delimited(inputs_file);
        std::vector<Vector> us;
        for (Eigen::Index i = 0; i < u.rows(); ++i) us.push_back(u.row(i).transpose());
        if (mf.network && mf.state_space) {
          states = simulate(mf.state_space_model(), x0, us).states;
        } else {
          const PolynomialSystem sys = system_of(mf);
          states.push_back(x0);
          for (const auto& ui : us) states.push_back(sys.step(states.back(), ui));
        }
      } else {
        const Controller ctl = controller_from(mf, gain, x_star, u_star);
        const ClosedLoop cl = mf.network && mf.state_space ? ClosedLoop(mf.state_space_model(), ctl)
                                                           : ClosedLoop(system_of(mf), ctl);
        states = cl.simulate(x0, steps);
      }
      Matrix traj(static_cast<Eigen::Index>(states.size()), 1 + x0.size());
      for (size_t k = 0; k < states.size(); ++k) {
        traj(static_cast<Eigen::Index>(k), 0) = static_cast<double>(k);
        traj.row(static_cast<Eigen::Index>(k)).tail(x0.size()) = states[k].transpose();
      }
      if (o.out.empty())
        print_table(std::cout, traj);
      else
        save_delimited(o.out, traj, {"k", "x..."});
    } else if (*lip_cmd) {
      const ModelFile mf = load_model(model);
      QNN_THROW_UNLESS(mf.network.has_value(), ErrorCode::SchemaError, "model file has no network");
      emit(run_lipschitz(*mf.network, x_bound), "");
    } else if (*prep_cmd) {
      const auto mn = load_mnist_dir(mnist_dir, pixel_scale);
      auto write = [&](const Matrix& x, const std::vector<int>& labels, const std::string& suffix) {
        Matrix t(x.rows(), x.cols() + 1);
        t << x, Eigen::Map<const Eigen::VectorXi>(labels.data(), static_cast<Eigen::Index>(labels.size())).cast<double>();
        save_delimited(o.out + suffix, t, {"100 pixels", "label"});
        std::cout << o.out + suffix << " " << t.rows() << " rows\n";
      };
      write(mn.train_x, mn.train_labels, ".train.txt");
      write(mn.test_x, mn.test_labels, ".test.txt");
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kOk;
}
