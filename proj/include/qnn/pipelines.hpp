#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qnn/analysis.hpp"
#include "qnn/control.hpp"
#include "qnn/data_io.hpp"
#include "qnn/decomposition.hpp"
#include "qnn/sysid.hpp"
#include "qnn/training.hpp"

namespace qnn {

struct RunReport {
  std::string task;
  double objective = 0.0;
  nlohmann::json metrics = nlohmann::json::object();
  double seconds = 0.0;
  std::vector<SolveDiagnostics> diagnostics;
  std::vector<std::string> artifacts;

  nlohmann::json to_json() const {
    nlohmann::json d = nlohmann::json::array();
    for (const auto& s : diagnostics)
      d.push_back({{"status", sdp::to_string(s.status)},
                   {"iterations", s.iterations},
                   {"primal_residual", s.primal_residual},
                   {"dual_residual", s.dual_residual},
                   {"objective", s.objective},
                   {"seconds", s.seconds}});
    return {{"task", task},
            {"objective", objective},
            {"metrics", metrics},
            {"wall_seconds", seconds},
            {"timing_note", "wall clock on this machine"},
            {"solver", d},
            {"artifacts", artifacts}};
  }
};

namespace detail {

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

inline std::string artifact(RunReport& rep, const std::string& prefix, const std::string& suffix) {
  const std::string path = prefix + suffix;
  if (const auto parent = std::filesystem::path(path).parent_path(); !parent.empty())
    std::filesystem::create_directories(parent);
  rep.artifacts.push_back(path);
  return path;
}

inline nlohmann::json training_metadata(const TrainingConfig& cfg) {
  return {{"beta", cfg.beta},
          {"loss", cfg.loss == Loss::SquaredL2 ? "l2" : "linf"},
          {"offset_augment", cfg.offset_augment}};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Regression

struct RegressionRun {
  RunReport report;
  TrainResult training;
  Decomposition decomposition;
  Matrix table;  // columns x..., y..., yhat...
};

/// Trains, decomposes and reports the fit. Artifacts are written when
/// out_prefix is nonempty.
inline RegressionRun run_regression(const Dataset& data, const TrainingConfig& cfg, const std::string& out_prefix = "",
                                    double decomposition_tol = 1e-5) {
  detail::Stopwatch sw;
  RegressionRun run;
  run.training = train(data.x, data.y, cfg);
  const QuadraticNetwork& net = run.training.network;
  const Matrix xin = detail::with_offset(data.x, cfg.offset_augment);
  run.decomposition = decompose_network(net, {decomposition_tol});
  const Matrix yhat = net.evaluate_rows(xin);
  const Matrix resid = yhat - data.y;

  run.table.resize(data.x.rows(), data.x.cols() + 2 * data.y.cols());
  run.table << data.x, data.y, yhat;

  double trace_sum = 0.0;
  for (const auto& o : run.training.variables.outputs) {
    const auto n = o.zplus.rows() - 1;
    trace_sum += o.zplus(n, n) + o.zminus(n, n);
  }
  auto& rep = run.report;
  rep.task = "regression";
  rep.objective = run.training.objective;
  rep.diagnostics = run.training.diagnostics;
  rep.metrics = {{"samples", data.x.rows()},
                 {"inputs", data.x.cols()},
                 {"outputs", data.y.cols()},
                 {"neurons", run.decomposition.neurons.total()},
                 {"minimal_neurons", minimal_neuron_count(run.training.variables, decomposition_tol)},
                 {"max_abs_residual", resid.size() ? resid.cwiseAbs().maxCoeff() : 0.0},
                 {"rms_residual", resid.size() ? std::sqrt(resid.squaredNorm() / static_cast<double>(resid.size())) : 0.0},
                 {"loss", training_loss(net, xin, data.y, cfg.loss)},
                 {"regularizer_trace_sum", trace_sum},
                 {"training", detail::training_metadata(cfg)}};
  if (!out_prefix.empty()) {
    ModelFile mf = network_file(net);
    mf.neurons = run.decomposition.neurons;
    mf.metadata["training"] = detail::training_metadata(cfg);
    save_model(detail::artifact(rep, out_prefix, ".model.json"), mf);
    save_delimited(detail::artifact(rep, out_prefix, ".fit.txt"), run.table, {"x...", "y...", "yhat..."});
  }
  rep.seconds = sw.seconds();
  return run;
}

// ---------------------------------------------------------------------------
// Classification

/// Smallest index attaining the maximum output.
inline int predict_class(const Vector& outputs) {
  QNN_THROW_UNLESS(outputs.size() > 0, ErrorCode::EmptyData, "no outputs to classify");
  int best = 0;
  for (int k = 1; k < outputs.size(); ++k)
    if (outputs(k) > outputs(best)) best = k;
  return best;
}

inline std::vector<int> predict_classes(const QuadraticNetwork& net, const Matrix& x) {
  const Matrix out = net.evaluate_rows(x);
  std::vector<int> cls;
  for (Eigen::Index i = 0; i < out.rows(); ++i) cls.push_back(predict_class(out.row(i).transpose()));
  return cls;
}

inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels) {
  QNN_THROW_UNLESS(predicted.size() == labels.size() && !labels.empty(), ErrorCode::DimensionMismatch,
                   "prediction and label counts differ");
  int ok = 0;
  for (size_t i = 0; i < labels.size(); ++i) ok += predicted[i] == labels[i];
  return static_cast<double>(ok) / static_cast<double>(labels.size());
}

struct ClassificationRun {
  RunReport report;
  TrainResult training;
  std::vector<int> test_predictions;
};

inline ClassificationRun run_classification(const Matrix& x_train, const std::vector<int>& y_train,
                                            const Matrix& x_test, const std::vector<int>& y_test, int classes,
                                            const TrainingConfig& cfg, const std::string& out_prefix = "",
                                            double input_bound = 1.0) {
  detail::Stopwatch sw;
  QNN_THROW_UNLESS(classes >= 2, ErrorCode::InvalidArgument, "need at least two classes");
  ClassificationRun run;
  run.training = train(x_train, one_hot(y_train, classes), cfg);
  const QuadraticNetwork& net = run.training.network;
  const Matrix xtr = detail::with_offset(x_train, cfg.offset_augment);
  const Matrix xte = detail::with_offset(x_test, cfg.offset_augment);
  const double train_acc = accuracy(predict_classes(net, xtr), y_train);
  run.test_predictions = predict_classes(net, xte);
  const double test_acc = accuracy(run.test_predictions, y_test);
  const auto lips = lipschitz_constants(net, input_bound);
  const auto norms = spectral_norms(net);

  auto& rep = run.report;
  rep.task = "classification";
  rep.objective = run.training.objective;
  rep.diagnostics = run.training.diagnostics;
  rep.metrics = {{"train_samples", x_train.rows()},
                 {"test_samples", x_test.rows()},
                 {"classes", classes},
                 {"train_accuracy", train_acc},
                 {"test_accuracy", test_acc},
                 {"lipschitz_input_bound", input_bound},
                 {"lipschitz_max", *std::max_element(lips.begin(), lips.end())},
                 {"spectral_norm_max", *std::max_element(norms.begin(), norms.end())},
                 {"tie_break", "smallest index"},
                 {"training", detail::training_metadata(cfg)}};
  if (!out_prefix.empty()) {
    ModelFile mf = network_file(net);
    mf.metadata["training"] = detail::training_metadata(cfg);
    mf.metadata["classes"] = classes;
    save_model(detail::artifact(rep, out_prefix, ".model.json"), mf);
    Matrix pred(x_test.rows(), 2);
    for (Eigen::Index i = 0; i < x_test.rows(); ++i) {
      pred(i, 0) = y_test[static_cast<size_t>(i)];
      pred(i, 1) = run.test_predictions[static_cast<size_t>(i)];
    }
    save_delimited(detail::artifact(rep, out_prefix, ".predictions.txt"), pred, {"label", "predicted"});
  }
  rep.seconds = sw.seconds();
  return run;
}

// ---------------------------------------------------------------------------
// System identification

struct SysidRun {
  RunReport report;
  IdentifyResult identified;
  Matrix table;  // t, y..., yhat...
};

inline IoLog leading_fraction(const IoLog& log, double fraction) {
  QNN_THROW_UNLESS(fraction > 0.0 && fraction <= 1.0, ErrorCode::InvalidArgument, "train fraction must lie in (0, 1]");
  const auto rows = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::lround(fraction * log.length())));
  return IoLog{log.u.topRows(rows), log.y.topRows(rows), log.sample_period};
}

inline SysidRun run_sysid(const IoLog& log, int delays, double train_fraction, const TrainingConfig& cfg,
                          const std::string& out_prefix = "") {
  detail::Stopwatch sw;
  SysidRun run;
  const IoLog head = leading_fraction(log, train_fraction);
  run.identified = identify(head, delays, cfg);
  const Matrix pred = one_step_predictions(run.identified.model, log);
  const auto [xs, ys] = build_sysid_matrices(log, delays);
  const Matrix err = pred - ys;
  const double rel = err.norm() / std::max(ys.norm(), 1e-300);

  run.table.resize(ys.rows(), 1 + 2 * ys.cols());
  for (Eigen::Index r = 0; r < ys.rows(); ++r) run.table(r, 0) = static_cast<double>(r + delays) * log.sample_period;
  run.table.middleCols(1, ys.cols()) = ys;
  run.table.rightCols(ys.cols()) = pred;

  auto& rep = run.report;
  rep.task = "sysid";
  rep.objective = run.identified.training.objective;
  rep.diagnostics = run.identified.training.diagnostics;
  rep.metrics = {{"samples", log.length()},
                 {"train_samples", head.length()},
                 {"delays", delays},
                 {"overdetermined", run.identified.overdetermined},
                 {"one_step_relative_error", rel},
                 {"one_step_max_abs_error", err.size() ? err.cwiseAbs().maxCoeff() : 0.0},
                 {"training", detail::training_metadata(cfg)}};
  if (!out_prefix.empty()) {
    ModelFile mf = state_space_file(run.identified.model);
    mf.metadata["training"] = detail::training_metadata(cfg);
    save_model(detail::artifact(rep, out_prefix, ".model.json"), mf);
    save_delimited(detail::artifact(rep, out_prefix, ".prediction.txt"), run.table, {"t", "y...", "yhat..."});
  }
  rep.seconds = sw.seconds();
  return run;
}

// ---------------------------------------------------------------------------
// Control synthesis

enum class SynthesisMode { Lmi, CostBound };

struct SynthesisParams {
  SynthesisMode mode = SynthesisMode::Lmi;
  SynthesisOptions lmi;
  Matrix q, r;  // cost weights; identity when empty
  std::vector<Vector> initial_states;
  int steps = 100;
};

struct SynthesisRun {
  RunReport report;
  Controller controller;
  Certificate certificate;
  Matrix table;  // run, k, x..., u..., V
};

/// The polynomial plant carried by a model file; state-space models must
/// satisfy the zero-offset and no-input-coupling assumptions.
inline PolynomialSystem system_of(const ModelFile& mf) {
  if (mf.system) return *mf.system;
  return to_polynomial_system(mf.state_space_model());
}

inline SynthesisRun run_synthesis(const ModelFile& model, const SynthesisParams& params,
                                  const std::string& out_prefix = "") {
  detail::Stopwatch sw;
  const PolynomialSystem sys = system_of(model);
  SynthesisRun run;
  auto& rep = run.report;
  Matrix v_matrix;  // V(x) = x' v_matrix x
  if (params.mode == SynthesisMode::Lmi) {
    const auto res = synthesize_lmi(sys, params.lmi);
    run.controller = res.controller;
    run.certificate = Certificate{"lmi", res.p, params.lmi.epsilon, 0.0, params.lmi.region.to_string()};
    v_matrix = res.p.inverse();
    rep.task = "synth-lmi";
    rep.objective = res.solution.objective_value;
    rep.metrics = {{"eta", res.eta}, {"condition_number", res.condition_number}, {"ill_conditioned", res.ill_conditioned}};
  } else {
    const Matrix q = params.q.size() ? params.q : Matrix::Identity(sys.nx, sys.nx);
    const Matrix r = params.r.size() ? params.r : Matrix::Identity(sys.m, sys.m);
    CostBoundOptions opt;
    opt.region = params.lmi.region;
    opt.solver = params.lmi.solver;
    const auto res = cost_lower_bound(sys, q, r, opt);
    run.controller = heuristic_controller(sys, res.p, r, params.lmi.region);
    run.certificate = Certificate{"cost_bound", res.p, 0.0, res.trace, params.lmi.region.to_string()};
    v_matrix = res.p;
    rep.task = "cost-bound";
    rep.objective = res.trace;
    rep.metrics = {{"trace", res.trace}};
  }
  rep.metrics["P"] = detail::matrix_json(run.certificate.p);
  if (run.controller.is_polynomial()) {
    std::vector<std::string> u;
    for (int j = 0; j < sys.m; ++j) u.push_back(run.controller.input_poly(j).pruned(1e-12).to_string(sys.state_names));
    rep.metrics["controller"] = u;
    const auto ev = constant_part_eigenvalues(closed_loop_matrix(sys, run.controller));
    nlohmann::json evj = nlohmann::json::array();
    for (const auto& e : ev) evj.push_back({e.real(), e.imag()});
    rep.metrics["closed_loop_eigenvalues"] = evj;
    rep.metrics["closed_loop_nonconstant_magnitude"] = closed_loop_matrix(sys, run.controller).nonconstant_magnitude();
  }

  const ClosedLoop cl(sys, run.controller);
  std::vector<std::vector<double>> rows;
  nlohmann::json sims = nlohmann::json::array();
  for (size_t s = 0; s < params.initial_states.size(); ++s) {
    const auto xs = cl.simulate(params.initial_states[s], params.steps);
    bool monotone = true;
    double prev = std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < xs.size(); ++k) {
      const double v = xs[k].dot(v_matrix * xs[k]);
      if (v > prev * (1.0 + 1e-12) + 1e-300) monotone = false;
      prev = v;
      const Vector u = run.controller.input(xs[k]);
      std::vector<double> row{static_cast<double>(s), static_cast<double>(k)};
      row.insert(row.end(), xs[k].data(), xs[k].data() + xs[k].size());
      row.insert(row.end(), u.data(), u.data() + u.size());
      row.push_back(v);
      rows.push_back(row);
    }
    sims.push_back({{"x0", detail::vector_json(params.initial_states[s])},
                    {"final_norm", xs.back().norm()},
                    {"lyapunov_monotone", monotone}});
  }
  rep.metrics["simulations"] = sims;
  if (!rows.empty()) {
    run.table.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (size_t i = 0; i < rows.size(); ++i)
      for (size_t j = 0; j < rows[i].size(); ++j) run.table(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  if (!out_prefix.empty()) {
    ModelFile mf = system_file(sys);
    mf.activation = model.activation;
    mf.kind = "controller";
    mf.controller = run.controller.is_polynomial() ? std::optional<Controller>(run.controller) : std::nullopt;
    mf.certificate = run.certificate;
    save_model(detail::artifact(rep, out_prefix, ".controller.json"), mf);
    if (run.table.size())
      save_delimited(detail::artifact(rep, out_prefix, ".simulation.txt"), run.table, {"run", "k", "x...", "u...", "V"});
  }
  rep.seconds = sw.seconds();
  return run;
}

// ---------------------------------------------------------------------------
// Verification of a given controller

struct VerificationRun {
  RunReport report;
  LyapunovReport lyapunov;
  bool dead_beat = false;
};

/// Checks the decrease condition for V(x) = (x - x*)' P (x - x*). The
/// plant is the state-space model when present, else the polynomial system.
inline VerificationRun run_verification(const ModelFile& model, const Controller& ctl, const Matrix& p,
                                        const Region& region, const VerifyOptions& opt) {
  detail::Stopwatch sw;
  const ClosedLoop cl = model.network && model.state_space ? ClosedLoop(model.state_space_model(), ctl)
                                                           : ClosedLoop(system_of(model), ctl);
  VerificationRun run;
  run.lyapunov = verify_lyapunov(cl, lyapunov_pbar(p, ctl.x_star), region, opt);
  if (ctl.is_polynomial()) {
    // One-step dead-beat: the state rows of Acl vanish identically.
    const PolyMatrix a = cl.a_cl_poly().pruned(1e-12);
    run.dead_beat = true;
    for (int r = 0; r < cl.nx(); ++r)
      for (int c = 0; c <= cl.nx(); ++c)
        if (!a(r, c).is_zero()) run.dead_beat = false;
  }
  auto& rep = run.report;
  rep.task = "verify";
  rep.metrics = {{"holds", run.lyapunov.holds},
                 {"method", opt.method == VerifyMethod::Grid ? "grid" : "sos"},
                 {"region", region.to_string()},
                 {"dead_beat", run.dead_beat},
                 {"reduced", run.lyapunov.reduced}};
  if (opt.method == VerifyMethod::Grid) {
    rep.metrics["worst_eigenvalue"] = run.lyapunov.worst_eigenvalue;
    rep.metrics["worst_point"] = detail::vector_json(run.lyapunov.worst_point);
  } else {
    rep.metrics["sos_margin"] = run.lyapunov.sos_margin;
  }
  std::string cert = run.lyapunov.holds ? (region.global ? "global" : "region") : "none";
  if (run.lyapunov.holds && run.dead_beat) cert += ", dead-beat";
  rep.metrics["certificate"] = cert;
  rep.seconds = sw.seconds();
  return run;
}

// ---------------------------------------------------------------------------
// Lipschitz

inline RunReport run_lipschitz(const QuadraticNetwork& net, double x_bound) {
  detail::Stopwatch sw;
  RunReport rep;
  rep.task = "lipschitz";
  const auto l = lipschitz_constants(net, x_bound);
  const auto s = spectral_norms(net);
  rep.metrics = {{"x_bound", x_bound},
                 {"per_output", l},
                 {"max", l.empty() ? 0.0 : *std::max_element(l.begin(), l.end())},
                 {"spectral_norms", s},
                 {"spectral_norm_max", s.empty() ? 0.0 : *std::max_element(s.begin(), s.end())}};
  rep.objective = rep.metrics["max"].get<double>();
  rep.seconds = sw.seconds();
  return rep;
}

// ---------------------------------------------------------------------------
// MNIST

struct MnistData {
  Matrix train_x, test_x;  // downsampled, N x 100
  std::vector<int> train_labels, test_labels;
};

/// Loads the four standard IDX files from a directory, downsamples and
/// multiplies the [0, 1] pixels by pixel_scale.
inline MnistData load_mnist_dir(const std::string& dir, double pixel_scale = 255.0) {
  namespace fs = std::filesystem;
  auto find = [&](const std::string& stem) {
    for (const std::string& name : {stem, stem + ".idx"}) {
      const auto p = fs::path(dir) / name;
      if (fs::exists(p)) return p.string();
    }
    const std::string dotted = std::string(stem).replace(stem.find("-idx"), 4, ".idx");
    const auto p = fs::path(dir) / dotted;
    QNN_THROW_UNLESS(fs::exists(p), ErrorCode::IoError, "missing " + stem + " in " + dir);
    return p.string();
  };
  const auto tr = load_idx(find("train-images-idx3-ubyte"), find("train-labels-idx1-ubyte"));
  const auto te = load_idx(find("t10k-images-idx3-ubyte"), find("t10k-labels-idx1-ubyte"));
  QNN_THROW_UNLESS(tr.rows == 28 && tr.cols == 28 && te.rows == 28 && te.cols == 28, ErrorCode::BadShape,
                   "MNIST images must be 28x28");
  return MnistData{downsample_rows(tr.pixels) * pixel_scale, downsample_rows(te.pixels) * pixel_scale, tr.labels,
                   te.labels};
}

}  // namespace qnn
