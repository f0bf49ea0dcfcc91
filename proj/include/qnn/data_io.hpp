#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qnn/control.hpp"
#include "qnn/error.hpp"
#include "qnn/linalg.hpp"
#include "qnn/network.hpp"
#include "qnn/polynomial.hpp"
#include "qnn/sysid.hpp"

namespace qnn {

// ---------------------------------------------------------------------------
// Delimited text

/// Numeric table. delimiter 0 accepts commas and any whitespace.
inline Matrix parse_delimited(std::istream& in, char delimiter = 0) {
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> tokens;
    std::string cur;
    auto flush = [&] {
      if (!cur.empty()) tokens.push_back(cur);
      cur.clear();
    };
    for (char ch : line) {
      const bool sep = delimiter ? ch == delimiter : (ch == ',' || std::isspace(static_cast<unsigned char>(ch)));
      if (sep || (delimiter && std::isspace(static_cast<unsigned char>(ch)))) {
        flush();
      } else {
        cur += ch;
      }
    }
    flush();
    if (tokens.empty()) continue;
    std::vector<double> row;
    for (const auto& t : tokens) {
      size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(t, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      QNN_THROW_UNLESS(used == t.size() && std::isfinite(v), ErrorCode::ParseError,
                       "line " + std::to_string(lineno) + ": cannot parse '" + t + "'");
      row.push_back(v);
    }
    QNN_THROW_UNLESS(rows.empty() || row.size() == rows[0].size(), ErrorCode::RaggedRows,
                     "line " + std::to_string(lineno) + " has " + std::to_string(row.size()) + " columns, expected " +
                         std::to_string(rows[0].size()));
    rows.push_back(std::move(row));
  }
  QNN_THROW_UNLESS(!rows.empty(), ErrorCode::EmptyData, "no data rows");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

inline Matrix load_delimited(const std::string& path, char delimiter = 0) {
  std::ifstream in(path);
  QNN_THROW_UNLESS(in.good(), ErrorCode::IoError, "cannot open " + path);
  return parse_delimited(in, delimiter);
}

inline void save_delimited(const std::string& path, const Matrix& m, const std::vector<std::string>& header = {}) {
  std::ofstream out(path);
  QNN_THROW_UNLESS(out.good(), ErrorCode::IoError, "cannot write " + path);
  if (!header.empty()) {
    out << "#";
    for (const auto& h : header) out << " " << h;
    out << "\n";
  }
  out.precision(17);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << m(i, j);
    out << "\n";
  }
}

struct Dataset {
  Matrix x;  // N x n
  Matrix y;  // N x p
  std::vector<int> labels;
};

/// The first n_inputs columns are X, the rest Y.
inline Dataset split_columns(const Matrix& table, int n_inputs) {
  QNN_THROW_UNLESS(n_inputs >= 0 && n_inputs < table.cols(), ErrorCode::DimensionMismatch,
                   "table has " + std::to_string(table.cols()) + " columns; cannot take " + std::to_string(n_inputs) +
                       " inputs and at least one output");
  return Dataset{table.leftCols(n_inputs), table.rightCols(table.cols() - n_inputs), {}};
}

/// The first m columns are inputs u, the rest outputs y.
inline IoLog to_io_log(const Matrix& table, int m, double sample_period = 1.0) {
  QNN_THROW_UNLESS(m >= 0 && m < table.cols(), ErrorCode::DimensionMismatch, "log needs at least one output column");
  return IoLog{table.leftCols(m), table.rightCols(table.cols() - m), sample_period};
}

// ---------------------------------------------------------------------------
// MNIST IDX

struct LabeledImages {
  int rows = 0, cols = 0;
  Matrix pixels;  // N x rows*cols, row-major images scaled to [0, 1]
  std::vector<int> labels;
  int count() const { return static_cast<int>(pixels.rows()); }
};

namespace detail {

inline uint32_t read_be32(const std::vector<uint8_t>& b, size_t off) {
  return (uint32_t{b[off]} << 24) | (uint32_t{b[off + 1]} << 16) | (uint32_t{b[off + 2]} << 8) | uint32_t{b[off + 3]};
}

inline std::vector<uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  QNN_THROW_UNLESS(in.good(), ErrorCode::IoError, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline constexpr uint32_t kIdxImageMagic = 0x00000803;
inline constexpr uint32_t kIdxLabelMagic = 0x00000801;

inline LabeledImages parse_idx_images(const std::vector<uint8_t>& bytes) {
  QNN_THROW_UNLESS(bytes.size() >= 4, ErrorCode::TruncatedFile, "image file shorter than its magic number");
  QNN_THROW_UNLESS(detail::read_be32(bytes, 0) == kIdxImageMagic, ErrorCode::BadMagic, "not an IDX image file");
  QNN_THROW_UNLESS(bytes.size() >= 16, ErrorCode::TruncatedFile, "image header truncated");
  const uint32_t n = detail::read_be32(bytes, 4), r = detail::read_be32(bytes, 8), c = detail::read_be32(bytes, 12);
  const uint64_t need = 16 + uint64_t{n} * r * c;
  QNN_THROW_UNLESS(bytes.size() >= need, ErrorCode::TruncatedFile,
                   "image data truncated: " + std::to_string(bytes.size()) + " of " + std::to_string(need) + " bytes");
  LabeledImages out;
  out.rows = static_cast<int>(r);
  out.cols = static_cast<int>(c);
  out.pixels.resize(n, static_cast<Eigen::Index>(r * c));
  size_t off = 16;
  for (Eigen::Index i = 0; i < out.pixels.rows(); ++i)
    for (Eigen::Index j = 0; j < out.pixels.cols(); ++j) out.pixels(i, j) = bytes[off++] / 255.0;
  return out;
}

inline std::vector<int> parse_idx_labels(const std::vector<uint8_t>& bytes) {
  QNN_THROW_UNLESS(bytes.size() >= 4, ErrorCode::TruncatedFile, "label file shorter than its magic number");
  QNN_THROW_UNLESS(detail::read_be32(bytes, 0) == kIdxLabelMagic, ErrorCode::BadMagic, "not an IDX label file");
  QNN_THROW_UNLESS(bytes.size() >= 8, ErrorCode::TruncatedFile, "label header truncated");
  const uint32_t n = detail::read_be32(bytes, 4);
  QNN_THROW_UNLESS(bytes.size() >= 8 + uint64_t{n}, ErrorCode::TruncatedFile, "label data truncated");
  return std::vector<int>(bytes.begin() + 8, bytes.begin() + 8 + n);
}

inline LabeledImages load_idx(const std::string& images_path, const std::string& labels_path) {
  LabeledImages out = parse_idx_images(detail::read_bytes(images_path));
  out.labels = parse_idx_labels(detail::read_bytes(labels_path));
  QNN_THROW_UNLESS(static_cast<int>(out.labels.size()) == out.count(), ErrorCode::CountMismatch,
                   std::to_string(out.count()) + " images but " + std::to_string(out.labels.size()) + " labels");
  return out;
}

inline Matrix one_hot(const std::vector<int>& labels, int classes) {
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), classes);
  for (size_t i = 0; i < labels.size(); ++i) {
    QNN_THROW_UNLESS(labels[i] >= 0 && labels[i] < classes, ErrorCode::InvalidArgument,
                     "label " + std::to_string(labels[i]) + " outside 0.." + std::to_string(classes - 1));
    y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return y;
}

/// Crops rows and columns 4..23 (zero-based) and 2x2 mean-pools to 10x10,
/// flattened row-major.
inline Vector downsample_mnist(const Matrix& image) {
  QNN_THROW_UNLESS(image.rows() == 28 && image.cols() == 28, ErrorCode::BadShape,
                   "expected a 28x28 image, got " + std::to_string(image.rows()) + "x" + std::to_string(image.cols()));
  Vector out(100);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) out(10 * i + j) = image.block(4 + 2 * i, 4 + 2 * j, 2, 2).sum() / 4.0;
  return out;
}

inline constexpr const char* kDownsampleDescription = "crop rows/cols 4..23 (zero-based), 2x2 mean pool, row-major";

/// Row-wise downsampling of flattened 28x28 images.
inline Matrix downsample_rows(const Matrix& flat) {
  QNN_THROW_UNLESS(flat.cols() == 784, ErrorCode::BadShape, "expected 784 pixels per row");
  Matrix out(flat.rows(), 100);
  for (Eigen::Index i = 0; i < flat.rows(); ++i) {
    const Matrix img = Eigen::Map<const Eigen::Matrix<double, 28, 28, Eigen::RowMajor>>(Vector(flat.row(i).transpose()).data());
    out.row(i) = downsample_mnist(img).transpose();
  }
  return out;
}

inline PolynomialSystem quadrotor_forward_difference(double t, double td = 0.0023, double tg = 1.0) {
  return PolynomialSystem::quadrotor(t, td, tg);
}

// ---------------------------------------------------------------------------
// Model files

inline constexpr int kModelFormatVersion = 1;

struct StateSpaceShape {
  int delays = 1, p = 1, m = 0;
  friend bool operator==(const StateSpaceShape&, const StateSpaceShape&) = default;
};

struct Certificate {
  std::string kind;  // "lmi", "cost_bound", "lyapunov"
  Matrix p;
  double epsilon = 0.0;
  double trace = 0.0;
  std::string region = "global";
};

/// Everything a CLI run can persist. Optional parts are written only when set.
struct ModelFile {
  std::string kind = "network";  // network, state_space, polynomial_system, controller
  ActivationParams activation;
  std::optional<QuadraticNetwork> network;
  std::optional<NeuronList> neurons;
  std::optional<StateSpaceShape> state_space;
  std::optional<PolynomialSystem> system;
  std::optional<Controller> controller;
  std::optional<Certificate> certificate;
  nlohmann::json metadata = nlohmann::json::object();

  StateSpaceModel state_space_model() const {
    QNN_THROW_UNLESS(network && state_space, ErrorCode::SchemaError, "file holds no state-space model");
    return StateSpaceModel::from_network(*network, state_space->delays, state_space->p, state_space->m);
  }
};

namespace detail {

using nlohmann::json;

inline void require_finite(double v, const char* what) {
  QNN_THROW_UNLESS(std::isfinite(v), ErrorCode::NonFinite, std::string("non-finite value in ") + what);
}

inline json vector_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    require_finite(v(i), "vector");
    a.push_back(v(i));
  }
  return a;
}

inline json matrix_json(const Matrix& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vector_json(m.row(i).transpose()));
  return a;
}

inline json upper_json(const Matrix& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = i; j < m.cols(); ++j) {
      require_finite(m(i, j), "Zbar");
      a.push_back(m(i, j));
    }
  return a;
}

inline json poly_matrix_json(const PolyMatrix& pm) {
  json entries = json::array();
  for (int i = 0; i < pm.rows(); ++i)
    for (int j = 0; j < pm.cols(); ++j) {
      json terms = json::array();
      for (const auto& [mono, c] : pm(i, j).terms()) {
        require_finite(c, "polynomial");
        terms.push_back(json{{"exponents", mono}, {"coef", c}});
      }
      entries.push_back(terms);
    }
  return json{{"rows", pm.rows()}, {"cols", pm.cols()}, {"nvars", pm.nvars()}, {"entries", entries}};
}

template <class T>
T get_field(const json& j, const char* key, const std::string& where) {
  QNN_THROW_UNLESS(j.is_object() && j.contains(key), ErrorCode::SchemaError,
                   where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaError, where + ": field '" + key + "' has the wrong type");
  }
}

inline Vector vector_from(const json& j, const std::string& where) {
  QNN_THROW_UNLESS(j.is_array(), ErrorCode::SchemaError, where + ": expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (size_t i = 0; i < j.size(); ++i) {
    QNN_THROW_UNLESS(j[i].is_number(), ErrorCode::SchemaError, where + ": expected numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline Matrix matrix_from(const json& j, const std::string& where) {
  QNN_THROW_UNLESS(j.is_array(), ErrorCode::SchemaError, where + ": expected an array of rows");
  if (j.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
  for (size_t i = 0; i < j.size(); ++i) {
    const Vector r = vector_from(j[i], where);
    QNN_THROW_UNLESS(r.size() == m.cols(), ErrorCode::SchemaError, where + ": ragged matrix");
    m.row(static_cast<Eigen::Index>(i)) = r.transpose();
  }
  return m;
}

inline PolyMatrix poly_matrix_from(const json& j, const std::string& where) {
  const int rows = get_field<int>(j, "rows", where), cols = get_field<int>(j, "cols", where);
  const int nvars = get_field<int>(j, "nvars", where);
  QNN_THROW_UNLESS(rows >= 0 && cols >= 0 && nvars >= 0, ErrorCode::SchemaError, where + ": negative dimension");
  const json entries = get_field<json>(j, "entries", where);
  QNN_THROW_UNLESS(entries.is_array() && entries.size() == static_cast<size_t>(rows * cols), ErrorCode::SchemaError,
                   where + ": entry count does not match rows x cols");
  PolyMatrix pm(rows, cols, nvars);
  for (int i = 0; i < rows; ++i)
    for (int k = 0; k < cols; ++k)
      for (const auto& t : entries[static_cast<size_t>(i * cols + k)]) {
        const auto mono = get_field<Monomial>(t, "exponents", where);
        QNN_THROW_UNLESS(static_cast<int>(mono.size()) == nvars, ErrorCode::SchemaError,
                         where + ": exponent vector length differs from nvars");
        pm(i, k).add_term(mono, get_field<double>(t, "coef", where));
      }
  return pm;
}

}  // namespace detail

inline nlohmann::json model_to_json(const ModelFile& mf) {
  using nlohmann::json;
  json j;
  j["format_version"] = kModelFormatVersion;
  j["kind"] = mf.kind;
  j["activation"] = json{{"a", mf.activation.a}, {"b", mf.activation.b}, {"c", mf.activation.c}};
  if (mf.network) {
    json z = json::array();
    for (const auto& m : mf.network->zbars()) z.push_back(detail::upper_json(m));
    j["network"] = json{{"n_inputs", mf.network->n_inputs()},
                        {"n_outputs", mf.network->n_outputs()},
                        {"offset_augmented", mf.network->offset_augmented()},
                        {"zbar_upper", z}};
  }
  if (mf.neurons) {
    json outs = json::array();
    for (const auto& o : mf.neurons->outputs) {
      json list = json::array();
      for (const auto& nr : o) list.push_back(json{{"w", detail::vector_json(nr.w)}, {"alpha", nr.alpha}});
      outs.push_back(list);
    }
    j["neurons"] = json{{"n_inputs", mf.neurons->n_inputs}, {"outputs", outs}};
  }
  if (mf.state_space)
    j["state_space"] = json{{"delays", mf.state_space->delays}, {"p", mf.state_space->p}, {"m", mf.state_space->m}};
  if (mf.system)
    j["system"] = json{{"nx", mf.system->nx},
                       {"m", mf.system->m},
                       {"state_names", mf.system->state_names},
                       {"a", detail::poly_matrix_json(mf.system->a)},
                       {"b", detail::poly_matrix_json(mf.system->b)}};
  if (mf.controller) {
    QNN_THROW_UNLESS(mf.controller->is_polynomial(), ErrorCode::DegreeTooHigh,
                     "only polynomial controllers can be saved");
    j["controller"] = json{{"gain", detail::poly_matrix_json(mf.controller->gain)},
                           {"x_star", detail::vector_json(mf.controller->x_star)},
                           {"u_star", detail::vector_json(mf.controller->u_star)}};
  }
  if (mf.certificate)
    j["certificate"] = json{{"kind", mf.certificate->kind},
                            {"p", detail::matrix_json(mf.certificate->p)},
                            {"epsilon", mf.certificate->epsilon},
                            {"trace", mf.certificate->trace},
                            {"region", mf.certificate->region}};
  if (!mf.metadata.empty()) j["metadata"] = mf.metadata;
  return j;
}

inline ModelFile model_from_json(const nlohmann::json& j) {
  using nlohmann::json;
  QNN_THROW_UNLESS(j.is_object(), ErrorCode::SchemaError, "model file is not an object");
  const int version = detail::get_field<int>(j, "format_version", "model");
  QNN_THROW_UNLESS(version == kModelFormatVersion, ErrorCode::VersionMismatch,
                   "format_version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kModelFormatVersion) + ")");
  ModelFile mf;
  mf.kind = detail::get_field<std::string>(j, "kind", "model");
  const json act = detail::get_field<json>(j, "activation", "model");
  try {
    mf.activation = ActivationParams(detail::get_field<double>(act, "a", "activation"),
                                     detail::get_field<double>(act, "b", "activation"),
                                     detail::get_field<double>(act, "c", "activation"));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::SchemaError) throw;
    throw Error(ErrorCode::SchemaError, std::string("activation: ") + e.what());
  }
  if (j.contains("network")) {
    const json& nj = j["network"];
    const int n = detail::get_field<int>(nj, "n_inputs", "network");
    const int p = detail::get_field<int>(nj, "n_outputs", "network");
    const json z = detail::get_field<json>(nj, "zbar_upper", "network");
    QNN_THROW_UNLESS(n >= 0 && p >= 0 && z.is_array() && z.size() == static_cast<size_t>(p), ErrorCode::SchemaError,
                     "network: need one zbar_upper array per output");
    std::vector<Matrix> zs;
    for (const auto& zk : z) {
      const Vector up = detail::vector_from(zk, "network");
      QNN_THROW_UNLESS(up.size() == (n + 1) * (n + 2) / 2, ErrorCode::SchemaError, "network: wrong zbar_upper length");
      Matrix m(n + 1, n + 1);
      Eigen::Index k = 0;
      for (int r = 0; r <= n; ++r)
        for (int c = r; c <= n; ++c) m(r, c) = m(c, r) = up(k++);
      zs.push_back(m);
    }
    QuadraticNetwork net(n, mf.activation, std::move(zs));
    net.set_offset_augmented(detail::get_field<bool>(nj, "offset_augmented", "network"));
    mf.network = std::move(net);
  }
  if (j.contains("neurons")) {
    NeuronList nl;
    nl.n_inputs = detail::get_field<int>(j["neurons"], "n_inputs", "neurons");
    for (const auto& o : detail::get_field<json>(j["neurons"], "outputs", "neurons")) {
      std::vector<Neuron> list;
      for (const auto& nr : o) {
        Neuron neuron{detail::vector_from(detail::get_field<json>(nr, "w", "neurons"), "neurons"),
                      detail::get_field<double>(nr, "alpha", "neurons")};
        QNN_THROW_UNLESS(neuron.w.size() == nl.n_inputs, ErrorCode::SchemaError, "neurons: wrong weight length");
        list.push_back(std::move(neuron));
      }
      nl.outputs.push_back(std::move(list));
    }
    mf.neurons = std::move(nl);
  }
  if (j.contains("state_space")) {
    const json& s = j["state_space"];
    mf.state_space = StateSpaceShape{detail::get_field<int>(s, "delays", "state_space"),
                                     detail::get_field<int>(s, "p", "state_space"),
                                     detail::get_field<int>(s, "m", "state_space")};
  }
  if (j.contains("system")) {
    const json& s = j["system"];
    PolynomialSystem sys(detail::poly_matrix_from(detail::get_field<json>(s, "a", "system"), "system.a"),
                         detail::poly_matrix_from(detail::get_field<json>(s, "b", "system"), "system.b"));
    if (s.contains("state_names")) sys.state_names = detail::get_field<std::vector<std::string>>(s, "state_names", "system");
    mf.system = std::move(sys);
  }
  if (j.contains("controller")) {
    const json& c = j["controller"];
    mf.controller = Controller::polynomial(
        detail::poly_matrix_from(detail::get_field<json>(c, "gain", "controller"), "controller.gain"),
        detail::vector_from(detail::get_field<json>(c, "x_star", "controller"), "controller.x_star"),
        detail::vector_from(detail::get_field<json>(c, "u_star", "controller"), "controller.u_star"));
  }
  if (j.contains("certificate")) {
    const json& c = j["certificate"];
    Certificate cert;
    cert.kind = detail::get_field<std::string>(c, "kind", "certificate");
    cert.p = detail::matrix_from(detail::get_field<json>(c, "p", "certificate"), "certificate.p");
    cert.epsilon = detail::get_field<double>(c, "epsilon", "certificate");
    cert.trace = detail::get_field<double>(c, "trace", "certificate");
    cert.region = detail::get_field<std::string>(c, "region", "certificate");
    mf.certificate = std::move(cert);
  }
  if (j.contains("metadata")) mf.metadata = j["metadata"];
  return mf;
}

inline std::string model_to_string(const ModelFile& mf) { return model_to_json(mf).dump(2) + "\n"; }

inline ModelFile model_from_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::SchemaError, std::string("model file is not valid JSON: ") + e.what());
  }
  return model_from_json(j);
}

inline void save_model(const std::string& path, const ModelFile& mf) {
  const std::string text = model_to_string(mf);
  std::ofstream out(path);
  QNN_THROW_UNLESS(out.good(), ErrorCode::IoError, "cannot write " + path);
  out << text;
}

inline ModelFile load_model(const std::string& path) {
  std::ifstream in(path);
  QNN_THROW_UNLESS(in.good(), ErrorCode::IoError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_string(ss.str());
}

inline ModelFile network_file(const QuadraticNetwork& net) {
  ModelFile mf;
  mf.activation = net.activation();
  mf.network = net;
  return mf;
}

inline ModelFile state_space_file(const StateSpaceModel& model) {
  ModelFile mf;
  mf.kind = "state_space";
  mf.activation = model.activation();
  mf.network = model.as_network();
  mf.state_space = StateSpaceShape{model.delays(), model.p(), model.m()};
  return mf;
}

inline ModelFile system_file(const PolynomialSystem& sys) {
  ModelFile mf;
  mf.kind = "polynomial_system";
  mf.system = sys;
  return mf;
}

}  // namespace qnn
