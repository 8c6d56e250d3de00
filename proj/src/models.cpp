#include "nestseq/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace nestseq {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

// log(1 + e^x) without overflow.
double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// One recurrence step: tanh(W m + rec h_prev + bias). Both the plain and
// the nested model funnel through this, so tying R=U, r=b reproduces the
// plain recurrence bit for bit.
Vector hidden_step(Eigen::Ref<const Matrix> w, Eigen::Ref<const Vector> m,
                   Eigen::Ref<const Matrix> rec, Eigen::Ref<const Vector> h_prev,
                   Eigen::Ref<const Vector> bias) {
  return ((w * m) + (rec * h_prev) + bias).array().tanh();
}

void check_input_shape(const Matrix& inputs, int input_dim, const char* where) {
  if (inputs.rows() != input_dim) {
    std::ostringstream os;
    os << where << ": input has " << inputs.rows() << " rows but the model expects input_dim "
       << input_dim;
    fail(os.str());
  }
  if (inputs.cols() < 1) fail(std::string(where) + ": empty input sequence");
}

}  // namespace

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::kMlp: return "mlp";
    case ModelKind::kRnn: return "rnn";
    case ModelKind::kNestedRnn: return "nested-rnn";
  }
  throw std::logic_error("unknown ModelKind");
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "mlp") return ModelKind::kMlp;
  if (s == "rnn") return ModelKind::kRnn;
  if (s == "nested-rnn") return ModelKind::kNestedRnn;
  throw std::invalid_argument("unknown model kind '" + s + "'");
}

RnnParams::RnnParams(int hidden, int input_dim, bool nested)
    : hidden_(hidden), input_dim_(input_dim), nested_(nested) {
  if (hidden < 1 || input_dim < 1) fail("RnnParams: hidden and input_dim must be >= 1");
  const Eigen::Index h = hidden;
  const Eigen::Index d = input_dim;
  off_u_ = h * d;
  off_v_ = off_u_ + h * h;
  off_b_ = off_v_ + h;
  off_c_ = off_b_ + h;
  off_r_ = off_c_ + 1;
  off_rb_ = off_r_ + h * h;
  theta_ = Vector::Zero(nested ? off_rb_ + h : off_r_);
}

RnnParams RnnParams::init(int hidden, int input_dim, bool nested, SeededRng& rng, double sd) {
  RnnParams p(hidden, input_dim, nested);
  p.theta_ = rng.normals(p.theta_.size(), 0.0, sd);
  return p;
}

Eigen::Map<Matrix> RnnParams::w_hosp() {
  if (!nested_) fail("RnnParams: w_hosp exists only on the nested model");
  return {theta_.data() + off_r_, hidden_, hidden_};
}

Eigen::Map<const Matrix> RnnParams::w_hosp() const {
  if (!nested_) fail("RnnParams: w_hosp exists only on the nested model");
  return {theta_.data() + off_r_, hidden_, hidden_};
}

Eigen::Map<Vector> RnnParams::b_hosp() {
  if (!nested_) fail("RnnParams: b_hosp exists only on the nested model");
  return {theta_.data() + off_rb_, hidden_};
}

Eigen::Map<const Vector> RnnParams::b_hosp() const {
  if (!nested_) fail("RnnParams: b_hosp exists only on the nested model");
  return {theta_.data() + off_rb_, hidden_};
}

MlpParams::MlpParams(int hidden, int input_dim) : hidden_(hidden), input_dim_(input_dim) {
  if (hidden < 1 || input_dim < 1) fail("MlpParams: hidden and input_dim must be >= 1");
  const Eigen::Index h = hidden;
  off_b_ = h * static_cast<Eigen::Index>(input_dim);
  off_v_ = off_b_ + h;
  off_c_ = off_v_ + h;
  theta_ = Vector::Zero(off_c_ + 1);
}

MlpParams MlpParams::init(int hidden, int input_dim, SeededRng& rng, double sd) {
  MlpParams p(hidden, input_dim);
  p.theta_ = rng.normals(p.theta_.size(), 0.0, sd);
  return p;
}

Matrix to_input_matrix(const SequenceSample& sample) {
  if (sample.features.empty()) fail("to_input_matrix: sample has no features");
  Matrix m(1, static_cast<Eigen::Index>(sample.features.size()));
  for (std::size_t t = 0; t < sample.features.size(); ++t) {
    m(0, static_cast<Eigen::Index>(t)) = sample.features[t];
  }
  return m;
}

NestedInput to_nested_input(const NestedSample& sample) {
  NestedInput in;
  for (const std::vector<double>& group : sample.feature_groups) {
    if (group.empty()) fail("to_nested_input: empty hospitalization group");
    Matrix m(1, static_cast<Eigen::Index>(group.size()));
    for (std::size_t t = 0; t < group.size(); ++t) m(0, static_cast<Eigen::Index>(t)) = group[t];
    in.groups.push_back(std::move(m));
  }
  in.labeled_groups = sample.labeled_groups;
  in.labels = sample.labels;
  return in;
}

double bce_loss(double logit, bool label) {
  return label ? softplus(-logit) : softplus(logit);
}

RnnTrace rnn_forward(const Matrix& inputs, const RnnParams& params, const Vector& initial_state) {
  check_input_shape(inputs, params.input_dim(), "rnn_forward");
  if (initial_state.size() != params.hidden()) {
    fail("rnn_forward: initial state length does not match hidden size");
  }
  RnnTrace trace;
  const Eigen::Index tau = inputs.cols();
  trace.hidden.reserve(static_cast<std::size_t>(tau));
  Vector h = initial_state;
  for (Eigen::Index t = 0; t < tau; ++t) {
    h = hidden_step(params.w_in(), inputs.col(t), params.u_rec(), h, params.b_hid());
    trace.hidden.push_back(h);
  }
  trace.logit = params.v_out().dot(h) + params.c_out();
  trace.prob = sigmoid(trace.logit);
  return trace;
}

RnnTrace rnn_forward(const Matrix& inputs, const RnnParams& params) {
  return rnn_forward(inputs, params, Vector::Zero(params.hidden()));
}

RnnTrace rnn_forward(const SequenceSample& sample, const RnnParams& params) {
  return rnn_forward(to_input_matrix(sample), params);
}

RnnGradients rnn_backward(const RnnTrace& trace, const Matrix& inputs, bool label,
                          const RnnParams& params, const Vector& initial_state) {
  check_input_shape(inputs, params.input_dim(), "rnn_backward");
  const Eigen::Index tau = inputs.cols();
  if (static_cast<Eigen::Index>(trace.hidden.size()) != tau) {
    fail("rnn_backward: trace does not match the input sequence length");
  }
  RnnGradients grad(params.hidden(), params.input_dim(), params.nested());

  const double dy = trace.prob - (label ? 1.0 : 0.0);
  grad.v_out() = dy * trace.hidden.back();
  grad.c_out() = dy;

  // delta = dL/dh^(t); at t = tau it is V^T dy, earlier steps get U^T J delta.
  Vector delta = params.v_out() * dy;
  for (Eigen::Index t = tau; t >= 1; --t) {
    const Vector& h = trace.hidden[static_cast<std::size_t>(t - 1)];
    const Vector gz = ((1.0 - h.array().square()) * delta.array()).matrix();
    grad.w_in() += gz * inputs.col(t - 1).transpose();
    grad.b_hid() += gz;
    const Vector& h_prev =
        t >= 2 ? trace.hidden[static_cast<std::size_t>(t - 2)] : initial_state;
    grad.u_rec() += gz * h_prev.transpose();
    if (t >= 2) delta = params.u_rec().transpose() * gz;
  }
  return grad;
}

RnnGradients rnn_backward(const RnnTrace& trace, const Matrix& inputs, bool label,
                          const RnnParams& params) {
  return rnn_backward(trace, inputs, label, params, Vector::Zero(params.hidden()));
}

namespace {

void check_nested_input(const NestedInput& input, const RnnParams& params, const char* where) {
  if (!params.nested()) fail(std::string(where) + ": parameters are not nested");
  if (input.groups.empty()) fail(std::string(where) + ": no hospitalization groups");
  for (const Matrix& g : input.groups) check_input_shape(g, params.input_dim(), where);
  if (input.labeled_groups.size() != input.labels.size()) {
    fail(std::string(where) + ": labels and labeled_groups differ in length");
  }
  std::size_t prev = 0;
  for (std::size_t k = 0; k < input.labeled_groups.size(); ++k) {
    const std::size_t a = input.labeled_groups[k];
    if (a >= input.groups.size()) fail(std::string(where) + ": labeled group index out of range");
    if (k > 0 && a <= prev) fail(std::string(where) + ": labeled groups must be ascending");
    prev = a;
  }
}

}  // namespace

NestTrace nest_forward(const NestedInput& input, const RnnParams& params) {
  check_nested_input(input, params, "nest_forward");
  NestTrace trace;
  const Vector virtual_state = Vector::Zero(params.hidden());
  const Vector* boundary = &virtual_state;  // h^(tau_(a-1))_(a-1)
  for (const Matrix& group : input.groups) {
    std::vector<Vector> states;
    states.reserve(static_cast<std::size_t>(group.cols()));
    Vector h;
    for (Eigen::Index t = 0; t < group.cols(); ++t) {
      h = t == 0 ? hidden_step(params.w_in(), group.col(t), params.w_hosp(), *boundary,
                               params.b_hosp())
                 : hidden_step(params.w_in(), group.col(t), params.u_rec(), h, params.b_hid());
      states.push_back(h);
    }
    trace.logits.push_back(params.v_out().dot(h) + params.c_out());
    trace.probs.push_back(sigmoid(trace.logits.back()));
    trace.hidden.push_back(std::move(states));
    boundary = &trace.hidden.back().back();
  }
  return trace;
}

NestTrace nest_forward(const NestedSample& sample, const RnnParams& params) {
  return nest_forward(to_nested_input(sample), params);
}

double nest_loss(const NestTrace& trace, const NestedInput& input) {
  double total = 0.0;
  for (std::size_t k = 0; k < input.labeled_groups.size(); ++k) {
    total += bce_loss(trace.logits[input.labeled_groups[k]], input.labels[k]);
  }
  return total;
}

RnnGradients nest_backward(const NestTrace& trace, const NestedInput& input,
                           const RnnParams& params) {
  check_nested_input(input, params, "nest_backward");
  const std::size_t n_groups = input.groups.size();
  if (trace.hidden.size() != n_groups || trace.logits.size() != n_groups) {
    fail("nest_backward: trace does not match the nested input");
  }
  RnnGradients grad(params.hidden(), params.input_dim(), true);

  std::vector<double> dy(n_groups, 0.0);
  std::vector<bool> labeled(n_groups, false);
  for (std::size_t k = 0; k < input.labeled_groups.size(); ++k) {
    const std::size_t a = input.labeled_groups[k];
    labeled[a] = true;
    dy[a] = trace.probs[a] - (input.labels[k] ? 1.0 : 0.0);
  }

  const Vector virtual_state = Vector::Zero(params.hidden());
  // Gradient flowing back across the hospitalization boundary: R^T J times
  // the first-step delta of the following hospitalization.
  Vector carry = Vector::Zero(params.hidden());
  for (std::size_t a = n_groups; a-- > 0;) {
    const Matrix& group = input.groups[a];
    const std::vector<Vector>& states = trace.hidden[a];
    const Eigen::Index tau = group.cols();

    // Boundary state gradient: output path (if labeled) plus the carry
    // from hospitalization a+1 (zero for the last one).
    Vector delta = carry;
    if (labeled[a]) {
      delta += params.v_out() * dy[a];
      grad.v_out() += dy[a] * states.back();
      grad.c_out() += dy[a];
    }

    for (Eigen::Index t = tau; t >= 1; --t) {
      const Vector& h = states[static_cast<std::size_t>(t - 1)];
      const Vector gz = ((1.0 - h.array().square()) * delta.array()).matrix();
      grad.w_in() += gz * group.col(t - 1).transpose();
      if (t >= 2) {
        grad.b_hid() += gz;
        grad.u_rec() += gz * states[static_cast<std::size_t>(t - 2)].transpose();
        delta = params.u_rec().transpose() * gz;
      } else {
        // First step of the hospitalization: R and r take the place of U
        // and b. The previous boundary state is the virtual zero for a = 0.
        grad.b_hosp() += gz;
        const Vector& h_boundary = a > 0 ? trace.hidden[a - 1].back() : virtual_state;
        grad.w_hosp() += gz * h_boundary.transpose();
        carry = params.w_hosp().transpose() * gz;
      }
    }
  }
  return grad;
}

MlpTrace mlp_forward(const Vector& x, const MlpParams& params) {
  if (x.size() != params.input_dim()) {
    std::ostringstream os;
    os << "mlp_forward: input has length " << x.size() << " but the model expects "
       << params.input_dim();
    fail(os.str());
  }
  MlpTrace trace;
  trace.hidden = ((params.w_in() * x) + params.b_hid()).array().tanh();
  trace.logit = params.v_out().dot(trace.hidden) + params.c_out();
  trace.prob = sigmoid(trace.logit);
  return trace;
}

MlpTrace mlp_forward(const AggregatedSample& sample, const MlpParams& params) {
  Vector x(1);
  x[0] = sample.feature;
  return mlp_forward(x, params);
}

MlpGradients mlp_backward(const MlpTrace& trace, const Vector& x, bool label,
                          const MlpParams& params) {
  if (x.size() != params.input_dim() || trace.hidden.size() != params.hidden()) {
    fail("mlp_backward: trace or input does not match the parameters");
  }
  MlpGradients grad(params.hidden(), params.input_dim());
  const double dy = trace.prob - (label ? 1.0 : 0.0);
  grad.v_out() = dy * trace.hidden;
  grad.c_out() = dy;
  const Vector gz = ((1.0 - trace.hidden.array().square()) * (params.v_out() * dy).array()).matrix();
  grad.w_in() = gz * x.transpose();
  grad.b_hid() = gz;
  return grad;
}

Vector central_differences(const std::function<double(const Vector&)>& loss, const Vector& theta,
                           double eps) {
  if (!(eps > 0.0)) fail("central_differences: eps must be > 0");
  Vector grad(theta.size());
  Vector probe = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    probe[i] = theta[i] + eps;
    const double up = loss(probe);
    probe[i] = theta[i] - eps;
    const double down = loss(probe);
    probe[i] = theta[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      std::ostringstream os;
      os << "central_differences: loss is not finite near parameter " << i;
      throw std::runtime_error(os.str());
    }
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

RnnGradients fd_rnn_gradients(const Matrix& inputs, bool label, const RnnParams& params,
                              double eps) {
  RnnParams probe = params;
  auto loss = [&](const Vector& theta) {
    probe.flat() = theta;
    return bce_loss(rnn_forward(inputs, probe).logit, label);
  };
  RnnGradients grad = params;
  grad.flat() = central_differences(loss, params.flat(), eps);
  return grad;
}

RnnGradients fd_nest_gradients(const NestedInput& input, const RnnParams& params, double eps) {
  RnnParams probe = params;
  auto loss = [&](const Vector& theta) {
    probe.flat() = theta;
    return nest_loss(nest_forward(input, probe), input);
  };
  RnnGradients grad = params;
  grad.flat() = central_differences(loss, params.flat(), eps);
  return grad;
}

MlpGradients fd_mlp_gradients(const Vector& x, bool label, const MlpParams& params, double eps) {
  MlpParams probe = params;
  auto loss = [&](const Vector& theta) {
    probe.flat() = theta;
    return bce_loss(mlp_forward(x, probe).logit, label);
  };
  MlpGradients grad = params;
  grad.flat() = central_differences(loss, params.flat(), eps);
  return grad;
}

// ---- Serialization ----

namespace {

constexpr char kMagic[4] = {'N', 'S', 'Q', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(value));
}

template <typename T>
T read_pod(std::istream& in) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(value));
  if (!in) throw std::runtime_error("params file truncated");
  return value;
}

struct ParamsHeader {
  ModelKind kind;
  int hidden;
  int input_dim;
};

ModelParams make_params(const ParamsHeader& h, const Vector& theta) {
  if (h.kind == ModelKind::kMlp) {
    MlpParams p(h.hidden, h.input_dim);
    if (p.size() != theta.size()) throw std::runtime_error("params file: wrong element count");
    p.flat() = theta;
    return p;
  }
  RnnParams p(h.hidden, h.input_dim, h.kind == ModelKind::kNestedRnn);
  if (p.size() != theta.size()) throw std::runtime_error("params file: wrong element count");
  p.flat() = theta;
  return p;
}

}  // namespace

ModelKind kind_of(const ModelParams& params) {
  if (std::holds_alternative<MlpParams>(params)) return ModelKind::kMlp;
  return std::get<RnnParams>(params).nested() ? ModelKind::kNestedRnn : ModelKind::kRnn;
}

void save_params(const ModelParams& params, const std::string& path, ParamsFormat format) {
  const ModelKind kind = kind_of(params);
  const Vector& theta = std::holds_alternative<MlpParams>(params)
                            ? std::get<MlpParams>(params).flat()
                            : std::get<RnnParams>(params).flat();
  int hidden, input_dim;
  if (const MlpParams* mlp = std::get_if<MlpParams>(&params)) {
    hidden = mlp->hidden();
    input_dim = mlp->input_dim();
  } else {
    const RnnParams& rnn = std::get<RnnParams>(params);
    hidden = rnn.hidden();
    input_dim = rnn.input_dim();
  }

  if (format == ParamsFormat::kBinary) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint8_t>(kind));
    write_pod(out, static_cast<std::uint32_t>(hidden));
    write_pod(out, static_cast<std::uint32_t>(input_dim));
    write_pod(out, static_cast<std::uint64_t>(theta.size()));
    out.write(reinterpret_cast<const char*>(theta.data()),
              static_cast<std::streamsize>(sizeof(double) * theta.size()));
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
    return;
  }

  json doc;
  doc["format"] = "nestseq-params";
  doc["version"] = kVersion;
  doc["kind"] = to_string(kind);
  doc["hidden"] = hidden;
  doc["input_dim"] = input_dim;
  doc["theta"] = std::vector<double>(theta.data(), theta.data() + theta.size());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << doc.dump(2) << '\n';
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

ModelParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  char magic[4] = {0, 0, 0, 0};
  in.read(magic, sizeof(magic));
  if (in && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0) {
    const std::uint32_t version = read_pod<std::uint32_t>(in);
    if (version != kVersion) {
      throw std::runtime_error("params file '" + path + "': unsupported version " +
                               std::to_string(version));
    }
    ParamsHeader h;
    const std::uint8_t kind = read_pod<std::uint8_t>(in);
    if (kind > 2) throw std::runtime_error("params file '" + path + "': bad model kind");
    h.kind = static_cast<ModelKind>(kind);
    h.hidden = static_cast<int>(read_pod<std::uint32_t>(in));
    h.input_dim = static_cast<int>(read_pod<std::uint32_t>(in));
    const std::uint64_t count = read_pod<std::uint64_t>(in);
    Vector theta(static_cast<Eigen::Index>(count));
    in.read(reinterpret_cast<char*>(theta.data()),
            static_cast<std::streamsize>(sizeof(double) * count));
    if (!in) throw std::runtime_error("params file '" + path + "' truncated");
    return make_params(h, theta);
  }

  // Not the binary magic: parse as JSON.
  std::ifstream jin(path);
  json doc;
  try {
    jin >> doc;
  } catch (const json::exception& e) {
    throw std::runtime_error("params file '" + path + "': " + e.what());
  }
  if (doc.value("format", "") != "nestseq-params") {
    throw std::runtime_error("params file '" + path + "': not a nestseq params document");
  }
  if (doc.value("version", 0u) != kVersion) {
    throw std::runtime_error("params file '" + path + "': unsupported version");
  }
  ParamsHeader h;
  h.kind = model_kind_from_string(doc.at("kind").get<std::string>());
  h.hidden = doc.at("hidden").get<int>();
  h.input_dim = doc.at("input_dim").get<int>();
  const std::vector<double> values = doc.at("theta").get<std::vector<double>>();
  Vector theta(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) theta[static_cast<Eigen::Index>(i)] = values[i];
  return make_params(h, theta);
}

}  // namespace nestseq
