// Forward and backward passes, written out by hand.
//
// Many-to-one RNN over a sequence of D-dimensional inputs m^(t):
//   z^(t) = W m^(t) + U h^(t-1) + b,   h^(t) = tanh(z^(t)),
//   y = V h^(tau) + c,                 p = sigmoid(y).
//
// The nested RNN chains one many-to-one RNN per hospitalization. The first
// step of each hospitalization uses separate inter-hospitalization weights
// and bias instead of U and b:
//   z^(1)_(a) = W m^(1)_(a) + R h^(tau_(a-1))_(a-1) + r,
// with a zero virtual predecessor state for a = 1, and one output
// y_(a) = V h^(tau_(a))_(a) + c per hospitalization. The loss is summed
// over labeled hospitalizations.
//
// Parameters live in one flat row-major vector; the named accessors are
// Eigen maps into it. Gradients use the same layout, which keeps AdaGrad,
// the finite-difference oracle, and serialization uniform.

#pragma once

#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "nestseq/numerics.hpp"
#include "nestseq/structures.hpp"

namespace nestseq {

enum class ModelKind { kMlp, kRnn, kNestedRnn };

std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

/// RNN parameters: input weights W (HxD), recurrent weights U (HxH),
/// output weights V (H) and bias c, hidden bias b (H), plus, when
/// `nested`, inter-hospitalization weights R (HxH) and first-step bias r.
/// Flat layout: W, U, V, b, c, [R, r] -- nested storage extends the plain
/// one, so equal seeds give bitwise-equal shared parameters.
class RnnParams {
 public:
  RnnParams(int hidden, int input_dim, bool nested);

  /// All entries drawn Normal(0, sd^2) in flat order from `rng`.
  static RnnParams init(int hidden, int input_dim, bool nested, SeededRng& rng, double sd);

  int hidden() const { return hidden_; }
  int input_dim() const { return input_dim_; }
  bool nested() const { return nested_; }
  Eigen::Index size() const { return theta_.size(); }

  Vector& flat() { return theta_; }
  const Vector& flat() const { return theta_; }

  Eigen::Map<Matrix> w_in() { return {theta_.data(), hidden_, input_dim_}; }
  Eigen::Map<const Matrix> w_in() const { return {theta_.data(), hidden_, input_dim_}; }
  Eigen::Map<Matrix> u_rec() { return {theta_.data() + off_u_, hidden_, hidden_}; }
  Eigen::Map<const Matrix> u_rec() const { return {theta_.data() + off_u_, hidden_, hidden_}; }
  Eigen::Map<Vector> v_out() { return {theta_.data() + off_v_, hidden_}; }
  Eigen::Map<const Vector> v_out() const { return {theta_.data() + off_v_, hidden_}; }
  Eigen::Map<Vector> b_hid() { return {theta_.data() + off_b_, hidden_}; }
  Eigen::Map<const Vector> b_hid() const { return {theta_.data() + off_b_, hidden_}; }
  double& c_out() { return theta_[off_c_]; }
  double c_out() const { return theta_[off_c_]; }
  Eigen::Map<Matrix> w_hosp();
  Eigen::Map<const Matrix> w_hosp() const;
  Eigen::Map<Vector> b_hosp();
  Eigen::Map<const Vector> b_hosp() const;

 private:
  int hidden_;
  int input_dim_;
  bool nested_;
  Eigen::Index off_u_, off_v_, off_b_, off_c_, off_r_, off_rb_;
  Vector theta_;
};

/// One hidden tanh layer of H units over a D-dimensional input:
/// y = V tanh(W1 x + b1) + c. Flat layout: W1, b1, V, c.
class MlpParams {
 public:
  MlpParams(int hidden, int input_dim);
  static MlpParams init(int hidden, int input_dim, SeededRng& rng, double sd);

  int hidden() const { return hidden_; }
  int input_dim() const { return input_dim_; }
  Eigen::Index size() const { return theta_.size(); }

  Vector& flat() { return theta_; }
  const Vector& flat() const { return theta_; }

  Eigen::Map<Matrix> w_in() { return {theta_.data(), hidden_, input_dim_}; }
  Eigen::Map<const Matrix> w_in() const { return {theta_.data(), hidden_, input_dim_}; }
  Eigen::Map<Vector> b_hid() { return {theta_.data() + off_b_, hidden_}; }
  Eigen::Map<const Vector> b_hid() const { return {theta_.data() + off_b_, hidden_}; }
  Eigen::Map<Vector> v_out() { return {theta_.data() + off_v_, hidden_}; }
  Eigen::Map<const Vector> v_out() const { return {theta_.data() + off_v_, hidden_}; }
  double& c_out() { return theta_[off_c_]; }
  double c_out() const { return theta_[off_c_]; }

 private:
  int hidden_;
  int input_dim_;
  Eigen::Index off_b_, off_v_, off_c_;
  Vector theta_;
};

// Gradients share the parameter layout and accessors.
using RnnGradients = RnnParams;
using MlpGradients = MlpParams;

struct RnnTrace {
  std::vector<Vector> hidden;  // h^(t), t = 1..tau, after activation
  double logit = 0.0;
  double prob = 0.0;
};

struct NestTrace {
  std::vector<std::vector<Vector>> hidden;  // [hospitalization][t]
  std::vector<double> logits;               // one per hospitalization
  std::vector<double> probs;
};

struct MlpTrace {
  Vector hidden;
  double logit = 0.0;
  double prob = 0.0;
};

/// Model-facing view of a NestedSample: one D x tau_a input block per
/// hospitalization plus which blocks carry labels.
struct NestedInput {
  std::vector<Matrix> groups;
  std::vector<std::size_t> labeled_groups;  // strictly ascending
  std::vector<bool> labels;                 // aligned with labeled_groups
};

Matrix to_input_matrix(const SequenceSample& sample);  // 1 x tau
NestedInput to_nested_input(const NestedSample& sample);

/// Binary cross-entropy of a logit, in log-sum-exp form: never overflows
/// and returns exactly 0 only in saturation.
double bce_loss(double logit, bool label);

RnnTrace rnn_forward(const Matrix& inputs, const RnnParams& params, const Vector& initial_state);
RnnTrace rnn_forward(const Matrix& inputs, const RnnParams& params);  // zero initial state
RnnTrace rnn_forward(const SequenceSample& sample, const RnnParams& params);

RnnGradients rnn_backward(const RnnTrace& trace, const Matrix& inputs, bool label,
                          const RnnParams& params, const Vector& initial_state);
RnnGradients rnn_backward(const RnnTrace& trace, const Matrix& inputs, bool label,
                          const RnnParams& params);

NestTrace nest_forward(const NestedInput& input, const RnnParams& params);
NestTrace nest_forward(const NestedSample& sample, const RnnParams& params);

RnnGradients nest_backward(const NestTrace& trace, const NestedInput& input,
                           const RnnParams& params);

/// Total nested loss: sum of bce_loss over labeled hospitalizations.
double nest_loss(const NestTrace& trace, const NestedInput& input);

MlpTrace mlp_forward(const Vector& x, const MlpParams& params);
MlpTrace mlp_forward(const AggregatedSample& sample, const MlpParams& params);

MlpGradients mlp_backward(const MlpTrace& trace, const Vector& x, bool label,
                          const MlpParams& params);

/// Central differences (L(theta+eps) - L(theta-eps)) / (2 eps) for every
/// scalar parameter. The loss closure must stay finite at the perturbed
/// points. This is the correctness oracle for the analytic backward passes.
Vector central_differences(const std::function<double(const Vector&)>& loss, const Vector& theta,
                           double eps = 1e-5);

RnnGradients fd_rnn_gradients(const Matrix& inputs, bool label, const RnnParams& params,
                              double eps = 1e-5);
RnnGradients fd_nest_gradients(const NestedInput& input, const RnnParams& params,
                               double eps = 1e-5);
MlpGradients fd_mlp_gradients(const Vector& x, bool label, const MlpParams& params,
                              double eps = 1e-5);

// ---- Parameter serialization ----
//
// Binary: magic "NSQP", u32 version, u8 kind, u32 hidden, u32 input_dim,
// u64 count, count little-endian doubles in flat order; round-trips
// bit-exactly. JSON mirrors the same fields; doubles round-trip through
// shortest-representation formatting.

using ModelParams = std::variant<MlpParams, RnnParams>;

enum class ParamsFormat { kBinary, kJson };

ModelKind kind_of(const ModelParams& params);
void save_params(const ModelParams& params, const std::string& path, ParamsFormat format);
ModelParams load_params(const std::string& path);  // format sniffed from the file

}  // namespace nestseq
