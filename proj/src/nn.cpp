#include "mccl/nn.hpp"

#include "mccl/error.hpp"

#include <cmath>

namespace mccl::nn {

Eigen::MatrixXd xavier(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-bound, bound);
  Eigen::MatrixXd m(fan_in, fan_out);
  for (Eigen::Index r = 0; r < fan_in; ++r)
    for (Eigen::Index c = 0; c < fan_out; ++c) m(r, c) = u(rng);
  return m;
}

Eigen::MatrixXd normal(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = n(rng);
  return m;
}

Linear::Linear(const std::string& name, Eigen::Index in, Eigen::Index out, std::mt19937_64& rng)
    : weight(name + ".weight", xavier(in, out, rng)), bias(name + ".bias", Eigen::MatrixXd::Zero(1, out)) {}

Var Linear::operator()(Tape& tape, Var x) {
  return ag::add_row(ag::matmul(x, tape.param(weight)), tape.param(bias));
}

void Linear::collect(ParamList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

LayerNorm::LayerNorm(const std::string& name, Eigen::Index width)
    : gain(name + ".gain", Eigen::MatrixXd::Ones(1, width)), bias(name + ".bias", Eigen::MatrixXd::Zero(1, width)) {}

Var LayerNorm::operator()(Tape& tape, Var x) { return ag::layer_norm_rows(x, tape.param(gain), tape.param(bias)); }

void LayerNorm::collect(ParamList& out) {
  out.push_back(&gain);
  out.push_back(&bias);
}

MultiHeadAttention::MultiHeadAttention(const std::string& name, Eigen::Index width, int heads_,
                                       std::mt19937_64& rng)
    : query(name + ".q", width, width, rng),
      key(name + ".k", width, width, rng),
      value(name + ".v", width, width, rng),
      output(name + ".o", width, width, rng),
      heads(heads_) {
  if (heads < 1 || width % heads != 0) throw ConfigError(name + ": width must be divisible by the head count");
}

Var MultiHeadAttention::operator()(Tape& tape, Var q, Var k, Var v) {
  if (k.rows() == 0) throw ShapeError("attention over an empty memory");
  if (k.rows() != v.rows()) throw ShapeError("attention keys and values differ in length");
  Var qp = query(tape, q);
  Var kp = key(tape, k);
  Var vp = value(tape, v);
  const Eigen::Index width = qp.cols();
  const Eigen::Index head_dim = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Var> parts;
  parts.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = ag::slice_cols(qp, h * head_dim, head_dim);
    Var kh = ag::slice_cols(kp, h * head_dim, head_dim);
    Var vh = ag::slice_cols(vp, h * head_dim, head_dim);
    Var attn = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), inv_sqrt));
    parts.push_back(ag::matmul(attn, vh));
  }
  Var merged = heads == 1 ? parts.front() : ag::concat_cols(parts);
  return output(tape, merged);
}

void MultiHeadAttention::collect(ParamList& out) {
  query.collect(out);
  key.collect(out);
  value.collect(out);
  output.collect(out);
}

}  // namespace mccl::nn
