#include "mccl/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mccl::ag {

namespace {

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

Tape& tape_of(const Var& a) {
  require(a.valid(), "operation on an unbound Var");
  return *a.tape();
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }

Matrix Var::grad() const {
  const Matrix& g = tape_->grad(id_);
  if (g.size() == 0) return Matrix::Zero(rows(), cols());
  return g;
}

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
  return {this, nodes_.size() - 1};
}

Var Tape::input(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}, nullptr});
  return {this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return {this, it->second};
  nodes_.push_back(Node{p.value, {}, true, {}, &p});
  bound_.emplace(&p, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, const std::vector<Var>& parents, Backward backward) {
  bool needs = false;
  for (const auto& p : parents) {
    require(p.tape() == this, "mixing Vars from different tapes");
    needs = needs || p.requires_grad();
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}, nullptr});
  return {this, nodes_.size() - 1};
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::backward(Var root) {
  require(root.tape() == this, "backward on a foreign Var");
  Node& r = nodes_[root.id()];
  if (!r.requires_grad) return;
  r.grad = Matrix::Ones(r.value.rows(), r.value.cols());
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

// ---- ops --------------------------------------------------------------------

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  return tape_of(a).record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  return tape_of(a).record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  same_shape(a, b, "mul");
  return tape_of(a).record(a.value().cwiseProduct(b.value()), {a, b},
                           [a, b](Tape& t, const Matrix& g) {
                             t.accumulate(a, g.cwiseProduct(b.value()));
                             t.accumulate(b, g.cwiseProduct(a.value()));
                           });
}

Var div(Var a, Var b) {
  same_shape(a, b, "div");
  return tape_of(a).record(a.value().cwiseQuotient(b.value()), {a, b},
                           [a, b](Tape& t, const Matrix& g) {
                             const Matrix& bv = b.value();
                             t.accumulate(a, g.cwiseQuotient(bv));
                             t.accumulate(b, -g.cwiseProduct(a.value()).cwiseQuotient(bv.cwiseProduct(bv)));
                           });
}

Var scale(Var a, double s) {
  return tape_of(a).record(a.value() * s, {a}, [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

Var add_scalar(Var a, double s) {
  Matrix out = a.value().array() + s;
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

Var add_row(Var a, Var row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row must be 1 x cols(a)");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return tape_of(a).record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(row, g.colwise().sum());
  });
}

Var mul_col(Var a, Var col) {
  require(col.cols() == 1 && col.rows() == a.rows(), "mul_col: col must be rows(a) x 1");
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return tape_of(a).record(std::move(out), {a, col}, [a, col](Tape& t, const Matrix& g) {
    Matrix ga = g.array().colwise() * col.value().col(0).array();
    t.accumulate(a, ga);
    t.accumulate(col, g.cwiseProduct(a.value()).rowwise().sum());
  });
}

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  return tape_of(a).record(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  require(a.cols() == b.cols(), "matmul_nt: widths differ");
  return tape_of(a).record(a.value() * b.value().transpose(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g * b.value());
    if (b.requires_grad()) t.accumulate(b, g.transpose() * a.value());
  });
}

Var transpose(Var a) {
  return tape_of(a).record(a.value().transpose(), {a},
                           [a](Tape& t, const Matrix& g) { t.accumulate(a, g.transpose()); });
}

Var relu(Var a) { return leaky_relu(a, 0.0); }

Var leaky_relu(Var a, double slope) {
  Matrix out = a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return tape_of(a).record(std::move(out), {a}, [a, slope](Tape& t, const Matrix& g) {
    Matrix d = a.value().unaryExpr([slope](double x) { return x > 0.0 ? 1.0 : slope; });
    t.accumulate(a, g.cwiseProduct(d));
  });
}

Var sigmoid(Var a) {
  // Kept strictly inside (0,1): plain doubles round to 1 once x exceeds ~37.
  const double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  Matrix out = a.value().unaryExpr([lo, hi](double x) { return std::clamp(1.0 / (1.0 + std::exp(-x)), lo, hi); });
  Tape& t0 = tape_of(a);
  if (!a.requires_grad()) return t0.record(std::move(out), {a}, {});
  return t0.record(out, {a}, [a, out](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(out.cwiseProduct((1.0 - out.array()).matrix())));
  });
}

Var softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  Tape& t0 = tape_of(a);
  if (!a.requires_grad()) return t0.record(std::move(out), {a}, {});
  return t0.record(out, {a}, [a, out](Tape& t, const Matrix& g) {
    // dx_i = y_i * (g_i - <g, y>)
    Eigen::VectorXd dots = g.cwiseProduct(out).rowwise().sum();
    Matrix dx = out.cwiseProduct((g.colwise() - dots));
    t.accumulate(a, dx);
  });
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  require(gain.rows() == 1 && gain.cols() == x.cols(), "layer_norm_rows: gain shape");
  require(bias.rows() == 1 && bias.cols() == x.cols(), "layer_norm_rows: bias shape");
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.cols();
  Matrix xhat(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mu) * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  return tape_of(x).record(std::move(out), {x, gain, bias},
                           [x, gain, bias, xhat, inv_std, n](Tape& t, const Matrix& g) {
                             t.accumulate(bias, g.colwise().sum());
                             t.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
                             if (!x.requires_grad()) return;
                             Matrix gx = g.array().rowwise() * gain.value().row(0).array();
                             Matrix dx(gx.rows(), n);
                             for (Eigen::Index i = 0; i < gx.rows(); ++i) {
                               const double mean_g = gx.row(i).mean();
                               const double mean_gx = gx.row(i).dot(xhat.row(i)) / static_cast<double>(n);
                               dx.row(i) = inv_std(i) * (gx.row(i).array() - mean_g - xhat.row(i).array() * mean_gx);
                             }
                             t.accumulate(x, dx);
                           });
}

Var row_norms(Var a) {
  Matrix out = a.value().rowwise().norm();
  return tape_of(a).record(out, {a}, [a, out](Tape& t, const Matrix& g) {
    Matrix d(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double n = out(i, 0);
      if (n > 0.0)
        d.row(i) = a.value().row(i) * (g(i, 0) / n);
      else
        d.row(i).setZero();  // subgradient 0 at the origin
    }
    t.accumulate(a, d);
  });
}

Var normalize_rows(Var a, double eps) {
  Var norms = add_scalar(row_norms(a), eps);
  Var inv_v = div(tape_of(a).constant(Matrix::Ones(a.rows(), 1)), norms);
  return mul_col(a, inv_v);
}

Var row_sums(Var a) {
  Matrix out = a.value().rowwise().sum();
  const Eigen::Index cols = a.cols();
  return tape_of(a).record(std::move(out), {a}, [a, cols](Tape& t, const Matrix& g) {
    t.accumulate(a, g.col(0).replicate(1, cols));
  });
}

Var mean_rows(Var a) {
  require(a.rows() > 0, "mean_rows: empty input");
  Matrix out = a.value().colwise().mean();
  const Eigen::Index rows = a.rows();
  return tape_of(a).record(std::move(out), {a}, [a, rows](Tape& t, const Matrix& g) {
    t.accumulate(a, g.row(0).replicate(rows, 1) / static_cast<double>(rows));
  });
}

Var sum_all(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const Eigen::Index r = a.rows(), c = a.cols();
  return tape_of(a).record(std::move(out), {a},
                           [a, r, c](Tape& t, const Matrix& g) { t.accumulate(a, Matrix::Constant(r, c, g(0, 0))); });
}

Var mean_all(Var a) {
  require(a.value().size() > 0, "mean_all: empty input");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  Matrix out = a.value().middleCols(start, count);
  const Eigen::Index r = a.rows(), c = a.cols();
  return tape_of(a).record(std::move(out), {a}, [a, start, count, r, c](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(r, c);
    d.middleCols(start, count) = g;
    t.accumulate(a, d);
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  Matrix out = a.value().middleRows(start, count);
  const Eigen::Index r = a.rows(), c = a.cols();
  return tape_of(a).record(std::move(out), {a}, [a, start, count, r, c](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(r, c);
    d.middleRows(start, count) = g;
    t.accumulate(a, d);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return tape_of(parts.front()).record(std::move(out), parts, [parts](Tape& t, const Matrix& g) {
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) t.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    require(p.cols() == cols, "concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return tape_of(parts.front()).record(std::move(out), parts, [parts](Tape& t, const Matrix& g) {
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) t.accumulate(p, g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

Var space_to_depth(Var a, int height, int width, int factor) {
  require(factor >= 1, "space_to_depth: factor must be positive");
  require(a.rows() == static_cast<Eigen::Index>(height) * width, "space_to_depth: rows != height*width");
  require(height % factor == 0 && width % factor == 0, "space_to_depth: grid not divisible by factor");
  const int oh = height / factor, ow = width / factor;
  const Eigen::Index d = a.cols();
  // source row for (output patch, block slot)
  std::vector<Eigen::Index> src(static_cast<std::size_t>(oh * ow * factor * factor));
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) {
          const std::size_t o = static_cast<std::size_t>(((y * ow + x) * factor + dy) * factor + dx);
          src[o] = static_cast<Eigen::Index>((y * factor + dy) * width + (x * factor + dx));
        }
  const Eigen::Index slots = static_cast<Eigen::Index>(factor) * factor;
  Matrix out(oh * ow, slots * d);
  for (Eigen::Index p = 0; p < out.rows(); ++p)
    for (Eigen::Index s = 0; s < slots; ++s)
      out.block(p, s * d, 1, d) = a.value().row(src[static_cast<std::size_t>(p * slots + s)]);
  return tape_of(a).record(std::move(out), {a}, [a, src, slots, d](Tape& t, const Matrix& g) {
    Matrix da = Matrix::Zero(a.rows(), a.cols());
    for (Eigen::Index p = 0; p < g.rows(); ++p)
      for (Eigen::Index s = 0; s < slots; ++s)
        da.row(src[static_cast<std::size_t>(p * slots + s)]) += g.block(p, s * d, 1, d);
    t.accumulate(a, da);
  });
}

}  // namespace mccl::ag
