#include "mccl/pki.hpp"

#include "mccl/error.hpp"
#include "mccl/kv.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace mccl::pki {

Eigen::MatrixXd load_label_embeddings(const std::filesystem::path& path, int num_classes) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (!trim(line).empty()) return true;
    }
    return false;
  };
  if (!next_line()) throw ParseError(path.string(), line_no, "missing 'C D_e' header");
  const auto header = split_whitespace(line);
  if (header.size() != 2) throw ParseError(path.string(), line_no, "header must be 'C D_e'");
  long rows = 0, dim = 0;
  try {
    rows = parse_long(header[0], "C");
    dim = parse_long(header[1], "D_e");
  } catch (const ConfigError& e) {
    throw ParseError(path.string(), line_no, e.what());
  }
  if (rows != num_classes)
    throw DataError(path.string() + ": file has " + std::to_string(rows) + " label rows, dataset has " +
                    std::to_string(num_classes) + " classes");
  if (dim < 1) throw ParseError(path.string(), line_no, "D_e must be positive");
  Eigen::MatrixXd out(rows, dim);
  for (long r = 0; r < rows; ++r) {
    if (!next_line())
      throw DataError(path.string() + ": expected " + std::to_string(rows) + " rows, found " + std::to_string(r));
    const auto toks = split_whitespace(line);
    if (toks.size() != static_cast<std::size_t>(dim))
      throw ParseError(path.string(), line_no, "expected " + std::to_string(dim) + " values");
    for (long c = 0; c < dim; ++c) {
      double v = 0.0;
      try {
        v = parse_double(toks[static_cast<std::size_t>(c)], "embedding");
      } catch (const ConfigError& e) {
        throw ParseError(path.string(), line_no, e.what());
      }
      if (!std::isfinite(v)) throw ParseError(path.string(), line_no, "non-finite embedding value");
      out(r, c) = v;
    }
  }
  if (next_line()) throw DataError(path.string() + ": more rows than the declared " + std::to_string(rows));
  return out;
}

void save_label_embeddings(const Eigen::MatrixXd& embeddings, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << embeddings.rows() << " " << embeddings.cols() << "\n" << std::setprecision(17);
  for (Eigen::Index r = 0; r < embeddings.rows(); ++r) {
    for (Eigen::Index c = 0; c < embeddings.cols(); ++c) out << (c ? " " : "") << embeddings(r, c);
    out << "\n";
  }
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

Eigen::MatrixXd fallback_label_embeddings(const std::vector<std::string>& label_names, int dim) {
  if (dim < 1) throw ConfigError("label embedding width must be positive");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(label_names.size()), dim);
  for (std::size_t r = 0; r < label_names.size(); ++r) {
    std::uint64_t state = fnv1a(label_names[r]);
    for (int c = 0; c < dim; ++c) {
      // uniform in [-1, 1); only exact integer and power-of-two arithmetic
      const double u = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
      out(static_cast<Eigen::Index>(r), c) = 2.0 * u - 1.0;
    }
    out.row(static_cast<Eigen::Index>(r)).normalize();
  }
  return out;
}

Eigen::MatrixXd build_adjacency(const Eigen::MatrixXd& embeddings) {
  const Eigen::Index c = embeddings.rows();
  if (c < 2) throw ConfigError("label graph needs at least two classes");
  const Eigen::VectorXd norms = embeddings.rowwise().norm();
  for (Eigen::Index i = 0; i < c; ++i)
    if (!(norms(i) > 0.0)) throw DataError("label embedding " + std::to_string(i) + " has zero norm");
  Eigen::MatrixXd unit = embeddings.array().colwise() / norms.array();
  Eigen::MatrixXd s = (unit * unit.transpose()).cwiseMax(0.0);
  s.diagonal().setOnes();
  const Eigen::VectorXd row_sum = s.rowwise().sum();
  return s.array().colwise() / row_sum.array();
}

LabelPrior make_label_prior(const std::vector<std::string>& names, const Eigen::MatrixXd& embeddings) {
  if (static_cast<Eigen::Index>(names.size()) != embeddings.rows())
    throw DataError("label names and embeddings differ in count");
  return {names, embeddings, build_adjacency(embeddings)};
}

Var gcn_forward(Tape& tape, Var embeddings, Var adjacency, Var w1, Var w2) {
  (void)tape;
  if (adjacency.rows() != embeddings.rows() || adjacency.cols() != embeddings.rows())
    throw ShapeError("gcn: adjacency must be C x C");
  if (embeddings.cols() != w1.rows() || w1.cols() != w2.rows()) throw ShapeError("gcn: weight shapes do not chain");
  Var h1 = ag::leaky_relu(ag::matmul(ag::matmul(adjacency, embeddings), w1), kGcnSlope);
  return ag::matmul(ag::matmul(adjacency, h1), w2);
}

DecoderLayer::DecoderLayer(const std::string& name, Eigen::Index width, int heads, int ff_mult,
                           std::mt19937_64& rng)
    : self_attn(name + ".self_attn", width, heads, rng),
      cross_attn(name + ".cross_attn", width, heads, rng),
      norm1(name + ".norm1", width),
      norm2(name + ".norm2", width),
      norm3(name + ".norm3", width),
      ff1(name + ".ff1", width, width * ff_mult, rng),
      ff2(name + ".ff2", width * ff_mult, width, rng) {}

Var DecoderLayer::operator()(Tape& tape, Var queries, Var query_pos, Var memory, Var memory_pos) {
  if (memory.rows() == 0) throw ShapeError("decoder: zero-length memory");
  if (queries.cols() != memory.cols()) throw ShapeError("decoder: query and memory widths differ");
  Var qp = ag::add(queries, query_pos);
  Var q1 = norm1(tape, ag::add(queries, self_attn(tape, qp, qp, queries)));
  Var q2 = norm2(tape, ag::add(q1, cross_attn(tape, ag::add(q1, query_pos), ag::add(memory, memory_pos), memory)));
  Var ff = ff2(tape, ag::relu(ff1(tape, q2)));
  return norm3(tape, ag::add(q2, ff));
}

void DecoderLayer::collect(nn::ParamList& out) {
  self_attn.collect(out);
  cross_attn.collect(out);
  norm1.collect(out);
  norm2.collect(out);
  norm3.collect(out);
  ff1.collect(out);
  ff2.collect(out);
}

ClassifierHead::ClassifierHead(const std::string& name, Eigen::Index classes, Eigen::Index width,
                               std::mt19937_64& rng)
    : weight(name + ".weight", nn::xavier(classes, width, rng)),
      bias(name + ".bias", Eigen::MatrixXd::Zero(1, classes)) {}

void ClassifierHead::collect(nn::ParamList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

Var classify(Tape& tape, const std::vector<StageQueries>& stages, ClassifierHead& head) {
  if (stages.empty()) throw ShapeError("classify: no stages");
  std::vector<Var> parts;
  for (const auto& s : stages) {
    if (s.reconstructed.valid()) parts.push_back(s.reconstructed);
    if (s.original.valid()) parts.push_back(s.original);
  }
  if (parts.empty()) throw ShapeError("classify: every branch is missing");
  Var q = parts.size() == 1 ? parts.front() : ag::concat_cols(parts);  // C x width, row c = Q_c
  const Eigen::Index classes = head.weight.value.rows();
  if (q.rows() != classes) throw ShapeError("classify: query count differs from the head's class count");
  if (q.cols() != head.width())
    throw ShapeError("classify: concatenated query width " + std::to_string(q.cols()) + " != head width " +
                     std::to_string(head.width()));
  Var logits = ag::row_sums(ag::mul(q, tape.param(head.weight)));  // C x 1
  return ag::sigmoid(ag::add(ag::transpose(logits), tape.param(head.bias)));
}

}  // namespace mccl::pki
