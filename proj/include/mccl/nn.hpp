#pragma once

// Small trainable layers on top of the autograd tape.

#include "mccl/autograd.hpp"

#include <random>
#include <string>
#include <vector>

namespace mccl::nn {

using ag::Parameter;
using ag::Tape;
using ag::Var;

using ParamList = std::vector<Parameter*>;

/// Glorot-uniform matrix.
Eigen::MatrixXd xavier(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng);
Eigen::MatrixXd normal(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng);

/// y = x W + b with W stored as (in x out).
struct Linear {
  Parameter weight;
  Parameter bias;

  Linear() = default;
  Linear(const std::string& name, Eigen::Index in, Eigen::Index out, std::mt19937_64& rng);

  Var operator()(Tape& tape, Var x);
  void collect(ParamList& out);
  Eigen::Index in_features() const { return weight.value.rows(); }
  Eigen::Index out_features() const { return weight.value.cols(); }
};

struct LayerNorm {
  Parameter gain;
  Parameter bias;

  LayerNorm() = default;
  LayerNorm(const std::string& name, Eigen::Index width);

  Var operator()(Tape& tape, Var x);
  void collect(ParamList& out);
};

struct MultiHeadAttention {
  Linear query;
  Linear key;
  Linear value;
  Linear output;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, Eigen::Index width, int heads, std::mt19937_64& rng);

  /// Scaled dot-product attention of `q` (n x d) over `k`/`v` (m x d).
  Var operator()(Tape& tape, Var q, Var k, Var v);
  void collect(ParamList& out);
};

}  // namespace mccl::nn
