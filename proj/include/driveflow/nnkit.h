// Copyright 2026 The Driveflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Small reverse-mode autodiff toolkit over row-major double matrices:
// parameter store, define-by-run tape, layer ops, Adam and a
// finite-difference gradient checker.

#ifndef DRIVEFLOW_NNKIT_H_
#define DRIVEFLOW_NNKIT_H_

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "driveflow/random.h"

namespace driveflow {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using BoolMat = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Gradients = std::map<std::string, Mat>;

enum class Init { kFanIn, kZeros, kOnes };

class ParamStore {
 public:
  explicit ParamStore(uint64_t seed = 0) : seed_(seed) {}

  // Creates a parameter; for kFanIn, entries are uniform in +-1/sqrt(rows)
  // drawn from a stream keyed by (store seed, name). Throws if it exists.
  Mat& Create(const std::string& name, int rows, int cols, Init init = Init::kFanIn);
  bool Has(const std::string& name) const { return params_.count(name) > 0; }
  const Mat& Get(const std::string& name) const;
  Mat& Mutable(const std::string& name);
  // Replaces values; shapes must match.
  void Set(const std::string& name, const Mat& value);
  std::vector<std::string> Names() const;
  const std::map<std::string, Mat>& params() const { return params_; }
  uint64_t seed() const { return seed_; }
  size_t NumScalars() const;
  bool AllFinite() const;

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  uint64_t seed_;
  std::map<std::string, Mat> params_;
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Accumulates the node's output gradient into its parents' gradients;
// parent_grads[i] is null for parents that do not need a gradient.
using BackwardFn = std::function<void(const Mat& out, const Mat& grad_out,
                                      const std::vector<Mat*>& parent_grads)>;

class Tape {
 public:
  // A non-recording tape only evaluates values.
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var Constant(Mat value, std::string name = "const");
  // Parameter leaf, cached per tape. Frozen parameters become constants.
  Var Param(const ParamStore& store, const std::string& name);
  void Freeze(const std::string& name) { frozen_.insert(name); }
  void FreezePrefix(const std::string& prefix) { frozen_prefixes_.push_back(prefix); }
  bool IsFrozen(const std::string& name) const;

  // Custom op entry point used by all built-in ops.
  Var Push(Mat value, const std::vector<Var>& parents, BackwardFn backward,
           std::string name);

  const Mat& value(int id) const { return nodes_[id].value; }
  const std::string& name(int id) const { return nodes_[id].name; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  size_t size() const { return nodes_.size(); }

  // Reverse pass from a 1x1 output (seed 1) or with an explicit output
  // gradient. Returns gradients for every trainable parameter touched.
  // A tape supports exactly one backward pass.
  Gradients Backward(Var output);
  Gradients Backward(Var output, const Mat& output_grad);

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::vector<int> parents;
    BackwardFn backward;
    std::string name;
    std::string param;  // non-empty for trainable parameter leaves
    bool requires_grad = false;
  };

  bool record_;
  bool consumed_ = false;
  std::deque<Node> nodes_;
  std::map<std::string, int> param_cache_;
  std::set<std::string> frozen_;
  std::vector<std::string> frozen_prefixes_;
};

// Ops. Shape mismatches throw std::invalid_argument naming the operands.
Var MatMul(Var a, Var b);
Var Add(Var a, Var b);
Var Sub(Var a, Var b);
Var Mul(Var a, Var b);                 // elementwise
Var AddRow(Var x, Var row);            // x + broadcast of a 1 x cols row
Var MulRow(Var x, Var row);            // x * broadcast of a 1 x cols row
Var Scale(Var x, double s);
Var AddScalar(Var x, double s);
Var Silu(Var x);
Var Sigmoid(Var x);
Var Tanh(Var x);
Var Square(Var x);
Var Sum(Var x);                        // 1x1
Var Mean(Var x);                       // 1x1
Var Reshape(Var x, int rows, int cols);  // row-major
Var ConcatRows(const std::vector<Var>& xs);
Var ConcatCols(const std::vector<Var>& xs);
Var SliceRows(Var x, int start, int count);
Var SliceCols(Var x, int start, int count);
// Row-wise softmax; masked-out entries get probability 0. A fully masked
// row yields zeros.
Var Softmax(Var x, const BoolMat* mask = nullptr);
Var LogSoftmax(Var x, const BoolMat* mask = nullptr);
// Picks x(i, index[i]) into an n x 1 column.
Var PickRows(Var x, const std::vector<int>& index);
Var EmbeddingLookup(Var table, const std::vector<int>& ids);
// Row-wise normalization over the features, then gamma * xhat + beta.
Var LayerNorm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var Affine(Var x, Var w, Var b);
// Multi-head scaled dot-product attention. q: nq x d, k and v: nk x d.
// mask (nq x nk), when given, marks allowed pairs.
Var Attention(Var q, Var k, Var v, int heads, const BoolMat* mask = nullptr);
// SwiGLU feed-forward: (silu(x W_gate) * (x W_up)) W_down.
Var GatedMlp(Var x, Var w_gate, Var w_up, Var w_down);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::map<std::string, Mat> m;
  std::map<std::string, Mat> v;
  std::map<std::string, int64_t> steps;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// Bias-corrected Adam over the parameters present in `grads`.
void AdamStep(ParamStore& params, const Gradients& grads, AdamState& state,
              const AdamConfig& config);

double GradNorm(const Gradients& grads);
// Scales gradients so their global norm is at most `max_norm`.
void ClipGradNorm(Gradients& grads, double max_norm);
void AddGradients(Gradients& into, const Gradients& from, double scale = 1.0);

struct GradCheckResult {
  bool pass = true;
  double worst_relative_error = 0.0;
  std::string worst_param;
  int checked = 0;
};

// Builds a scalar loss on the given tape.
using LossFn = std::function<Var(Tape&, const ParamStore&)>;

// Compares analytic gradients with central differences for up to
// `entries_per_param` sampled entries of each named parameter (all entries
// when <= 0). Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckResult GradCheck(ParamStore& params, const std::vector<std::string>& names,
                          const LossFn& loss, double h, double tol,
                          int entries_per_param = 0, uint64_t seed = 0,
                          double floor = 1e-6);

}  // namespace driveflow

#endif  // DRIVEFLOW_NNKIT_H_
