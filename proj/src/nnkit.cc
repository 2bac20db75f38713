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

#include "driveflow/nnkit.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace driveflow {
namespace {

std::string Shape(const Var& v) {
  std::ostringstream os;
  os << v.tape->name(v.id) << "[" << v.rows() << "x" << v.cols() << "]";
  return os.str();
}

[[noreturn]] void ShapeError(const char* op, const Var& a, const Var& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch between " +
                              Shape(a) + " and " + Shape(b));
}

void CheckSameTape(const char* op, const Var& a, const Var& b) {
  if (a.tape != b.tape || a.tape == nullptr) {
    throw std::invalid_argument(std::string(op) + ": operands on different tapes");
  }
}

void Accumulate(Mat* dst, const Mat& src) {
  if (dst != nullptr) *dst += src;
}

}  // namespace

// ---------------------------------------------------------------------------
// ParamStore.

Mat& ParamStore::Create(const std::string& name, int rows, int cols, Init init) {
  if (rows <= 0 || cols <= 0) {
    throw std::invalid_argument("param '" + name + "': non-positive shape");
  }
  if (Has(name)) throw std::invalid_argument("param '" + name + "' already exists");
  Mat m(rows, cols);
  switch (init) {
    case Init::kZeros: m.setZero(); break;
    case Init::kOnes: m.setOnes(); break;
    case Init::kFanIn: {
      Rng rng(MixSeed(seed_, HashBytes(name.data(), name.size())));
      const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.Uniform(-bound, bound);
      break;
    }
  }
  return params_.emplace(name, std::move(m)).first->second;
}

const Mat& ParamStore::Get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::invalid_argument("unknown param '" + name + "'");
  return it->second;
}

Mat& ParamStore::Mutable(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::invalid_argument("unknown param '" + name + "'");
  return it->second;
}

void ParamStore::Set(const std::string& name, const Mat& value) {
  Mat& m = Mutable(name);
  if (m.rows() != value.rows() || m.cols() != value.cols()) {
    throw std::invalid_argument("param '" + name + "': shape is immutable");
  }
  m = value;
}

std::vector<std::string> ParamStore::Names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : params_) out.push_back(k);
  return out;
}

size_t ParamStore::NumScalars() const {
  size_t n = 0;
  for (const auto& [k, v] : params_) n += static_cast<size_t>(v.size());
  return n;
}

bool ParamStore::AllFinite() const {
  for (const auto& [k, v] : params_) {
    if (!v.allFinite()) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Tape.

const Mat& Var::value() const { return tape->value(id); }

bool Tape::IsFrozen(const std::string& name) const {
  if (frozen_.count(name)) return true;
  for (const std::string& p : frozen_prefixes_) {
    if (name.compare(0, p.size(), p) == 0) return true;
  }
  return false;
}

Var Tape::Constant(Mat value, std::string name) {
  Node n;
  n.value = std::move(value);
  n.name = std::move(name);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::Param(const ParamStore& store, const std::string& name) {
  auto it = param_cache_.find(name);
  if (it != param_cache_.end()) return {this, it->second};
  Node n;
  n.value = store.Get(name);
  n.name = name;
  if (record_ && !IsFrozen(name)) {
    n.param = name;
    n.requires_grad = true;
  }
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_cache_[name] = id;
  return {this, id};
}

Var Tape::Push(Mat value, const std::vector<Var>& parents, BackwardFn backward,
               std::string name) {
  if (consumed_) throw std::logic_error("tape already consumed by backward");
  Node n;
  n.value = std::move(value);
  n.name = std::move(name);
  if (record_) {
    for (const Var& p : parents) {
      if (p.tape != this) throw std::invalid_argument(n.name + ": parent on another tape");
      n.parents.push_back(p.id);
      n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Gradients Tape::Backward(Var output) {
  if (output.tape != this) throw std::invalid_argument("backward: output on another tape");
  if (output.rows() != 1 || output.cols() != 1) {
    throw std::invalid_argument("backward: implicit seed needs a 1x1 output, got " +
                                Shape(output));
  }
  return Backward(output, Mat::Ones(1, 1));
}

Gradients Tape::Backward(Var output, const Mat& output_grad) {
  if (!record_) throw std::logic_error("backward: tape did not record");
  if (consumed_) throw std::logic_error("backward: tape already consumed");
  if (output.tape != this) throw std::invalid_argument("backward: output on another tape");
  if (output_grad.rows() != output.rows() || output_grad.cols() != output.cols()) {
    throw std::invalid_argument("backward: output gradient shape mismatch");
  }
  consumed_ = true;
  Node& out = nodes_[output.id];
  if (out.requires_grad) out.grad = output_grad;
  std::vector<Mat*> parent_grads;
  for (int i = output.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
    parent_grads.clear();
    for (int p : n.parents) {
      Node& pn = nodes_[p];
      if (!pn.requires_grad) {
        parent_grads.push_back(nullptr);
        continue;
      }
      if (pn.grad.size() == 0) pn.grad = Mat::Zero(pn.value.rows(), pn.value.cols());
      parent_grads.push_back(&pn.grad);
    }
    n.backward(n.value, n.grad, parent_grads);
    if (!n.param.empty()) continue;
    n.grad.resize(0, 0);
  }
  Gradients grads;
  for (const auto& [name, id] : param_cache_) {
    const Node& n = nodes_[id];
    if (n.param.empty()) continue;
    grads[name] = n.grad.size() ? n.grad : Mat::Zero(n.value.rows(), n.value.cols());
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Ops.

#define DF_GRAD_ARGS const Mat&, const Mat& g, const std::vector<Mat*>& pg
#define DF_GRAD_ARGS_OUT const Mat& y, const Mat& g, const std::vector<Mat*>& pg

Var MatMul(Var a, Var b) {
  CheckSameTape("matmul", a, b);
  if (a.cols() != b.rows()) ShapeError("matmul", a, b);
  Tape* t = a.tape;
  const int ia = a.id, ib = b.id;
  Mat out;
  out.noalias() = a.value() * b.value();
  return t->Push(std::move(out), {a, b},
                 [t, ia, ib](DF_GRAD_ARGS) {
                   if (pg[0]) pg[0]->noalias() += g * t->value(ib).transpose();
                   if (pg[1]) pg[1]->noalias() += t->value(ia).transpose() * g;
                 },
                 "matmul");
}

Var Add(Var a, Var b) {
  CheckSameTape("add", a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) ShapeError("add", a, b);
  return a.tape->Push(a.value() + b.value(), {a, b},
                      [](DF_GRAD_ARGS) {
                        Accumulate(pg[0], g);
                        Accumulate(pg[1], g);
                      },
                      "add");
}

Var Sub(Var a, Var b) {
  CheckSameTape("sub", a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) ShapeError("sub", a, b);
  return a.tape->Push(a.value() - b.value(), {a, b},
                      [](DF_GRAD_ARGS) {
                        if (pg[0]) *pg[0] += g;
                        if (pg[1]) *pg[1] -= g;
                      },
                      "sub");
}

Var Mul(Var a, Var b) {
  CheckSameTape("mul", a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) ShapeError("mul", a, b);
  Tape* t = a.tape;
  const int ia = a.id, ib = b.id;
  return t->Push(a.value().cwiseProduct(b.value()), {a, b},
                 [t, ia, ib](DF_GRAD_ARGS) {
                   if (pg[0]) *pg[0] += g.cwiseProduct(t->value(ib));
                   if (pg[1]) *pg[1] += g.cwiseProduct(t->value(ia));
                 },
                 "mul");
}

Var AddRow(Var x, Var row) {
  CheckSameTape("add_row", x, row);
  if (row.rows() != 1 || row.cols() != x.cols()) ShapeError("add_row", x, row);
  Mat out = x.value();
  out.rowwise() += row.value().row(0);
  return x.tape->Push(std::move(out), {x, row},
                      [](DF_GRAD_ARGS) {
                        if (pg[0]) *pg[0] += g;
                        if (pg[1]) *pg[1] += g.colwise().sum();
                      },
                      "add_row");
}

Var MulRow(Var x, Var row) {
  CheckSameTape("mul_row", x, row);
  if (row.rows() != 1 || row.cols() != x.cols()) ShapeError("mul_row", x, row);
  Tape* t = x.tape;
  const int ix = x.id, ir = row.id;
  Mat out = (x.value().array().rowwise() * row.value().row(0).array()).matrix();
  return t->Push(std::move(out), {x, row},
                 [t, ix, ir](DF_GRAD_ARGS) {
                   if (pg[0]) {
                     pg[0]->array() += g.array().rowwise() * t->value(ir).row(0).array();
                   }
                   if (pg[1]) *pg[1] += g.cwiseProduct(t->value(ix)).colwise().sum();
                 },
                 "mul_row");
}

Var Scale(Var x, double s) {
  return x.tape->Push(s * x.value(), {x},
                      [s](DF_GRAD_ARGS) {
                        if (pg[0]) *pg[0] += s * g;
                      },
                      "scale");
}

Var AddScalar(Var x, double s) {
  Mat out = (x.value().array() + s).matrix();
  return x.tape->Push(std::move(out), {x},
                      [](DF_GRAD_ARGS) { Accumulate(pg[0], g); }, "add_scalar");
}

Var Sigmoid(Var x) {
  Mat out = (1.0 + (-x.value().array()).exp()).inverse().matrix();
  return x.tape->Push(std::move(out), {x},
                      [](DF_GRAD_ARGS_OUT) {
                        if (pg[0]) pg[0]->array() += g.array() * y.array() * (1.0 - y.array());
                      },
                      "sigmoid");
}

Var Silu(Var x) {
  Tape* t = x.tape;
  const int ix = x.id;
  const Mat s = (1.0 + (-x.value().array()).exp()).inverse().matrix();
  Mat out = x.value().cwiseProduct(s);
  return t->Push(std::move(out), {x},
                 [t, ix](DF_GRAD_ARGS) {
                   if (!pg[0]) return;
                   const auto xa = t->value(ix).array();
                   const Eigen::ArrayXXd sig = (1.0 + (-xa).exp()).inverse();
                   pg[0]->array() += g.array() * sig * (1.0 + xa * (1.0 - sig));
                 },
                 "silu");
}

Var Tanh(Var x) {
  Mat out = x.value().array().tanh().matrix();
  return x.tape->Push(std::move(out), {x},
                      [](DF_GRAD_ARGS_OUT) {
                        if (pg[0]) pg[0]->array() += g.array() * (1.0 - y.array().square());
                      },
                      "tanh");
}

Var Square(Var x) {
  Tape* t = x.tape;
  const int ix = x.id;
  Mat out = x.value().array().square().matrix();
  return t->Push(std::move(out), {x},
                 [t, ix](DF_GRAD_ARGS) {
                   if (pg[0]) *pg[0] += 2.0 * g.cwiseProduct(t->value(ix));
                 },
                 "square");
}

Var Sum(Var x) {
  Mat out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape->Push(std::move(out), {x},
                      [](DF_GRAD_ARGS) {
                        if (pg[0]) pg[0]->array() += g(0, 0);
                      },
                      "sum");
}

Var Mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw std::invalid_argument("mean of empty " + Shape(x));
  Mat out(1, 1);
  out(0, 0) = x.value().sum() / n;
  return x.tape->Push(std::move(out), {x},
                      [n](DF_GRAD_ARGS) {
                        if (pg[0]) pg[0]->array() += g(0, 0) / n;
                      },
                      "mean");
}

Var Reshape(Var x, int rows, int cols) {
  if (static_cast<Eigen::Index>(rows) * cols != x.value().size()) {
    throw std::invalid_argument("reshape: " + Shape(x) + " cannot become " +
                                std::to_string(rows) + "x" + std::to_string(cols));
  }
  const int r0 = static_cast<int>(x.rows()), c0 = static_cast<int>(x.cols());
  Mat out = Eigen::Map<const Mat>(x.value().data(), rows, cols);
  return x.tape->Push(std::move(out), {x},
                      [r0, c0](DF_GRAD_ARGS) {
                        if (pg[0]) *pg[0] += Eigen::Map<const Mat>(g.data(), r0, c0);
                      },
                      "reshape");
}

Var ConcatRows(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Eigen::Index rows = 0;
  for (const Var& x : xs) {
    CheckSameTape("concat_rows", xs[0], x);
    if (x.cols() != xs[0].cols()) ShapeError("concat_rows", xs[0], x);
    rows += x.rows();
  }
  Mat out(rows, xs[0].cols());
  std::vector<Eigen::Index> offsets;
  Eigen::Index r = 0;
  for (const Var& x : xs) {
    offsets.push_back(r);
    out.middleRows(r, x.rows()) = x.value();
    r += x.rows();
  }
  return xs[0].tape->Push(std::move(out), xs,
                          [offsets](DF_GRAD_ARGS) {
                            for (size_t i = 0; i < pg.size(); ++i) {
                              if (pg[i]) *pg[i] += g.middleRows(offsets[i], pg[i]->rows());
                            }
                          },
                          "concat_rows");
}

Var ConcatCols(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Eigen::Index cols = 0;
  for (const Var& x : xs) {
    CheckSameTape("concat_cols", xs[0], x);
    if (x.rows() != xs[0].rows()) ShapeError("concat_cols", xs[0], x);
    cols += x.cols();
  }
  Mat out(xs[0].rows(), cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index c = 0;
  for (const Var& x : xs) {
    offsets.push_back(c);
    out.middleCols(c, x.cols()) = x.value();
    c += x.cols();
  }
  return xs[0].tape->Push(std::move(out), xs,
                          [offsets](DF_GRAD_ARGS) {
                            for (size_t i = 0; i < pg.size(); ++i) {
                              if (pg[i]) *pg[i] += g.middleCols(offsets[i], pg[i]->cols());
                            }
                          },
                          "concat_cols");
}

Var SliceRows(Var x, int start, int count) {
  if (start < 0 || count < 0 || start + count > x.rows()) {
    throw std::invalid_argument("slice_rows: range out of bounds for " + Shape(x));
  }
  return x.tape->Push(x.value().middleRows(start, count), {x},
                      [start, count](DF_GRAD_ARGS) {
                        if (pg[0]) pg[0]->middleRows(start, count) += g;
                      },
                      "slice_rows");
}

Var SliceCols(Var x, int start, int count) {
  if (start < 0 || count < 0 || start + count > x.cols()) {
    throw std::invalid_argument("slice_cols: range out of bounds for " + Shape(x));
  }
  return x.tape->Push(x.value().middleCols(start, count), {x},
                      [start, count](DF_GRAD_ARGS) {
                        if (pg[0]) pg[0]->middleCols(start, count) += g;
                      },
                      "slice_cols");
}

namespace {

void CheckMask(const char* op, const Var& x, const BoolMat* mask) {
  if (mask && (mask->rows() != x.rows() || mask->cols() != x.cols())) {
    throw std::invalid_argument(std::string(op) + ": mask shape does not match " + Shape(x));
  }
}

// Row-wise masked softmax in place; fully masked rows become zeros.
void SoftmaxRows(Mat& z, const BoolMat* mask) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      if (!mask || (*mask)(i, j)) mx = std::max(mx, z(i, j));
    }
    if (!std::isfinite(mx)) {
      z.row(i).setZero();
      continue;
    }
    double total = 0.0;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const double e = (!mask || (*mask)(i, j)) ? std::exp(z(i, j) - mx) : 0.0;
      z(i, j) = e;
      total += e;
    }
    z.row(i) /= total;
  }
}

}  // namespace

Var Softmax(Var x, const BoolMat* mask) {
  CheckMask("softmax", x, mask);
  Mat out = x.value();
  SoftmaxRows(out, mask);
  return x.tape->Push(std::move(out), {x},
                      [](DF_GRAD_ARGS_OUT) {
                        if (!pg[0]) return;
                        const Eigen::VectorXd dot = (g.cwiseProduct(y)).rowwise().sum();
                        pg[0]->array() += y.array() * (g.colwise() - dot).array();
                      },
                      "softmax");
}

Var LogSoftmax(Var x, const BoolMat* mask) {
  CheckMask("log_softmax", x, mask);
  Mat p = x.value();
  SoftmaxRows(p, mask);
  Mat out = Mat::Constant(p.rows(), p.cols(), -std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      if (!mask || (*mask)(i, j)) mx = std::max(mx, x.value()(i, j));
    }
    if (!std::isfinite(mx)) continue;
    double total = 0.0;
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      if (!mask || (*mask)(i, j)) total += std::exp(x.value()(i, j) - mx);
    }
    const double lse = mx + std::log(total);
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      if (!mask || (*mask)(i, j)) out(i, j) = x.value()(i, j) - lse;
    }
  }
  return x.tape->Push(std::move(out), {x},
                      [p, m = mask ? *mask : BoolMat()](DF_GRAD_ARGS) {
                        if (!pg[0]) return;
                        Mat gm = g;
                        if (m.size() > 0) gm = m.select(gm, 0.0);
                        const Eigen::VectorXd total = gm.rowwise().sum();
                        *pg[0] += gm - (p.array().colwise() * total.array()).matrix();
                      },
                      "log_softmax");
}

Var PickRows(Var x, const std::vector<int>& index) {
  if (static_cast<Eigen::Index>(index.size()) != x.rows()) {
    throw std::invalid_argument("pick_rows: index count does not match " + Shape(x));
  }
  Mat out(x.rows(), 1);
  for (size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= x.cols()) {
      throw std::invalid_argument("pick_rows: index out of range for " + Shape(x));
    }
    out(i, 0) = x.value()(i, index[i]);
  }
  return x.tape->Push(std::move(out), {x},
                      [index](DF_GRAD_ARGS) {
                        if (!pg[0]) return;
                        for (size_t i = 0; i < index.size(); ++i) (*pg[0])(i, index[i]) += g(i, 0);
                      },
                      "pick_rows");
}

Var EmbeddingLookup(Var table, const std::vector<int>& ids) {
  Mat out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw std::invalid_argument("embedding_lookup: id " + std::to_string(ids[i]) +
                                  " out of range for " + Shape(table));
    }
    out.row(i) = table.value().row(ids[i]);
  }
  return table.tape->Push(std::move(out), {table},
                          [ids](DF_GRAD_ARGS) {
                            if (!pg[0]) return;
                            for (size_t i = 0; i < ids.size(); ++i) pg[0]->row(ids[i]) += g.row(i);
                          },
                          "embedding_lookup");
}

Var LayerNorm(Var x, Var gamma, Var beta, double eps) {
  CheckSameTape("layer_norm", x, gamma);
  CheckSameTape("layer_norm", x, beta);
  if (gamma.rows() != 1 || gamma.cols() != x.cols()) ShapeError("layer_norm", x, gamma);
  if (beta.rows() != 1 || beta.cols() != x.cols()) ShapeError("layer_norm", x, beta);
  const Mat& xv = x.value();
  const Eigen::Index n = xv.cols();
  Mat xhat(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mu) * inv_std(i);
  }
  Mat out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  Tape* t = x.tape;
  const int ig = gamma.id;
  return t->Push(std::move(out), {x, gamma, beta},
                 [t, ig, xhat, inv_std, n](DF_GRAD_ARGS) {
                   if (pg[1]) *pg[1] += g.cwiseProduct(xhat).colwise().sum();
                   if (pg[2]) *pg[2] += g.colwise().sum();
                   if (!pg[0]) return;
                   const Mat gx = (g.array().rowwise() * t->value(ig).row(0).array()).matrix();
                   const Eigen::VectorXd mean_g = gx.rowwise().mean();
                   const Eigen::VectorXd mean_gx = gx.cwiseProduct(xhat).rowwise().mean();
                   for (Eigen::Index i = 0; i < gx.rows(); ++i) {
                     pg[0]->row(i).array() +=
                         inv_std(i) * (gx.row(i).array() - mean_g(i) -
                                       xhat.row(i).array() * mean_gx(i));
                   }
                   (void)n;
                 },
                 "layer_norm");
}

Var Affine(Var x, Var w, Var b) { return AddRow(MatMul(x, w), b); }

Var Attention(Var q, Var k, Var v, int heads, const BoolMat* mask) {
  CheckSameTape("attention", q, k);
  CheckSameTape("attention", q, v);
  if (q.cols() != k.cols()) ShapeError("attention", q, k);
  if (k.rows() != v.rows() || v.cols() != q.cols()) ShapeError("attention", k, v);
  if (heads <= 0 || q.cols() % heads != 0) {
    throw std::invalid_argument("attention: width " + std::to_string(q.cols()) +
                                " not divisible by " + std::to_string(heads) + " heads");
  }
  if (mask && (mask->rows() != q.rows() || mask->cols() != k.rows())) {
    throw std::invalid_argument("attention: mask shape does not match " + Shape(q) +
                                " x " + Shape(k));
  }
  const Eigen::Index dh = q.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Mat& qv = q.value();
  const Mat& kv = k.value();
  const Mat& vv = v.value();
  Mat out(qv.rows(), qv.cols());
  std::vector<Mat> probs(heads);
  for (int h = 0; h < heads; ++h) {
    Mat s;
    s.noalias() = scale * qv.middleCols(h * dh, dh) * kv.middleCols(h * dh, dh).transpose();
    SoftmaxRows(s, mask);
    out.middleCols(h * dh, dh).noalias() = s * vv.middleCols(h * dh, dh);
    probs[h] = std::move(s);
  }
  Tape* t = q.tape;
  const int iq = q.id, ik = k.id, iv = v.id;
  const bool record = t->recording();
  return t->Push(std::move(out), {q, k, v},
                 [t, iq, ik, iv, heads, dh, scale,
                  probs = record ? std::move(probs) : std::vector<Mat>{}](DF_GRAD_ARGS) {
                   const Mat& qv = t->value(iq);
                   const Mat& kv = t->value(ik);
                   const Mat& vv = t->value(iv);
                   for (int h = 0; h < heads; ++h) {
                     const Mat& p = probs[h];
                     const auto go = g.middleCols(h * dh, dh);
                     if (pg[2]) pg[2]->middleCols(h * dh, dh).noalias() += p.transpose() * go;
                     if (!pg[0] && !pg[1]) continue;
                     Mat dp;
                     dp.noalias() = go * vv.middleCols(h * dh, dh).transpose();
                     const Eigen::VectorXd dot = dp.cwiseProduct(p).rowwise().sum();
                     const Mat ds = scale * (p.array() * (dp.colwise() - dot).array()).matrix();
                     if (pg[0]) pg[0]->middleCols(h * dh, dh).noalias() += ds * kv.middleCols(h * dh, dh);
                     if (pg[1]) pg[1]->middleCols(h * dh, dh).noalias() += ds.transpose() * qv.middleCols(h * dh, dh);
                   }
                 },
                 "attention");
}

Var GatedMlp(Var x, Var w_gate, Var w_up, Var w_down) {
  return MatMul(Mul(Silu(MatMul(x, w_gate)), MatMul(x, w_up)), w_down);
}

#undef DF_GRAD_ARGS
#undef DF_GRAD_ARGS_OUT

// ---------------------------------------------------------------------------
// Optimization.

void AdamStep(ParamStore& params, const Gradients& grads, AdamState& state,
              const AdamConfig& config) {
  for (const auto& [name, g] : grads) {
    Mat& p = params.Mutable(name);
    if (g.rows() != p.rows() || g.cols() != p.cols()) {
      throw std::invalid_argument("adam: gradient shape mismatch for '" + name + "'");
    }
    Mat& m = state.m[name];
    Mat& v = state.v[name];
    if (m.size() == 0) m = Mat::Zero(p.rows(), p.cols());
    if (v.size() == 0) v = Mat::Zero(p.rows(), p.cols());
    const int64_t step = ++state.steps[name];
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
    p.array() -= config.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config.eps);
  }
}

double GradNorm(const Gradients& grads) {
  double total = 0.0;
  for (const auto& [name, g] : grads) total += g.squaredNorm();
  return std::sqrt(total);
}

void ClipGradNorm(Gradients& grads, double max_norm) {
  const double norm = GradNorm(grads);
  if (norm > max_norm && norm > 0.0) {
    for (auto& [name, g] : grads) g *= max_norm / norm;
  }
}

void AddGradients(Gradients& into, const Gradients& from, double scale) {
  for (const auto& [name, g] : from) {
    auto it = into.find(name);
    if (it == into.end()) {
      into.emplace(name, scale * g);
    } else {
      it->second += scale * g;
    }
  }
}

GradCheckResult GradCheck(ParamStore& params, const std::vector<std::string>& names,
                          const LossFn& loss, double h, double tol,
                          int entries_per_param, uint64_t seed, double floor) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: h must be positive");
  Gradients analytic;
  {
    Tape tape;
    Var out = loss(tape, params);
    analytic = tape.Backward(out);
  }
  auto eval = [&]() {
    Tape tape(false);
    return loss(tape, params).value()(0, 0);
  };
  GradCheckResult result;
  Rng rng(seed);
  for (const std::string& name : names) {
    Mat& p = params.Mutable(name);
    const Mat zero = Mat::Zero(p.rows(), p.cols());
    auto it = analytic.find(name);
    const Mat& a = it == analytic.end() ? zero : it->second;
    std::vector<Eigen::Index> entries;
    if (entries_per_param <= 0 || entries_per_param >= p.size()) {
      for (Eigen::Index i = 0; i < p.size(); ++i) entries.push_back(i);
    } else {
      for (int i = 0; i < entries_per_param; ++i) {
        entries.push_back(static_cast<Eigen::Index>(rng.Index(static_cast<uint64_t>(p.size()))));
      }
    }
    for (Eigen::Index e : entries) {
      const double orig = p.data()[e];
      p.data()[e] = orig + h;
      const double fp = eval();
      p.data()[e] = orig - h;
      const double fm = eval();
      p.data()[e] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double an = a.data()[e];
      const double rel =
          std::abs(an - numeric) / std::max({std::abs(an), std::abs(numeric), floor});
      ++result.checked;
      if (!(rel <= result.worst_relative_error)) {
        result.worst_relative_error = rel;
        result.worst_param = name;
      }
    }
  }
  result.pass = result.worst_relative_error < tol;
  return result;
}

}  // namespace driveflow
