// Copyright 2026 The capmil Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Tape-based reverse-mode automatic differentiation over small dense
// row-major matrices. Every value on the tape is rank-2; vectors are 1xC rows.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <string>
#include <vector>

#include "capmil/errors.hpp"

namespace capmil {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = MatrixX<double>;

// true = valid instance, false = padding.
using Mask = std::vector<bool>;

inline Mask full_mask(std::size_t n) { return Mask(n, true); }

inline std::size_t count_valid(const Mask& mask) {
  std::size_t n = 0;
  for (bool b : mask) n += b ? 1 : 0;
  return n;
}

namespace ad {

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  std::size_t id = 0;

  const MatrixX<Scalar>& value() const { return tape->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Scalar item() const { return value()(0, 0); }
};

template <typename Scalar>
class Tape {
 public:
  using Mat = MatrixX<Scalar>;
  // (tape, id of the node being differentiated, upstream gradient)
  using Rule = std::function<void(Tape&, std::size_t, const Mat&)>;

  Tape() { nodes_.reserve(128); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Mat value) { return leaf("constant", std::move(value), nullptr, false); }
  Var<Scalar> variable(Mat value) { return leaf("variable", std::move(value), nullptr, true); }

  // Leaf that reads `external` in place. The referenced matrix must outlive
  // the tape and must not change while the tape is in use.
  Var<Scalar> parameter(const Mat& external) { return leaf("parameter", Mat(), &external, true); }

  Var<Scalar> record(const char* op, Mat value, std::initializer_list<Var<Scalar>> parents,
                     Rule rule) {
    bool needs_grad = false;
    for (const auto& p : parents) needs_grad = needs_grad || nodes_[p.id].requires_grad;
    check_finite(op, value);
    Node node;
    node.op = op;
    node.value = std::move(value);
    node.requires_grad = needs_grad;
    if (needs_grad) node.rule = std::move(rule);
    nodes_.push_back(std::move(node));
    return Var<Scalar>{this, nodes_.size() - 1};
  }

  const Mat& value(Var<Scalar> v) const { return value(v.id); }
  const Mat& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(Var<Scalar> v) const { return nodes_[v.id].requires_grad; }

  // Gradient of the last backward root with respect to v; zeros when v was
  // not reached.
  const Mat& grad(Var<Scalar> v) {
    Node& n = nodes_[v.id];
    if (!n.has_grad) {
      const Mat& val = value(v.id);
      n.grad = Mat::Zero(val.rows(), val.cols());
      n.has_grad = true;
    }
    return n.grad;
  }

  void accumulate(std::size_t id, const Mat& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  void backward(Var<Scalar> root) {
    const Mat& rv = value(root.id);
    if (rv.rows() != 1 || rv.cols() != 1) {
      throw ContractError("backward requires a scalar root, got " + std::to_string(rv.rows()) +
                          "x" + std::to_string(rv.cols()));
    }
    for (auto& n : nodes_) {
      n.has_grad = false;
      n.grad.resize(0, 0);
    }
    accumulate(root.id, Mat::Ones(1, 1));
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.rule) continue;
      n.rule(*this, i, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    const char* op = "";
    Mat value;
    const Mat* external = nullptr;
    Mat grad;
    bool has_grad = false;
    bool requires_grad = false;
    Rule rule;
  };

  Var<Scalar> leaf(const char* op, Mat value, const Mat* external, bool requires_grad) {
    Node node;
    node.op = op;
    node.value = std::move(value);
    node.external = external;
    node.requires_grad = requires_grad;
    check_finite(op, external ? *external : node.value);
    nodes_.push_back(std::move(node));
    return Var<Scalar>{this, nodes_.size() - 1};
  }

  static void check_finite(const char* op, const Mat& m) {
    if (!m.allFinite()) throw NumericError(std::string("non-finite value produced by ") + op);
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <typename Scalar>
void require_same_shape(const char* op, Var<Scalar> a, Var<Scalar> b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
}

inline void require_mask(const char* op, const Mask& mask, Eigen::Index n) {
  if (static_cast<Eigen::Index>(mask.size()) != n) {
    throw DimensionError(std::string(op) + ": mask length " + std::to_string(mask.size()) +
                         " does not match " + std::to_string(n));
  }
  if (count_valid(mask) == 0) {
    throw DegenerateBagError(std::string(op) + ": every position is masked");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                         std::to_string(b.rows()) + " differ");
  }
  MatrixX<Scalar> out = a.value() * b.value();
  return a.tape->record("matmul", std::move(out), {a, b},
                        [a = a.id, b = b.id](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
                          if (t.requires_grad({&t, a})) t.accumulate(a, g * t.value(b).transpose());
                          if (t.requires_grad({&t, b})) t.accumulate(b, t.value(a).transpose() * g);
                        });
}

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> a) {
  MatrixX<Scalar> out = a.value().transpose();
  return a.tape->record("transpose", std::move(out), {a},
                        [a = a.id](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
                          t.accumulate(a, g.transpose());
                        });
}

// ---------------------------------------------------------------------------
// Element-wise arithmetic (operands must have identical shapes; see
// broadcast_rows / broadcast_cols)

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape("add", a, b);
  MatrixX<Scalar> out = a.value() + b.value();
  return a.tape->record("add", std::move(out), {a, b},
                        [a = a.id, b = b.id](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
                          t.accumulate(a, g);
                          t.accumulate(b, g);
                        });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape("sub", a, b);
  MatrixX<Scalar> out = a.value() - b.value();
  return a.tape->record("sub", std::move(out), {a, b},
                        [a = a.id, b = b.id](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
                          t.accumulate(a, g);
                          t.accumulate(b, -g);
                        });
}

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) { return add(a, b); }

template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) { return sub(a, b); }

template <typename Scalar>
Var<Scalar> cwise_product(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape("cwise_product", a, b);
  MatrixX<Scalar> out = a.value().cwiseProduct(b.value());
  return a.tape->record("cwise_product", std::move(out), {a, b},
                        [a = a.id, b = b.id](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
                          if (t.requires_grad({&t, a})) t.accumulate(a, g.cwiseProduct(t.value(b)));
                          if (t.requires_grad({&t, b})) t.accumulate(b, g.cwiseProduct(t.value(a)));
                        });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar s) {
  MatrixX<Scalar> out = a.value() * s;
  return a.tape->record("scale", std::move(out), {a},
                        [a = a.id, s](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
                          t.accumulate(a, g * s);
                        });
}

template <typename Scalar>
Var<Scalar> add_scalar(Var<Scalar> a, Scalar s) {
  MatrixX<Scalar> out = a.value().array() + s;
  return a.tape->record("add_scalar", std::move(out), {a},
                        [a = a.id](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
                          t.accumulate(a, g);
                        });
}

// ---------------------------------------------------------------------------
// Activations

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> a) {
  MatrixX<Scalar> out = a.value().unaryExpr([](Scalar x) {
    return x >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-x)) : std::exp(x) / (Scalar(1) + std::exp(x));
  });
  return a.tape->record("sigmoid", std::move(out), {a},
                        [a = a.id](Tape<Scalar>& t, std::size_t self, const MatrixX<Scalar>& g) {
                          const auto& y = t.value(self);
                          t.accumulate(a, g.cwiseProduct(y.cwiseProduct((Scalar(1) - y.array()).matrix())));
                        });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> a) {
  MatrixX<Scalar> out = a.value().cwiseMax(Scalar(0));
  return a.tape->record("relu", std::move(out), {a},
                        [a = a.id](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
                          const auto& x = t.value(a);
                          t.accumulate(a, (x.array() > Scalar(0)).select(g, Scalar(0)).matrix());
                        });
}

template <typename Scalar>
Var<Scalar> tanh(Var<Scalar> a) {
  MatrixX<Scalar> out = a.value().array().tanh();
  return a.tape->record("tanh", std::move(out), {a},
                        [a = a.id](Tape<Scalar>& t, std::size_t self, const MatrixX<Scalar>& g) {
                          const auto& y = t.value(self);
                          t.accumulate(a, (g.array() * (Scalar(1) - y.array().square())).matrix());
                        });
}

template <typename Scalar>
Var<Scalar> abs(Var<Scalar> a) {
  MatrixX<Scalar> out = a.value().cwiseAbs();
  return a.tape->record("abs", std::move(out), {a},
                        [a = a.id](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
                          const auto& x = t.value(a);
                          t.accumulate(a, (g.array() * x.array().sign()).matrix());
                        });
}

// Gradient is passed where lo <= x <= hi and blocked outside.
template <typename Scalar>
Var<Scalar> clamp(Var<Scalar> a, Scalar lo, Scalar hi) {
  MatrixX<Scalar> out = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.tape->record("clamp", std::move(out), {a},
                        [a = a.id, lo, hi](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
                          const auto& x = t.value(a);
                          t.accumulate(a, ((x.array() >= lo) && (x.array() <= hi)).select(g, Scalar(0)).matrix());
                        });
}

// ---------------------------------------------------------------------------
// Shape manipulation

// 1xC -> NxC
template <typename Scalar>
Var<Scalar> broadcast_rows(Var<Scalar> row, Eigen::Index n) {
  if (row.rows() != 1) throw DimensionError("broadcast_rows: expected a single row");
  MatrixX<Scalar> out = row.value().replicate(n, 1);
  return row.tape->record("broadcast_rows", std::move(out), {row},
                          [a = row.id](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
                            t.accumulate(a, g.colwise().sum());
                          });
}

// Nx1 -> NxC
template <typename Scalar>
Var<Scalar> broadcast_cols(Var<Scalar> col, Eigen::Index c) {
  if (col.cols() != 1) throw DimensionError("broadcast_cols: expected a single column");
  MatrixX<Scalar> out = col.value().replicate(1, c);
  return col.tape->record("broadcast_cols", std::move(out), {col},
                          [a = col.id](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
                            t.accumulate(a, g.rowwise().sum());
                          });
}

template <typename Scalar>
Var<Scalar> slice_cols(Var<Scalar> a, Eigen::Index start, Eigen::Index width) {
  if (start < 0 || width < 0 || start + width > a.cols()) throw DimensionError("slice_cols: out of range");
  MatrixX<Scalar> out = a.value().middleCols(start, width);
  return a.tape->record("slice_cols", std::move(out), {a},
                        [a = a.id, start, width](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
                          const auto& x = t.value(a);
                          MatrixX<Scalar> full = MatrixX<Scalar>::Zero(x.rows(), x.cols());
                          full.middleCols(start, width) = g;
                          t.accumulate(a, full);
                        });
}

template <typename Scalar>
Var<Scalar> slice_rows(Var<Scalar> a, Eigen::Index start, Eigen::Index height) {
  if (start < 0 || height < 0 || start + height > a.rows()) throw DimensionError("slice_rows: out of range");
  MatrixX<Scalar> out = a.value().middleRows(start, height);
  return a.tape->record("slice_rows", std::move(out), {a},
                        [a = a.id, start, height](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
                          const auto& x = t.value(a);
                          MatrixX<Scalar> full = MatrixX<Scalar>::Zero(x.rows(), x.cols());
                          full.middleRows(start, height) = g;
                          t.accumulate(a, full);
                        });
}

template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Eigen::Index rows = parts.front().rows(), cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p.cols();
  }
  if (parts.size() == 1) return parts.front();
  MatrixX<Scalar> out(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> widths;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
    ids.push_back(p.id);
    widths.push_back(p.cols());
  }
  Tape<Scalar>& tape = *parts.front().tape;
  // record() derives requires_grad from its parent list; any part that
  // needs a gradient stands in for the whole set.
  auto rule = [ids, widths](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      t.accumulate(ids[i], g.middleCols(off, widths[i]));
      off += widths[i];
    }
  };
  Var<Scalar> anchor = parts.front();
  for (const auto& p : parts)
    if (tape.requires_grad(p)) anchor = p;
  return tape.record("concat_cols", std::move(out), {anchor}, std::move(rule));
}

template <typename Scalar>
Var<Scalar> concat_rows(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Eigen::Index cols = parts.front().cols(), rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw DimensionError("concat_rows: column counts differ");
    rows += p.rows();
  }
  if (parts.size() == 1) return parts.front();
  MatrixX<Scalar> out(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> heights;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
    ids.push_back(p.id);
    heights.push_back(p.rows());
  }
  Tape<Scalar>& tape = *parts.front().tape;
  auto rule = [ids, heights](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      t.accumulate(ids[i], g.middleRows(off, heights[i]));
      off += heights[i];
    }
  };
  Var<Scalar> anchor = parts.front();
  for (const auto& p : parts)
    if (tape.requires_grad(p)) anchor = p;
  return tape.record("concat_rows", std::move(out), {anchor}, std::move(rule));
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a) {
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->record("sum", std::move(out), {a},
                        [a = a.id](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
                          const auto& x = t.value(a);
                          t.accumulate(a, MatrixX<Scalar>::Constant(x.rows(), x.cols(), g(0, 0)));
                        });
}

template <typename Scalar>
Var<Scalar> reduce_mean(Var<Scalar> a) {
  const Scalar n = static_cast<Scalar>(a.value().size());
  return scale(sum(a), Scalar(1) / n);
}

// Mean over the valid rows: NxC -> 1xC.
template <typename Scalar>
Var<Scalar> masked_mean_rows(Var<Scalar> x, const Mask& mask) {
  detail::require_mask("masked_mean_rows", mask, x.rows());
  const auto& v = x.value();
  const Scalar n = static_cast<Scalar>(count_valid(mask));
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(1, v.cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r)
    if (mask[r]) out += v.row(r);
  out /= n;
  return x.tape->record("masked_mean_rows", std::move(out), {x},
                        [a = x.id, mask, n](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
                          const auto& v = t.value(a);
                          MatrixX<Scalar> gx = MatrixX<Scalar>::Zero(v.rows(), v.cols());
                          for (Eigen::Index r = 0; r < v.rows(); ++r)
                            if (mask[r]) gx.row(r) = g / n;
                          t.accumulate(a, gx);
                        });
}

// Population variance per column over valid rows: NxC -> 1xC.
template <typename Scalar>
Var<Scalar> reduce_variance(Var<Scalar> x, const Mask& mask) {
  detail::require_mask("reduce_variance", mask, x.rows());
  const auto& v = x.value();
  const Scalar n = static_cast<Scalar>(count_valid(mask));
  MatrixX<Scalar> mean = MatrixX<Scalar>::Zero(1, v.cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r)
    if (mask[r]) mean += v.row(r);
  mean /= n;
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(1, v.cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r)
    if (mask[r]) out.array() += (v.row(r) - mean).array().square();
  out /= n;
  return x.tape->record("reduce_variance", std::move(out), {x},
                        [a = x.id, mask, n, mean](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
                          const auto& v = t.value(a);
                          MatrixX<Scalar> gx = MatrixX<Scalar>::Zero(v.rows(), v.cols());
                          for (Eigen::Index r = 0; r < v.rows(); ++r)
                            if (mask[r])
                              gx.row(r) = (Scalar(2) / n) * g.cwiseProduct(v.row(r) - mean);
                          t.accumulate(a, gx);
                        });
}

// Column-wise maximum over valid rows: NxC -> 1xC. The gradient goes to the
// first row attaining the maximum.
template <typename Scalar>
Var<Scalar> masked_max_rows(Var<Scalar> x, const Mask& mask) {
  detail::require_mask("masked_max_rows", mask, x.rows());
  const auto& v = x.value();
  MatrixX<Scalar> out(1, v.cols());
  std::vector<Eigen::Index> arg(v.cols(), -1);
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      if (!mask[r]) continue;
      if (arg[c] < 0 || v(r, c) > out(0, c)) {
        out(0, c) = v(r, c);
        arg[c] = r;
      }
    }
  }
  return x.tape->record("masked_max_rows", std::move(out), {x},
                        [a = x.id, arg](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
                          const auto& v = t.value(a);
                          MatrixX<Scalar> gx = MatrixX<Scalar>::Zero(v.rows(), v.cols());
                          for (Eigen::Index c = 0; c < v.cols(); ++c) gx(arg[c], c) = g(0, c);
                          t.accumulate(a, gx);
                        });
}

// Zeroes the rows of x at masked positions.
template <typename Scalar>
Var<Scalar> mask_rows(Var<Scalar> x, const Mask& mask) {
  detail::require_mask("mask_rows", mask, x.rows());
  MatrixX<Scalar> out = x.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r)
    if (!mask[r]) out.row(r).setZero();
  return x.tape->record("mask_rows", std::move(out), {x},
                        [a = x.id, mask](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
                          MatrixX<Scalar> gx = g;
                          for (Eigen::Index r = 0; r < gx.rows(); ++r)
                            if (!mask[r]) gx.row(r).setZero();
                          t.accumulate(a, gx);
                        });
}

// ---------------------------------------------------------------------------
// Normalization

// Row-wise softmax over the valid columns; masked columns are exactly 0.
template <typename Scalar>
Var<Scalar> masked_softmax(Var<Scalar> logits, const Mask& mask) {
  detail::require_mask("masked_softmax", mask, logits.cols());
  const auto& x = logits.value();
  MatrixX<Scalar> y = MatrixX<Scalar>::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Scalar m = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (mask[c]) m = std::max(m, x(r, c));
    Scalar z = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (!mask[c]) continue;
      y(r, c) = std::exp(x(r, c) - m);
      z += y(r, c);
    }
    y.row(r) /= z;
  }
  return logits.tape->record("masked_softmax", std::move(y), {logits},
                             [a = logits.id](Tape<Scalar>& t, std::size_t self, const MatrixX<Scalar>& g) {
                               const auto& y = t.value(self);
                               MatrixX<Scalar> gx(y.rows(), y.cols());
                               for (Eigen::Index r = 0; r < y.rows(); ++r) {
                                 const Scalar dot = g.row(r).dot(y.row(r));
                                 gx.row(r) = y.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
                               }
                               t.accumulate(a, gx);
                             });
}

// Per-row standardization with population variance, then scale/shift (1xD).
template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Var<Scalar> scale, Var<Scalar> shift, Scalar eps = Scalar(1e-5)) {
  const auto& v = x.value();
  const Eigen::Index d = v.cols();
  if (d < 1) throw DimensionError("layer_norm: empty feature axis");
  if (scale.rows() != 1 || scale.cols() != d || shift.rows() != 1 || shift.cols() != d)
    throw DimensionError("layer_norm: scale/shift must be 1x" + std::to_string(d));
  MatrixX<Scalar> xhat(v.rows(), d);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv(v.rows());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const Scalar mu = v.row(r).mean();
    const Scalar var = (v.row(r).array() - mu).square().mean();
    inv(r) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = (v.row(r).array() - mu) * inv(r);
  }
  MatrixX<Scalar> out = (xhat.array().rowwise() * scale.value().row(0).array()).rowwise() +
                        shift.value().row(0).array();
  return x.tape->record(
      "layer_norm", std::move(out), {x, scale, shift},
      [a = x.id, s = scale.id, b = shift.id, xhat = std::move(xhat), inv = std::move(inv)](
          Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
        t.accumulate(s, g.cwiseProduct(xhat).colwise().sum());
        t.accumulate(b, g.colwise().sum());
        if (!t.requires_grad({&t, a})) return;
        MatrixX<Scalar> gxhat = g.array().rowwise() * t.value(s).row(0).array();
        MatrixX<Scalar> gx(g.rows(), g.cols());
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          const Scalar m1 = gxhat.row(r).mean();
          const Scalar m2 = gxhat.row(r).dot(xhat.row(r)) / static_cast<Scalar>(g.cols());
          gx.row(r) = inv(r) * (gxhat.row(r).array() - m1 - xhat.row(r).array() * m2).matrix();
        }
        t.accumulate(a, gx);
      });
}

// ---------------------------------------------------------------------------
// Loss

// -(y ln p + (1-y) ln(1-p)) with p = sigmoid(z), written as softplus(m)
// with m = -z for y = 1 and m = z for y = 0. The form "max(z,0) + log1p(..)
// - y z" loses every digit of a small loss to cancellation when y = 1 and z
// is large.
template <typename Scalar>
Var<Scalar> bce_with_logits(Var<Scalar> z, int label) {
  if (z.rows() != 1 || z.cols() != 1) throw DimensionError("bce_with_logits: expected a scalar logit");
  if (label != 0 && label != 1) throw ContractError("bce_with_logits: label must be 0 or 1");
  const Scalar sign = label == 1 ? Scalar(-1) : Scalar(1);
  const Scalar m = sign * z.item();
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = std::max(m, Scalar(0)) + std::log1p(std::exp(-std::abs(m)));
  return z.tape->record("bce_with_logits", std::move(out), {z},
                        [a = z.id, sign](Tape<Scalar>& t, std::size_t, const MatrixX<Scalar>& g) {
                          const Scalar m = sign * t.value(a)(0, 0);
                          // sigmoid(m), without overflow on either side
                          const Scalar s = m >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-m))
                                                  : std::exp(m) / (Scalar(1) + std::exp(m));
                          MatrixX<Scalar> gx(1, 1);
                          gx(0, 0) = g(0, 0) * sign * s;
                          t.accumulate(a, gx);
                        });
}

}  // namespace ad
}  // namespace capmil
