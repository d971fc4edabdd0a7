#include "tfgu/autograd.hpp"

#include <cmath>
#include <numbers>

namespace tfgu::ad {

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::variable(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push(Matrix value, std::span<const Var> parents, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& p : parents) {
    n.parents.push_back(p.id());
    n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Tape::grad(int id) const {
  const Node& n = nodes_[id];
  if (n.grad.size() == 0) {
    // unreached nodes report a zero gradient of matching shape
    const_cast<Node&>(n).grad = Matrix::Zero(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

void Tape::accumulate(int id, const Matrix& contribution) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = contribution;
  } else {
    n.grad += contribution;
  }
}

void Tape::backward(Var root) {
  if (root.rows() != 1 || root.cols() != 1) throw ShapeError("backward root must be a 1x1 scalar");
  for (Node& n : nodes_) {
    n.grad.resize(0, 0);
    n.reached = false;
  }
  nodes_[root.id()].reached = true;
  for (int i = root.id(); i >= 0; --i) {
    if (!nodes_[i].reached) continue;
    for (int p : nodes_[i].parents) nodes_[p].reached = true;
  }
  if (!nodes_[root.id()].requires_grad) return;
  nodes_[root.id()].grad = Matrix::Ones(1, 1);
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.reached || !n.backward || n.grad.size() == 0) continue;
    // copy: accumulate() may touch other nodes but never this one
    const Matrix g = n.grad;
    n.backward(*this, g);
  }
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  const int ia = a.id(), ib = b.id();
  Var parents[] = {a, b};
  return a.tape()->push(a.value() * b.value(), parents, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g * t.value(ib).transpose());
    t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var matmul_bt(Var a, Var b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_bt: inner dimensions differ");
  const int ia = a.id(), ib = b.id();
  Var parents[] = {a, b};
  return a.tape()->push(a.value() * b.value().transpose(), parents,
                        [ia, ib](Tape& t, const Matrix& g) {
                          t.accumulate(ia, g * t.value(ib));
                          t.accumulate(ib, g.transpose() * t.value(ia));
                        });
}

Var transpose(Var a) {
  const int ia = a.id();
  Var parents[] = {a};
  return a.tape()->push(a.value().transpose(), parents,
                        [ia](Tape& t, const Matrix& g) { t.accumulate(ia, g.transpose()); });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  const int ia = a.id(), ib = b.id();
  Var parents[] = {a, b};
  return a.tape()->push(a.value() + b.value(), parents, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  const int ia = a.id(), ib = b.id();
  Var parents[] = {a, b};
  return a.tape()->push(a.value() - b.value(), parents, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: bias shape mismatch");
  const int ia = a.id(), ir = row.id();
  Var parents[] = {a, row};
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape()->push(std::move(out), parents, [ia, ir](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ir, g.colwise().sum());
  });
}

Var hadamard(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "hadamard");
  const int ia = a.id(), ib = b.id();
  Var parents[] = {a, b};
  return a.tape()->push(a.value().cwiseProduct(b.value()), parents,
                        [ia, ib](Tape& t, const Matrix& g) {
                          t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                          t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                        });
}

Var scale(Var a, double s) {
  const int ia = a.id();
  Var parents[] = {a};
  return a.tape()->push(a.value() * s, parents,
                        [ia, s](Tape& t, const Matrix& g) { t.accumulate(ia, g * s); });
}

Var add_scalar(Var a, double s) {
  const int ia = a.id();
  Var parents[] = {a};
  return a.tape()->push((a.value().array() + s).matrix(), parents,
                        [ia](Tape& t, const Matrix& g) { t.accumulate(ia, g); });
}

Var sum(Var a) {
  const int ia = a.id();
  const auto r = a.rows(), c = a.cols();
  Var parents[] = {a};
  return a.tape()->push(Matrix::Constant(1, 1, a.value().sum()), parents,
                        [ia, r, c](Tape& t, const Matrix& g) {
                          t.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
                        });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  const int ia = a.id();
  Var parents[] = {a};
  Matrix saved = y;
  return a.tape()->push(std::move(y), parents, [ia, saved = std::move(saved)](Tape& t, const Matrix& g) {
    Matrix dx = saved.cwiseProduct(g);
    const Eigen::VectorXd dots = dx.rowwise().sum();
    dx -= saved.cwiseProduct(dots.replicate(1, saved.cols()));
    t.accumulate(ia, dx);
  });
}

Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  const Matrix& v = x.value();
  const auto n = v.rows(), d = v.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
    throw ShapeError("layer_norm: affine shape mismatch");
  }
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = v.row(i).mean();
    const double var = (v.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (v.row(i).array() - mu) * inv_std(i);
  }
  Matrix y = xhat.array().rowwise() * gamma.value().row(0).array();
  y.rowwise() += beta.value().row(0);
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  Var parents[] = {x, gamma, beta};
  return x.tape()->push(
      std::move(y), parents,
      [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Matrix& g) {
        const Matrix& gam = t.value(ig);
        t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
        t.accumulate(ib, g.colwise().sum());
        const Matrix dxhat = g.array().rowwise() * gam.row(0).array();
        const double d = static_cast<double>(dxhat.cols());
        Matrix dx(dxhat.rows(), dxhat.cols());
        for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
          const double m1 = dxhat.row(i).sum() / d;
          const double m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).sum() / d;
          dx.row(i) = inv_std(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
        }
        t.accumulate(ix, dx);
      });
}

Var gelu(Var a) {
  const Matrix& x = a.value();
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Matrix y = x.unaryExpr([&](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); });
  const int ia = a.id();
  Var parents[] = {a};
  return a.tape()->push(std::move(y), parents, [ia, inv_sqrt2](Tape& t, const Matrix& g) {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    const Matrix d = t.value(ia).unaryExpr([&](double v) {
      return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
    });
    t.accumulate(ia, g.cwiseProduct(d));
  });
}

Var log(Var a) {
  const int ia = a.id();
  Var parents[] = {a};
  return a.tape()->push(a.value().array().log().matrix(), parents,
                        [ia](Tape& t, const Matrix& g) {
                          t.accumulate(ia, g.cwiseQuotient(t.value(ia)));
                        });
}

Var clamp(Var a, double lo, double hi) {
  const int ia = a.id();
  Var parents[] = {a};
  return a.tape()->push(a.value().cwiseMax(lo).cwiseMin(hi), parents,
                        [ia, lo, hi](Tape& t, const Matrix& g) {
                          const Matrix& x = t.value(ia);
                          Matrix m = g;
                          for (Eigen::Index i = 0; i < x.size(); ++i) {
                            if (x(i) < lo || x(i) > hi) m(i) = 0.0;
                          }
                          t.accumulate(ia, m);
                        });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows: out of range");
  const int ia = a.id();
  const auto r = a.rows(), c = a.cols();
  Var parents[] = {a};
  return a.tape()->push(a.value().middleRows(start, count), parents,
                        [ia, r, c, start, count](Tape& t, const Matrix& g) {
                          Matrix full = Matrix::Zero(r, c);
                          full.middleRows(start, count) = g;
                          t.accumulate(ia, full);
                        });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("slice_cols: out of range");
  const int ia = a.id();
  const auto r = a.rows(), c = a.cols();
  Var parents[] = {a};
  return a.tape()->push(a.value().middleCols(start, count), parents,
                        [ia, r, c, start, count](Tape& t, const Matrix& g) {
                          Matrix full = Matrix::Zero(r, c);
                          full.middleCols(start, count) = g;
                          t.accumulate(ia, full);
                        });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const auto c = parts[0].cols();
  Eigen::Index total = 0;
  for (const Var& p : parts) {
    if (p.cols() != c) throw ShapeError("concat_rows: column mismatch");
    total += p.rows();
  }
  Matrix out(total, c);
  std::vector<std::pair<int, Eigen::Index>> pieces;
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    pieces.emplace_back(p.id(), offset);
    offset += p.rows();
  }
  return parts[0].tape()->push(std::move(out), parts, [pieces](Tape& t, const Matrix& g) {
    for (const auto& [id, off] : pieces) t.accumulate(id, g.middleRows(off, t.value(id).rows()));
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const auto r = parts[0].rows();
  Eigen::Index total = 0;
  for (const Var& p : parts) {
    if (p.rows() != r) throw ShapeError("concat_cols: row mismatch");
    total += p.cols();
  }
  Matrix out(r, total);
  std::vector<std::pair<int, Eigen::Index>> pieces;
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    pieces.emplace_back(p.id(), offset);
    offset += p.cols();
  }
  return parts[0].tape()->push(std::move(out), parts, [pieces](Tape& t, const Matrix& g) {
    for (const auto& [id, off] : pieces) t.accumulate(id, g.middleCols(off, t.value(id).cols()));
  });
}

Var add_block(Var a, Var block, Eigen::Index row, Eigen::Index col) {
  const auto br = block.rows(), bc = block.cols();
  if (row < 0 || col < 0 || row + br > a.rows() || col + bc > a.cols()) {
    throw ShapeError("add_block: block out of range");
  }
  Matrix out = a.value();
  out.block(row, col, br, bc) += block.value();
  const int ia = a.id(), ib = block.id();
  Var parents[] = {a, block};
  return a.tape()->push(std::move(out), parents,
                        [ia, ib, row, col, br, bc](Tape& t, const Matrix& g) {
                          t.accumulate(ia, g);
                          t.accumulate(ib, g.block(row, col, br, bc));
                        });
}

Var pick(Var a, std::span<const int> index) {
  if (static_cast<Eigen::Index>(index.size()) != a.rows()) throw ShapeError("pick: index length mismatch");
  Matrix out(a.rows(), 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (index[i] < 0 || index[i] >= a.cols()) throw ShapeError("pick: index out of range");
    out(i, 0) = a.value()(i, index[i]);
  }
  const int ia = a.id();
  const auto r = a.rows(), c = a.cols();
  std::vector<int> idx(index.begin(), index.end());
  Var parents[] = {a};
  return a.tape()->push(std::move(out), parents, [ia, r, c, idx](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(r, c);
    for (Eigen::Index i = 0; i < r; ++i) full(i, idx[i]) += g(i, 0);
    t.accumulate(ia, full);
  });
}

Var top2_gap_rows(Var a) {
  const Matrix& x = a.value();
  if (x.cols() < 2) throw ShapeError("top2_gap_rows: need at least two columns");
  Matrix out(x.rows(), 1);
  std::vector<std::pair<int, int>> idx(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    int first = 0;
    for (int k = 1; k < x.cols(); ++k) {
      if (x(i, k) > x(i, first)) first = k;
    }
    int second = first == 0 ? 1 : 0;
    for (int k = 0; k < x.cols(); ++k) {
      if (k != first && x(i, k) > x(i, second)) second = k;
    }
    idx[i] = {first, second};
    out(i, 0) = x(i, first) - x(i, second);
  }
  const int ia = a.id();
  const auto r = x.rows(), c = x.cols();
  Var parents[] = {a};
  return a.tape()->push(std::move(out), parents, [ia, r, c, idx](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
      full(i, idx[i].first) += g(i, 0);
      full(i, idx[i].second) -= g(i, 0);
    }
    t.accumulate(ia, full);
  });
}

}  // namespace tfgu::ad
