#include "kvret/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace kvret::ag {

namespace {

[[noreturn]] void shape_error(std::string_view op, const std::string& detail) {
  throw DimensionError(std::string(op) + ": " + detail);
}

std::string shapes(const Tensor& a, const Tensor& b) {
  return a.shape_string() + " vs " + b.shape_string();
}

void same_tape(std::string_view op, Var a, Var b) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
    throw ContractError(std::string(op) + ": operands belong to different tapes");
  }
}

void require_rank1(std::string_view op, const Tensor& t) {
  if (t.rank() != 1) shape_error(op, "expected a rank-1 tensor, got " + t.shape_string());
}

void axpy(std::span<double> dst, std::span<const double> src, double alpha = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

// --------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(const Tensor& value) {
  Node n;
  n.op = "parameter";
  n.external = &value;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Tensor& Tape::value(std::size_t id) const {
  const auto& n = nodes_[id];
  return n.external ? *n.external : n.owned;
}

Var Tape::record(std::string_view op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  Node n;
  n.op = op;
  n.owned = std::move(value);
  for (auto in : inputs) {
    if (in >= nodes_.size()) throw ContractError(std::string(op) + ": input refers to a later node");
    n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  }
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Tensor& Tape::grad_slot(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor::zeros_like(value(id));
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ContractError("backward: loss node belongs to another tape");
  if (value(loss.id()).size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + value(loss.id()).shape_string());
  }
  for (auto& n : nodes_) n.grad = Tensor();
  grad_slot(loss.id()).fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

Tensor Tape::gradient(Var v) const {
  const auto& n = nodes_[v.id()];
  return n.grad.empty() ? Tensor::zeros_like(value(v.id())) : n.grad;
}

// --------------------------------------------------------------------------
// Ops

Var matmul(Var a, Var b) {
  same_tape("matmul", a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t m = A.rows(), k = A.cols();
  const std::size_t kb = B.rank() == 2 ? B.shape()[0] : B.size();
  const std::size_t n = B.rank() == 2 ? B.shape()[1] : 1;
  if (k != kb) shape_error("matmul", "inner dimensions differ: " + shapes(A, B));

  std::vector<std::size_t> out_shape;
  if (A.rank() == 2) out_shape.push_back(m);
  if (B.rank() == 2) out_shape.push_back(n);
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out(out_shape);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    const double* arow = A.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  const auto ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(out), {ia, ib},
                         [ia, ib, m, k, n](Tape& t, const Tensor& g) {
                           const Tensor& A = t.value(ia);
                           const Tensor& B = t.value(ib);
                           if (t.requires_grad(ia)) {
                             // dA = g · Bᵀ
                             Tensor& gA = t.grad_slot(ia);
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t p = 0; p < k; ++p)
                                 gA[i * k + p] += dot(g.data() + i * n, B.data() + p * n, n);
                           }
                           if (t.requires_grad(ib)) {
                             // dB = Aᵀ · g
                             Tensor& gB = t.grad_slot(ib);
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t p = 0; p < k; ++p) {
                                 const double av = A[i * k + p];
                                 double* brow = gB.data() + p * n;
                                 const double* grow = g.data() + i * n;
                                 for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                               }
                           }
                         });
}

Var linear(Var x, Var weight) {
  same_tape("linear", x, weight);
  const Tensor& X = x.value();
  const Tensor& W = weight.value();
  if (W.rank() != 2) shape_error("linear", "weight must be a matrix, got " + W.shape_string());
  const std::size_t rows = X.rows(), in = X.cols(), out_dim = W.shape()[0];
  if (W.shape()[1] != in) shape_error("linear", "input width differs from weight columns: " + shapes(X, W));

  Tensor out(X.rank() == 2 ? std::vector<std::size_t>{rows, out_dim} : std::vector<std::size_t>{out_dim});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.data() + r * in;
    double* orow = out.data() + r * out_dim;
    for (std::size_t o = 0; o < out_dim; ++o) orow[o] = dot(xr, W.data() + o * in, in);
  }
  const auto ix = x.id(), iw = weight.id();
  return x.tape().record("linear", std::move(out), {ix, iw},
                         [ix, iw, rows, in, out_dim](Tape& t, const Tensor& g) {
                           const Tensor& X = t.value(ix);
                           const Tensor& W = t.value(iw);
                           if (t.requires_grad(ix)) {
                             Tensor& gX = t.grad_slot(ix);
                             for (std::size_t r = 0; r < rows; ++r) {
                               double* gx = gX.data() + r * in;
                               for (std::size_t o = 0; o < out_dim; ++o) {
                                 const double go = g[r * out_dim + o];
                                 if (go == 0.0) continue;
                                 const double* wrow = W.data() + o * in;
                                 for (std::size_t c = 0; c < in; ++c) gx[c] += go * wrow[c];
                               }
                             }
                           }
                           if (t.requires_grad(iw)) {
                             Tensor& gW = t.grad_slot(iw);
                             for (std::size_t r = 0; r < rows; ++r) {
                               const double* xr = X.data() + r * in;
                               for (std::size_t o = 0; o < out_dim; ++o) {
                                 const double go = g[r * out_dim + o];
                                 if (go == 0.0) continue;
                                 double* wrow = gW.data() + o * in;
                                 for (std::size_t c = 0; c < in; ++c) wrow[c] += go * xr[c];
                               }
                             }
                           }
                         });
}

Var add(Var a, Var b) {
  same_tape("add", a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const bool broadcast = A.rank() == 2 && B.rank() == 1 && B.size() == A.cols();
  if (!A.same_shape(B) && !broadcast) shape_error("add", "incompatible shapes " + shapes(A, B));
  Tensor out = A;
  const std::size_t rows = broadcast ? A.rows() : 1, width = B.size();
  for (std::size_t r = 0; r < rows; ++r) axpy(out.values().subspan(r * width, width), B.values());
  const auto ia = a.id(), ib = b.id();
  return a.tape().record("add", std::move(out), {ia, ib}, [ia, ib, rows, width](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) axpy(t.grad_slot(ia).values(), g.values());
    if (t.requires_grad(ib)) {
      Tensor& gB = t.grad_slot(ib);
      for (std::size_t r = 0; r < rows; ++r) axpy(gB.values(), g.values().subspan(r * width, width));
    }
  });
}

Var concat(Var a, Var b) {
  same_tape("concat", a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t rows = A.rows(), p = A.cols(), q = B.cols();
  const bool broadcast = A.rank() == 2 && B.rank() == 1;
  if (A.rank() != B.rank() && !broadcast) shape_error("concat", "incompatible ranks " + shapes(A, B));
  if (A.rank() == 2 && B.rank() == 2 && B.rows() != rows) {
    shape_error("concat", "row counts differ: " + shapes(A, B));
  }
  Tensor out(A.rank() == 2 ? std::vector<std::size_t>{rows, p + q} : std::vector<std::size_t>{p + q});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(A.data() + r * p, p, out.data() + r * (p + q));
    std::copy_n(B.data() + (broadcast ? 0 : r * q), q, out.data() + r * (p + q) + p);
  }
  const auto ia = a.id(), ib = b.id();
  return a.tape().record("concat", std::move(out), {ia, ib},
                         [ia, ib, rows, p, q, broadcast](Tape& t, const Tensor& g) {
                           if (t.requires_grad(ia)) {
                             Tensor& gA = t.grad_slot(ia);
                             for (std::size_t r = 0; r < rows; ++r)
                               axpy(gA.values().subspan(r * p, p), g.values().subspan(r * (p + q), p));
                           }
                           if (t.requires_grad(ib)) {
                             Tensor& gB = t.grad_slot(ib);
                             for (std::size_t r = 0; r < rows; ++r)
                               axpy(gB.values().subspan(broadcast ? 0 : r * q, q),
                                    g.values().subspan(r * (p + q) + p, q));
                           }
                         });
}

Var tanh(Var x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = std::tanh(v);
  const auto ix = x.id();
  auto& tape = x.tape();
  const std::size_t self = tape.size();
  return tape.record("tanh", std::move(out), {ix}, [ix, self](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad_slot(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var sigmoid(Var x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  const auto ix = x.id();
  auto& tape = x.tape();
  const std::size_t self = tape.size();
  return tape.record("sigmoid", std::move(out), {ix}, [ix, self](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad_slot(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var mul(Var a, Var b) {
  same_tape("mul", a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (!A.same_shape(B)) shape_error("mul", "incompatible shapes " + shapes(A, B));
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record("mul", std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) {
      const Tensor& B = t.value(ib);
      Tensor& gA = t.grad_slot(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gA[i] += g[i] * B[i];
    }
    if (t.requires_grad(ib)) {
      const Tensor& A = t.value(ia);
      Tensor& gB = t.grad_slot(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gB[i] += g[i] * A[i];
    }
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (auto& v : out.values()) v *= factor;
  const auto ix = x.id();
  return x.tape().record("scale", std::move(out), {ix}, [ix, factor](Tape& t, const Tensor& g) {
    axpy(t.grad_slot(ix).values(), g.values(), factor);
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const auto ix = x.id();
  return x.tape().record("sum", Tensor::vector({s}), {ix}, [ix](Tape& t, const Tensor& g) {
    for (auto& v : t.grad_slot(ix).values()) v += g[0];
  });
}

Var sum_squares(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v * v;
  const auto ix = x.id();
  return x.tape().record("sum_squares", Tensor::vector({s}), {ix}, [ix](Tape& t, const Tensor& g) {
    const Tensor& X = t.value(ix);
    axpy(t.grad_slot(ix).values(), X.values(), 2.0 * g[0]);
  });
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double mx = *std::max_element(out.begin(), out.end());
  double z = 0.0;
  for (auto& v : out) {
    v = std::exp(v - mx);
    z += v;
  }
  for (auto& v : out) v /= z;
  return out;
}

Var softmax(Var x) {
  require_rank1("softmax", x.value());
  Tensor out = Tensor::vector(softmax(x.value().values()));
  const auto ix = x.id();
  auto& tape = x.tape();
  const std::size_t self = tape.size();
  return tape.record("softmax", std::move(out), {ix}, [ix, self](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(self);
    const double inner = dot(g.data(), y.data(), g.size());
    Tensor& gx = t.grad_slot(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += y[i] * (g[i] - inner);
  });
}

Var slice(Var x, std::size_t offset, std::size_t length) {
  const Tensor& X = x.value();
  require_rank1("slice", X);
  if (length == 0 || offset + length > X.size()) {
    shape_error("slice", "range [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                             ") outside " + X.shape_string());
  }
  Tensor out({length});
  std::copy_n(X.data() + offset, length, out.data());
  const auto ix = x.id();
  return x.tape().record("slice", std::move(out), {ix}, [ix, offset, length](Tape& t, const Tensor& g) {
    axpy(t.grad_slot(ix).values().subspan(offset, length), g.values());
  });
}

Var row(Var x, std::size_t r) {
  const Tensor& X = x.value();
  if (X.rank() != 2 || r >= X.rows()) {
    shape_error("row", "row " + std::to_string(r) + " outside " + X.shape_string());
  }
  const std::size_t w = X.cols();
  Tensor out({w});
  std::copy_n(X.data() + r * w, w, out.data());
  const auto ix = x.id();
  return x.tape().record("row", std::move(out), {ix}, [ix, r, w](Tape& t, const Tensor& g) {
    axpy(t.grad_slot(ix).values().subspan(r * w, w), g.values());
  });
}

Var stack(std::span<const Var> rows) {
  if (rows.empty()) throw ContractError("stack: no rows");
  const std::size_t width = rows.front().value().size();
  Tape& tape = rows.front().tape();
  std::vector<std::size_t> ids;
  Tensor out({rows.size(), width});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    same_tape("stack", rows.front(), rows[r]);
    const Tensor& v = rows[r].value();
    require_rank1("stack", v);
    if (v.size() != width) shape_error("stack", "row widths differ: " + shapes(rows.front().value(), v));
    std::copy_n(v.data(), width, out.data() + r * width);
    ids.push_back(rows[r].id());
  }
  auto inputs = ids;
  return tape.record("stack", std::move(out), std::move(inputs), [ids, width](Tape& t, const Tensor& g) {
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (t.requires_grad(ids[r])) axpy(t.grad_slot(ids[r]).values(), g.values().subspan(r * width, width));
    }
  });
}

Var embedding(Var table, std::span<const std::size_t> ids) {
  const Tensor& T = table.value();
  if (T.rank() != 2) shape_error("embedding", "table must be a matrix, got " + T.shape_string());
  if (ids.empty()) throw ContractError("embedding: no ids");
  const std::size_t d = T.cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= T.rows()) {
      shape_error("embedding", "id " + std::to_string(ids[i]) + " outside table " + T.shape_string());
    }
    std::copy_n(T.data() + ids[i] * d, d, out.data() + i * d);
  }
  const auto it = table.id();
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return table.tape().record("embedding", std::move(out), {it}, [it, idv, d](Tape& t, const Tensor& g) {
    Tensor& gT = t.grad_slot(it);
    for (std::size_t i = 0; i < idv.size(); ++i)
      axpy(gT.values().subspan(idv[i] * d, d), g.values().subspan(i * d, d));
  });
}

Var embedding_bag(Var table, std::span<const std::vector<std::size_t>> bags) {
  const Tensor& T = table.value();
  if (T.rank() != 2) shape_error("embedding_bag", "table must be a matrix, got " + T.shape_string());
  if (bags.empty()) throw ContractError("embedding_bag: no bags");
  const std::size_t d = T.cols();
  Tensor out({bags.size(), d});
  for (std::size_t b = 0; b < bags.size(); ++b) {
    for (auto id : bags[b]) {
      if (id >= T.rows()) {
        shape_error("embedding_bag", "id " + std::to_string(id) + " outside table " + T.shape_string());
      }
      axpy(out.row(b), T.row(id));
    }
  }
  const auto it = table.id();
  std::vector<std::vector<std::size_t>> bv(bags.begin(), bags.end());
  return table.tape().record("embedding_bag", std::move(out), {it}, [it, bv, d](Tape& t, const Tensor& g) {
    Tensor& gT = t.grad_slot(it);
    for (std::size_t b = 0; b < bv.size(); ++b)
      for (auto id : bv[b]) axpy(gT.values().subspan(id * d, d), g.values().subspan(b * d, d));
  });
}

Var dropout(Var x, const Tensor& mask) {
  if (!x.value().same_shape(mask)) shape_error("dropout", "mask shape differs: " + shapes(x.value(), mask));
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const auto ix = x.id();
  return x.tape().record("dropout", std::move(out), {ix}, [ix, mask](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_slot(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

Var scatter_add(Var dense, Var values, std::span<const std::size_t> indices) {
  same_tape("scatter_add", dense, values);
  const Tensor& D = dense.value();
  const Tensor& V = values.value();
  require_rank1("scatter_add", D);
  require_rank1("scatter_add", V);
  if (V.size() != indices.size()) {
    shape_error("scatter_add", "values " + V.shape_string() + " vs " + std::to_string(indices.size()) + " indices");
  }
  Tensor out = D;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= D.size()) {
      shape_error("scatter_add", "index " + std::to_string(indices[k]) + " outside " + D.shape_string());
    }
    out[indices[k]] += V[k];
  }
  const auto id = dense.id(), iv = values.id();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return dense.tape().record("scatter_add", std::move(out), {id, iv}, [id, iv, idx](Tape& t, const Tensor& g) {
    if (t.requires_grad(id)) axpy(t.grad_slot(id).values(), g.values());
    if (t.requires_grad(iv)) {
      Tensor& gv = t.grad_slot(iv);
      for (std::size_t k = 0; k < idx.size(); ++k) gv[k] += g[idx[k]];
    }
  });
}

Var cross_entropy(Var logits, std::size_t target) {
  const Tensor& L = logits.value();
  require_rank1("cross_entropy", L);
  if (target >= L.size()) {
    shape_error("cross_entropy", "target " + std::to_string(target) + " outside " + L.shape_string());
  }
  auto probs = softmax(L.values());
  const double mx = *std::max_element(L.values().begin(), L.values().end());
  double z = 0.0;
  for (double v : L.values()) z += std::exp(v - mx);
  const double loss = mx + std::log(z) - L[target];
  const auto il = logits.id();
  return logits.tape().record("cross_entropy", Tensor::vector({loss}), {il},
                              [il, target, probs = std::move(probs)](Tape& t, const Tensor& g) {
                                Tensor& gl = t.grad_slot(il);
                                for (std::size_t i = 0; i < probs.size(); ++i) gl[i] += g[0] * probs[i];
                                gl[target] -= g[0];
                              });
}

}  // namespace kvret::ag
