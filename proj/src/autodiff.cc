#include "oslo/autodiff.h"

#include <algorithm>
#include <cmath>

#include "oslo/error.h"
#include "oslo/gaussian.h"

namespace oslo {

Parameter& ParamStore::add(const std::string& name, Matrix init) {
  if (contains(name)) throw Error(ErrorCode::kConfig, "duplicate parameter " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Matrix(init.rows(), init.cols());
  p->adam_m = Matrix(init.rows(), init.cols());
  p->adam_v = Matrix(init.rows(), init.cols());
  p->value = std::move(init);
  Parameter* raw = p.get();
  params_.push_back(std::move(p));
  index_[name] = raw;
  return *raw;
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::kConfig, "unknown parameter " + name);
  return *it->second;
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::kConfig, "unknown parameter " + name);
  return *it->second;
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

int64_t ParamStore::scalar_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

namespace ad {
namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::kShape, std::string(op) + ": operand shapes differ (" +
                                       std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                       " vs " + std::to_string(b.rows()) + "x" +
                                       std::to_string(b.cols()) + ")");
  }
}

void accumulate(Matrix& dst, const Matrix& src, double s = 1.0) {
  auto d = dst.data();
  auto v = src.data();
  for (size_t i = 0; i < d.size(); ++i) d[i] += s * v[i];
}

Matrix scalar_matrix(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return m;
}

}  // namespace

Var Graph::constant(Matrix value, const PatchFrame& frame) {
  Node n;
  n.value = std::move(value);
  n.frame = frame;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Graph::input(const SphereSignal& x, bool requires_grad) {
  Var v = constant(x.values(), x.frame());
  nodes_[v.id].needs_grad = requires_grad;
  return v;
}

Var Graph::param(Parameter& p) {
  Var v = constant(p.value);
  nodes_[v.id].needs_grad = true;
  nodes_[v.id].param = &p;
  return v;
}

SphereSignal Graph::signal(Var v) const { return SphereSignal(frame(v), value(v)); }

double Graph::scalar(Var v) const {
  const Matrix& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) throw Error(ErrorCode::kShape, "not a scalar node");
  return m(0, 0);
}

Var Graph::push(Matrix value, const PatchFrame& frame, std::initializer_list<Var> parents,
                Backward backward) {
  Node n;
  n.value = std::move(value);
  n.frame = frame;
  for (Var p : parents) n.needs_grad = n.needs_grad || needs_grad(p);
  if (record_ && n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Matrix& Graph::grad_mut(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Graph::backward(Var loss) {
  if (!record_) throw Error(ErrorCode::kUsage, "backward() on a graph built without recording");
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) throw Error(ErrorCode::kShape, "loss must be a scalar");
  for (auto& n : nodes_) n.grad = Matrix();
  grad_mut(loss)(0, 0) = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, Var{id});
    if (n.param != nullptr) accumulate(n.param->grad, n.grad);
  }
}


Var add(Graph& g, Var a, Var b) {
  require_same_shape(g.value(a), g.value(b), "add");
  Matrix out = g.value(a);
  accumulate(out, g.value(b));
  Var r = g.push(std::move(out), g.frame(a), {a, b}, [a, b](Graph& g2, Var self) {
    const Matrix& go = g2.grad(self);
    if (g2.needs_grad(a)) accumulate(g2.grad_mut(a), go);
    if (g2.needs_grad(b)) accumulate(g2.grad_mut(b), go);
  });
  return r;
}

Var sub(Graph& g, Var a, Var b) {
  require_same_shape(g.value(a), g.value(b), "sub");
  Matrix out = g.value(a);
  accumulate(out, g.value(b), -1.0);
  Var r = g.push(std::move(out), g.frame(a), {a, b}, [a, b](Graph& g2, Var self) {
    const Matrix& go = g2.grad(self);
    if (g2.needs_grad(a)) accumulate(g2.grad_mut(a), go);
    if (g2.needs_grad(b)) accumulate(g2.grad_mut(b), go, -1.0);
  });
  return r;
}

Var mul(Graph& g, Var a, Var b) {
  require_same_shape(g.value(a), g.value(b), "mul");
  const Matrix& av = g.value(a);
  const Matrix& bv = g.value(b);
  Matrix out(av.rows(), av.cols());
  for (int64_t i = 0; i < out.size(); ++i) out.data()[i] = av.data()[i] * bv.data()[i];
  Var r = g.push(std::move(out), g.frame(a), {a, b}, [a, b](Graph& g2, Var self) {
    const Matrix& go = g2.grad(self);
    if (g2.needs_grad(a)) {
      Matrix& ga = g2.grad_mut(a);
      const Matrix& bv2 = g2.value(b);
      for (int64_t i = 0; i < ga.size(); ++i) ga.data()[i] += go.data()[i] * bv2.data()[i];
    }
    if (g2.needs_grad(b)) {
      Matrix& gb = g2.grad_mut(b);
      const Matrix& av2 = g2.value(a);
      for (int64_t i = 0; i < gb.size(); ++i) gb.data()[i] += go.data()[i] * av2.data()[i];
    }
  });
  return r;
}

Var scale(Graph& g, Var a, double s) {
  Matrix out = g.value(a);
  for (double& v : out.data()) v *= s;
  Var r = g.push(std::move(out), g.frame(a), {a}, [a, s](Graph& g2, Var self) {
    accumulate(g2.grad_mut(a), g2.grad(self), s);
  });
  return r;
}

namespace {

// Elementwise map whose derivative is expressed through input x and output y.
template <typename F, typename D>
Var map_elementwise(Graph& g, Var a, F f, D derivative) {
  const Matrix& av = g.value(a);
  Matrix out(av.rows(), av.cols());
  for (int64_t i = 0; i < out.size(); ++i) out.data()[i] = f(av.data()[i]);
  Var r = g.push(std::move(out), g.frame(a), {a}, [a, derivative](Graph& g2, Var self) {
    const Matrix& go = g2.grad(self);
    const Matrix& x = g2.value(a);
    const Matrix& y = g2.value(self);
    Matrix& ga = g2.grad_mut(a);
    for (int64_t i = 0; i < ga.size(); ++i) {
      ga.data()[i] += go.data()[i] * derivative(x.data()[i], y.data()[i]);
    }
  });
  return r;
}

}  // namespace

Var relu(Graph& g, Var a) {
  return map_elementwise(
      g, a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var sigmoid(Graph& g, Var a) {
  return map_elementwise(
      g, a, [](double x) { return oslo::sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Graph& g, Var a) {
  return map_elementwise(
      g, a, [](double x) { return oslo::softplus(x); },
      [](double x, double) { return oslo::sigmoid(x); });
}

Var add_constant(Graph& g, Var a, const Matrix& c) {
  require_same_shape(g.value(a), c, "add_constant");
  Matrix out = g.value(a);
  accumulate(out, c);
  Var r = g.push(std::move(out), g.frame(a), {a}, [a](Graph& g2, Var self) {
    accumulate(g2.grad_mut(a), g2.grad(self));
  });
  return r;
}

Var concat_channels(Graph& g, Var a, Var b) {
  const Matrix& av = g.value(a);
  const Matrix& bv = g.value(b);
  if (av.rows() != bv.rows()) throw Error(ErrorCode::kShape, "concat: row counts differ");
  const int64_t ca = av.cols(), cb = bv.cols();
  Matrix out(av.rows(), ca + cb);
  for (int64_t r = 0; r < av.rows(); ++r) {
    std::copy(av.row(r), av.row(r) + ca, out.row(r));
    std::copy(bv.row(r), bv.row(r) + cb, out.row(r) + ca);
  }
  Var r = g.push(std::move(out), g.frame(a), {a, b}, [a, b, ca, cb](Graph& g2, Var self) {
    const Matrix& go = g2.grad(self);
    if (g2.needs_grad(a)) {
      Matrix& ga = g2.grad_mut(a);
      for (int64_t i = 0; i < go.rows(); ++i)
        for (int64_t c = 0; c < ca; ++c) ga(i, c) += go(i, c);
    }
    if (g2.needs_grad(b)) {
      Matrix& gb = g2.grad_mut(b);
      for (int64_t i = 0; i < go.rows(); ++i)
        for (int64_t c = 0; c < cb; ++c) gb(i, c) += go(i, ca + c);
    }
  });
  return r;
}

Var slice_channels(Graph& g, Var a, int begin, int count) {
  const Matrix& av = g.value(a);
  if (begin < 0 || count <= 0 || begin + count > av.cols()) {
    throw Error(ErrorCode::kShape, "slice_channels: range outside the channel count");
  }
  Matrix out(av.rows(), count);
  for (int64_t r = 0; r < av.rows(); ++r) std::copy(av.row(r) + begin, av.row(r) + begin + count, out.row(r));
  Var r = g.push(std::move(out), g.frame(a), {a}, [a, begin, count](Graph& g2, Var self) {
    const Matrix& go = g2.grad(self);
    Matrix& ga = g2.grad_mut(a);
    for (int64_t i = 0; i < go.rows(); ++i)
      for (int c = 0; c < count; ++c) ga(i, begin + c) += go(i, c);
  });
  return r;
}

Var broadcast_rows(Graph& g, Var row, const PatchFrame& frame) {
  const Matrix& rv = g.value(row);
  if (rv.rows() != 1) throw Error(ErrorCode::kShape, "broadcast_rows expects a single row");
  Matrix out(frame.count, rv.cols());
  for (int64_t r = 0; r < frame.count; ++r) std::copy(rv.row(0), rv.row(0) + rv.cols(), out.row(r));
  Var r = g.push(std::move(out), frame, {row}, [row](Graph& g2, Var self) {
    const Matrix& go = g2.grad(self);
    Matrix& gr = g2.grad_mut(row);
    for (int64_t i = 0; i < go.rows(); ++i)
      for (int64_t c = 0; c < go.cols(); ++c) gr(0, c) += go(i, c);
  });
  return r;
}

Var stencil_op(Graph& g, StencilKind kind, Var x, Var weights, Var bias) {
  const Matrix& xv = g.value(x);
  const Matrix& wv = g.value(weights);
  const int in = static_cast<int>(xv.cols());
  const int taps = stencil_tap_count(kind);
  if (wv.rows() != static_cast<int64_t>(taps) * in) {
    throw Error(ErrorCode::kShape, "weights have " + std::to_string(wv.rows()) + " rows, expected " +
                                       std::to_string(taps * in));
  }
  const int out = static_cast<int>(wv.cols());
  std::span<const double> bspan;
  if (bias.valid()) {
    const Matrix& bv = g.value(bias);
    if (bv.rows() != 1 || bv.cols() != out) throw Error(ErrorCode::kShape, "bias must be 1 x out");
    bspan = bv.data();
  }
  auto s = get_stencil(kind, g.frame(x));
  if (xv.rows() != s->in_frame.count) throw Error(ErrorCode::kGrid, "signal rows do not match frame");
  Matrix y(s->out_frame.count, out);
  stencil_forward(*s, xv.row(0), in, wv.row(0), bspan, out, y.row(0));
  Var r = g.push(std::move(y), s->out_frame, {x, weights, bias}, [s, x, weights, bias, in, out](Graph& g2, Var self) {
    const Matrix& go = g2.grad(self);
    double* gx = g2.needs_grad(x) ? g2.grad_mut(x).row(0) : nullptr;
    double* gw = g2.needs_grad(weights) ? g2.grad_mut(weights).row(0) : nullptr;
    double* gb = g2.needs_grad(bias) ? g2.grad_mut(bias).row(0) : nullptr;
    stencil_backward(*s, g2.value(x).row(0), in, g2.value(weights).row(0), out, go.row(0), gx, gw,
                     gb);
  });
  return r;
}

Var conv_h0(Graph& g, Var x, Var weights, Var bias) {
  return stencil_op(g, StencilKind::kCenter, x, weights, bias);
}

Var subsample4(Graph& g, Var x) {
  const Matrix& xv = g.value(x);
  const PatchFrame coarse = g.frame(x).coarser();
  const int64_t ch = xv.cols();
  Matrix out(coarse.count, ch);
  for (int64_t r = 0; r < coarse.count; ++r) std::copy(xv.row(4 * r), xv.row(4 * r) + ch, out.row(r));
  Var r = g.push(std::move(out), coarse, {x}, [x, ch](Graph& g2, Var self) {
    const Matrix& go = g2.grad(self);
    Matrix& gx = g2.grad_mut(x);
    for (int64_t i = 0; i < go.rows(); ++i)
      for (int64_t c = 0; c < ch; ++c) gx(4 * i, c) += go(i, c);
  });
  return r;
}

Var average_pool4(Graph& g, Var x) {
  const Matrix& xv = g.value(x);
  const PatchFrame coarse = g.frame(x).coarser();
  const int64_t ch = xv.cols();
  Matrix out(coarse.count, ch);
  for (int64_t r = 0; r < coarse.count; ++r) {
    for (int k = 0; k < 4; ++k)
      for (int64_t c = 0; c < ch; ++c) out(r, c) += xv(4 * r + k, c);
    for (int64_t c = 0; c < ch; ++c) out(r, c) *= 0.25;
  }
  Var r = g.push(std::move(out), coarse, {x}, [x, ch](Graph& g2, Var self) {
    const Matrix& go = g2.grad(self);
    Matrix& gx = g2.grad_mut(x);
    for (int64_t i = 0; i < go.rows(); ++i)
      for (int k = 0; k < 4; ++k)
        for (int64_t c = 0; c < ch; ++c) gx(4 * i + k, c) += 0.25 * go(i, c);
  });
  return r;
}

Var pixel_shuffle(Graph& g, Var x) {
  const Matrix& xv = g.value(x);
  if (xv.cols() % 4 != 0) throw Error(ErrorCode::kShape, "pixel shuffle needs channels divisible by 4");
  const int64_t ch = xv.cols() / 4;
  const PatchFrame fine = g.frame(x).finer();
  Matrix out(fine.count, ch);
  for (int64_t r = 0; r < xv.rows(); ++r)
    for (int k = 0; k < 4; ++k) std::copy(xv.row(r) + k * ch, xv.row(r) + (k + 1) * ch, out.row(4 * r + k));
  Var r = g.push(std::move(out), fine, {x}, [x, ch](Graph& g2, Var self) {
    const Matrix& go = g2.grad(self);
    Matrix& gx = g2.grad_mut(x);
    for (int64_t i = 0; i < gx.rows(); ++i)
      for (int k = 0; k < 4; ++k)
        for (int64_t c = 0; c < ch; ++c) gx(i, k * ch + c) += go(4 * i + k, c);
  });
  return r;
}

Var round_ste(Graph& g, Var a, Var offset) {
  const Matrix& av = g.value(a);
  Matrix out(av.rows(), av.cols());
  for (int64_t i = 0; i < out.size(); ++i) {
    const double mu = offset.valid() ? g.value(offset).data()[i] : 0.0;
    out.data()[i] = std::round(av.data()[i] - mu) + mu;
  }
  Var r = g.push(std::move(out), g.frame(a), {a}, [a](Graph& g2, Var self) {
    accumulate(g2.grad_mut(a), g2.grad(self));
  });
  return r;
}

Var straight_through(Graph& g, Var a, Matrix value) {
  require_same_shape(g.value(a), value, "straight_through");
  Var r = g.push(std::move(value), g.frame(a), {a}, [a](Graph& g2, Var self) {
    accumulate(g2.grad_mut(a), g2.grad(self));
  });
  return r;
}

Var sum_all(Graph& g, Var a) {
  double s = 0.0;
  for (double v : g.value(a).data()) s += v;
  Var r = g.push(scalar_matrix(s), PatchFrame{}, {a}, [a](Graph& g2, Var self) {
    const double go = g2.grad(self)(0, 0);
    for (double& v : g2.grad_mut(a).data()) v += go;
  });
  return r;
}

Var mean_squared_error(Graph& g, Var a, Var b) {
  require_same_shape(g.value(a), g.value(b), "mean_squared_error");
  const Matrix& av = g.value(a);
  const Matrix& bv = g.value(b);
  const double n = static_cast<double>(av.size());
  double s = 0.0;
  for (int64_t i = 0; i < av.size(); ++i) {
    const double d = av.data()[i] - bv.data()[i];
    s += d * d;
  }
  Var r = g.push(scalar_matrix(s / n), PatchFrame{}, {a, b}, [a, b, n](Graph& g2, Var self) {
    const double go = g2.grad(self)(0, 0);
    const Matrix& av2 = g2.value(a);
    const Matrix& bv2 = g2.value(b);
    const double k = 2.0 * go / n;
    if (g2.needs_grad(a)) {
      Matrix& ga = g2.grad_mut(a);
      for (int64_t i = 0; i < ga.size(); ++i) ga.data()[i] += k * (av2.data()[i] - bv2.data()[i]);
    }
    if (g2.needs_grad(b)) {
      Matrix& gb = g2.grad_mut(b);
      for (int64_t i = 0; i < gb.size(); ++i) gb.data()[i] -= k * (av2.data()[i] - bv2.data()[i]);
    }
  });
  return r;
}

Var gaussian_bits(Graph& g, Var value, Var mu, Var sigma) {
  const Matrix& v = g.value(value);
  require_same_shape(v, g.value(mu), "gaussian_bits");
  require_same_shape(v, g.value(sigma), "gaussian_bits");
  const int64_t n = v.size();
  auto d_value = std::make_shared<std::vector<double>>(n);
  auto d_sigma = std::make_shared<std::vector<double>>(n);
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const BinBits b = gaussian_bin_bits(v.data()[i], g.value(mu).data()[i], g.value(sigma).data()[i]);
    total += b.bits;
    (*d_value)[i] = b.d_value;
    (*d_sigma)[i] = b.d_sigma;
  }
  Var r = g.push(scalar_matrix(total), PatchFrame{}, {value, mu, sigma},
                 [value, mu, sigma, d_value, d_sigma](Graph& g2, Var self) {
                   const double go = g2.grad(self)(0, 0);
                   if (g2.needs_grad(value)) {
                     auto gv = g2.grad_mut(value).data();
                     for (size_t i = 0; i < gv.size(); ++i) gv[i] += go * (*d_value)[i];
                   }
                   if (g2.needs_grad(mu)) {
                     auto gm = g2.grad_mut(mu).data();
                     for (size_t i = 0; i < gm.size(); ++i) gm[i] -= go * (*d_value)[i];
                   }
                   if (g2.needs_grad(sigma)) {
                     auto gs = g2.grad_mut(sigma).data();
                     for (size_t i = 0; i < gs.size(); ++i) gs[i] += go * (*d_sigma)[i];
                   }
                 });
  return r;
}

}  // namespace ad
}  // namespace oslo
