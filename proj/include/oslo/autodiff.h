#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "oslo/matrix.h"
#include "oslo/sphere_signal.h"
#include "oslo/stencil.h"

namespace oslo {

// A trainable tensor with its gradient buffer and Adam moments.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;
};

// Named parameters in insertion order.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Matrix init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  size_t size() const { return params_.size(); }

  void zero_grad();
  int64_t scalar_count() const;

  int64_t adam_steps = 0;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, Parameter*> index_;
};

namespace ad {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Recording tape for reverse-mode differentiation. Values are matrices; a
// node that carries a sphere signal also keeps its PatchFrame. One tape per
// worker; not thread safe.
class Graph {
 public:
  // Called with the node's own Var once its gradient is complete.
  using Backward = std::function<void(Graph&, Var)>;

  explicit Graph(bool record = true) : record_(record) {}

  Var constant(Matrix value, const PatchFrame& frame = {});
  Var input(const SphereSignal& x, bool requires_grad = false);
  // Leaf bound to a parameter: backward() adds into p.grad.
  Var param(Parameter& p);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  const PatchFrame& frame(Var v) const { return nodes_[v.id].frame; }
  SphereSignal signal(Var v) const;
  double scalar(Var v) const;

  // Gradient of the last backward() target; empty if v was not reached.
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }

  void backward(Var loss);
  bool recording() const { return record_; }

  // Op implementation interface.
  Var push(Matrix value, const PatchFrame& frame, std::initializer_list<Var> parents,
           Backward backward);
  bool needs_grad(Var v) const { return v.valid() && nodes_[v.id].needs_grad; }
  // Zero-initialized on first use.
  Matrix& grad_mut(Var v);
  bool has_grad(Var v) const { return !nodes_[v.id].grad.empty(); }

 private:
  struct Node {
    Matrix value;
    PatchFrame frame;
    Matrix grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };

  bool record_;
  std::deque<Node> nodes_;
};

// Elementwise.
Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, double s);
Var relu(Graph& g, Var a);
Var sigmoid(Graph& g, Var a);
Var softplus(Graph& g, Var a);
// a + c for a constant matrix c (e.g. quantization noise).
Var add_constant(Graph& g, Var a, const Matrix& c);

// Channel plumbing.
Var concat_channels(Graph& g, Var a, Var b);
Var slice_channels(Graph& g, Var a, int begin, int count);
// Repeats a 1 x C row over every pixel of `frame`.
Var broadcast_rows(Graph& g, Var row, const PatchFrame& frame);

// Spherical operators. weights: (taps * in) x out, bias: 1 x out or invalid.
Var stencil_op(Graph& g, StencilKind kind, Var x, Var weights, Var bias);
Var conv_h0(Graph& g, Var x, Var weights, Var bias);
Var subsample4(Graph& g, Var x);
Var average_pool4(Graph& g, Var x);
Var pixel_shuffle(Graph& g, Var x);

// round(a - offset) + offset forward, identity gradient w.r.t. a (straight
// through) and none w.r.t. offset. offset may be invalid (zero).
Var round_ste(Graph& g, Var a, Var offset);
// Forward `value`, identity gradient w.r.t. a.
Var straight_through(Graph& g, Var a, Matrix value);

// Scalars (1 x 1).
Var sum_all(Graph& g, Var a);
Var mean_squared_error(Graph& g, Var a, Var b);
// Total -log2 discretized-Gaussian bin mass over all elements.
Var gaussian_bits(Graph& g, Var value, Var mu, Var sigma);

}  // namespace ad
}  // namespace oslo
