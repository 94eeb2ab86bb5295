#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ugdet {

using Shape = std::vector<int>;

class Tape;

// Lightweight handle to a node on a Tape. Copyable, trivially cheap.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Shape& shape() const;
  const std::vector<double>& value() const;
  double scalar() const;  // requires a single-element tensor
  int size() const;
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Define-by-run tape. Nodes are appended in execution order, which is
// automatically topological; backward() walks the record in reverse.
// Rebuilt per training step. Single-threaded.
class Tape {
 public:
  // Leaf parameter: a gradient target.
  Tensor leaf(Shape shape, std::vector<double> data);
  // Constant: participates in values but never accumulates gradient.
  Tensor constant(Shape shape, std::vector<double> data);
  Tensor constant(double v);

  Tensor matmul(Tensor a, Tensor b);  // [m,k] x [k,n]
  Tensor add(Tensor a, Tensor b);     // same shape, [R,C]+[C] bias, or +scalar
  Tensor sub(Tensor a, Tensor b);     // same shape or scalar on either side
  Tensor mul(Tensor a, Tensor b);     // elementwise, same shape or scalar
  Tensor scalar_mul(Tensor a, double c);
  Tensor relu(Tensor a);
  Tensor tanh(Tensor a);
  Tensor sigmoid(Tensor a);
  Tensor exp(Tensor a);
  Tensor log(Tensor a);  // requires strictly positive input
  Tensor sum(Tensor a);   // reduce all elements to a scalar
  Tensor mean(Tensor a);
  // Normalized exp(logit/tau) along the last axis. Row max subtracted
  // before exponentiation.
  Tensor softmax_t(Tensor logits, double tau);
  Tensor gather_rows(Tensor a, std::vector<int> rows);
  Tensor concat(const std::vector<Tensor>& parts);  // along axis 0
  // Row-major layout reinterpretation; element count must match.
  Tensor reshape(Tensor a, Shape s);

  // Derived helpers built from the primitives above.
  Tensor reciprocal_pos(Tensor a) { return exp(scalar_mul(log(a), -1.0)); }
  Tensor neg(Tensor a) { return scalar_mul(a, -1.0); }
  Tensor square(Tensor a) { return mul(a, a); }
  Tensor add_scalar(Tensor a, double c) { return add(a, constant(c)); }

  // Reverse pass from a scalar loss. Gradients are then readable via
  // grad(). May be called once per tape.
  void backward(Tensor loss);
  const std::vector<double>& grad(Tensor t) const;
  bool has_grads() const { return grads_ready_; }

  size_t num_nodes() const { return nodes_.size(); }

  const Shape& shape_of(int id) const { return nodes_[id].shape; }
  const std::vector<double>& value_of(int id) const { return nodes_[id].val; }

 private:
  struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<int> inputs;
    // Adds contributions into the gradients of `inputs` given this
    // node's gradient. Null for leaves/constants.
    std::function<void(Tape&, const std::vector<double>& g)> back;
  };

  int push(Shape shape, std::vector<double> val, std::vector<int> inputs,
           std::function<void(Tape&, const std::vector<double>&)> back);
  void check_finite(const std::vector<double>& v, const char* op) const;
  std::vector<double>& grad_buf(int id) { return grads_[id]; }

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool grads_ready_ = false;

  friend class Tensor;
};

}  // namespace ugdet
