#include "ugdet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ugdet {

namespace {

int num_elems(const Shape& s) {
  int n = 1;
  for (int d : s) {
    if (d <= 0) throw std::invalid_argument("tensor extents must be positive");
    n *= d;
  }
  return n;
}

}  // namespace

const Shape& Tensor::shape() const { return tape_->shape_of(id_); }
const std::vector<double>& Tensor::value() const { return tape_->value_of(id_); }
int Tensor::size() const { return static_cast<int>(value().size()); }

double Tensor::scalar() const {
  const auto& v = value();
  if (v.size() != 1) throw std::invalid_argument("scalar() on non-scalar tensor");
  return v[0];
}

void Tape::check_finite(const std::vector<double>& v, const char* op) const {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::domain_error(std::string("non-finite value produced by ") + op);
    }
  }
}

int Tape::push(Shape shape, std::vector<double> val, std::vector<int> inputs,
               std::function<void(Tape&, const std::vector<double>&)> back) {
  if (num_elems(shape) != static_cast<int>(val.size())) {
    throw std::invalid_argument("shape/data size mismatch");
  }
  nodes_.push_back(Node{std::move(shape), std::move(val), std::move(inputs),
                        std::move(back)});
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::leaf(Shape shape, std::vector<double> data) {
  check_finite(data, "leaf");
  return Tensor(this, push(std::move(shape), std::move(data), {}, nullptr));
}

Tensor Tape::constant(Shape shape, std::vector<double> data) {
  check_finite(data, "constant");
  return Tensor(this, push(std::move(shape), std::move(data), {}, nullptr));
}

Tensor Tape::constant(double v) { return constant({1}, {v}); }

Tensor Tape::matmul(Tensor a, Tensor b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw std::invalid_argument("matmul shape mismatch");
  }
  const int m = sa[0], k = sa[1], n = sb[1];
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (int j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  }
  check_finite(out, "matmul");
  const int ia = a.id(), ib = b.id();
  auto back = [ia, ib, m, k, n](Tape& t, const std::vector<double>& g) {
    const auto& av = t.nodes_[ia].val;
    const auto& bv = t.nodes_[ib].val;
    auto& ga = t.grad_buf(ia);
    auto& gb = t.grad_buf(ib);
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
        ga[i * k + p] += acc;
      }
    for (int p = 0; p < k; ++p)
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) acc += av[i * k + p] * g[i * n + j];
        gb[p * n + j] += acc;
      }
  };
  return Tensor(this, push({m, n}, std::move(out), {ia, ib}, back));
}

Tensor Tape::add(Tensor a, Tensor b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  const int ia = a.id(), ib = b.id();
  if (a.shape() == b.shape()) {
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    check_finite(out, "add");
    auto back = [ia, ib](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buf(ia);
      auto& gb = t.grad_buf(ib);
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
        gb[i] += g[i];
      }
    };
    return Tensor(this, push(a.shape(), std::move(out), {ia, ib}, back));
  }
  if (bv.size() == 1) {  // broadcast scalar
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[0];
    check_finite(out, "add");
    auto back = [ia, ib](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buf(ia);
      auto& gb = t.grad_buf(ib);
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
        gb[0] += g[i];
      }
    };
    return Tensor(this, push(a.shape(), std::move(out), {ia, ib}, back));
  }
  // row-broadcast bias: [R,C] + [C]
  if (a.shape().size() == 2 && b.shape().size() == 1 &&
      a.shape()[1] == b.shape()[0]) {
    const int rows = a.shape()[0], cols = a.shape()[1];
    std::vector<double> out(av.size());
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) out[r * cols + c] = av[r * cols + c] + bv[c];
    check_finite(out, "add");
    auto back = [ia, ib, rows, cols](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buf(ia);
      auto& gb = t.grad_buf(ib);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
          ga[r * cols + c] += g[r * cols + c];
          gb[c] += g[r * cols + c];
        }
    };
    return Tensor(this, push(a.shape(), std::move(out), {ia, ib}, back));
  }
  throw std::invalid_argument("add shape mismatch");
}

Tensor Tape::sub(Tensor a, Tensor b) { return add(a, scalar_mul(b, -1.0)); }

Tensor Tape::mul(Tensor a, Tensor b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  const int ia = a.id(), ib = b.id();
  if (a.shape() == b.shape()) {
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    check_finite(out, "mul");
    auto back = [ia, ib](Tape& t, const std::vector<double>& g) {
      const auto& av = t.nodes_[ia].val;
      const auto& bv = t.nodes_[ib].val;
      auto& ga = t.grad_buf(ia);
      auto& gb = t.grad_buf(ib);
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * bv[i];
        gb[i] += g[i] * av[i];
      }
    };
    return Tensor(this, push(a.shape(), std::move(out), {ia, ib}, back));
  }
  if (bv.size() == 1) {
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[0];
    check_finite(out, "mul");
    auto back = [ia, ib](Tape& t, const std::vector<double>& g) {
      const auto& av = t.nodes_[ia].val;
      const auto& bv = t.nodes_[ib].val;
      auto& ga = t.grad_buf(ia);
      auto& gb = t.grad_buf(ib);
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * bv[0];
        gb[0] += g[i] * av[i];
      }
    };
    return Tensor(this, push(a.shape(), std::move(out), {ia, ib}, back));
  }
  if (av.size() == 1) return mul(b, a);
  throw std::invalid_argument("mul shape mismatch");
}

Tensor Tape::scalar_mul(Tensor a, double c) {
  const auto& av = a.value();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * c;
  check_finite(out, "scalar_mul");
  const int ia = a.id();
  auto back = [ia, c](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_buf(ia);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  };
  return Tensor(this, push(a.shape(), std::move(out), {ia}, back));
}

Tensor Tape::relu(Tensor a) {
  const auto& av = a.value();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  const int ia = a.id();
  auto back = [ia](Tape& t, const std::vector<double>& g) {
    const auto& av = t.nodes_[ia].val;
    auto& ga = t.grad_buf(ia);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += av[i] > 0.0 ? g[i] : 0.0;
  };
  return Tensor(this, push(a.shape(), std::move(out), {ia}, back));
}

Tensor Tape::tanh(Tensor a) {
  const auto& av = a.value();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = std::tanh(av[i]);
  const int ia = a.id();
  const int self = static_cast<int>(nodes_.size());
  auto back = [ia, self](Tape& t, const std::vector<double>& g) {
    const auto& y = t.nodes_[self].val;
    auto& ga = t.grad_buf(ia);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  };
  return Tensor(this, push(a.shape(), std::move(out), {ia}, back));
}

Tensor Tape::sigmoid(Tensor a) {
  const auto& av = a.value();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-av[i]));
  const int ia = a.id();
  const int self = static_cast<int>(nodes_.size());
  auto back = [ia, self](Tape& t, const std::vector<double>& g) {
    const auto& y = t.nodes_[self].val;
    auto& ga = t.grad_buf(ia);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  };
  return Tensor(this, push(a.shape(), std::move(out), {ia}, back));
}

Tensor Tape::exp(Tensor a) {
  const auto& av = a.value();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = std::exp(av[i]);
  check_finite(out, "exp");
  const int ia = a.id();
  const int self = static_cast<int>(nodes_.size());
  auto back = [ia, self](Tape& t, const std::vector<double>& g) {
    const auto& y = t.nodes_[self].val;
    auto& ga = t.grad_buf(ia);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  };
  return Tensor(this, push(a.shape(), std::move(out), {ia}, back));
}

Tensor Tape::log(Tensor a) {
  const auto& av = a.value();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) {
    if (av[i] <= 0.0) throw std::domain_error("log of non-positive value");
    out[i] = std::log(av[i]);
  }
  const int ia = a.id();
  auto back = [ia](Tape& t, const std::vector<double>& g) {
    const auto& av = t.nodes_[ia].val;
    auto& ga = t.grad_buf(ia);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / av[i];
  };
  return Tensor(this, push(a.shape(), std::move(out), {ia}, back));
}

Tensor Tape::sum(Tensor a) {
  const auto& av = a.value();
  double s = std::accumulate(av.begin(), av.end(), 0.0);
  check_finite({s}, "sum");
  const int ia = a.id();
  auto back = [ia](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_buf(ia);
    for (double& x : ga) x += g[0];
  };
  return Tensor(this, push({1}, {s}, {ia}, back));
}

Tensor Tape::mean(Tensor a) {
  return scalar_mul(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor Tape::softmax_t(Tensor logits, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("temperature must be positive");
  const Shape& s = logits.shape();
  const int cols = s.back();
  const int rows = static_cast<int>(logits.value().size()) / cols;
  const auto& lv = logits.value();
  std::vector<double> out(lv.size());
  for (int r = 0; r < rows; ++r) {
    double mx = lv[r * cols];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, lv[r * cols + c]);
    double z = 0.0;
    for (int c = 0; c < cols; ++c) {
      out[r * cols + c] = std::exp((lv[r * cols + c] - mx) / tau);
      z += out[r * cols + c];
    }
    for (int c = 0; c < cols; ++c) out[r * cols + c] /= z;
  }
  check_finite(out, "softmax_t");
  const int ia = logits.id();
  const int self = static_cast<int>(nodes_.size());
  auto back = [ia, self, rows, cols, tau](Tape& t, const std::vector<double>& g) {
    const auto& y = t.nodes_[self].val;
    auto& ga = t.grad_buf(ia);
    for (int r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (int c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
      for (int c = 0; c < cols; ++c) {
        ga[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot) / tau;
      }
    }
  };
  return Tensor(this, push(s, std::move(out), {ia}, back));
}

Tensor Tape::gather_rows(Tensor a, std::vector<int> rows) {
  const Shape& s = a.shape();
  const int src_rows = s[0];
  const int width = static_cast<int>(a.value().size()) / src_rows;
  for (int r : rows) {
    if (r < 0 || r >= src_rows) throw std::invalid_argument("gather_rows index out of range");
  }
  const auto& av = a.value();
  const int nr = static_cast<int>(rows.size());
  std::vector<double> out(static_cast<size_t>(nr) * width);
  for (int i = 0; i < nr; ++i) {
    std::copy_n(av.begin() + static_cast<size_t>(rows[i]) * width, width,
                out.begin() + static_cast<size_t>(i) * width);
  }
  Shape os = s;
  os[0] = nr;
  const int ia = a.id();
  auto back = [ia, rows = std::move(rows), width](Tape& t,
                                                  const std::vector<double>& g) {
    auto& ga = t.grad_buf(ia);
    for (size_t i = 0; i < rows.size(); ++i) {
      for (int c = 0; c < width; ++c) {
        ga[static_cast<size_t>(rows[i]) * width + c] += g[i * width + c];
      }
    }
  };
  return Tensor(this, push(std::move(os), std::move(out), {ia}, back));
}

Tensor Tape::concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  Shape s0 = parts[0].shape();
  std::vector<double> out;
  std::vector<int> ids;
  std::vector<int> sizes;
  int rows = 0;
  const bool two_d = s0.size() == 2;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size() || (two_d && s[1] != s0[1])) {
      throw std::invalid_argument("concat shape mismatch");
    }
    rows += s[0];
    out.insert(out.end(), p.value().begin(), p.value().end());
    ids.push_back(p.id());
    sizes.push_back(p.size());
  }
  Shape os = two_d ? Shape{rows, s0[1]} : Shape{rows};
  auto back = [ids, sizes](Tape& t, const std::vector<double>& g) {
    size_t off = 0;
    for (size_t p = 0; p < ids.size(); ++p) {
      auto& ga = t.grad_buf(ids[p]);
      for (int i = 0; i < sizes[p]; ++i) ga[i] += g[off + i];
      off += sizes[p];
    }
  };
  return Tensor(this, push(std::move(os), std::move(out), ids, back));
}

Tensor Tape::reshape(Tensor a, Shape s) {
  if (num_elems(s) != a.size()) throw std::invalid_argument("reshape size mismatch");
  const int ia = a.id();
  auto back = [ia](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_buf(ia);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  };
  return Tensor(this, push(std::move(s), a.value(), {ia}, back));
}

void Tape::backward(Tensor loss) {
  if (loss.tape() != this) throw std::invalid_argument("loss from another tape");
  if (loss.size() != 1) throw std::invalid_argument("backward requires a scalar loss");
  grads_.assign(nodes_.size(), {});
  for (size_t i = 0; i < nodes_.size(); ++i) grads_[i].assign(nodes_[i].val.size(), 0.0);
  grads_[loss.id()][0] = 1.0;
  for (int i = loss.id(); i >= 0; --i) {
    if (nodes_[i].back) nodes_[i].back(*this, grads_[i]);
  }
  grads_ready_ = true;
}

const std::vector<double>& Tape::grad(Tensor t) const {
  if (!grads_ready_) throw std::logic_error("backward() has not run");
  return grads_[t.id()];
}

}  // namespace ugdet
