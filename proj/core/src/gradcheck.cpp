#include "ugdet/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

#include "ugdet/losses.hpp"
#include "ugdet/probdist.hpp"
#include "ugdet/tensor.hpp"

namespace ugdet {

GradCheckReport finite_diff_check(
    const std::function<double(std::span<const double>)>& f,
    std::vector<double> params, std::span<const double> analytic_grad,
    double eps, double tol) {
  if (eps < 1e-7 || eps > 1e-3) throw std::invalid_argument("eps out of range");
  if (analytic_grad.size() != params.size()) {
    throw std::invalid_argument("gradient size mismatch");
  }
  const double f0 = f(params);
  if (f(params) != f0) throw std::runtime_error("non-deterministic function under check");

  GradCheckReport rep;
  for (size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + eps;
    const double fp = f(params);
    params[i] = saved - eps;
    const double fm = f(params);
    params[i] = saved;
    const double num = (fp - fm) / (2.0 * eps);
    const double ana = analytic_grad[i];
    const double denom = std::max({std::fabs(num), std::fabs(ana), 1e-6});
    const double rel = std::fabs(num - ana) / denom;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_index = static_cast<int>(i);
    }
  }
  rep.pass = rep.max_rel_err <= tol;
  return rep;
}

namespace {

// Builds a scalar from params via `build`, contracting any output with
// a fixed projection so there is a single well-defined gradient.
using Builder = std::function<Tensor(Tape&, Tensor leaf)>;

SuiteResult check_builder(const std::string& name, const Builder& build,
                          Shape shape, std::mt19937_64& rng, int points,
                          double lo, double hi, double tol) {
  SuiteResult res{name, 0.0, true};
  int n = 1;
  for (int d : shape) n *= d;
  std::uniform_real_distribution<double> u(lo, hi);
  for (int p = 0; p < points; ++p) {
    std::vector<double> x(n);
    for (double& v : x) v = u(rng);
    std::vector<double> proj(1);  // resized after the first eval

    auto eval = [&](std::span<const double> in, std::vector<double>* grad) {
      Tape tape;
      Tensor leaf = tape.leaf(shape, {in.begin(), in.end()});
      Tensor out = build(tape, leaf);
      if (static_cast<int>(proj.size()) != out.size()) {
        std::mt19937_64 prng(0xabcdULL);
        std::uniform_real_distribution<double> pu(0.5, 1.5);
        proj.resize(out.size());
        for (double& v : proj) v = pu(prng);
      }
      Tensor w = tape.constant(out.shape(), proj);
      Tensor s = tape.sum(tape.mul(out, w));
      if (grad) {
        tape.backward(s);
        *grad = tape.grad(leaf);
      }
      return s.scalar();
    };

    std::vector<double> analytic;
    eval(x, &analytic);
    auto rep = finite_diff_check(
        [&](std::span<const double> in) { return eval(in, nullptr); }, x,
        analytic, 1e-5, tol);
    if (rep.max_rel_err > res.max_rel_err) res.max_rel_err = rep.max_rel_err;
    if (!rep.pass) res.pass = false;
  }
  return res;
}

}  // namespace

std::vector<SuiteResult> fd_op_suite(uint64_t seed, int points, double tol) {
  std::mt19937_64 rng(seed);
  std::vector<SuiteResult> out;
  auto add = [&](const std::string& name, const Builder& b, Shape s,
                 double lo = -2.0, double hi = 2.0) {
    out.push_back(check_builder(name, b, std::move(s), rng, points, lo, hi, tol));
  };

  add("matmul", [](Tape& t, Tensor x) {
    std::vector<double> w(12);
    for (size_t i = 0; i < w.size(); ++i) w[i] = 0.1 * (static_cast<int>(i) - 5);
    return t.matmul(x, t.constant({4, 3}, w));
  }, {3, 4});
  add("add_same", [](Tape& t, Tensor x) {
    return t.add(x, t.constant({2, 3}, {1, -1, 2, -2, 3, -3}));
  }, {2, 3});
  add("add_bias", [](Tape& t, Tensor x) {
    return t.add(x, t.constant({3}, {0.5, -0.25, 1.5}));
  }, {2, 3});
  add("add_scalar", [](Tape& t, Tensor x) { return t.add_scalar(x, 0.7); }, {5});
  add("sub", [](Tape& t, Tensor x) {
    return t.sub(t.constant({4}, {1, 2, 3, 4}), x);
  }, {4});
  add("mul", [](Tape& t, Tensor x) {
    return t.mul(x, t.constant({4}, {2, -1, 0.5, 3}));
  }, {4});
  add("mul_self", [](Tape& t, Tensor x) { return t.square(x); }, {4});
  add("scalar_mul", [](Tape& t, Tensor x) { return t.scalar_mul(x, -1.7); }, {4});
  // stay away from the relu kink
  add("relu", [](Tape& t, Tensor x) { return t.relu(x); }, {6}, 0.1, 2.0);
  add("relu_neg", [](Tape& t, Tensor x) { return t.relu(x); }, {6}, -2.0, -0.1);
  add("tanh", [](Tape& t, Tensor x) { return t.tanh(x); }, {6});
  add("sigmoid", [](Tape& t, Tensor x) { return t.sigmoid(x); }, {6});
  add("exp", [](Tape& t, Tensor x) { return t.exp(x); }, {6});
  add("log", [](Tape& t, Tensor x) { return t.log(x); }, {6}, 0.2, 3.0);
  add("reciprocal", [](Tape& t, Tensor x) { return t.reciprocal_pos(x); }, {6},
      0.2, 3.0);
  add("sum", [](Tape& t, Tensor x) { return t.sum(x); }, {7});
  add("mean", [](Tape& t, Tensor x) { return t.mean(x); }, {7});
  add("softmax_t", [](Tape& t, Tensor x) { return t.softmax_t(x, 0.5); }, {3, 4});
  add("gather_rows", [](Tape& t, Tensor x) {
    return t.gather_rows(x, {2, 0, 2});
  }, {4, 3});
  add("concat", [](Tape& t, Tensor x) {
    Tensor a = t.gather_rows(x, {0, 1});
    Tensor b = t.gather_rows(x, {2});
    return t.concat({b, a});
  }, {3, 2});
  add("reshape", [](Tape& t, Tensor x) {
    return t.square(t.reshape(x, {6, 2}));
  }, {3, 4});
  add("composite_mlp", [](Tape& t, Tensor x) {
    std::vector<double> w(8);
    for (size_t i = 0; i < w.size(); ++i) w[i] = 0.2 * (static_cast<int>(i) - 3);
    Tensor h = t.tanh(t.matmul(x, t.constant({4, 2}, w)));
    return t.softmax_t(h, 0.7);
  }, {2, 4});
  return out;
}

std::vector<SuiteResult> fd_loss_suite(uint64_t seed, int configs, double tol) {
  std::mt19937_64 rng(seed);
  std::vector<SuiteResult> out;
  std::uniform_real_distribution<double> u01(0.05, 0.95);
  std::uniform_real_distribution<double> un(-1.5, 1.5);
  const EntropyNorms norms = efl_norms(3);

  // supervised classification: logits -> softmax -> CE vs one-hot rows
  {
    SuiteResult res{"supervised_cls", 0.0, true};
    for (int c = 0; c < configs; ++c) {
      const int rows = 3, arity = 4;
      std::vector<double> x(rows * arity);
      for (double& v : x) v = un(rng);
      std::vector<double> targets(rows * arity, 0.0);
      for (int r = 0; r < rows; ++r) {
        targets[r * arity + static_cast<int>(rng() % arity)] = 1.0;
      }
      auto eval = [&](std::span<const double> in, std::vector<double>* grad) {
        Tape tape;
        Tensor leaf = tape.leaf({rows, arity}, {in.begin(), in.end()});
        Tensor p = tape.softmax_t(leaf, 1.0);
        Tensor t = tape.constant({rows, arity}, targets);
        Tensor loss = tape.scalar_mul(tape.sum(tape.mul(t, tape.log(p))),
                                      -1.0 / rows);
        if (grad) {
          tape.backward(loss);
          *grad = tape.grad(leaf);
        }
        return loss.scalar();
      };
      std::vector<double> analytic;
      eval(x, &analytic);
      auto rep = finite_diff_check(
          [&](std::span<const double> in) { return eval(in, nullptr); }, x,
          analytic, 1e-5, tol);
      res.max_rel_err = std::max(res.max_rel_err, rep.max_rel_err);
      res.pass = res.pass && rep.pass;
    }
    out.push_back(res);
  }

  // supervised location: (mean, raw var) -> sigmoid var -> point NLL
  {
    SuiteResult res{"supervised_loc", 0.0, true};
    for (int c = 0; c < configs; ++c) {
      std::vector<double> x(8);  // 4 means then 4 raw variances
      for (double& v : x) v = un(rng);
      std::array<double, 4> targets{};
      for (double& v : targets) v = un(rng);
      auto eval = [&](std::span<const double> in, std::vector<double>* grad) {
        Tape tape;
        Tensor leaf = tape.leaf({8}, {in.begin(), in.end()});
        Tensor m = tape.gather_rows(tape.reshape(leaf, {8, 1}), {0, 1, 2, 3});
        Tensor v = tape.sigmoid(
            tape.gather_rows(tape.reshape(leaf, {8, 1}), {4, 5, 6, 7}));
        Tensor t = tape.constant({4, 1},
                                 {targets[0], targets[1], targets[2], targets[3]});
        Tensor resid = tape.sub(t, m);
        Tensor per = tape.add(
            tape.add(tape.log(v),
                     tape.mul(tape.square(resid), tape.reciprocal_pos(v))),
            tape.constant(1.8378770664093453));
        Tensor loss = tape.scalar_mul(tape.sum(per), 0.5);
        if (grad) {
          tape.backward(loss);
          *grad = tape.grad(leaf);
        }
        return loss.scalar();
      };
      std::vector<double> analytic;
      eval(x, &analytic);
      auto rep = finite_diff_check(
          [&](std::span<const double> in) { return eval(in, nullptr); }, x,
          analytic, 1e-5, tol);
      res.max_rel_err = std::max(res.max_rel_err, rep.max_rel_err);
      res.pass = res.pass && rep.pass;
    }
    out.push_back(res);
  }

  // consistency classification, both heads
  for (Head head : {Head::kRpn, Head::kRoi}) {
    SuiteResult res{head == Head::kRpn ? "consistency_cls_rpn"
                                       : "consistency_cls_roi",
                    0.0, true};
    for (int c = 0; c < configs; ++c) {
      const int arity = head == Head::kRpn ? 2 : 4;
      std::vector<double> x(head == Head::kRpn ? 2 : 4);
      for (double& v : x) v = un(rng);
      CategoricalDist teacher;
      teacher.probs.resize(4);
      double tot = 0.0;
      for (double& p : teacher.probs) tot += (p = u01(rng));
      for (double& p : teacher.probs) p /= tot;
      const double tau = 0.25 + 0.5 * u01(rng);
      EflConfig efl{0.5, norms};
      auto eval = [&](std::span<const double> in, std::vector<double>* grad) {
        Tape tape;
        Tensor leaf = tape.leaf({1, arity}, {in.begin(), in.end()});
        Tensor p = tape.softmax_t(leaf, 1.0);
        Tensor loss = consistency_cls_loss(tape, teacher, p, head, tau, efl);
        if (grad) {
          tape.backward(loss);
          *grad = tape.grad(leaf);
        }
        return loss.scalar();
      };
      std::vector<double> analytic;
      eval(x, &analytic);
      auto rep = finite_diff_check(
          [&](std::span<const double> in) { return eval(in, nullptr); }, x,
          analytic, 1e-5, tol);
      res.max_rel_err = std::max(res.max_rel_err, rep.max_rel_err);
      res.pass = res.pass && rep.pass;
    }
    out.push_back(res);
  }

  // consistency location, constant teacher and tape-borne teacher means
  for (int variant = 0; variant < 2; ++variant) {
    SuiteResult res{variant == 0 ? "consistency_loc" : "consistency_loc_anchor",
                    0.0, true};
    for (int c = 0; c < configs; ++c) {
      // leaf: 4 student means, 4 raw student vars, 4 anchor-side inputs
      std::vector<double> x(12);
      for (double& v : x) v = un(rng);
      BoxDist teacher;
      for (auto& g : teacher.coords) {
        g.mean = un(rng);
        g.variance = u01(rng);
      }
      const double tau = 0.25 + 0.5 * u01(rng);
      EflConfig efl{0.5, norms};
      auto eval = [&](std::span<const double> in, std::vector<double>* grad) {
        Tape tape;
        Tensor leaf = tape.leaf({12}, {in.begin(), in.end()});
        Tensor col = tape.reshape(leaf, {12, 1});
        Tensor sm = tape.gather_rows(col, {0, 1, 2, 3});
        Tensor sv = tape.sigmoid(tape.gather_rows(col, {4, 5, 6, 7}));
        Tensor loss;
        if (variant == 0) {
          loss = consistency_bbox_loss(tape, teacher, sm, sv, tau, efl);
        } else {
          Tensor tm = tape.tanh(tape.gather_rows(col, {8, 9, 10, 11}));
          std::array<double, 4> tv{teacher.coords[0].variance,
                                   teacher.coords[1].variance,
                                   teacher.coords[2].variance,
                                   teacher.coords[3].variance};
          loss = consistency_bbox_loss(tape, tm, tv, sm, sv, tau, efl);
        }
        if (grad) {
          tape.backward(loss);
          *grad = tape.grad(leaf);
        }
        return loss.scalar();
      };
      std::vector<double> analytic;
      eval(x, &analytic);
      auto rep = finite_diff_check(
          [&](std::span<const double> in) { return eval(in, nullptr); }, x,
          analytic, 1e-5, tol);
      res.max_rel_err = std::max(res.max_rel_err, rep.max_rel_err);
      res.pass = res.pass && rep.pass;
    }
    out.push_back(res);
  }

  return out;
}

}  // namespace ugdet
