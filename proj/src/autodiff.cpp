#include "ithn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace ithn::ad {

ShapeError::ShapeError(const std::string& op, const Shape& a, const Shape& b)
    : std::invalid_argument(op + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b)) {}

ShapeError::ShapeError(const std::string& op, const std::string& detail)
    : std::invalid_argument(op + ": " + detail) {}

namespace {

using Inputs = std::span<const Tensor* const>;
using Grads = std::span<Tensor* const>;

void require_matrix(const std::string& op, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(op, "expected a matrix, got shape " + shape_str(t.shape()));
}

void require_same(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

double row_norm(std::span<const double> r) {
  double s = 0.0;
  for (double v : r) s += v * v;
  return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Var unary(std::string op, const Var& x, std::function<double(double)> f, std::function<double(double, double)> df) {
  EvalFn eval = [f](Inputs in) {
    Tensor out(in[0]->shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f((*in[0])[i]);
    return out;
  };
  // df(x, y) returns dy/dx given the input and output value.
  BackFn back = [df](Inputs in, const Tensor& out, const Tensor& g, Grads gin) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * df((*in[0])[i], out[i]);
  };
  return make_op(std::move(op), {x}, std::move(eval), std::move(back));
}

}  // namespace

Var leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->op = "leaf";
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

Var make_op(std::string op, std::vector<Var> inputs, EvalFn eval, BackFn back) {
  auto n = std::make_shared<Node>();
  n->op = std::move(op);
  std::vector<const Tensor*> vals;
  for (auto& v : inputs) {
    if (!v) throw std::invalid_argument(n->op + ": null input");
    n->requires_grad = n->requires_grad || v.requires_grad();
    vals.push_back(&v.value());
    n->inputs.push_back(v.ptr());
  }
  n->value = eval(vals);
  n->eval = std::move(eval);
  n->back = std::move(back);
  return Var(std::move(n));
}

std::vector<Node*> topological_order(const Var& root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

Tensor forward(const Var& root) {
  std::vector<const Tensor*> vals;
  for (Node* n : topological_order(root)) {
    if (!n->eval) continue;
    vals.clear();
    for (auto& in : n->inputs) vals.push_back(&in->value);
    n->value = n->eval(vals);
  }
  return root.value();
}

GradientMap backward(const Var& root) {
  if (root.value().size() != 1)
    throw ShapeError("backward", "root must be a scalar, got shape " + shape_str(root.shape()));
  auto order = topological_order(root);
  for (Node* n : order)
    if (n->requires_grad) n->grad = Tensor::zeros_like(n->value);
  GradientMap grads;
  if (!root.requires_grad()) return grads;
  root.node()->grad[0] = 1.0;

  std::vector<const Tensor*> vals;
  std::vector<Tensor*> gin;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->requires_grad || !n->back) continue;
    vals.clear();
    gin.clear();
    for (auto& in : n->inputs) {
      vals.push_back(&in->value);
      gin.push_back(in->requires_grad ? &in->grad : nullptr);
    }
    n->back(vals, n->value, n->grad, gin);
  }
  for (Node* n : order)
    if (n->requires_grad && !n->eval) grads.emplace(n, n->grad);
  return grads;
}

// ---- primitives -----------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_matrix("matmul", a.value());
  require_matrix("matmul", b.value());
  if (a.value().cols() != b.value().rows()) throw ShapeError("matmul", a.shape(), b.shape());
  EvalFn eval = [](Inputs in) {
    const Tensor& x = *in[0];
    const Tensor& y = *in[1];
    const std::size_t n = x.rows(), k = x.cols(), m = y.cols();
    Tensor out({n, m});
    const double* xp = x.data().data();
    const double* yp = y.data().data();
    double* op = out.data().data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double xv = xp[i * k + p];
        const double* yr = yp + p * m;
        double* orow = op + i * m;
        for (std::size_t j = 0; j < m; ++j) orow[j] += xv * yr[j];
      }
    return out;
  };
  BackFn back = [](Inputs in, const Tensor&, const Tensor& g, Grads gin) {
    const Tensor& x = *in[0];
    const Tensor& y = *in[1];
    const std::size_t n = x.rows(), k = x.cols(), m = y.cols();
    const double* xp = x.data().data();
    const double* yp = y.data().data();
    const double* gp = g.data().data();
    if (gin[0]) {
      double* gx = gin[0]->data().data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double* gr = gp + i * m;
          const double* yr = yp + p * m;
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += gr[j] * yr[j];
          gx[i * k + p] += s;
        }
    }
    if (gin[1]) {
      double* gy = gin[1]->data().data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double xv = xp[i * k + p];
          const double* gr = gp + i * m;
          double* yr = gy + p * m;
          for (std::size_t j = 0; j < m; ++j) yr[j] += xv * gr[j];
        }
    }
  };
  return make_op("matmul", {a, b}, std::move(eval), std::move(back));
}

Var add(const Var& a, const Var& b) {
  require_same("add", a.value(), b.value());
  return make_op(
      "add", {a, b},
      [](Inputs in) {
        Tensor out = *in[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*in[1])[i];
        return out;
      },
      [](Inputs, const Tensor&, const Tensor& g, Grads gin) {
        for (auto* gi : gin)
          if (gi)
            for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
      });
}

Var sub(const Var& a, const Var& b) {
  require_same("sub", a.value(), b.value());
  return make_op(
      "sub", {a, b},
      [](Inputs in) {
        Tensor out = *in[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= (*in[1])[i];
        return out;
      },
      [](Inputs, const Tensor&, const Tensor& g, Grads gin) {
        if (gin[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
        if (gin[1])
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
      });
}

Var multiply(const Var& a, const Var& b) {
  require_same("multiply", a.value(), b.value());
  return make_op(
      "multiply", {a, b},
      [](Inputs in) {
        Tensor out = *in[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*in[1])[i];
        return out;
      },
      [](Inputs in, const Tensor&, const Tensor& g, Grads gin) {
        if (gin[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * (*in[1])[i];
        if (gin[1])
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * (*in[0])[i];
      });
}

Var divide(const Var& a, const Var& b) {
  require_same("divide", a.value(), b.value());
  return make_op(
      "divide", {a, b},
      [](Inputs in) {
        Tensor out = *in[0];
        for (std::size_t i = 0; i < out.size(); ++i) {
          if ((*in[1])[i] == 0.0) throw std::domain_error("divide: zero denominator at element " + std::to_string(i));
          out[i] /= (*in[1])[i];
        }
        return out;
      },
      [](Inputs in, const Tensor& out, const Tensor& g, Grads gin) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double d = (*in[1])[i];
          if (gin[0]) (*gin[0])[i] += g[i] / d;
          if (gin[1]) (*gin[1])[i] -= g[i] * out[i] / d;
        }
      });
}

Var add_bias(const Var& x, const Var& bias) {
  require_matrix("add_bias", x.value());
  require_matrix("add_bias", bias.value());
  if (bias.value().rows() != 1 || bias.value().cols() != x.value().cols())
    throw ShapeError("add_bias", x.shape(), bias.shape());
  return make_op(
      "add_bias", {x, bias},
      [](Inputs in) {
        Tensor out = *in[0];
        const std::size_t c = out.cols();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*in[1])[i % c];
        return out;
      },
      [](Inputs, const Tensor&, const Tensor& g, Grads gin) {
        const std::size_t c = g.cols();
        if (gin[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
        if (gin[1])
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i % c] += g[i];
      });
}

Var mul_rows(const Var& x, const Var& col) {
  require_matrix("mul_rows", x.value());
  require_matrix("mul_rows", col.value());
  if (col.value().cols() != 1 || col.value().rows() != x.value().rows())
    throw ShapeError("mul_rows", x.shape(), col.shape());
  return make_op(
      "mul_rows", {x, col},
      [](Inputs in) {
        Tensor out = *in[0];
        for (std::size_t r = 0; r < out.rows(); ++r)
          for (double& v : out.row_span(r)) v *= (*in[1])[r];
        return out;
      },
      [](Inputs in, const Tensor&, const Tensor& g, Grads gin) {
        const Tensor& x = *in[0];
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) {
            if (gin[0]) (*gin[0])(r, c) += g(r, c) * (*in[1])[r];
            if (gin[1]) (*gin[1])[r] += g(r, c) * x(r, c);
          }
      });
}

Var scale(const Var& x, double s) {
  return unary(
      "scale", x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& x, double s) {
  return unary(
      "add_scalar", x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Var exp(const Var& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(const Var& x) {
  return unary(
      "log", x,
      [](double v) {
        if (!(v > 0.0)) throw std::domain_error("log: non-positive input " + std::to_string(v));
        return std::log(v);
      },
      [](double v, double) { return 1.0 / v; });
}

Var tanh(const Var& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var clamp(const Var& x, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  return unary(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

namespace {

// In-place numerically stable softmax of one row over the given column mask.
void softmax_row(std::span<const double> x, std::span<double> y, std::size_t limit) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, x[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < limit; ++j) {
    y[j] = std::exp(x[j] - mx);
    s += y[j];
  }
  for (std::size_t j = 0; j < limit; ++j) y[j] /= s;
  for (std::size_t j = limit; j < y.size(); ++j) y[j] = 0.0;
}

double logsumexp(std::span<const double> x, std::size_t skip) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < x.size(); ++j)
    if (j != skip) mx = std::max(mx, x[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j)
    if (j != skip) s += std::exp(x[j] - mx);
  return mx + std::log(s);
}

constexpr std::size_t kNoSkip = static_cast<std::size_t>(-1);

}  // namespace

Var softmax_rows(const Var& x) {
  require_matrix("softmax_rows", x.value());
  return make_op(
      "softmax_rows", {x},
      [](Inputs in) {
        Tensor out(in[0]->shape());
        for (std::size_t r = 0; r < out.rows(); ++r) softmax_row(in[0]->row_span(r), out.row_span(r), out.cols());
        return out;
      },
      [](Inputs, const Tensor& y, const Tensor& g, Grads gin) {
        for (std::size_t r = 0; r < y.rows(); ++r) {
          const double gy = dot(g.row_span(r), y.row_span(r));
          for (std::size_t c = 0; c < y.cols(); ++c) (*gin[0])(r, c) += y(r, c) * (g(r, c) - gy);
        }
      });
}

Var log_softmax_rows(const Var& x) {
  require_matrix("log_softmax_rows", x.value());
  return make_op(
      "log_softmax_rows", {x},
      [](Inputs in) {
        Tensor out = *in[0];
        for (std::size_t r = 0; r < out.rows(); ++r) {
          const double lse = logsumexp(in[0]->row_span(r), kNoSkip);
          for (double& v : out.row_span(r)) v -= lse;
        }
        return out;
      },
      [](Inputs, const Tensor& y, const Tensor& g, Grads gin) {
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double gs = 0.0;
          for (double v : g.row_span(r)) gs += v;
          for (std::size_t c = 0; c < y.cols(); ++c) (*gin[0])(r, c) += g(r, c) - std::exp(y(r, c)) * gs;
        }
      });
}

Var l2_normalize_rows(const Var& x) {
  require_matrix("l2_normalize_rows", x.value());
  return make_op(
      "l2_normalize_rows", {x},
      [](Inputs in) {
        Tensor out = *in[0];
        for (std::size_t r = 0; r < out.rows(); ++r) {
          const double n = row_norm(in[0]->row_span(r)) + kNormEpsilon;
          for (double& v : out.row_span(r)) v /= n;
        }
        return out;
      },
      [](Inputs in, const Tensor&, const Tensor& g, Grads gin) {
        const Tensor& x = *in[0];
        for (std::size_t r = 0; r < x.rows(); ++r) {
          const double n = row_norm(x.row_span(r));
          const double ne = n + kNormEpsilon;
          // Zero row: only the 1/(n+eps) term survives.
          const double gx = n > 0.0 ? dot(g.row_span(r), x.row_span(r)) / (ne * ne * n) : 0.0;
          for (std::size_t c = 0; c < x.cols(); ++c) (*gin[0])(r, c) += g(r, c) / ne - gx * x(r, c);
        }
      });
}

Var cosine_matrix(const Var& a, const Var& b) {
  require_matrix("cosine_matrix", a.value());
  require_matrix("cosine_matrix", b.value());
  if (a.value().cols() != b.value().cols()) throw ShapeError("cosine_matrix", a.shape(), b.shape());
  auto norms = [](const Tensor& t, const char* which) {
    std::vector<double> n(t.rows());
    for (std::size_t r = 0; r < t.rows(); ++r) {
      n[r] = row_norm(t.row_span(r));
      if (n[r] == 0.0)
        throw std::domain_error(std::string("cosine_matrix: zero-norm row ") + std::to_string(r) + " in operand " + which);
    }
    return n;
  };
  return make_op(
      "cosine_matrix", {a, b},
      [norms](Inputs in) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        auto nx = norms(x, "a");
        auto ny = norms(y, "b");
        Tensor out({x.rows(), y.rows()});
        for (std::size_t i = 0; i < x.rows(); ++i)
          for (std::size_t j = 0; j < y.rows(); ++j) out(i, j) = dot(x.row_span(i), y.row_span(j)) / (nx[i] * ny[j]);
        return out;
      },
      [norms](Inputs in, const Tensor& c, const Tensor& g, Grads gin) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        auto nx = norms(x, "a");
        auto ny = norms(y, "b");
        const std::size_t d = x.cols();
        for (std::size_t i = 0; i < x.rows(); ++i)
          for (std::size_t j = 0; j < y.rows(); ++j) {
            const double gij = g(i, j);
            if (gij == 0.0) continue;
            const double inv = 1.0 / (nx[i] * ny[j]);
            for (std::size_t k = 0; k < d; ++k) {
              if (gin[0]) (*gin[0])(i, k) += gij * (y(j, k) * inv - c(i, j) * x(i, k) / (nx[i] * nx[i]));
              if (gin[1]) (*gin[1])(j, k) += gij * (x(i, k) * inv - c(i, j) * y(j, k) / (ny[j] * ny[j]));
            }
          }
      });
}

Var row_dot(const Var& a, const Var& b) {
  require_matrix("row_dot", a.value());
  require_same("row_dot", a.value(), b.value());
  return make_op(
      "row_dot", {a, b},
      [](Inputs in) {
        Tensor out({in[0]->rows(), 1});
        for (std::size_t r = 0; r < out.rows(); ++r) out[r] = dot(in[0]->row_span(r), in[1]->row_span(r));
        return out;
      },
      [](Inputs in, const Tensor&, const Tensor& g, Grads gin) {
        for (std::size_t r = 0; r < in[0]->rows(); ++r)
          for (std::size_t c = 0; c < in[0]->cols(); ++c) {
            if (gin[0]) (*gin[0])(r, c) += g[r] * (*in[1])(r, c);
            if (gin[1]) (*gin[1])(r, c) += g[r] * (*in[0])(r, c);
          }
      });
}

Var sum(const Var& x) {
  return make_op(
      "sum", {x},
      [](Inputs in) {
        double s = 0.0;
        for (double v : in[0]->data()) s += v;
        return Tensor::scalar(s);
      },
      [](Inputs, const Tensor&, const Tensor& g, Grads gin) {
        for (double& v : gin[0]->data()) v += g[0];
      });
}

Var mean(const Var& x) {
  if (x.value().size() == 0) throw ShapeError("mean", "empty input");
  return make_op(
      "mean", {x},
      [](Inputs in) {
        double s = 0.0;
        for (double v : in[0]->data()) s += v;
        return Tensor::scalar(s / static_cast<double>(in[0]->size()));
      },
      [](Inputs in, const Tensor&, const Tensor& g, Grads gin) {
        const double w = g[0] / static_cast<double>(in[0]->size());
        for (double& v : gin[0]->data()) v += w;
      });
}

Var mean_rows(const Var& x) {
  require_matrix("mean_rows", x.value());
  if (x.value().rows() == 0) throw ShapeError("mean_rows", "no rows");
  return make_op(
      "mean_rows", {x},
      [](Inputs in) {
        const Tensor& t = *in[0];
        Tensor out({1, t.cols()});
        for (std::size_t r = 0; r < t.rows(); ++r)
          for (std::size_t c = 0; c < t.cols(); ++c) out[c] += t(r, c);
        for (double& v : out.data()) v /= static_cast<double>(t.rows());
        return out;
      },
      [](Inputs in, const Tensor&, const Tensor& g, Grads gin) {
        const double inv = 1.0 / static_cast<double>(in[0]->rows());
        for (std::size_t r = 0; r < in[0]->rows(); ++r)
          for (std::size_t c = 0; c < in[0]->cols(); ++c) (*gin[0])(r, c) += g[c] * inv;
      });
}

Var transpose(const Var& x) {
  require_matrix("transpose", x.value());
  return make_op(
      "transpose", {x},
      [](Inputs in) {
        const Tensor& t = *in[0];
        Tensor out({t.cols(), t.rows()});
        for (std::size_t r = 0; r < t.rows(); ++r)
          for (std::size_t c = 0; c < t.cols(); ++c) out(c, r) = t(r, c);
        return out;
      },
      [](Inputs, const Tensor&, const Tensor& g, Grads gin) {
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) (*gin[0])(c, r) += g(r, c);
      });
}

Var diagonal(const Var& x) {
  require_matrix("diagonal", x.value());
  if (x.value().rows() != x.value().cols()) throw ShapeError("diagonal", "expected a square matrix, got " + shape_str(x.shape()));
  return make_op(
      "diagonal", {x},
      [](Inputs in) {
        Tensor out({in[0]->rows(), 1});
        for (std::size_t i = 0; i < out.rows(); ++i) out[i] = (*in[0])(i, i);
        return out;
      },
      [](Inputs, const Tensor&, const Tensor& g, Grads gin) {
        for (std::size_t i = 0; i < g.rows(); ++i) (*gin[0])(i, i) += g[i];
      });
}

Var row_logsumexp(const Var& x, bool exclude_diagonal) {
  require_matrix("row_logsumexp", x.value());
  const auto& t = x.value();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const std::size_t remaining = t.cols() - ((exclude_diagonal && r < t.cols()) ? 1 : 0);
    if (remaining == 0) throw ShapeError("row_logsumexp", "row " + std::to_string(r) + " has no entries to sum");
  }
  auto skip_for = [exclude_diagonal](std::size_t r) { return exclude_diagonal ? r : kNoSkip; };
  return make_op(
      "row_logsumexp", {x},
      [skip_for](Inputs in) {
        Tensor out({in[0]->rows(), 1});
        for (std::size_t r = 0; r < out.rows(); ++r) out[r] = logsumexp(in[0]->row_span(r), skip_for(r));
        return out;
      },
      [skip_for](Inputs in, const Tensor& out, const Tensor& g, Grads gin) {
        const Tensor& t = *in[0];
        for (std::size_t r = 0; r < t.rows(); ++r)
          for (std::size_t c = 0; c < t.cols(); ++c)
            if (c != skip_for(r)) (*gin[0])(r, c) += g[r] * std::exp(t(r, c) - out[r]);
      });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows", "no inputs");
  const std::size_t c = parts[0].value().cols();
  for (const auto& p : parts) {
    require_matrix("concat_rows", p.value());
    if (p.value().cols() != c) throw ShapeError("concat_rows", parts[0].shape(), p.shape());
  }
  return make_op(
      "concat_rows", std::vector<Var>(parts.begin(), parts.end()),
      [](Inputs in) {
        std::size_t rows = 0;
        for (auto* t : in) rows += t->rows();
        Tensor out({rows, in[0]->cols()});
        std::size_t off = 0;
        for (auto* t : in) {
          std::copy(t->data().begin(), t->data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
          off += t->size();
        }
        return out;
      },
      [](Inputs in, const Tensor&, const Tensor& g, Grads gin) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
          if (gin[k])
            for (std::size_t i = 0; i < in[k]->size(); ++i) (*gin[k])[i] += g[off + i];
          off += in[k]->size();
        }
      });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
  require_matrix("slice_rows", x.value());
  if (begin > end || end > x.value().rows())
    throw ShapeError("slice_rows", "range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
                                       shape_str(x.shape()));
  return make_op(
      "slice_rows", {x},
      [begin, end](Inputs in) {
        const std::size_t c = in[0]->cols();
        auto first = in[0]->data().begin() + static_cast<std::ptrdiff_t>(begin * c);
        return Tensor({end - begin, c}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>((end - begin) * c)));
      },
      [begin](Inputs in, const Tensor&, const Tensor& g, Grads gin) {
        const std::size_t off = begin * in[0]->cols();
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[off + i] += g[i];
      });
}

Var reshape(const Var& x, Shape shape) {
  if (shape_numel(shape) != x.value().size()) throw ShapeError("reshape", x.shape(), shape);
  return make_op(
      "reshape", {x}, [shape](Inputs in) { return in[0]->reshaped(shape); },
      [](Inputs, const Tensor&, const Tensor& g, Grads gin) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
      });
}

Var embedding_lookup(const Var& table, std::span<const int> ids_in) {
  require_matrix("embedding_lookup", table.value());
  std::vector<int> ids(ids_in.begin(), ids_in.end());
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= table.value().rows())
      throw ShapeError("embedding_lookup", "id " + std::to_string(id) + " outside table " + shape_str(table.shape()));
  return make_op(
      "embedding_lookup", {table},
      [ids](Inputs in) {
        const std::size_t d = in[0]->cols();
        Tensor out({ids.size(), d});
        for (std::size_t r = 0; r < ids.size(); ++r) {
          auto src = in[0]->row_span(static_cast<std::size_t>(ids[r]));
          std::copy(src.begin(), src.end(), out.row_span(r).begin());
        }
        return out;
      },
      [ids](Inputs, const Tensor&, const Tensor& g, Grads gin) {
        for (std::size_t r = 0; r < ids.size(); ++r) {
          auto dst = gin[0]->row_span(static_cast<std::size_t>(ids[r]));
          auto src = g.row_span(r);
          for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
        }
      });
}

Var causal_attention_weights(const Var& q, const Var& k) {
  require_matrix("causal_attention_weights", q.value());
  require_matrix("causal_attention_weights", k.value());
  if (q.shape() != k.shape()) throw ShapeError("causal_attention_weights", q.shape(), k.shape());
  return make_op(
      "causal_attention_weights", {q, k},
      [](Inputs in) {
        const Tensor& qt = *in[0];
        const Tensor& kt = *in[1];
        const std::size_t n = qt.rows();
        const double inv = 1.0 / std::sqrt(static_cast<double>(qt.cols()));
        Tensor scores({n, n});
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j <= i; ++j) scores(i, j) = dot(qt.row_span(i), kt.row_span(j)) * inv;
        Tensor out({n, n});
        for (std::size_t i = 0; i < n; ++i) softmax_row(scores.row_span(i), out.row_span(i), i + 1);
        return out;
      },
      [](Inputs in, const Tensor& p, const Tensor& g, Grads gin) {
        const Tensor& qt = *in[0];
        const Tensor& kt = *in[1];
        const std::size_t n = qt.rows(), d = qt.cols();
        const double inv = 1.0 / std::sqrt(static_cast<double>(d));
        for (std::size_t i = 0; i < n; ++i) {
          double gp = 0.0;
          for (std::size_t j = 0; j <= i; ++j) gp += g(i, j) * p(i, j);
          for (std::size_t j = 0; j <= i; ++j) {
            const double gs = p(i, j) * (g(i, j) - gp) * inv;
            if (gs == 0.0) continue;
            for (std::size_t c = 0; c < d; ++c) {
              if (gin[0]) (*gin[0])(i, c) += gs * kt(j, c);
              if (gin[1]) (*gin[1])(j, c) += gs * qt(i, c);
            }
          }
        }
      });
}

Var cross_entropy(const Var& logits, std::span<const int> targets_in, int pad_id) {
  require_matrix("cross_entropy", logits.value());
  const auto& t = logits.value();
  if (targets_in.size() != t.rows())
    throw ShapeError("cross_entropy", "targets length " + std::to_string(targets_in.size()) + " vs logits " +
                                          shape_str(t.shape()));
  std::vector<int> targets(targets_in.begin(), targets_in.end());
  std::size_t counted = 0;
  for (int y : targets) {
    if (y == pad_id) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= t.cols())
      throw ShapeError("cross_entropy", "target " + std::to_string(y) + " outside vocabulary of " + std::to_string(t.cols()));
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("cross_entropy: every target is padding");
  const double inv = 1.0 / static_cast<double>(counted);
  return make_op(
      "cross_entropy", {logits},
      [targets, pad_id, inv](Inputs in) {
        double total = 0.0;
        for (std::size_t r = 0; r < targets.size(); ++r) {
          if (targets[r] == pad_id) continue;
          total += logsumexp(in[0]->row_span(r), kNoSkip) - (*in[0])(r, static_cast<std::size_t>(targets[r]));
        }
        return Tensor::scalar(total * inv);
      },
      [targets, pad_id, inv](Inputs in, const Tensor&, const Tensor& g, Grads gin) {
        const Tensor& x = *in[0];
        std::vector<double> p(x.cols());
        for (std::size_t r = 0; r < targets.size(); ++r) {
          if (targets[r] == pad_id) continue;
          softmax_row(x.row_span(r), p, p.size());
          p[static_cast<std::size_t>(targets[r])] -= 1.0;
          for (std::size_t c = 0; c < p.size(); ++c) (*gin[0])(r, c) += g[0] * inv * p[c];
        }
      });
}

}  // namespace ithn::ad
