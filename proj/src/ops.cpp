#include <algorithm>
#include <cmath>

#include "oodattack/errors.hpp"
#include "oodattack/tape.hpp"

namespace oodattack {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
  return *a.tape;
}

// a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      out[i * n + j] = s;
    }
  }
  return out;
}

// a^T * b
Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({k, n});
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t i = 0; i < k; ++i) {
      const double air = a[r * k + i];
      if (air == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += air * b[r * n + j];
    }
  }
  return out;
}

template <class F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &b.data()[p * n];
      double* orow = &out.data()[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

Tensor softmax(const Tensor& logits) {
  if (logits.size() == 0) throw DimensionError("softmax of empty tensor");
  Tensor out(logits.shape());
  const std::size_t c = logits.cols();
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto z = logits.row(r);
    auto y = out.row(r);
    const double zmax = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      y[j] = std::exp(z[j] - zmax);
      total += y[j];
    }
    for (std::size_t j = 0; j < c; ++j) y[j] /= total;
  }
  return out;
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape("add", av, bv);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& tp, const Tensor& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape("sub", av, bv);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& tp, const Tensor& g) {
    tp.accumulate(a, g);
    if (tp.requires_grad(b)) tp.accumulate(b, map(g, [](double v) { return -v; }));
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape("mul", av, bv);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& tp, const Tensor& g) {
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double c) {
  Tensor out = map(a.value(), [c](double v) { return c * v; });
  return a.tape->record(std::move(out), {a.id}, [a = a.id, c](Tape& tp, const Tensor& g) {
    tp.accumulate(a, map(g, [c](double v) { return c * v; }));
  });
}

Var add_scalar(Var a, double c) {
  Tensor out = map(a.value(), [c](double v) { return v + c; });
  return a.tape->record(std::move(out), {a.id}, [a = a.id](Tape& tp, const Tensor& g) { tp.accumulate(a, g); });
}

Var add_row(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t n = av.cols();
  if (bv.size() != n) {
    throw DimensionError("add_row: bias " + shape_string(bv.shape()) + " does not fit " + shape_string(av.shape()));
  }
  Tensor out(av.shape());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = av[r * n + j] + bv[j];
  return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id, n](Tape& tp, const Tensor& g) {
    tp.accumulate(a, g);
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_buffer(b);
      const std::size_t rows = g.size() / n;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
    }
  });
}

Var scale_rows(Var a, Var s) {
  Tape& t = tape_of(a, s);
  const Tensor& av = a.value();
  const Tensor& sv = s.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (sv.size() != m) {
    throw DimensionError("scale_rows: scale " + shape_string(sv.shape()) + " does not fit " + shape_string(av.shape()));
  }
  Tensor out(av.shape());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = av[r * n + j] * sv[r];
  return t.record(std::move(out), {a.id, s.id}, [a = a.id, s = s.id, m, n](Tape& tp, const Tensor& g) {
    const Tensor& av = tp.value(a);
    const Tensor& sv = tp.value(s);
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad_buffer(a);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += g[r * n + j] * sv[r];
    }
    if (tp.requires_grad(s)) {
      Tensor& gs = tp.grad_buffer(s);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < n; ++j) gs[r] += g[r * n + j] * av[r * n + j];
    }
  });
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  Tensor out = matmul(a.value(), b.value());
  return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, matmul_nt(g, tp.value(b)));
    if (tp.requires_grad(b)) tp.accumulate(b, matmul_tn(tp.value(a), g));
  });
}

Var relu(Var x) {
  Tensor out = map(x.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  return x.tape->record(std::move(out), {x.id}, [x = x.id](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(x);
    Tensor& gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

Var exp(Var x) {
  Tensor out = map(x.value(), [](double v) { return std::exp(v); });
  return x.tape->record(std::move(out), {x.id}, [x = x.id](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(x);
    Tensor& gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * std::exp(xv[i]);
  });
}

Var cos(Var x) {
  Tensor out = map(x.value(), [](double v) { return std::cos(v); });
  return x.tape->record(std::move(out), {x.id}, [x = x.id](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(x);
    Tensor& gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i] * std::sin(xv[i]);
  });
}

Var power(Var x, double p) {
  Tensor out = map(x.value(), [p](double v) { return std::pow(v, p); });
  return x.tape->record(std::move(out), {x.id}, [x = x.id, p](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(x);
    Tensor& gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * p * std::pow(xv[i], p - 1.0);
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->record(Tensor::scalar(s), {x.id}, [x = x.id](Tape& tp, const Tensor& g) {
    tp.accumulate(x, Tensor(tp.value(x).shape(), g[0]));
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var row_sum(Var x) {
  const Tensor& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out({m});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r] += xv[r * n + j];
  return x.tape->record(std::move(out), {x.id}, [x = x.id, m, n](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_buffer(x);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[r];
  });
}

Var softmax(Var logits) {
  Tensor out = softmax(logits.value());
  return logits.tape->record(std::move(out), {logits.id}, [z = logits.id](Tape& tp, const Tensor& g) {
    const Tensor y = softmax(tp.value(z));
    Tensor& gz = tp.grad_buffer(z);
    const std::size_t c = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
      for (std::size_t j = 0; j < c; ++j) gz[r * c + j] += y[r * c + j] * (g[r * c + j] - dot);
    }
  });
}

Var cross_entropy(Var probs, std::span<const std::size_t> labels) {
  const Tensor& p = probs.value();
  const std::size_t m = p.rows(), c = p.cols();
  if (labels.size() != m) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(m) +
                         " rows");
  }
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    if (labels[r] >= c) throw ContractError("cross_entropy: label " + std::to_string(labels[r]) + " out of range");
    total -= std::log(std::max(p[r * c + labels[r]], kLogFloor));
  }
  std::vector<std::size_t> y(labels.begin(), labels.end());
  return probs.tape->record(Tensor::scalar(total / static_cast<double>(m)), {probs.id},
                            [p = probs.id, y = std::move(y), m, c](Tape& tp, const Tensor& g) {
                              const Tensor& pv = tp.value(p);
                              Tensor& gp = tp.grad_buffer(p);
                              const double w = g[0] / static_cast<double>(m);
                              for (std::size_t r = 0; r < m; ++r) {
                                const double pr = pv[r * c + y[r]];
                                if (pr > kLogFloor) gp[r * c + y[r]] -= w / pr;
                              }
                            });
}

Var cross_entropy(Var probs, std::size_t label) {
  const std::size_t one[] = {label};
  return cross_entropy(probs, std::span<const std::size_t>(one));
}

Var binary_cross_entropy(Var scores, std::span<const std::size_t> labels) {
  const Tensor& k = scores.value();
  const std::size_t m = k.rows(), c = k.cols();
  if (labels.size() != m) throw DimensionError("binary_cross_entropy: label count does not match rows");
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    if (labels[r] >= c) throw ContractError("binary_cross_entropy: label out of range");
    for (std::size_t j = 0; j < c; ++j) {
      const double v = k[r * c + j];
      total -= (j == labels[r]) ? std::log(std::max(v, kLogFloor)) : std::log(std::max(1.0 - v, kLogFloor));
    }
  }
  std::vector<std::size_t> y(labels.begin(), labels.end());
  return scores.tape->record(Tensor::scalar(total / static_cast<double>(m)), {scores.id},
                             [s = scores.id, y = std::move(y), m, c](Tape& tp, const Tensor& g) {
                               const Tensor& kv = tp.value(s);
                               Tensor& gk = tp.grad_buffer(s);
                               const double w = g[0] / static_cast<double>(m);
                               for (std::size_t r = 0; r < m; ++r) {
                                 for (std::size_t j = 0; j < c; ++j) {
                                   const double v = kv[r * c + j];
                                   if (j == y[r]) {
                                     if (v > kLogFloor) gk[r * c + j] -= w / v;
                                   } else if (1.0 - v > kLogFloor) {
                                     gk[r * c + j] += w / (1.0 - v);
                                   }
                                 }
                               }
                             });
}

Var rbf_kernel(Var a, Var b, double sigma) {
  if (!(sigma > 0.0)) throw ParameterError("rbf_kernel: sigma must be positive, got " + std::to_string(sigma));
  Var d = sub(a, b);
  return exp(scale(sum(mul(d, d)), -1.0 / (2.0 * sigma * sigma)));
}

Var centroid_sq_distances(Var emb, const Tensor& centroids) {
  const Tensor& z = emb.value();
  const std::size_t m = z.rows(), classes = centroids.rows(), k = centroids.cols();
  if (z.cols() != classes * k) {
    throw DimensionError("centroid_sq_distances: embedding " + shape_string(z.shape()) + " vs centroids " +
                         shape_string(centroids.shape()));
  }
  Tensor out({m, classes});
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < classes; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        const double diff = z[r * classes * k + c * k + j] - centroids[c * k + j];
        s += diff * diff;
      }
      out[r * classes + c] = s;
    }
  }
  return emb.tape->record(std::move(out), {emb.id},
                          [e = emb.id, cen = &centroids, m, classes, k](Tape& tp, const Tensor& g) {
                            const Tensor& z = tp.value(e);
                            Tensor& gz = tp.grad_buffer(e);
                            for (std::size_t r = 0; r < m; ++r) {
                              for (std::size_t c = 0; c < classes; ++c) {
                                const double w = 2.0 * g[r * classes + c];
                                for (std::size_t j = 0; j < k; ++j) {
                                  const std::size_t at = r * classes * k + c * k + j;
                                  gz[at] += w * (z[at] - (*cen)[c * k + j]);
                                }
                              }
                            }
                          });
}

Var quadratic_form_rows(Var phi, const Tensor& a) {
  const Tensor& f = phi.value();
  const std::size_t m = f.rows(), n = f.cols();
  if (a.rows() != n || a.cols() != n) {
    throw DimensionError("quadratic_form_rows: " + shape_string(f.shape()) + " vs " + shape_string(a.shape()));
  }
  const Tensor af = matmul_nt(f, a);  // row r holds A phi_r
  Tensor out({m});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r] += f[r * n + j] * af[r * n + j];
  return phi.tape->record(std::move(out), {phi.id}, [p = phi.id, a = &a, m, n](Tape& tp, const Tensor& g) {
    const Tensor& f = tp.value(p);
    const Tensor left = matmul_nt(f, *a);  // A phi
    const Tensor right = matmul(f, *a);    // A^T phi
    Tensor& gf = tp.grad_buffer(p);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < n; ++j) gf[r * n + j] += g[r] * (left[r * n + j] + right[r * n + j]);
  });
}

}  // namespace oodattack
