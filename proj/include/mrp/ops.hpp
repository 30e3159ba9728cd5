#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "mrp/tensor.hpp"

namespace mrp {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline ConstMap as_mat(const Array& a) { return ConstMap(a.data(), a.rows(), a.cols()); }
inline MutMap as_mat(Array& a) { return MutMap(a.data(), a.rows(), a.cols()); }

inline void check_same(const Array& a, const Array& b, const char* op) {
  if (!(a.same_shape(b))) fail(ErrorKind::invalid_shape,
          std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Plain (untracked) row kernels shared by the differentiable ops and by the
// inference path.

inline void softmax_row(std::span<const double> in, std::span<double> out) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : in) m = std::max(m, v);
  double z = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = std::exp(in[i] - m);
    z += out[i];
  }
  for (double& v : out) v /= z;
}

inline double log_sum_exp(std::span<const double> in) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : in) m = std::max(m, v);
  double z = 0.0;
  for (double v : in) z += std::exp(v - m);
  return m + std::log(z);
}

inline Array softmax_rows(const Array& x) {
  if (!(!x.shape().empty() && x.cols() >= 1)) fail(ErrorKind::invalid_shape,
          "softmax_rows needs a non-empty last extent, got " + shape_str(x.shape()));
  Array out(x.shape());
  for (std::int64_t r = 0; r < x.rows(); ++r) softmax_row(x.row(r), out.row(r));
  return out;
}

constexpr double kKlEps = 1e-12;

// Mean over rows of sum_v p_v (log p_v - log q_v). Zero-probability targets
// contribute nothing; q is clamped at kKlEps.
inline double kl_rows(const Array& p, const Array& q) {
  detail::check_same(p, q, "kl_rows");
  if (p.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::int64_t r = 0; r < p.rows(); ++r) {
    auto pr = p.row(r);
    auto qr = q.row(r);
    for (std::size_t v = 0; v < pr.size(); ++v)
      if (pr[v] > 0.0) total += pr[v] * (std::log(pr[v]) - std::log(std::max(qr[v], kKlEps)));
  }
  return total / static_cast<double>(p.rows());
}

// ---------------------------------------------------------------------------
// Differentiable ops.

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same(a.value(), b.value(), "add");
  return Tensor::from_op(a.value() + b.value(), {a, b}, [](Node& n) {
    for (std::size_t i = 0; i < 2; ++i)
      if (n.parents[i]->requires_grad) n.parents[i]->grad_buffer() += n.grad;
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same(a.value(), b.value(), "sub");
  return Tensor::from_op(a.value() - b.value(), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->grad_buffer() += n.grad;
    if (n.parents[1]->requires_grad) n.parents[1]->grad_buffer() -= n.grad;
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same(a.value(), b.value(), "mul");
  Array out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return Tensor::from_op(std::move(out), {a, b}, [](Node& n) {
    Node& pa = detail::parent(n, 0);
    Node& pb = detail::parent(n, 1);
    if (pa.requires_grad) {
      Array& g = pa.grad_buffer();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Array& g = pb.grad_buffer();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * pa.value[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  return Tensor::from_op(a.value() * s, {a}, [s](Node& n) {
    Array& g = detail::parent(n, 0).grad_buffer();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += s * n.grad[i];
  });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.value().span()) s += v;
  return Tensor::from_op(Array::scalar(s), {a}, [](Node& n) {
    Array& g = detail::parent(n, 0).grad_buffer();
    const double up = n.grad[0];
    for (double& v : g.span()) v += up;
  });
}

inline Tensor mean(const Tensor& a) {
  require(a.numel() > 0, ErrorKind::invalid_shape, "mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// [m x k] . [k x n] -> [m x n]; leading extents of `a` are flattened into rows.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  if (!(bv.rank() == 2 && av.cols() == bv.dim(0))) fail(ErrorKind::invalid_shape,
          "matmul " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  Array out(Shape{av.rows(), bv.cols()});
  detail::as_mat(out).noalias() = detail::as_mat(av) * detail::as_mat(bv);
  return Tensor::from_op(std::move(out), {a, b}, [](Node& n) {
    Node& pa = detail::parent(n, 0);
    Node& pb = detail::parent(n, 1);
    auto g = detail::as_mat(n.grad);
    if (pa.requires_grad) {
      Array& ga = pa.grad_buffer();
      detail::MutMap(ga.data(), pa.value.rows(), pa.value.cols()).noalias() +=
          g * detail::as_mat(pb.value).transpose();
    }
    if (pb.requires_grad)
      detail::as_mat(pb.grad_buffer()).noalias() += detail::as_mat(pa.value).transpose() * g;
  });
}

// Adds a length-n bias to every row of an [m x n] tensor.
inline Tensor add_row_bias(const Tensor& a, const Tensor& bias) {
  const Array& av = a.value();
  if (!(bias.numel() == av.cols())) fail(ErrorKind::invalid_shape,
          "bias " + shape_str(bias.shape()) + " vs " + shape_str(av.shape()));
  Array out = av;
  for (std::int64_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::int64_t c = 0; c < out.cols(); ++c) row[c] += bias.value()[c];
  }
  return Tensor::from_op(std::move(out), {a, bias}, [](Node& n) {
    Node& pa = detail::parent(n, 0);
    Node& pb = detail::parent(n, 1);
    if (pa.requires_grad) pa.grad_buffer() += n.grad;
    if (pb.requires_grad) {
      Array& gb = pb.grad_buffer();
      for (std::int64_t r = 0; r < n.grad.rows(); ++r) {
        auto row = n.grad.row(r);
        for (std::int64_t c = 0; c < n.grad.cols(); ++c) gb[c] += row[c];
      }
    }
  });
}

// Row gather from an embedding table.
inline Tensor embedding(const Tensor& table, std::span<const int> ids) {
  const Array& tv = table.value();
  const std::int64_t d = tv.cols();
  Array out(Shape{static_cast<std::int64_t>(ids.size()), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!(ids[i] >= 0 && ids[i] < tv.rows())) fail(ErrorKind::invalid_shape,
            "embedding id " + std::to_string(ids[i]) + " out of range");
    auto src = tv.row(ids[i]);
    std::copy(src.begin(), src.end(), out.row(static_cast<std::int64_t>(i)).begin());
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return Tensor::from_op(std::move(out), {table}, [saved = std::move(saved)](Node& n) {
    Array& g = detail::parent(n, 0).grad_buffer();
    for (std::size_t i = 0; i < saved.size(); ++i) {
      auto src = n.grad.row(static_cast<std::int64_t>(i));
      auto dst = g.row(saved[i]);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

inline Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps) {
  const Array& xv = x.value();
  const std::int64_t m = xv.rows(), d = xv.cols();
  require(gain.numel() == d, ErrorKind::invalid_shape, "rmsnorm gain width");
  Array out(xv.shape());
  std::vector<double> inv(static_cast<std::size_t>(m));
  for (std::int64_t r = 0; r < m; ++r) {
    auto xr = xv.row(r);
    double ss = 0.0;
    for (double v : xr) ss += v * v;
    inv[r] = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
    auto o = out.row(r);
    for (std::int64_t c = 0; c < d; ++c) o[c] = xr[c] * inv[r] * gain.value()[c];
  }
  return Tensor::from_op(std::move(out), {x, gain}, [inv = std::move(inv)](Node& n) {
    Node& px = detail::parent(n, 0);
    Node& pg = detail::parent(n, 1);
    const Array& xv = px.value;
    const std::int64_t m = xv.rows(), d = xv.cols();
    for (std::int64_t r = 0; r < m; ++r) {
      auto xr = xv.row(r);
      auto gr = n.grad.row(r);
      const double s = inv[r];
      if (pg.requires_grad) {
        Array& gg = pg.grad_buffer();
        for (std::int64_t c = 0; c < d; ++c) gg[c] += gr[c] * xr[c] * s;
      }
      if (px.requires_grad) {
        // y_c = g_c x_c s ; dy/dx_j = g_j s delta - g_c x_c x_j s^3 / d
        double dot = 0.0;
        for (std::int64_t c = 0; c < d; ++c) dot += gr[c] * pg.value[c] * xr[c];
        auto gx = px.grad_buffer().row(r);
        const double k = dot * s * s * s / static_cast<double>(d);
        for (std::int64_t c = 0; c < d; ++c) gx[c] += gr[c] * pg.value[c] * s - xr[c] * k;
      }
    }
  });
}

// tanh-approximated GELU.
// tanh through one exp; libm's tanh is several times slower.
inline double tanh_exp(double u) {
  const double e = std::exp(-2.0 * std::abs(u));
  const double t = (1.0 - e) / (1.0 + e);
  return u < 0.0 ? -t : t;
}

inline Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  const Array& xv = x.value();
  Array out(x.shape());
  Array t(x.shape());
  for (std::int64_t i = 0; i < xv.numel(); ++i) {
    const double v = xv[i];
    t[i] = tanh_exp(c * (v + 0.044715 * v * v * v));
    out[i] = 0.5 * v * (1.0 + t[i]);
  }
  return Tensor::from_op(std::move(out), {x}, [t = std::move(t)](Node& n) {
    Node& px = detail::parent(n, 0);
    Array& g = px.grad_buffer();
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const double v = px.value[i];
      const double du = c * (1.0 + 3.0 * 0.044715 * v * v);
      g[i] += n.grad[i] * (0.5 * (1.0 + t[i]) + 0.5 * v * (1.0 - t[i] * t[i]) * du);
    }
  });
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  if (!(av.rows() == bv.rows())) fail(ErrorKind::invalid_shape,
          "concat_cols rows " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  const std::int64_t ca = av.cols(), cb = bv.cols();
  Array out(Shape{av.rows(), ca + cb});
  for (std::int64_t r = 0; r < av.rows(); ++r) {
    auto o = out.row(r);
    std::copy(av.row(r).begin(), av.row(r).end(), o.begin());
    std::copy(bv.row(r).begin(), bv.row(r).end(), o.begin() + ca);
  }
  return Tensor::from_op(std::move(out), {a, b}, [ca, cb](Node& n) {
    Node& pa = detail::parent(n, 0);
    Node& pb = detail::parent(n, 1);
    for (std::int64_t r = 0; r < n.grad.rows(); ++r) {
      auto g = n.grad.row(r);
      if (pa.requires_grad) {
        auto d = pa.grad_buffer().row(r);
        for (std::int64_t c = 0; c < ca; ++c) d[c] += g[c];
      }
      if (pb.requires_grad) {
        auto d = pb.grad_buffer().row(r);
        for (std::int64_t c = 0; c < cb; ++c) d[c] += g[ca + c];
      }
    }
  });
}

inline Tensor softmax_rows(const Tensor& x) {
  Array out = softmax_rows(x.value());
  return Tensor::from_op(out, {x}, [](Node& n) {
    Node& px = detail::parent(n, 0);
    Array& g = px.grad_buffer();
    for (std::int64_t r = 0; r < n.value.rows(); ++r) {
      auto y = n.value.row(r);
      auto gy = n.grad.row(r);
      double dot = 0.0;
      for (std::size_t c = 0; c < y.size(); ++c) dot += gy[c] * y[c];
      auto gx = g.row(r);
      for (std::size_t c = 0; c < y.size(); ++c) gx[c] += y[c] * (gy[c] - dot);
    }
  });
}

// Differentiable kl_rows over distributions; gradients flow to both p and q.
inline Tensor kl_rows(const Tensor& p, const Tensor& q) {
  const double value = kl_rows(p.value(), q.value());
  return Tensor::from_op(Array::scalar(value), {p, q}, [](Node& n) {
    Node& pp = detail::parent(n, 0);
    Node& pq = detail::parent(n, 1);
    const std::int64_t rows = pp.value.rows();
    if (rows == 0) return;
    const double up = n.grad[0] / static_cast<double>(rows);
    for (std::int64_t i = 0; i < pp.value.numel(); ++i) {
      const double pv = pp.value[i];
      const double qv = pq.value[i];
      if (pv <= 0.0) continue;
      if (pp.requires_grad) pp.grad_buffer()[i] += up * (std::log(pv) + 1.0 - std::log(std::max(qv, kKlEps)));
      if (pq.requires_grad && qv > kKlEps) pq.grad_buffer()[i] -= up * pv / qv;
    }
  });
}

// Fused KL(teacher || softmax(student_logits)) averaged over rows with
// selected[r] != 0. Teacher rows are constant distributions.
inline Tensor kl_to_logits(const Array& teacher, const Tensor& student_logits, std::span<const char> selected) {
  const Array& z = student_logits.value();
  detail::check_same(teacher, z, "kl_to_logits");
  require(static_cast<std::int64_t>(selected.size()) == z.rows(), ErrorKind::invalid_shape, "kl_to_logits row mask");
  std::int64_t count = 0;
  double total = 0.0;
  Array q(z.shape());
  for (std::int64_t r = 0; r < z.rows(); ++r) {
    if (!selected[r]) continue;
    ++count;
    const double lse = log_sum_exp(z.row(r));
    auto p = teacher.row(r);
    auto zr = z.row(r);
    auto qr = q.row(r);
    for (std::size_t v = 0; v < p.size(); ++v) {
      qr[v] = std::exp(zr[v] - lse);
      if (p[v] > 0.0) total += p[v] * (std::log(p[v]) - (zr[v] - lse));
    }
  }
  const double value = count ? total / static_cast<double>(count) : 0.0;
  std::vector<char> sel(selected.begin(), selected.end());
  return Tensor::from_op(Array::scalar(value), {student_logits},
                         [teacher, q = std::move(q), sel = std::move(sel), count](Node& n) {
                           if (count == 0) return;
                           Array& g = detail::parent(n, 0).grad_buffer();
                           const double up = n.grad[0] / static_cast<double>(count);
                           for (std::int64_t r = 0; r < g.rows(); ++r) {
                             if (!sel[r]) continue;
                             auto gr = g.row(r);
                             auto qr = q.row(r);
                             auto pr = teacher.row(r);
                             for (std::size_t v = 0; v < gr.size(); ++v) gr[v] += up * (qr[v] - pr[v]);
                           }
                         });
}

// Mean cross-entropy of logits against target ids over rows with selected[r].
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, std::span<const char> selected) {
  const Array& z = logits.value();
  require(static_cast<std::int64_t>(targets.size()) == z.rows() &&
              static_cast<std::int64_t>(selected.size()) == z.rows(),
          ErrorKind::invalid_shape, "cross_entropy row count");
  std::int64_t count = 0;
  double total = 0.0;
  for (std::int64_t r = 0; r < z.rows(); ++r) {
    if (!selected[r]) continue;
    ++count;
    total += log_sum_exp(z.row(r)) - z.row(r)[targets[r]];
  }
  const double value = count ? total / static_cast<double>(count) : 0.0;
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<char> sel(selected.begin(), selected.end());
  return Tensor::from_op(Array::scalar(value), {logits},
                         [tgt = std::move(tgt), sel = std::move(sel), count](Node& n) {
                           if (count == 0) return;
                           Node& pz = detail::parent(n, 0);
                           Array& g = pz.grad_buffer();
                           const double up = n.grad[0] / static_cast<double>(count);
                           std::vector<double> prob(static_cast<std::size_t>(g.cols()));
                           for (std::int64_t r = 0; r < g.rows(); ++r) {
                             if (!sel[r]) continue;
                             softmax_row(pz.value.row(r), prob);
                             auto gr = g.row(r);
                             for (std::size_t v = 0; v < prob.size(); ++v) gr[v] += up * prob[v];
                             gr[tgt[r]] -= up;
                           }
                         });
}

// Multi-head scaled dot-product attention over `n_seq` sequences packed along
// rows. q, k, v are [n_seq*L x d]; allowed is an L x L row-major mask.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::int64_t n_seq, std::int64_t n_heads,
                        std::span<const char> allowed) {
  const Array& qv = q.value();
  const std::int64_t d = qv.cols();
  require(n_seq > 0 && qv.rows() % n_seq == 0, ErrorKind::invalid_shape, "attention: rows not divisible by n_seq");
  const std::int64_t L = qv.rows() / n_seq;
  require(k.value().same_shape(qv) && v.value().same_shape(qv), ErrorKind::invalid_shape, "attention q/k/v shapes");
  require(d % n_heads == 0, ErrorKind::invalid_shape, "attention: d not divisible by heads");
  require(static_cast<std::int64_t>(allowed.size()) == L * L, ErrorKind::invalid_shape, "attention mask size");
  const std::int64_t dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs: [n_seq, heads, L, L]
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n_seq * n_heads * L * L), 0.0);
  Array out(qv.shape());
  const Array& kv = k.value();
  const Array& vv = v.value();
  std::vector<double> scores(static_cast<std::size_t>(L));
  for (std::int64_t s = 0; s < n_seq; ++s) {
    const std::int64_t base = s * L;
    for (std::int64_t h = 0; h < n_heads; ++h) {
      const std::int64_t off = h * dh;
      for (std::int64_t i = 0; i < L; ++i) {
        const double* qi = qv.data() + (base + i) * d + off;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t j = 0; j < L; ++j) {
          if (!allowed[i * L + j]) continue;
          const double* kj = kv.data() + (base + j) * d + off;
          double dot = 0.0;
          for (std::int64_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          scores[j] = dot * inv_sqrt;
          mx = std::max(mx, scores[j]);
        }
        double* p = probs->data() + ((s * n_heads + h) * L + i) * L;
        double z = 0.0;
        for (std::int64_t j = 0; j < L; ++j) {
          if (!allowed[i * L + j]) continue;
          p[j] = std::exp(scores[j] - mx);
          z += p[j];
        }
        double* o = out.data() + (base + i) * d + off;
        for (std::int64_t j = 0; j < L; ++j) {
          if (!allowed[i * L + j]) continue;
          p[j] /= z;
          const double* vj = vv.data() + (base + j) * d + off;
          for (std::int64_t c = 0; c < dh; ++c) o[c] += p[j] * vj[c];
        }
      }
    }
  }

  std::vector<char> mask(allowed.begin(), allowed.end());
  return Tensor::from_op(
      std::move(out), {q, k, v}, [probs, mask = std::move(mask), n_seq, n_heads, L, d, dh, inv_sqrt](Node& n) {
        Node& pq = detail::parent(n, 0);
        Node& pk = detail::parent(n, 1);
        Node& pv = detail::parent(n, 2);
        Array* gq = pq.requires_grad ? &pq.grad_buffer() : nullptr;
        Array* gk = pk.requires_grad ? &pk.grad_buffer() : nullptr;
        Array* gv = pv.requires_grad ? &pv.grad_buffer() : nullptr;
        std::vector<double> dp(static_cast<std::size_t>(L));
        for (std::int64_t s = 0; s < n_seq; ++s) {
          const std::int64_t base = s * L;
          for (std::int64_t h = 0; h < n_heads; ++h) {
            const std::int64_t off = h * dh;
            for (std::int64_t i = 0; i < L; ++i) {
              const double* p = probs->data() + ((s * n_heads + h) * L + i) * L;
              const double* go = n.grad.data() + (base + i) * d + off;
              double dot = 0.0;
              for (std::int64_t j = 0; j < L; ++j) {
                if (!mask[i * L + j]) continue;
                const double* vj = pv.value.data() + (base + j) * d + off;
                double acc = 0.0;
                for (std::int64_t c = 0; c < dh; ++c) acc += go[c] * vj[c];
                dp[j] = acc;
                dot += acc * p[j];
                if (gv) {
                  double* gvj = gv->data() + (base + j) * d + off;
                  for (std::int64_t c = 0; c < dh; ++c) gvj[c] += p[j] * go[c];
                }
              }
              const double* qi = pq.value.data() + (base + i) * d + off;
              double* gqi = gq ? gq->data() + (base + i) * d + off : nullptr;
              for (std::int64_t j = 0; j < L; ++j) {
                if (!mask[i * L + j]) continue;
                const double ds = p[j] * (dp[j] - dot) * inv_sqrt;
                if (ds == 0.0) continue;
                const double* kj = pk.value.data() + (base + j) * d + off;
                if (gqi)
                  for (std::int64_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                if (gk) {
                  double* gkj = gk->data() + (base + j) * d + off;
                  for (std::int64_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

}  // namespace mrp
