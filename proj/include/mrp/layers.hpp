#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mrp/ops.hpp"
#include "mrp/random.hpp"

namespace mrp {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline Tensor normal_param(Shape shape, double stddev, Rng& rng) {
  Array a(std::move(shape));
  for (double& v : a.span()) v = normal(rng, 0.0, stddev);
  return Tensor::parameter(std::move(a));
}

inline Tensor const_param(Shape shape, double value) { return Tensor::parameter(Array(std::move(shape), value)); }

// Pre-norm transformer block: attention then GELU MLP, both residual.
struct TransformerLayer {
  Tensor attn_norm, wq, wk, wv, wo;
  Tensor mlp_norm, w1, b1, w2, b2;

  static TransformerLayer init(std::int64_t d, Rng& rng, double in_std, double out_std) {
    TransformerLayer l;
    l.attn_norm = const_param({d}, 1.0);
    l.wq = normal_param({d, d}, in_std, rng);
    l.wk = normal_param({d, d}, in_std, rng);
    l.wv = normal_param({d, d}, in_std, rng);
    l.wo = normal_param({d, d}, out_std, rng);
    l.mlp_norm = const_param({d}, 1.0);
    l.w1 = normal_param({d, 4 * d}, in_std, rng);
    l.b1 = const_param({4 * d}, 0.0);
    l.w2 = normal_param({4 * d, d}, out_std, rng);
    l.b2 = const_param({d}, 0.0);
    return l;
  }

  void collect(const std::string& prefix, NamedTensors& out) const {
    out.emplace_back(prefix + "attn_norm", attn_norm);
    out.emplace_back(prefix + "wq", wq);
    out.emplace_back(prefix + "wk", wk);
    out.emplace_back(prefix + "wv", wv);
    out.emplace_back(prefix + "wo", wo);
    out.emplace_back(prefix + "mlp_norm", mlp_norm);
    out.emplace_back(prefix + "w1", w1);
    out.emplace_back(prefix + "b1", b1);
    out.emplace_back(prefix + "w2", w2);
    out.emplace_back(prefix + "b2", b2);
  }

  Tensor forward(const Tensor& x, std::int64_t n_seq, std::int64_t n_heads, std::span<const char> mask,
                 double eps) const {
    const Tensor a = rmsnorm(x, attn_norm, eps);
    const Tensor att = attention(matmul(a, wq), matmul(a, wk), matmul(a, wv), n_seq, n_heads, mask);
    const Tensor x1 = add(x, matmul(att, wo));
    const Tensor m = rmsnorm(x1, mlp_norm, eps);
    const Tensor hid = gelu(add_row_bias(matmul(m, w1), b1));
    return add(x1, add_row_bias(matmul(hid, w2), b2));
  }
};

}  // namespace mrp
