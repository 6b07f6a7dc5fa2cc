#pragma once

// Straight-line re-implementation of the model forward pass with explicit
// loops, used as an independent oracle for the vectorized code.

#include <cmath>
#include <cstdint>
#include <vector>

#include "tjplan/transformer.hpp"

namespace oracle_nn {

using Eigen::MatrixXd;
using tjplan::nn::Attention;
using tjplan::nn::Norm;
using Pad = std::vector<std::uint8_t>;

inline MatrixXd affine(const MatrixXd& x, const MatrixXd& w, const MatrixXd& b) {
  MatrixXd y(x.rows(), w.cols());
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < w.cols(); ++j) {
      double s = b(0, j);
      for (int k = 0; k < x.cols(); ++k) s += x(i, k) * w(k, j);
      y(i, j) = s;
    }
  return y;
}

inline MatrixXd attention(const MatrixXd& xq, const MatrixXd& xkv, const Pad& pad, const Attention& a, int heads) {
  const MatrixXd q = affine(xq, a.wq, a.bq), k = affine(xkv, a.wk, a.bk), v = affine(xkv, a.wv, a.bv);
  const int D = static_cast<int>(a.wq.rows()), dh = D / heads;
  MatrixXd cat = MatrixXd::Zero(xq.rows(), D);
  for (int h = 0; h < heads; ++h)
    for (int i = 0; i < xq.rows(); ++i) {
      std::vector<double> logit(static_cast<std::size_t>(xkv.rows()), 0.0);
      double mx = -INFINITY;
      bool any = false;
      for (int j = 0; j < xkv.rows(); ++j) {
        if (pad[static_cast<std::size_t>(j)]) continue;
        double s = 0.0;
        for (int c = 0; c < dh; ++c) s += q(i, h * dh + c) * k(j, h * dh + c);
        logit[static_cast<std::size_t>(j)] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, logit[static_cast<std::size_t>(j)]);
        any = true;
      }
      if (!any) continue;
      double z = 0.0;
      for (int j = 0; j < xkv.rows(); ++j)
        if (!pad[static_cast<std::size_t>(j)]) z += std::exp(logit[static_cast<std::size_t>(j)] - mx);
      for (int j = 0; j < xkv.rows(); ++j) {
        if (pad[static_cast<std::size_t>(j)]) continue;
        const double w = std::exp(logit[static_cast<std::size_t>(j)] - mx) / z;
        for (int c = 0; c < dh; ++c) cat(i, h * dh + c) += w * v(j, h * dh + c);
      }
    }
  return affine(cat, a.wo, a.bo);
}

inline MatrixXd norm(const MatrixXd& x, const Norm& n) {
  MatrixXd y(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    double mean = 0.0;
    for (int j = 0; j < x.cols(); ++j) mean += x(i, j);
    mean /= static_cast<double>(x.cols());
    double var = 0.0;
    for (int j = 0; j < x.cols(); ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(x.cols());
    for (int j = 0; j < x.cols(); ++j)
      y(i, j) = n.gain(0, j) * (x(i, j) - mean) / std::sqrt(var + 1e-5) + n.bias(0, j);
  }
  return y;
}

template <class Net>
MatrixXd ffn(const MatrixXd& x, const Net& f) {
  MatrixXd h = affine(x, f.w1, f.b1);
  for (int i = 0; i < h.rows(); ++i)
    for (int j = 0; j < h.cols(); ++j) h(i, j) = h(i, j) > 0.0 ? h(i, j) : 0.0;
  return affine(h, f.w2, f.b2);
}

inline MatrixXd context_stack(const tjplan::nn::EncodedInput& in, const tjplan::nn::ModelParams& p) {
  MatrixXd c = in.ctx;
  for (const auto& l : p.context) {
    const MatrixXd o = norm(attention(c, c, in.ctx_pad, l.self, p.config.heads) + c, l.norm1);
    c = norm(ffn(o, l.ffn) + o, l.norm2);
  }
  return c;
}

inline MatrixXd source_stack(const tjplan::nn::EncodedInput& in, const MatrixXd& mem,
                             const tjplan::nn::ModelParams& p) {
  MatrixXd s = in.src;
  for (const auto& l : p.source) {
    const MatrixXd o1 = norm(attention(s, s, in.src_pad, l.self, p.config.heads) + s, l.norm1);
    const MatrixXd o2 = norm(attention(o1, mem, in.ctx_pad, l.cross, p.config.heads) + o1, l.norm2);
    s = norm(ffn(o2, l.ffn) + o2, l.norm3);
  }
  return s;
}

inline tjplan::nn::ModelOutput heads(const MatrixXd& s, const Pad& pad, const tjplan::nn::ModelParams& p) {
  MatrixXd pooled = MatrixXd::Zero(1, s.cols());
  int n = 0;
  for (int i = 0; i < s.rows(); ++i) {
    if (pad[static_cast<std::size_t>(i)]) continue;
    for (int j = 0; j < s.cols(); ++j) pooled(0, j) += s(i, j);
    ++n;
  }
  pooled /= static_cast<double>(n);
  return {ffn(pooled, p.coef_head).row(0).transpose(), ffn(pooled, p.knot_head).row(0).transpose()};
}

}  // namespace oracle_nn
