#pragma once

#include <stdexcept>
#include <string>

#include "kblm/tensor.hpp"

namespace kblm {

// Single-layer LSTM without peepholes. The weight matrix stacks the four gate
// blocks in the order input, forget, output, candidate; columns are [x ; h_prev].

using ConstMatMap = Eigen::Map<const Mat>;
using ConstVecMap = Eigen::Map<const Vec>;
using MatMap = Eigen::Map<Mat>;
using VecMap = Eigen::Map<Vec>;

struct LstmWeights {
  ConstMatMap w;  // 4H x (d_in + H)
  ConstVecMap b;  // 4H

  Eigen::Index hidden_dim() const { return b.size() / 4; }
  Eigen::Index input_dim() const { return w.cols() - hidden_dim(); }
};

struct LstmGrads {
  MatMap w;
  VecMap b;
};

/// Owning parameter block, used where a cell lives outside a model buffer.
struct LstmParams {
  Mat w;
  Vec b;

  LstmParams(Eigen::Index d_in, Eigen::Index hidden) : w(Mat::Zero(4 * hidden, d_in + hidden)), b(Vec::Zero(4 * hidden)) {}

  LstmWeights weights() const { return {ConstMatMap(w.data(), w.rows(), w.cols()), ConstVecMap(b.data(), b.size())}; }
  LstmGrads grads() { return {MatMap(w.data(), w.rows(), w.cols()), VecMap(b.data(), b.size())}; }
  Eigen::Index hidden_dim() const { return b.size() / 4; }
  Eigen::Index input_dim() const { return w.cols() - hidden_dim(); }
};

/// Everything the backward pass needs from one forward step.
struct LstmCache {
  Vec x, h_prev, c_prev;
  Vec i, f, o, g;
  Vec c, tanh_c, h;
};

inline LstmCache lstm_forward(const LstmWeights& p, const Vec& x, const Vec& h_prev, const Vec& c_prev) {
  const Eigen::Index H = p.hidden_dim();
  const Eigen::Index d_in = p.input_dim();
  if (p.b.size() % 4 != 0 || p.w.rows() != 4 * H || d_in < 0)
    throw std::invalid_argument("malformed LSTM parameters");
  if (x.size() != d_in || h_prev.size() != H || c_prev.size() != H)
    throw std::invalid_argument("lstm_step dimension mismatch: x=" + std::to_string(x.size()) + " expected " +
                                std::to_string(d_in) + ", h=" + std::to_string(h_prev.size()) + " expected " +
                                std::to_string(H));
  LstmCache k;
  Vec z = p.b;
  z.noalias() += p.w.leftCols(d_in) * x;
  z.noalias() += p.w.rightCols(H) * h_prev;
  k.i = z.segment(0, H).unaryExpr([](double v) { return sigmoid(v); });
  k.f = z.segment(H, H).unaryExpr([](double v) { return sigmoid(v); });
  k.o = z.segment(2 * H, H).unaryExpr([](double v) { return sigmoid(v); });
  k.g = z.segment(3 * H, H).array().tanh();
  k.c = k.f.cwiseProduct(c_prev) + k.i.cwiseProduct(k.g);
  k.tanh_c = k.c.array().tanh();
  k.h = k.o.cwiseProduct(k.tanh_c);
  k.x = x;
  k.h_prev = h_prev;
  k.c_prev = c_prev;
  return k;
}

struct LstmOutput {
  Vec h, c;
};

inline LstmOutput lstm_step(const LstmWeights& p, const Vec& x, const Vec& h_prev, const Vec& c_prev) {
  auto k = lstm_forward(p, x, h_prev, c_prev);
  return {std::move(k.h), std::move(k.c)};
}

struct LstmBackward {
  Vec dx, dh_prev, dc_prev;
};

/// Backpropagates dL/dh and dL/dc of one step; parameter gradients are accumulated.
inline LstmBackward lstm_backward(const LstmWeights& p, const LstmCache& k, const Vec& dh, const Vec& dc_in,
                                  LstmGrads& grads) {
  const Eigen::Index H = p.hidden_dim();
  const Eigen::Index d_in = p.input_dim();
  const Vec dc = dc_in + dh.cwiseProduct(k.o).cwiseProduct((1.0 - k.tanh_c.array().square()).matrix());
  Vec dz(4 * H);
  dz.segment(0, H) = dc.cwiseProduct(k.g).cwiseProduct(k.i.cwiseProduct((1.0 - k.i.array()).matrix()));
  dz.segment(H, H) = dc.cwiseProduct(k.c_prev).cwiseProduct(k.f.cwiseProduct((1.0 - k.f.array()).matrix()));
  dz.segment(2 * H, H) = dh.cwiseProduct(k.tanh_c).cwiseProduct(k.o.cwiseProduct((1.0 - k.o.array()).matrix()));
  dz.segment(3 * H, H) = dc.cwiseProduct(k.i).cwiseProduct((1.0 - k.g.array().square()).matrix());

  grads.w.leftCols(d_in).noalias() += dz * k.x.transpose();
  grads.w.rightCols(H).noalias() += dz * k.h_prev.transpose();
  grads.b += dz;

  LstmBackward out;
  out.dx.noalias() = p.w.leftCols(d_in).transpose() * dz;
  out.dh_prev.noalias() = p.w.rightCols(H).transpose() * dz;
  out.dc_prev = dc.cwiseProduct(k.f);
  return out;
}

}  // namespace kblm
