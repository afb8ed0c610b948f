#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "kblm/adadelta.hpp"
#include "kblm/gradcheck.hpp"
#include "kblm/lstm.hpp"
#include "kblm/random.hpp"
#include "oracles.hpp"

using namespace kblm;

namespace {

Vec random_vec(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = uniform(rng, -scale, scale);
  return v;
}

// Flat packing of one LSTM step's inputs: [w | b | x | h_prev | c_prev].
struct StepPoint {
  Eigen::Index d_in, H;
  std::vector<double> flat;

  std::size_t nw() const { return static_cast<std::size_t>(4 * H * (d_in + H)); }
  std::size_t nb() const { return static_cast<std::size_t>(4 * H); }

  void unpack(std::span<const double> p, LstmParams& lp, Vec& x, Vec& h, Vec& c) const {
    std::size_t o = 0;
    lp.w = Eigen::Map<const Mat>(p.data(), 4 * H, d_in + H);
    o += nw();
    lp.b = Eigen::Map<const Vec>(p.data() + o, 4 * H);
    o += nb();
    x = Eigen::Map<const Vec>(p.data() + o, d_in);
    o += static_cast<std::size_t>(d_in);
    h = Eigen::Map<const Vec>(p.data() + o, H);
    o += static_cast<std::size_t>(H);
    c = Eigen::Map<const Vec>(p.data() + o, H);
  }
};

GradCheckReport check_lstm_step(std::uint64_t seed, Eigen::Index d_in, Eigen::Index H, double tol,
                                double corrupt = 1.0) {
  auto rng = make_rng(seed, 0);
  StepPoint sp{d_in, H, {}};
  const std::size_t n = sp.nw() + sp.nb() + static_cast<std::size_t>(d_in + 2 * H);
  for (std::size_t k = 0; k < n; ++k) sp.flat.push_back(uniform(rng, -0.5, 0.5));
  const Vec wh = random_vec(rng, H), wc = random_vec(rng, H);

  auto loss = [&](std::span<const double> p) {
    LstmParams lp(d_in, H);
    Vec x, h, c;
    sp.unpack(p, lp, x, h, c);
    const auto out = lstm_step(lp.weights(), x, h, c);
    return wh.dot(out.h) + wc.dot(out.c);
  };

  LstmParams lp(d_in, H), g(d_in, H);
  Vec x, h, c;
  sp.unpack(sp.flat, lp, x, h, c);
  const auto cache = lstm_forward(lp.weights(), x, h, c);
  auto grads = g.grads();
  const auto back = lstm_backward(lp.weights(), cache, wh, wc, grads);
  std::vector<double> analytic(g.w.data(), g.w.data() + g.w.size());
  analytic[0] *= corrupt;
  analytic.insert(analytic.end(), g.b.data(), g.b.data() + g.b.size());
  analytic.insert(analytic.end(), back.dx.data(), back.dx.data() + back.dx.size());
  analytic.insert(analytic.end(), back.dh_prev.data(), back.dh_prev.data() + back.dh_prev.size());
  analytic.insert(analytic.end(), back.dc_prev.data(), back.dc_prev.data() + back.dc_prev.size());
  return gradient_check(loss, sp.flat, analytic, tol);
}

}  // namespace

TEST(Softmax, Examples) {
  const Vec a = softmax(Vec::Zero(3));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(a[i], 1.0 / 3.0, 1e-15);
  Vec z(2);
  z << std::log(2.0), 0.0;
  const Vec b = softmax(z);
  EXPECT_NEAR(b[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(b[1], 1.0 / 3.0, 1e-15);
  z << 1000.0, 0.0;
  const Vec c = softmax(z);
  EXPECT_TRUE(c.allFinite());
  EXPECT_NEAR(c[0], 1.0, 1e-15);
  EXPECT_LT(c[1], 1e-300);
}

TEST(Softmax, SumsToOneAndIsPermutationEquivariant) {
  auto rng = make_rng(11, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec z = random_vec(rng, 17, 20.0);
    const Vec p = softmax(z);
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_TRUE((p.array() > 0).all() && (p.array() < 1).all());
    Vec rev = z.reverse();
    const Vec q = softmax(rev);
    // equal up to the summation order of the normalizer
    for (Eigen::Index i = 0; i < z.size(); ++i) EXPECT_NEAR(q[i], p[z.size() - 1 - i], 1e-14 * p[z.size() - 1 - i]);
    const auto naive = oracle::naive_softmax(std::vector<double>(z.data(), z.data() + z.size()));
    for (Eigen::Index i = 0; i < z.size(); ++i) EXPECT_NEAR(p[i], naive[static_cast<std::size_t>(i)], 1e-12);
  }
}

TEST(CrossEntropy, Examples) {
  Vec onehot = Vec::Zero(4);
  onehot[2] = 1.0;
  EXPECT_EQ(cross_entropy(onehot, 2), 0.0);
  const Vec uniform_p = Vec::Constant(1000, 1.0 / 1000);
  EXPECT_NEAR(cross_entropy(uniform_p, 123), 6.907755278982137, 1e-12);
  Vec p(2);
  p << 0.25, 0.75;
  EXPECT_NEAR(cross_entropy(p, 1), 0.2876820724517809, 1e-12);
  EXPECT_NEAR(cross_entropy(onehot, 0), -std::log(1e-300), 1e-9);
}

TEST(LogSumExp, HandlesLargeMagnitudes) {
  const std::vector<double> v = {-1000.0, -1000.0};
  EXPECT_NEAR(log_sum_exp(v), -1000.0 + std::log(2.0), 1e-12);
}

TEST(LstmStep, ZeroParametersGiveZeroState) {
  LstmParams p(3, 4);
  const auto out = lstm_step(p.weights(), Vec::Constant(3, 0.7), Vec::Constant(4, 0.3), Vec::Zero(4));
  EXPECT_TRUE(out.c.isZero(0));
  EXPECT_TRUE(out.h.isZero(0));
}

TEST(LstmStep, SaturatedInputGateCopiesCandidate) {
  const Eigen::Index H = 3;
  LstmParams p(2, H);
  p.b.segment(0, H).setConstant(50.0);    // input gate ~ 1
  p.b.segment(H, H).setConstant(-50.0);   // forget gate ~ 0
  p.b.segment(2 * H, H).setConstant(50.0);  // output gate ~ 1
  const double t = 0.6;
  p.b.segment(3 * H, H).setConstant(std::atanh(t));
  const auto out = lstm_step(p.weights(), Vec::Constant(2, -1.3), Vec::Zero(H), Vec::Constant(H, 5.0));
  for (Eigen::Index i = 0; i < H; ++i) {
    EXPECT_NEAR(out.c[i], t, 1e-12);
    EXPECT_NEAR(out.h[i], std::tanh(t), 1e-12);
  }
}

TEST(LstmStep, HiddenStateIsBounded) {
  auto rng = make_rng(4, 0);
  LstmParams p(5, 6);
  p.w = Mat::NullaryExpr(24, 11, [&] { return uniform(rng, -3, 3); });
  p.b = random_vec(rng, 24, 3);
  Vec h = Vec::Zero(6), c = Vec::Zero(6);
  for (int t = 1; t <= 30; ++t) {
    auto out = lstm_step(p.weights(), random_vec(rng, 5, 10), h, c);
    h = out.h;
    c = out.c;
    EXPECT_LT(h.cwiseAbs().maxCoeff(), 1.0);
    EXPECT_LE(c.cwiseAbs().maxCoeff(), static_cast<double>(t));
  }
}

TEST(LstmStep, DimensionMismatchIsAnError) {
  LstmParams p(3, 4);
  EXPECT_THROW(lstm_step(p.weights(), Vec::Zero(2), Vec::Zero(4), Vec::Zero(4)), std::invalid_argument);
  EXPECT_THROW(lstm_step(p.weights(), Vec::Zero(3), Vec::Zero(5), Vec::Zero(4)), std::invalid_argument);
}

TEST(LstmBackward, MatchesFiniteDifferencesSeed7) {
  const auto r = check_lstm_step(7, 3, 4, 1e-6);
  EXPECT_TRUE(r.passed) << "max rel error " << r.max_rel_error << " at " << r.worst_index;
  EXPECT_LE(r.max_rel_error, 1e-6);
}

TEST(LstmBackward, MatchesFiniteDifferencesAcrossSeedsAndShapes) {
  const std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes = {{1, 1}, {3, 4}, {5, 2}, {8, 8}, {9, 8}};
  for (std::uint64_t seed = 1; seed <= 5; ++seed)
    for (const auto& [d_in, H] : shapes) {
      const auto r = check_lstm_step(seed, d_in, H, 1e-5);
      EXPECT_TRUE(r.passed) << "seed " << seed << " d_in " << d_in << " H " << H << ": " << r.max_rel_error;
    }
}

TEST(LstmBackward, CorruptedGradientFailsTheCheck) {
  const auto r = check_lstm_step(7, 3, 4, 1e-5, 2.0);
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.worst_index, 0u);
}

TEST(AdaDelta, ZeroGradientKeepsParametersAndDecaysAccumulators) {
  AdaDeltaState s(2, 0.95, 1e-6);
  s.sq_grad = {0.4, 0.2};
  s.sq_update = {0.1, 0.3};
  std::vector<double> p = {1.5, -2.0};
  const std::vector<double> g = {0.0, 0.0};
  adadelta_update(p, g, s);
  EXPECT_EQ(p, (std::vector<double>{1.5, -2.0}));
  EXPECT_DOUBLE_EQ(s.sq_grad[0], 0.95 * 0.4);
  EXPECT_DOUBLE_EQ(s.sq_update[1], 0.95 * 0.3);
}

TEST(AdaDelta, FirstStepValue) {
  AdaDeltaState s(1, 0.95, 1e-6);
  std::vector<double> p = {0.0};
  const std::vector<double> g = {1.0};
  adadelta_update(p, g, s);
  EXPECT_NEAR(p[0], -0.0044721, 1e-7);
  EXPECT_DOUBLE_EQ(p[0], -std::sqrt(1e-6) / std::sqrt(0.05 + 1e-6));
}

TEST(AdaDelta, SecondStepIsLargerForConstantGradient) {
  AdaDeltaState s(1, 0.95, 1e-6);
  std::vector<double> p = {0.0};
  const std::vector<double> g = {1.0};
  adadelta_update(p, g, s);
  const double d1 = p[0];
  adadelta_update(p, g, s);
  const double d2 = p[0] - d1;
  EXPECT_GT(std::fabs(d2), std::fabs(d1));
}

TEST(AdaDelta, FirstStepIsScaleCovariant) {
  // With zero state the first step is -sqrt(eps) * g / sqrt((1-rho) g^2 + eps):
  // scaling g by c matches the closed form evaluated at c*g.
  for (double scale : {0.5, 3.0, 100.0}) {
    AdaDeltaState s(1, 0.95, 1e-6);
    std::vector<double> p = {0.0};
    const std::vector<double> g = {scale};
    adadelta_update(p, g, s);
    EXPECT_DOUBLE_EQ(p[0], -std::sqrt(1e-6) / std::sqrt(0.05 * scale * scale + 1e-6) * scale);
  }
}

TEST(AdaDelta, RejectsBadHyperparameters) {
  EXPECT_THROW(AdaDeltaState(1, 1.0, 1e-6), std::invalid_argument);
  EXPECT_THROW(AdaDeltaState(1, 0.9, 0.0), std::invalid_argument);
}

TEST(GradientCheck, QuadraticIsExact) {
  const std::vector<double> point = {0.3, -1.2, 2.5, 0.0};
  auto loss = [](std::span<const double> p) {
    double s = 0;
    for (double v : p) s += 0.5 * v * v;
    return s;
  };
  const auto r = gradient_check(loss, point, point, 1e-8);
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradientCheck, NonFiniteLossIsAnError) {
  const std::vector<double> point = {1.0};
  auto loss = [](std::span<const double>) { return std::nan(""); };
  EXPECT_THROW(gradient_check(loss, point, point, 1e-5), NumericError);
}
