#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include <pwflow/made.hpp>

#include "test_helpers.hpp"

using namespace pwflow;

namespace {

MadeNetwork randomized(std::size_t dim, std::vector<std::size_t> hidden, std::vector<std::size_t> ordering,
                       std::uint64_t seed) {
  MadeNetwork net = MadeNetwork::build(dim, std::move(hidden), std::move(ordering), seed);
  auto params = net.parameters();
  std::vector<Matrix> values;
  for (const Matrix* p : params) values.push_back(*p + test::random_matrix(p->rows(), p->cols(), seed + values.size(), 0.5));
  return MadeNetwork::from_parameters(dim, net.hidden_sizes(), net.ordering(), std::move(values));
}

// Position of each input dimension in the autoregressive ordering.
std::vector<std::size_t> positions(const std::vector<std::size_t>& ordering) {
  std::vector<std::size_t> pos(ordering.size());
  for (std::size_t p = 0; p < ordering.size(); ++p) pos[ordering[p]] = p;
  return pos;
}

}  // namespace

TEST(Made, EmptyHiddenListRejected) {
  EXPECT_THROW(MadeNetwork::build(2, {}, identity_ordering(2), 0), ConfigError);
  EXPECT_THROW(MadeNetwork::build(2, {4, 0}, identity_ordering(2), 0), ConfigError);
  EXPECT_THROW(MadeNetwork::build(2, {4}, {0, 0}, 0), ConfigError);
  EXPECT_THROW(MadeNetwork::build(0, {4}, {}, 0), ConfigError);
}

TEST(Made, OneDimensionIsUnconditional) {
  const MadeNetwork net = randomized(1, {5, 5}, {0}, 3);
  const auto a = net.conditionals(std::vector<double>{-3.0});
  const auto b = net.conditionals(std::vector<double>{2.5});
  EXPECT_EQ(a.mu, b.mu);
  EXPECT_EQ(a.log_sigma, b.log_sigma);
}

TEST(Made, FreshNetworkOutputsZero) {
  const MadeNetwork net = MadeNetwork::build(3, {16, 16}, identity_ordering(3), 42);
  const auto p = net.conditionals(std::vector<double>{0.3, -1.2, 4.0});
  for (double v : p.mu) EXPECT_EQ(v, 0.0);
  for (double v : p.log_sigma) EXPECT_EQ(v, 0.0);
}

TEST(Made, TwoDimensionsIdentityOrdering) {
  const MadeNetwork net = randomized(2, {8, 8}, identity_ordering(2), 5);
  const auto a = net.conditionals(std::vector<double>{0.1, 0.2});
  const auto b = net.conditionals(std::vector<double>{0.1, -3.0});
  const auto c = net.conditionals(std::vector<double>{1.4, 0.2});
  // x_2 never matters
  EXPECT_EQ(a.mu, b.mu);
  EXPECT_EQ(a.log_sigma, b.log_sigma);
  // x_1 moves output 2 but not output 1
  EXPECT_EQ(a.mu[0], c.mu[0]);
  EXPECT_EQ(a.log_sigma[0], c.log_sigma[0]);
  EXPECT_NE(a.mu[1], c.mu[1]);
}

TEST(Made, PerturbationProbeMatchesDegreeTable) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    for (const auto& ordering : {std::vector<std::size_t>{0, 1, 2}, std::vector<std::size_t>{2, 0, 1},
                                 std::vector<std::size_t>{1, 2, 0}}) {
      const MadeNetwork net = randomized(3, {7, 9}, ordering, seed);
      const auto pos = positions(ordering);
      const std::vector<double> x{0.4, -0.7, 1.1};
      const auto base = net.conditionals(x);
      for (std::size_t j = 0; j < 3; ++j) {
        auto probe = x;
        probe[j] = 0.0;
        const auto out = net.conditionals(probe);
        for (std::size_t i = 0; i < 3; ++i) {
          const bool may_depend = pos[j] < pos[i];
          const bool changed = out.mu[i] != base.mu[i] || out.log_sigma[i] != base.log_sigma[i];
          EXPECT_EQ(changed, may_depend) << "input " << j << " vs output " << i;
        }
      }
    }
  }
}

TEST(Made, MatchesUnmaskedReferenceWithZeroedWeights) {
  const MadeNetwork net = randomized(4, {10, 6}, {3, 1, 0, 2}, 9);
  const Matrix x = test::random_matrix(5, 4, 77);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    // dense reference: masked entries explicitly zeroed, plain matrix algebra
    Matrix h = x.row(r);
    const auto& layers = net.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      Matrix w = layers[l].weight;
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        if (layers[l].mask.data()[i] == 0.0) w.data()[i] = 0.0;
      }
      h = h * w + layers[l].bias;
      if (l + 1 < layers.size()) h = h.array().tanh().matrix();
    }
    const auto p = net.conditionals(std::span<const double>(x.data() + r * 4, 4));
    for (int i = 0; i < 4; ++i) {
      EXPECT_NEAR(p.mu[static_cast<std::size_t>(i)], h(0, i), 1e-12);
      EXPECT_NEAR(p.log_sigma[static_cast<std::size_t>(i)], std::clamp(h(0, 4 + i), kLogSigmaMin, kLogSigmaMax),
                  1e-12);
    }
  }
}

TEST(Made, MasksMatchWeightShapes) {
  const MadeNetwork net = MadeNetwork::build(5, {12, 7, 3}, reversed_ordering(5), 1);
  for (const auto& l : net.layers()) {
    EXPECT_EQ(l.mask.rows(), l.weight.rows());
    EXPECT_EQ(l.mask.cols(), l.weight.cols());
    EXPECT_EQ(l.bias.cols(), l.weight.cols());
  }
}

TEST(Made, SequentialDegrees) {
  const MadeNetwork net = MadeNetwork::build(3, {5}, identity_ordering(3), 0);
  const std::vector<std::size_t> expected{1, 2, 1, 2, 1};
  EXPECT_EQ(net.hidden_degrees().at(0), expected);
  const MadeNetwork one = MadeNetwork::build(1, {4}, {0}, 0);
  for (auto d : one.hidden_degrees().at(0)) EXPECT_EQ(d, 1u);
}

TEST(Made, PathProductOfMasksIsAutoregressive) {
  const MadeNetwork net = MadeNetwork::build(5, {11, 13}, {4, 2, 0, 1, 3}, 0);
  Matrix reach = net.layers()[0].mask;
  for (std::size_t l = 1; l < net.layers().size(); ++l) reach = reach * net.layers()[l].mask;
  const auto pos = positions(net.ordering());
  for (std::size_t j = 0; j < 5; ++j) {
    for (std::size_t i = 0; i < 5; ++i) {
      for (int block : {0, 5}) {
        const double paths = reach(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(block + i));
        if (pos[j] >= pos[i]) {
          EXPECT_EQ(paths, 0.0) << j << "->" << i;
        }
      }
    }
  }
}

TEST(Made, JacobianIsStrictlyTriangularUnderOrdering) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const std::vector<std::size_t> ordering{2, 0, 3, 1};
    const MadeNetwork net = randomized(4, {9, 9}, ordering, seed);
    const auto pos = positions(ordering);
    const auto xm = test::random_matrix(1, 4, seed + 50);
    std::vector<double> x(xm.data(), xm.data() + 4);
    const double h = 1e-5;
    for (std::size_t j = 0; j < 4; ++j) {
      auto up = x, down = x;
      up[j] += h;
      down[j] -= h;
      const auto a = net.conditionals(up), b = net.conditionals(down);
      for (std::size_t i = 0; i < 4; ++i) {
        if (pos[j] < pos[i]) continue;
        EXPECT_EQ((a.mu[i] - b.mu[i]) / (2 * h), 0.0);
        EXPECT_EQ((a.log_sigma[i] - b.log_sigma[i]) / (2 * h), 0.0);
      }
    }
  }
}

TEST(Made, ParameterCountEqualsGradientEntries) {
  const MadeNetwork net = MadeNetwork::build(3, {6, 4}, identity_ordering(3), 0);
  std::size_t entries = 0;
  for (const auto& l : net.layers()) entries += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  EXPECT_EQ(net.parameter_count(), entries);
  EXPECT_EQ(made_parameter_count(3, std::vector<std::size_t>{6, 4}), entries);

  GradTape tape;
  auto out = net.forward(tape, tape.constant(test::random_matrix(4, 3, 1)));
  const Gradients g = tape.backward(ops::sum(ops::square(out.mu)) + ops::sum(out.log_sigma));
  std::size_t n = 0;
  for (const auto& m : g) n += static_cast<std::size_t>(m.size());
  EXPECT_EQ(n, net.parameter_count());
}

TEST(Made, NonFiniteInputRejected) {
  const MadeNetwork net = MadeNetwork::build(2, {4}, identity_ordering(2), 0);
  EXPECT_THROW(net.conditionals(std::vector<double>{0.0, std::nan("")}), NumericError);
  EXPECT_THROW(net.conditionals(std::vector<double>{0.0}), ShapeError);
}

TEST(Made, LogSigmaIsClamped) {
  MadeNetwork net = MadeNetwork::build(2, {3}, identity_ordering(2), 0);
  auto values = std::vector<Matrix>{};
  for (const Matrix* p : net.parameters()) values.push_back(*p);
  values.back()(0, 2) = 50.0;   // log sigma bias, dimension 0
  values.back()(0, 3) = -50.0;  // dimension 1
  net = MadeNetwork::from_parameters(2, net.hidden_sizes(), net.ordering(), values);
  const auto p = net.conditionals(std::vector<double>{0.0, 0.0});
  EXPECT_EQ(p.log_sigma[0], kLogSigmaMax);
  EXPECT_EQ(p.log_sigma[1], kLogSigmaMin);
}

TEST(Made, GradientMatchesFiniteDifferences) {
  const MadeNetwork net = randomized(3, {6, 5}, {1, 2, 0}, 4);
  const Matrix x = test::random_matrix(7, 3, 8);
  std::vector<Matrix> params;
  for (const Matrix* p : net.parameters()) params.push_back(*p);
  const auto objective = [&](const MadeNetwork& m, GradTape& tape) {
    auto o = m.forward(tape, tape.constant(x));
    return ops::sum(ops::mul(o.mu, o.mu)) + ops::sum(ops::exp(o.log_sigma));
  };
  GradTape tape;
  const Gradients g = tape.backward(objective(net, tape));
  ASSERT_EQ(g.size(), params.size());
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (Eigen::Index i = 0; i < params[k].size(); ++i) {
      auto eval = [&](double delta) {
        auto vals = params;
        vals[k].data()[i] += delta;
        const MadeNetwork m = MadeNetwork::from_parameters(3, net.hidden_sizes(), net.ordering(), vals);
        GradTape t(false);
        return objective(m, t).scalar();
      };
      worst = std::max(worst, test::relative_error(g[k].data()[i], (eval(h) - eval(-h)) / (2 * h)));
    }
  }
  EXPECT_LT(worst, 1e-4);
}
