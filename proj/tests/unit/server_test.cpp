// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "test_support.hpp"

namespace fedssl {
namespace {

ServerState toy_server(std::vector<std::size_t> taus, Variant variant) {
  ServerState s;
  s.theta = ModelParams(MlpShape{1, 1, 2});  // 6 parameters
  s.theta.flat() << 1.0, 2.0, 3.0, 4.0, 5.0, 6.0;
  s.theta_prev = s.theta.flat();
  s.eta = 0.1;
  s.omegas = {0.25, 0.75};
  s.taus = std::move(taus);
  s.tau_bar = 0.25 * static_cast<double>(s.taus[0]) + 0.75 * static_cast<double>(s.taus[1]);
  s.variant = variant;
  return s;
}

std::vector<Upload> toy_uploads() {
  Vector a(6), b(6);
  a << 0.0, 1.0, 2.0, 3.0, 4.0, 5.0;
  b << 2.0, 2.0, 2.0, 2.0, 2.0, 2.0;
  return {{1, b}, {0, a}};
}

TEST(Server, VariantNamesRoundTrip) {
  for (auto v : {Variant::kFedSHVR, Variant::kFedSH, Variant::kFedSVR, Variant::kFedAvgSupervised,
                 Variant::kFedPseudo}) {
    EXPECT_EQ(parse_variant(to_string(v)), v);
  }
  EXPECT_FALSE(parse_variant("scaffold").has_value());
}

TEST(Server, EffectiveWeightsPerVariant) {
  const LossWeights w{1.0, 0.75, 0.1, 50};
  const auto avg = effective_weights(Variant::kFedAvgSupervised, w);
  EXPECT_EQ(avg.alpha0 + avg.alpha1 + avg.alpha2, 0.0);
  const auto pseudo = effective_weights(Variant::kFedPseudo, w);
  EXPECT_EQ(pseudo.alpha0, 1.0);
  EXPECT_EQ(pseudo.alpha1 + pseudo.alpha2, 0.0);
  const auto shvr = effective_weights(Variant::kFedSHVR, w);
  EXPECT_EQ(shvr.alpha1, 0.75);
}

TEST(Server, PlainAggregationIsTheWeightedMean) {
  const auto s = toy_server({3, 9}, Variant::kFedAvgSupervised);
  const auto ups = toy_uploads();
  const Vector got = aggregate(s, ups);
  EXPECT_EQ(got[0], 0.25 * 0.0 + 0.75 * 2.0);
  EXPECT_EQ(got[5], 0.25 * 5.0 + 0.75 * 2.0);
}

TEST(Server, NormalizedAggregationMatchesHandFormula) {
  const auto s = toy_server({2, 8}, Variant::kFedSHVR);
  const auto ups = toy_uploads();
  const Vector got = aggregate(s, ups);
  const double tau_bar = 0.25 * 2 + 0.75 * 8;
  for (Eigen::Index i = 0; i < 6; ++i) {
    const double prev = s.theta.flat()[i];
    const double delta0 = (prev - ups[1].theta[i]) / (0.1 * 2);
    const double delta1 = (prev - ups[0].theta[i]) / (0.1 * 8);
    const double want = prev - 0.1 * tau_bar * (0.25 * delta0 + 0.75 * delta1);
    EXPECT_NEAR(got[i], want, 1e-14);
  }
}

TEST(Server, EqualTausMakeNormalizedAggregationExactlyTheMean) {
  const auto normalized = toy_server({5, 5}, Variant::kFedSHVR);
  const auto plain = toy_server({5, 5}, Variant::kFedAvgSupervised);
  const auto ups = toy_uploads();
  EXPECT_TRUE((aggregate(normalized, ups).array() == aggregate(plain, ups).array()).all());
}

TEST(Server, ProtocolViolationsAreRejected) {
  const auto s = toy_server({2, 8}, Variant::kFedSHVR);
  auto ups = toy_uploads();
  EXPECT_THROW(aggregate(s, std::vector<Upload>{ups[0]}), ProtocolError);
  EXPECT_THROW(aggregate(s, std::vector<Upload>{ups[0], ups[0]}), ProtocolError);
  auto unknown = ups;
  unknown[0].client_id = 7;
  EXPECT_THROW(aggregate(s, unknown), ProtocolError);
  auto wrong_size = ups;
  wrong_size[0].theta = Vector::Zero(5);
  EXPECT_THROW(aggregate(s, wrong_size), ProtocolError);
}

Fleet toy_fleet(Variant v, std::size_t threads = 1,
                CorrectionForm form = CorrectionForm::kRecursive) {
  auto data = testing::toy_clients(3, 6, {{6, 20}, {10, 50}, {4, 9}}, 21);
  RoundOptions options;
  options.threads = threads;
  options.correction_form = form;
  options.gap_interval = 2;
  return make_fleet(testing::random_params({6, 8, 3}, 22), std::move(data), LossWeights{}, v, 0.05,
                    options, 4, 8, Sampling::kEpochShuffle, 23);
}

TEST(Server, FleetWeightsAndTaus) {
  const Fleet f = toy_fleet(Variant::kFedSHVR);
  EXPECT_NEAR(f.server.omegas[0], 26.0 / 99.0, 1e-15);
  EXPECT_NEAR(f.server.omegas[1] + f.server.omegas[0] + f.server.omegas[2], 1.0, 1e-15);
  EXPECT_EQ(f.server.taus[1], compute_tau(10, 50, 2, 4, 8));
  const Fleet sup = toy_fleet(Variant::kFedAvgSupervised);
  EXPECT_EQ(sup.clients[1].unlabeled.size(), 0u);
  EXPECT_NEAR(sup.server.omegas[1], 10.0 / 20.0, 1e-15);
}

TEST(Server, FirstRoundBroadcastsTheInitialModel) {
  Fleet f = toy_fleet(Variant::kFedSHVR);
  const Vector theta0 = f.server.theta.flat();
  run_round(f);
  EXPECT_TRUE((f.server.theta.flat().array() == theta0.array()).all());
  for (const auto& c : f.clients) EXPECT_EQ(c.correction.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Server, CorrectionsSumToZeroUnderNormalizedAggregation) {
  Fleet f = toy_fleet(Variant::kFedSHVR);
  for (int t = 0; t < 6; ++t) EXPECT_LT(run_round(f).correction_residual, 1e-12);
}

TEST(Server, GradientMemoryFormTracksRecursion) {
  Fleet a = toy_fleet(Variant::kFedSHVR, 1, CorrectionForm::kRecursive);
  Fleet b = toy_fleet(Variant::kFedSHVR, 1, CorrectionForm::kGradientMemory);
  for (int t = 0; t < 4; ++t) {
    run_round(a);
    run_round(b);
  }
  EXPECT_LT((a.server.theta.flat() - b.server.theta.flat()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Server, ThreadCountDoesNotChangeResults) {
  Fleet serial = toy_fleet(Variant::kFedSHVR, 1);
  Fleet pooled = toy_fleet(Variant::kFedSHVR, 3);
  for (int t = 0; t < 3; ++t) {
    const auto ms = run_round(serial);
    const auto mp = run_round(pooled);
    EXPECT_EQ(ms.train_loss, mp.train_loss);
  }
  EXPECT_TRUE((serial.server.theta.flat().array() == pooled.server.theta.flat().array()).all());
}

TEST(Server, GapIsSampledOnItsInterval) {
  Fleet f = toy_fleet(Variant::kFedSH);
  EXPECT_FALSE(run_round(f).gap.has_value());
  const auto m = run_round(f);
  ASSERT_TRUE(m.gap.has_value());
  EXPECT_EQ(m.gap->round, 2u);
  EXPECT_NEAR(m.gap->gap, m.gap->grad_norm_sq + m.gap->label_motion, 1e-15);
}

TEST(Server, FedPseudoUsesHardLabels) {
  Fleet f = toy_fleet(Variant::kFedPseudo);
  run_round(f);
  for (const auto& c : f.clients) {
    for (Eigen::Index i = 0; i < c.vhat.rows.rows(); ++i) {
      EXPECT_EQ(c.vhat.rows.row(i).maxCoeff(), 1.0);
      EXPECT_EQ(c.vhat.rows.row(i).sum(), 1.0);
    }
  }
}

TEST(Server, ClientFailureSurfacesFromThePool) {
  std::vector<int> done(4, 0);
  EXPECT_THROW(for_each_client(4, 2,
                               [&](std::size_t k) {
                                 if (k == 2) throw DataError("boom");
                                 done[k] = 1;
                               }),
               DataError);
}

}  // namespace
}  // namespace fedssl
