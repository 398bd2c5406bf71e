// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "tai/error.hpp"
#include "tai/taieval.hpp"

namespace {

using namespace tai;
using namespace tai::eval;

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(AveragePrecision, WorkedValues) {
  const std::vector<double> s{0.9, 0.5, 0.1};
  EXPECT_DOUBLE_EQ(*average_precision(s, std::vector<std::uint8_t>{0, 1, 0}), 0.5);
  EXPECT_DOUBLE_EQ(*average_precision(s, std::vector<std::uint8_t>{1, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(*average_precision(s, std::vector<std::uint8_t>{1, 0, 1}), (1.0 + 2.0 / 3.0) / 2.0);
  EXPECT_FALSE(average_precision(s, std::vector<std::uint8_t>{0, 0, 0}));
}

TEST(AveragePrecision, TiesKeepInputOrder) {
  const std::vector<double> s{0.5, 0.5};
  EXPECT_DOUBLE_EQ(*average_precision(s, std::vector<std::uint8_t>{0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(*average_precision(s, std::vector<std::uint8_t>{1, 0}), 1.0);
}

TEST(AveragePrecision, MatchesBruteForce) {
  grad::Rng rng(12);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rng() % 60;
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 10) / 10.0;  // coarse, so ties are common
      y[i] = rng() % 3 == 0;
    }
    const auto ap = average_precision(s, y);
    const double ref = tai::testing::average_precision_reference(s, y);
    if (std::isnan(ref)) {
      EXPECT_FALSE(ap);
    } else {
      ASSERT_TRUE(ap);
      EXPECT_NEAR(*ap, ref, 1e-12);
    }
  }
}

TEST(AveragePrecision, InvariantUnderMonotoneMaps) {
  grad::Rng rng(13);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> s(30), t(30);
    std::vector<std::uint8_t> y(30);
    for (std::size_t i = 0; i < 30; ++i) {
      s[i] = n(rng);
      t[i] = std::exp(3.0 * s[i]) + 7.0;
      y[i] = rng() % 2;
    }
    y[0] = 1;
    EXPECT_NEAR(*average_precision(s, y), *average_precision(t, y), 1e-12);
  }
}

TEST(Evaluate, SkipsClassesWithoutPositives) {
  const Tensor s = Tensor::matrix(3, 2, {0.9, 0.1, 0.5, 0.2, 0.1, 0.3});
  const std::vector<std::vector<std::uint8_t>> y{{0, 0}, {1, 0}, {0, 0}};
  const std::vector<std::string> names{"dog", "cat"};
  const auto r = evaluate(s, y, names);
  EXPECT_DOUBLE_EQ(r.map, 0.5);
  EXPECT_FALSE(r.ap[1]);
  EXPECT_EQ(format_metrics_csv(r), "class_index,class_name,ap\n0,dog,0.5\n1,cat,skipped\n-,mAP,0.5\n");
}

TEST(Ensemble, SelfFusionIsNormalisedInput) {
  const std::vector<double> p{2.0, 4.0, 3.0};
  for (double lambda : {0.0, 0.3, 0.6, 1.0}) {
    const auto e = ensemble(p, p, lambda);
    EXPECT_NEAR(e[0], 0.0, 1e-15);
    EXPECT_NEAR(e[1], 1.0, 1e-15);
    EXPECT_NEAR(e[2], 0.5, 1e-15);
  }
  EXPECT_THROW(ensemble(p, p, 1.5), ValidationError);
  EXPECT_THROW(ensemble(p, std::vector<double>{1.0}, 0.5), ValidationError);
}

TEST(Ensemble, EndpointsKeepEachSourceRanking) {
  grad::Rng rng(14);
  const Tensor a = Tensor::randn({20, 4}, rng, 1.0);
  const Tensor b = Tensor::randn({20, 4}, rng, 3.0);
  std::vector<std::vector<std::uint8_t>> y(20, std::vector<std::uint8_t>(4));
  for (auto& row : y)
    for (auto& v : row) v = rng() % 2;
  for (auto& v : y[0]) v = 1;
  const std::vector<std::string> names{"a", "b", "c", "d"};
  EXPECT_EQ(evaluate(ensemble_scores(a, b, 1.0), y, names).map, evaluate(a, y, names).map);
  EXPECT_EQ(evaluate(ensemble_scores(a, b, 0.0), y, names).map, evaluate(b, y, names).map);
}

TEST(ScoresCsv, RoundTripIsExact) {
  tai::testing::TempDir dir;
  grad::Rng rng(15);
  const Tensor s = Tensor::randn({5, 3}, rng, 1.0);
  write_scores_csv(dir / "s.csv", s);
  EXPECT_EQ(read_scores_csv(dir / "s.csv"), s);
  std::ofstream(dir / "ragged.csv") << "1,2\n3\n";
  EXPECT_THROW(read_scores_csv(dir / "ragged.csv"), ValidationError);
  EXPECT_THROW(read_scores_csv(dir / "none.csv"), IoError);
}

TEST(Pgm, ScalesToFullRange) {
  const std::vector<double> v{0.0, 0.5, 1.0, 0.25};
  EXPECT_EQ(format_pgm(v, 2, 2), "P2\n2 2\n255\n0 128\n255 64\n");
  EXPECT_THROW(format_pgm(v, 3, 2), ValidationError);
}

TEST(CorrelationMap, ExportsCsvAndPgm) {
  tai::testing::TempDir dir;
  const Tensor P = Tensor::matrix(2, 4, {0.1, 0.2, 0.3, 0.4, 0.4, 0.3, 0.2, 0.1});
  const std::vector<std::string> names{"dog", "cell phone"};
  export_correlation_map(P, names, dir / "m", 2, 2);
  EXPECT_TRUE(std::filesystem::exists(dir / "m.csv"));
  EXPECT_EQ(slurp(dir / "m_dog.pgm").substr(0, 11), "P2\n2 2\n255\n");
  bool found = false;
  for (const auto& e : std::filesystem::directory_iterator(dir.path()))
    found = found || e.path().filename().string().find("cell") != std::string::npos;
  EXPECT_TRUE(found);
}

TEST(Classify, MergeWeightEndpoints) {
  const auto w = enc::generate_world(tai::testing::tiny_world_config());
  const auto e = enc::make_dual_encoder(tai::testing::tiny_encoder_config(),
                                        enc::build_vocab(w, tai::testing::tiny_encoder_config()), 1);
  const auto prompts = train::init_prompts(4, e, w.class_names, 2);
  const auto emb = train::compute_class_embeddings(prompts, e);
  const auto bundle = train::score(e.image.encode(w.scenes[0].patches), emb, train::LossConfig{});
  EvalConfig cfg;
  cfg.merge_weight = 1.0;
  const auto g = classify_image(w.scenes[0].patches, emb, e, cfg);
  cfg.merge_weight = 0.0;
  const auto l = classify_image(w.scenes[0].patches, emb, e, cfg);
  for (std::size_t c = 0; c < g.size(); ++c) {
    EXPECT_NEAR(g[c], bundle.p[c], 1e-12);
    EXPECT_NEAR(l[c], bundle.p_agg[c], 1e-12);
  }
}

}  // namespace
