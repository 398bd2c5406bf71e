// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "tai/error.hpp"

namespace {

using namespace tai;
using namespace tai::enc;
using tai::testing::tiny_encoder_config;
using tai::testing::tiny_world_config;

double row_norm(const Tensor& t, std::size_t r) {
  double s = 0.0;
  for (std::size_t c = 0; c < t.cols(); ++c) s += t(r, c) * t(r, c);
  return std::sqrt(s);
}

class EncoderTest : public ::testing::Test {
 protected:
  void SetUp() override {
    world = generate_world(tiny_world_config());
    enc = make_dual_encoder(tiny_encoder_config(), build_vocab(world, tiny_encoder_config()), 17);
  }
  SyntheticWorld world;
  DualEncoder enc;
};

TEST_F(EncoderTest, TextShapesAndUnitNorms) {
  const std::vector<std::vector<std::size_t>> seqs{enc.vocab.encode(world.scenes[0].caption, 24, true),
                                                   enc.vocab.encode(world.scenes[1].caption, 24, true)};
  Binder bind;
  const Features f = enc.text.forward(seqs, bind);
  ASSERT_EQ(f.global.value().rows(), 2u);
  EXPECT_EQ(f.global.value().cols(), 8u);
  ASSERT_EQ(f.segments.size(), 2u);
  EXPECT_EQ(f.tokens.value().rows(), f.segments[0].length + f.segments[1].length);
  for (std::size_t r = 0; r < 2; ++r) EXPECT_NEAR(row_norm(f.global.value(), r), 1.0, 1e-12);
  for (std::size_t r = 0; r < f.tokens.value().rows(); ++r) EXPECT_NEAR(row_norm(f.tokens.value(), r), 1.0, 1e-12);
}

TEST_F(EncoderTest, TrailingPaddingIsIgnored) {
  auto ids = enc.vocab.encode("a cat on the grass", 24, true);
  auto padded = ids;
  padded.resize(ids.size() + 5, Vocab::kPad);
  const auto a = enc.text.encode(ids);
  const auto b = enc.text.encode(padded);
  EXPECT_EQ(a.global, b.global);
  EXPECT_EQ(a.sequence, b.sequence);
}

TEST_F(EncoderTest, MalformedSequencesRejected) {
  Binder bind;
  const std::vector<std::vector<std::size_t>> no_sos{{5, Vocab::kEos}};
  EXPECT_THROW(enc.text.forward(no_sos, bind), ValidationError);
  const std::vector<std::vector<std::size_t>> two_eos{{Vocab::kSos, Vocab::kEos, Vocab::kEos}};
  EXPECT_THROW(enc.text.forward(two_eos, bind), ValidationError);
  const std::vector<std::vector<std::size_t>> too_long{std::vector<std::size_t>(30, 5)};
  EXPECT_THROW(enc.text.forward(too_long, bind), ValidationError);
  EXPECT_THROW(enc.vocab.encode("one two three four five six seven eight nine ten eleven twelve thirteen fourteen "
                                "fifteen sixteen seventeen eighteen nineteen twenty twentyone twentytwo twentythree",
                                24, false),
               ValidationError);
}

TEST_F(EncoderTest, ImageShapesAndUnitNorms) {
  const auto out = enc.image.encode(world.scenes[0].patches);
  EXPECT_EQ(out.sequence.rows(), 36u);
  EXPECT_EQ(out.sequence.cols(), 8u);
  EXPECT_NEAR(row_norm(out.global, 0), 1.0, 1e-12);
  for (std::size_t r = 0; r < 36; ++r) EXPECT_NEAR(row_norm(out.sequence, r), 1.0, 1e-12);
}

TEST_F(EncoderTest, BatchedMatchesSingle) {
  const Tensor* imgs[] = {&world.scenes[0].patches, &world.scenes[1].patches};
  Binder bind;
  const Features f = enc.image.forward(imgs, bind);
  const auto single = enc.image.encode(world.scenes[1].patches);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(f.global.value()(1, c), single.global.data()[c], 1e-12);
}

TEST(EncoderConfig, RejectsInconsistentShapes) {
  EncoderConfig c = tiny_encoder_config();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny_encoder_config();
  c.attn_window = 4;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(World, SameSeedSameWorld) {
  const auto a = generate_world(tiny_world_config(5));
  const auto b = generate_world(tiny_world_config(5));
  ASSERT_EQ(a.scenes.size(), b.scenes.size());
  for (std::size_t i = 0; i < a.scenes.size(); ++i) {
    EXPECT_EQ(a.scenes[i].patches, b.scenes[i].patches);
    EXPECT_EQ(a.scenes[i].caption, b.scenes[i].caption);
    EXPECT_EQ(a.scenes[i].objects, b.scenes[i].objects);
  }
  EXPECT_EQ(a.corpus, b.corpus);
  const auto c = generate_world(tiny_world_config(6));
  EXPECT_NE(a.scenes[0].patches, c.scenes[0].patches);
}

TEST(World, LabelsMatchObjectsAndSplits) {
  const auto w = generate_world(tiny_world_config());
  EXPECT_EQ(w.split(false).size(), 48u);
  EXPECT_EQ(w.split(true).size(), 24u);
  for (const auto& s : w.scenes) {
    std::vector<std::uint8_t> from_objects(w.num_classes(), 0);
    for (const auto& o : s.objects) from_objects[o.cls] = 1;
    EXPECT_EQ(s.labels, from_objects);
    EXPECT_EQ(s.patches.rows(), 36u);
  }
}

TEST(World, SaveLoadRoundTrip) {
  tai::testing::TempDir dir;
  const auto w = generate_world(tiny_world_config());
  save_world(w, dir.path());
  const auto r = load_world(dir.path());
  EXPECT_EQ(r.class_names, w.class_names);
  EXPECT_EQ(r.synonyms, w.synonyms);
  EXPECT_EQ(r.corpus, w.corpus);
  ASSERT_EQ(r.scenes.size(), w.scenes.size());
  for (std::size_t i = 0; i < w.scenes.size(); ++i) {
    EXPECT_EQ(r.scenes[i].labels, w.scenes[i].labels);
    EXPECT_EQ(r.scenes[i].caption, w.scenes[i].caption);
    EXPECT_EQ(r.scenes[i].test, w.scenes[i].test);
    for (std::size_t k = 0; k < w.scenes[i].patches.size(); ++k)
      EXPECT_NEAR(r.scenes[i].patches.data()[k], w.scenes[i].patches.data()[k], 1e-6);
  }
}

TEST(World, BadConfigRejected) {
  auto c = tiny_world_config();
  c.classes = 1;
  EXPECT_THROW(generate_world(c), ValidationError);
  c = tiny_world_config();
  c.classes = class_pool_size() + 1;
  EXPECT_THROW(generate_world(c), ValidationError);
}

TEST(InfoNce, IdenticalFeaturesGiveLogBatch) {
  const std::size_t b = 6;
  Tensor same({b, 4});
  for (std::size_t r = 0; r < b; ++r) same(r, 0) = 1.0;
  const auto loss = info_nce(Var(same), Var(same), 0.07);
  EXPECT_NEAR(loss.text_to_image.value().item(), std::log(static_cast<double>(b)), 1e-12);
  EXPECT_NEAR(loss.image_to_text.value().item(), std::log(static_cast<double>(b)), 1e-12);
}

TEST(InfoNce, AlignedPairsBeatShuffled) {
  grad::Rng rng(2);
  Tensor x = grad::Tensor::randn({8, 6}, rng, 1.0);
  const Var u = grad::l2_normalize(Var(x));
  Tensor y = x;
  for (std::size_t c = 0; c < 6; ++c) std::swap(y(0, c), y(1, c));
  const Var v = grad::l2_normalize(Var(y));
  EXPECT_LT(info_nce(u, u, 0.07).text_to_image.value().item(), info_nce(u, v, 0.07).text_to_image.value().item());
}

TEST(Pretrain, DeterministicAndLossFalls) {
  const auto w = generate_world(tiny_world_config());
  PretrainConfig p;
  p.epochs = 3;
  p.batch = 16;
  const auto a = contrastive_pretrain(w, tiny_encoder_config(), p);
  const auto b = contrastive_pretrain(w, tiny_encoder_config(), p);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  EXPECT_EQ(a.encoder.named_tensors(), b.encoder.named_tensors());
  ASSERT_EQ(a.epoch_loss.size(), 3u);
  EXPECT_LT(a.epoch_loss.back(), a.epoch_loss.front());
  const auto test = w.split(true);
  const double acc = retrieval_accuracy(a.encoder, w, test, 8);
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
}

TEST(Pretrain, ZeroEpochsKeepsInitialWeights) {
  const auto w = generate_world(tiny_world_config());
  PretrainConfig p;
  p.epochs = 0;
  const auto a = contrastive_pretrain(w, tiny_encoder_config(), p);
  const auto init = make_dual_encoder(tiny_encoder_config(), build_vocab(w, tiny_encoder_config()), p.seed);
  EXPECT_TRUE(a.epoch_loss.empty());
  EXPECT_EQ(a.encoder.named_tensors(), init.named_tensors());
}

}  // namespace
