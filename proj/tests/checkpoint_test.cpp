// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "tai/checkpoint.hpp"
#include "tai/error.hpp"

namespace {

using namespace tai;
using namespace tai::io;

std::vector<NamedTensor> sample() {
  return {{"a", grad::Tensor::matrix(2, 2, {1.0, -2.5, 0.125, 3.0})},
          {"scalar", grad::Tensor::scalar(0.5)},
          {"empty", grad::Tensor({0, 3})}};
}

std::string error_of(std::string_view bytes) {
  try {
    parse_checkpoint(bytes, "mem");
  } catch (const IoError& e) {
    return e.what();
  }
  return "";
}

TEST(Checkpoint, RoundTripAndLayout) {
  const std::string bytes = serialize_checkpoint(sample());
  EXPECT_EQ(bytes.substr(0, 4), "TAIC");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 3);
  EXPECT_EQ(parse_checkpoint(bytes), sample());
  EXPECT_EQ(serialize_checkpoint(parse_checkpoint(bytes)), bytes);
}

TEST(Checkpoint, ValuesAreNarrowedToFloat) {
  const std::vector<NamedTensor> e{{"x", grad::Tensor::matrix(1, 1, {0.1})}};
  EXPECT_EQ(parse_checkpoint(serialize_checkpoint(e))[0].value.item(), static_cast<double>(0.1f));
}

TEST(Checkpoint, BadMagicAndVersion) {
  std::string bytes = serialize_checkpoint(sample());
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_NE(error_of(bad).find("bad magic"), std::string::npos);
  bad = bytes;
  bad[4] = 9;
  const auto msg = error_of(bad);
  EXPECT_NE(msg.find("version 9"), std::string::npos);
  EXPECT_NE(msg.find("offset 4"), std::string::npos);
}

TEST(Checkpoint, EveryTruncationFailsWithOffset) {
  const std::string bytes = serialize_checkpoint(sample());
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    const auto msg = error_of(std::string_view(bytes).substr(0, n));
    EXPECT_NE(msg.find("offset"), std::string::npos) << n;
  }
  EXPECT_NE(error_of(bytes + "z").find("trailing"), std::string::npos);
}

TEST(Checkpoint, MissingFileIsIoError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.taic"), IoError);
}

TEST(Checkpoint, EncoderAndPromptsRoundTrip) {
  tai::testing::TempDir dir;
  const auto w = enc::generate_world(tai::testing::tiny_world_config());
  const auto e = enc::make_dual_encoder(tai::testing::tiny_encoder_config(),
                                        enc::build_vocab(w, tai::testing::tiny_encoder_config()), 4);
  save_checkpoint(dir / "e.taic", encoder_entries(e, w.class_names));
  const auto entries = load_checkpoint(dir / "e.taic");
  const auto back = encoder_from_entries(entries);
  EXPECT_EQ(back.config, e.config);
  EXPECT_EQ(back.vocab, e.vocab);
  EXPECT_EQ(class_names_from_entries(entries), w.class_names);
  // Weights survive to float precision, and a second round trip is exact.
  const auto a = e.named_tensors(), b = back.named_tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].second.size(); ++k)
      EXPECT_EQ(b[i].second.data()[k], static_cast<double>(static_cast<float>(a[i].second.data()[k])));
  EXPECT_EQ(serialize_checkpoint(encoder_entries(back, w.class_names)), serialize_checkpoint(entries));

  auto p = train::init_prompts(4, back, w.class_names, 5);
  p.merge_weight = 1.0;
  const auto pe = prompt_entries(p);
  const auto pb = prompts_from_entries(parse_checkpoint(serialize_checkpoint(pe)), back);
  EXPECT_EQ(pb.class_names, p.class_names);
  EXPECT_EQ(pb.class_tokens, p.class_tokens);
  EXPECT_EQ(pb.merge_weight, 1.0);
}

TEST(Checkpoint, ClassIndicesMustBeDense) {
  std::vector<NamedTensor> e{{"class_name:dog", grad::Tensor::scalar(0)}, {"class_name:cat", grad::Tensor::scalar(2)}};
  EXPECT_THROW(class_names_from_entries(e), ValidationError);
  e[1].value = grad::Tensor::scalar(0);
  EXPECT_THROW(class_names_from_entries(e), ValidationError);
}

}  // namespace
