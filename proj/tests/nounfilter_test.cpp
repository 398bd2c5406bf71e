// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "tai/error.hpp"
#include "tai/nounfilter.hpp"
#include "tai/templates.hpp"

namespace {

using namespace tai::text;

SynonymDictionary small_dict() {
  return parse_synonyms(
      "person: people, man, woman\n"
      "dog: puppy\n"
      "cell phone: cellphone, mobile phone\n"
      "telephone: phone\n"
      "bus: school bus\n");
}

std::vector<std::uint8_t> labels_of(const SynonymDictionary& d, std::string_view s) {
  return SynonymMatcher(d).match(lemmatize_text(s));
}

TEST(Lemmatize, PluralsAndExceptions) {
  EXPECT_EQ(lemmatize("dogs"), "dog");
  EXPECT_EQ(lemmatize("puppies"), "puppy");
  EXPECT_EQ(lemmatize("buses"), "bus");
  EXPECT_EQ(lemmatize("bus"), "bus");
  EXPECT_EQ(lemmatize("glass"), "glass");
  EXPECT_EQ(lemmatize("boxes"), "box");
  EXPECT_EQ(lemmatize("benches"), "bench");
  EXPECT_EQ(lemmatize("knives"), "knife");
  EXPECT_EQ(lemmatize("is"), "is");
}

TEST(Lemmatize, Idempotent) {
  for (const auto& s : tai::testing::generate_sentences(tai::testing::oracle_dictionary(), 300, 4)) {
    const auto once = lemmatize_text(s);
    std::string joined;
    for (const auto& w : once) joined += w + " ";
    EXPECT_EQ(lemmatize_text(joined), once) << s;
  }
}

TEST(Matcher, CompoundBeatsItsParts) {
  const auto d = small_dict();
  EXPECT_EQ(labels_of(d, "A man holding a cell phone"), (std::vector<std::uint8_t>{1, 0, 1, 0, 0}));
  EXPECT_EQ(labels_of(d, "an old phone"), (std::vector<std::uint8_t>{0, 0, 0, 1, 0}));
  EXPECT_EQ(labels_of(d, "two mobile phones and a phone"), (std::vector<std::uint8_t>{0, 0, 1, 1, 0}));
  EXPECT_EQ(labels_of(d, "the school buses"), (std::vector<std::uint8_t>{0, 0, 0, 0, 1}));
}

TEST(Matcher, PluralsAndCaseMatch) {
  const auto d = small_dict();
  EXPECT_EQ(labels_of(d, "PUPPIES everywhere!"), (std::vector<std::uint8_t>{0, 1, 0, 0, 0}));
  EXPECT_EQ(labels_of(d, "People, people."), (std::vector<std::uint8_t>{1, 0, 0, 0, 0}));
}

TEST(Matcher, AgreesWithNaiveMatcher) {
  const auto dict = tai::testing::oracle_dictionary();
  const SynonymMatcher m(dict);
  const auto sentences = tai::testing::generate_sentences(dict, 1000, 21);
  std::size_t agree = 0;
  for (const auto& s : sentences) agree += m.match(lemmatize_text(s)) == tai::testing::naive_match(s, dict);
  EXPECT_EQ(agree, sentences.size());
}

TEST(Matcher, ClassOrderDoesNotChangeMatches) {
  const auto dict = tai::testing::oracle_dictionary();
  SynonymDictionary reversed{{dict.classes.rbegin(), dict.classes.rend()}, {dict.synonyms.rbegin(), dict.synonyms.rend()}};
  const SynonymMatcher a(dict), b(reversed);
  for (const auto& s : tai::testing::generate_sentences(dict, 300, 8)) {
    const auto la = a.match(lemmatize_text(s));
    auto lb = b.match(lemmatize_text(s));
    std::reverse(lb.begin(), lb.end());
    EXPECT_EQ(la, lb) << s;
  }
}

TEST(Synonyms, ParseFormatRoundTrip) {
  const auto d = small_dict();
  const auto again = parse_synonyms(format_synonyms(d));
  EXPECT_EQ(again.classes, d.classes);
  EXPECT_EQ(again.synonyms, d.synonyms);
  EXPECT_EQ(d.synonyms[1].front(), "dog");
}

TEST(Synonyms, MalformedRejected) {
  EXPECT_THROW(parse_synonyms("dog puppy\n"), tai::ValidationError);
  EXPECT_THROW(parse_synonyms("dog: puppy\ncat: puppies\n"), tai::ValidationError);
  EXPECT_THROW(parse_synonyms("# only a comment\n"), tai::ValidationError);
}

TEST(Filter, DropsSentencesWithoutClasses) {
  const auto d = small_dict();
  const std::vector<std::string> corpus{"a puppy", "the sky is blue", "man on a bus"};
  const auto out = filter_corpus(corpus, d);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].positives(), (std::vector<std::size_t>{1}));
  EXPECT_EQ(out[1].positives(), (std::vector<std::size_t>{0, 4}));
}

TEST(Filter, IdempotentOnItsOutput) {
  const auto dict = tai::testing::oracle_dictionary();
  const auto sentences = tai::testing::generate_sentences(dict, 500, 9);
  const auto once = filter_corpus(sentences, dict);
  std::vector<std::string> texts;
  for (const auto& s : once) texts.push_back(s.text);
  EXPECT_EQ(filter_corpus(texts, dict), once);
}

TEST(Templates, OneHotPerTemplateAndClass) {
  const auto d = small_dict();
  std::vector<std::string> templates(tai::kHandCraftedTemplates.begin(), tai::kHandCraftedTemplates.end());
  ASSERT_EQ(templates.size(), 80u);
  const auto out = inject_templates(d, templates);
  ASSERT_EQ(out.size(), 80u * d.size());
  EXPECT_EQ(out[0].text, "a bad photo of a person");
  EXPECT_EQ(out[2].positives(), (std::vector<std::size_t>{2}));
  const std::vector<std::string> bad{"no placeholder here"};
  EXPECT_THROW(inject_templates(d, bad), tai::ValidationError);
}

TEST(Jsonl, RoundTrip) {
  tai::testing::TempDir dir;
  const auto d = small_dict();
  const std::vector<std::string> corpus{"a puppy and a \"man\"", "people with cellphones"};
  const auto samples = filter_corpus(corpus, d);
  write_jsonl(dir / "t.jsonl", samples);
  const auto back = read_jsonl(dir / "t.jsonl", d.size());
  ASSERT_EQ(back.size(), samples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].text, samples[i].text);
    EXPECT_EQ(back[i].labels, samples[i].labels);
  }
  EXPECT_THROW(read_jsonl(dir / "t.jsonl", 2), tai::ValidationError);
  EXPECT_THROW(read_jsonl(dir / "missing.jsonl", 5), tai::IoError);
}

}  // namespace
