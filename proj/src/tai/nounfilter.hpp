// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0
//
// Corpus preparation: synonym dictionaries, rule-based noun lemmatization, and
// turning sentences into binary pseudo-labels.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tai::text {

/// Class i is named classes[i]; synonyms[i] holds its lowercase expressions
/// (single words or phrases), always including the class name itself.
struct SynonymDictionary {
  std::vector<std::string> classes;
  std::vector<std::vector<std::string>> synonyms;

  std::size_t size() const { return classes.size(); }
};

/// Format: one class per line, `name: syn1, syn2, ...`; '#' starts a comment
/// line; blank lines are skipped. `source` only appears in error messages.
SynonymDictionary parse_synonyms(std::string_view content, std::string_view source = "<memory>");
SynonymDictionary load_synonyms(const std::filesystem::path& path);
std::string format_synonyms(const SynonymDictionary& dict);

/// Rule-based English noun de-inflection, identity on anything it does not recognise.
std::string lemmatize(std::string_view token);

/// Lowercase, split on non-alphanumerics, lemmatize.
std::vector<std::string> lemmatize_text(std::string_view sentence);

struct PseudoLabeledText {
  std::string text;
  std::vector<std::string> tokens;
  std::vector<std::uint8_t> labels;

  std::vector<std::size_t> positives() const;
  bool operator==(const PseudoLabeledText&) const = default;
};

/// Longest-phrase-first matcher over lemmatized tokens. Phrases are tried from
/// the longest length down; at each length positions are scanned left to right
/// and a hit consumes its words so shorter phrases cannot reuse them.
class SynonymMatcher {
 public:
  explicit SynonymMatcher(const SynonymDictionary& dict);

  std::vector<std::uint8_t> match(std::span<const std::string> lemmas) const;
  std::size_t num_classes() const { return num_classes_; }

 private:
  std::size_t num_classes_ = 0;
  std::size_t max_len_ = 0;
  // by_length_[n] maps a space-joined n-word phrase to its class.
  std::vector<std::unordered_map<std::string, std::size_t>> by_length_;
};

/// Drops sentences that mention no class.
std::vector<PseudoLabeledText> filter_corpus(std::span<const std::string> sentences, const SynonymDictionary& dict);

/// One one-hot sample per (template, class), template-major. Every template must contain [CLASS].
std::vector<PseudoLabeledText> inject_templates(const SynonymDictionary& dict, std::span<const std::string> templates);

/// `{"text": ..., "labels": [sorted positive indices]}` per line.
std::string to_jsonl(std::span<const PseudoLabeledText> samples);
void write_jsonl(const std::filesystem::path& path, std::span<const PseudoLabeledText> samples);
/// Labels are expanded to length `num_classes`; out-of-range or empty label lists are rejected.
std::vector<PseudoLabeledText> read_jsonl(const std::filesystem::path& path, std::size_t num_classes);

std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace tai::text
