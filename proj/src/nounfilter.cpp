// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0

#include "tai/nounfilter.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tai/dualenc.hpp"
#include "tai/error.hpp"
#include "tai/templates.hpp"

namespace tai::text {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string join(std::span<const std::string> words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

std::string canonical_phrase(std::string_view phrase) { return join(lemmatize_text(phrase)); }

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

// Words that look plural but are not, or are too short to strip safely.
const std::set<std::string_view> kInvariant = {
    "bus",   "glass",  "grass",   "gas",    "news",     "series", "species", "lens",
    "always", "perhaps", "whereas", "towards", "besides", "physics", "mathematics", "politics",
    "minibus", "tennis", "chassis", "canvas", "cactus",  "octopus", "virus",   "campus",
};

const std::map<std::string_view, std::string_view> kIrregular = {
    {"buses", "bus"},       {"minibuses", "minibus"}, {"gases", "gas"},       {"calves", "calf"},
    {"halves", "half"},     {"knives", "knife"},      {"leaves", "leaf"},     {"lives", "life"},
    {"loaves", "loaf"},     {"scarves", "scarf"},     {"selves", "self"},     {"shelves", "shelf"},
    {"thieves", "thief"},   {"wives", "wife"},        {"wolves", "wolf"},     {"elves", "elf"},
    {"hooves", "hoof"},     {"movies", "movie"},      {"cookies", "cookie"},  {"ties", "tie"},
    {"lenses", "lens"},     {"canvases", "canvas"},   {"cacti", "cactus"},    {"viruses", "virus"},
};

}  // namespace

// ---- dictionary ---------------------------------------------------------------

SynonymDictionary parse_synonyms(std::string_view content, std::string_view source) {
  SynonymDictionary dict;
  std::map<std::string, std::size_t> owner;  // canonical phrase -> class
  std::istringstream in{std::string(content)};
  std::string raw;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw ValidationError(std::string(source) + ":" + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) fail("expected `classname: syn1, syn2, ...`");
    std::string name = lower(trim(std::string_view(line).substr(0, colon)));
    if (name.empty()) fail("empty class name");
    std::vector<std::string> syns;
    std::stringstream rest(line.substr(colon + 1));
    std::string item;
    while (std::getline(rest, item, ',')) {
      item = lower(trim(item));
      if (!item.empty()) syns.push_back(item);
    }
    if (syns.empty()) fail("class '" + name + "' has no synonyms");
    if (std::find(syns.begin(), syns.end(), name) == syns.end()) syns.insert(syns.begin(), name);

    const std::size_t cls = dict.classes.size();
    std::vector<std::string> kept;
    for (const auto& s : syns) {
      const std::string key = canonical_phrase(s);
      if (key.empty()) fail("synonym '" + s + "' has no words");
      auto [it, inserted] = owner.emplace(key, cls);
      if (!inserted) {
        if (it->second == cls) continue;
        fail("synonym '" + s + "' assigned to both '" + dict.classes[it->second] + "' and '" + name + "'");
      }
      kept.push_back(s);
    }
    dict.classes.push_back(std::move(name));
    dict.synonyms.push_back(std::move(kept));
  }
  if (dict.classes.empty()) throw ValidationError(std::string(source) + ": no classes defined");
  return dict;
}

SynonymDictionary load_synonyms(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open synonym file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_synonyms(ss.str(), path.string());
}

std::string format_synonyms(const SynonymDictionary& dict) {
  std::string out;
  for (std::size_t i = 0; i < dict.size(); ++i) {
    out += dict.classes[i] + ":";
    for (std::size_t j = 0; j < dict.synonyms[i].size(); ++j) out += (j ? ", " : " ") + dict.synonyms[i][j];
    out += "\n";
  }
  return out;
}

// ---- lemmatizer -----------------------------------------------------------------

std::string lemmatize(std::string_view token) {
  std::string w(token);
  if (kInvariant.contains(w)) return w;
  if (auto it = kIrregular.find(w); it != kIrregular.end()) return std::string(it->second);
  if (w.size() <= 3) return w;
  if (ends_with(w, "ies") && w.size() > 4) return w.substr(0, w.size() - 3) + "y";
  if (ends_with(w, "sses") || ends_with(w, "zzes") || ends_with(w, "xes") || ends_with(w, "ches") ||
      ends_with(w, "shes"))
    return w.substr(0, w.size() - 2);
  if (ends_with(w, "ss") || ends_with(w, "us") || ends_with(w, "is")) return w;
  if (ends_with(w, "s")) return w.substr(0, w.size() - 1);
  return w;
}

std::vector<std::string> lemmatize_text(std::string_view sentence) {
  auto words = enc::split_words(sentence);
  for (auto& w : words) w = lemmatize(w);
  return words;
}

std::vector<std::size_t> PseudoLabeledText::positives() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i]) out.push_back(i);
  return out;
}

// ---- matching ---------------------------------------------------------------------

SynonymMatcher::SynonymMatcher(const SynonymDictionary& dict) : num_classes_(dict.size()) {
  for (std::size_t c = 0; c < dict.size(); ++c)
    for (const auto& s : dict.synonyms[c]) {
      auto words = lemmatize_text(s);
      if (words.empty()) continue;
      if (words.size() >= by_length_.size()) by_length_.resize(words.size() + 1);
      by_length_[words.size()].emplace(join(words), c);
      max_len_ = std::max(max_len_, words.size());
    }
}

std::vector<std::uint8_t> SynonymMatcher::match(std::span<const std::string> lemmas) const {
  std::vector<std::uint8_t> labels(num_classes_, 0);
  std::vector<bool> used(lemmas.size(), false);
  for (std::size_t len = std::min(max_len_, lemmas.size()); len >= 1; --len) {
    const auto& table = by_length_[len];
    if (table.empty()) continue;
    for (std::size_t pos = 0; pos + len <= lemmas.size(); ++pos) {
      if (std::any_of(used.begin() + static_cast<std::ptrdiff_t>(pos),
                      used.begin() + static_cast<std::ptrdiff_t>(pos + len), [](bool u) { return u; }))
        continue;
      auto it = table.find(join(lemmas.subspan(pos, len)));
      if (it == table.end()) continue;
      labels[it->second] = 1;
      std::fill(used.begin() + static_cast<std::ptrdiff_t>(pos), used.begin() + static_cast<std::ptrdiff_t>(pos + len),
                true);
    }
  }
  return labels;
}

std::vector<PseudoLabeledText> filter_corpus(std::span<const std::string> sentences, const SynonymDictionary& dict) {
  SynonymMatcher matcher(dict);
  std::vector<PseudoLabeledText> out;
  for (const auto& s : sentences) {
    PseudoLabeledText sample{s, lemmatize_text(s), {}};
    sample.labels = matcher.match(sample.tokens);
    if (std::any_of(sample.labels.begin(), sample.labels.end(), [](std::uint8_t v) { return v != 0; }))
      out.push_back(std::move(sample));
  }
  return out;
}

std::vector<PseudoLabeledText> inject_templates(const SynonymDictionary& dict, std::span<const std::string> templates) {
  for (const auto& t : templates)
    if (t.find(kClassPlaceholder) == std::string::npos)
      throw ValidationError("template without " + std::string(kClassPlaceholder) + " placeholder: \"" + t + "\"");
  std::vector<PseudoLabeledText> out;
  out.reserve(templates.size() * dict.size());
  for (const auto& t : templates)
    for (std::size_t c = 0; c < dict.size(); ++c) {
      std::string text = t;
      for (auto at = text.find(kClassPlaceholder); at != std::string::npos;
           at = text.find(kClassPlaceholder, at + dict.classes[c].size()))
        text.replace(at, kClassPlaceholder.size(), dict.classes[c]);
      PseudoLabeledText sample{text, lemmatize_text(text), std::vector<std::uint8_t>(dict.size(), 0)};
      sample.labels[c] = 1;
      out.push_back(std::move(sample));
    }
  return out;
}

// ---- JSON lines -------------------------------------------------------------------

std::string to_jsonl(std::span<const PseudoLabeledText> samples) {
  std::string out;
  for (const auto& s : samples) {
    nlohmann::ordered_json j;
    j["text"] = s.text;
    j["labels"] = s.positives();
    out += j.dump() + "\n";
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, std::span<const PseudoLabeledText> samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_jsonl(samples);
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<PseudoLabeledText> read_jsonl(const std::filesystem::path& path, std::size_t num_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<PseudoLabeledText> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto where = [&] { return path.string() + ":" + std::to_string(line_no) + ": "; };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where() + e.what());
    }
    if (!j.is_object() || !j.contains("text") || !j.contains("labels") || !j["text"].is_string() ||
        !j["labels"].is_array())
      throw ValidationError(where() + "expected {\"text\": string, \"labels\": [indices]}");
    PseudoLabeledText s;
    s.text = j["text"].get<std::string>();
    s.tokens = lemmatize_text(s.text);
    s.labels.assign(num_classes, 0);
    for (const auto& v : j["labels"]) {
      if (!v.is_number_unsigned() || v.get<std::size_t>() >= num_classes)
        throw ValidationError(where() + "label " + v.dump() + " outside [0, " + std::to_string(num_classes) + ")");
      s.labels[v.get<std::size_t>()] = 1;
    }
    if (s.positives().empty()) throw ValidationError(where() + "sample has no positive label");
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace tai::text
