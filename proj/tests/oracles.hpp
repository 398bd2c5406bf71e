// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reference implementations written from the definitions, independent of the
// library code they check, plus the finite-difference gradient harness.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tai/gradcore.hpp"
#include "tai/nounfilter.hpp"

namespace tai::testing {

using grad::Rng;
using grad::Tensor;
using grad::Var;

/// Largest |analytic − numeric| / max(|analytic|, |numeric|, 1e-4) over every
/// input element. Non-scalar outputs are reduced with fixed random weights.
double fd_max_rel_error(const std::function<Var(std::span<const Var>)>& f, const std::vector<Tensor>& inputs,
                        Rng& rng, double h = 1e-5);

struct GradCase {
  std::string name;
  double max_rel_err = 0.0;
};

/// Every differentiable op over several random shapes, then the full
/// text→loss pipeline (C=3, M=2, one sentence) in each mode and loss.
std::vector<GradCase> gradient_suite(std::uint64_t seed);

/// Σ over an explicit list of (positive, negative) pairs.
double ranking_loss_pairs(std::span<const double> scores, std::span<const std::uint8_t> labels, double margin);
double bce_reference(std::span<const double> scores, std::span<const std::uint8_t> labels);
double asl_reference(std::span<const double> scores, std::span<const std::uint8_t> labels, double gamma_pos,
                     double gamma_neg, double margin);

/// Σ_j w_j P_j with w = softmax(P/τ), accumulated in long double.
double aggregate_local_reference(std::span<const double> row, double tau);

/// Non-interpolated AP by counting, for each positive, the items ranked at or
/// above it (higher score, or equal score and earlier index). No sorting.
double average_precision_reference(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// O(tokens × synonyms) matcher: for each phrase length from longest to one,
/// slide left to right and compare against every synonym of every class.
std::vector<std::uint8_t> naive_match(std::string_view sentence, const text::SynonymDictionary& dict);

/// The world's class pool plus decoy classes whose synonyms are substrings of
/// compounds in the pool ("phone", "plant", "hot dog").
text::SynonymDictionary oracle_dictionary();

/// Sentences built from intros, inflected synonyms, fillers and punctuation.
std::vector<std::string> generate_sentences(const text::SynonymDictionary& dict, std::size_t n, std::uint64_t seed);

}  // namespace tai::testing
