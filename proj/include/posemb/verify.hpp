#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "posemb/encoder.hpp"
#include "posemb/gradcheck.hpp"
#include "posemb/method.hpp"

namespace posemb {

struct GradSuiteConfig {
  int layers = 2;
  int heads = 2;
  int width = 16;
  int ff_width = 32;
  int max_len = 8;
  int vocab_size = 32;
  double step = 1e-5;
  // Central differences on a loss near ln(vocab) carry about eps*|L|/step
  // ~ 1e-10 of round-off, so gradients below this floor are compared in
  // absolute terms.
  double floor = 1e-5;
  // Seeded noise added to every parameter so attention is far from uniform
  // and every class carries gradients well above the floor.
  double perturbation = 0.3;
  std::uint64_t seed = 7;
};

// The variant checked for a kind: clipping active for vector tables, and
// untied projections plus reset for the kinds that have them, so every
// parameter class appears.
MethodSpec gradcheck_spec(Kind kind);

struct ClassResult {
  std::string group;
  std::size_t tensors = 0;
  GradComparison comparison;
};

struct GradSuiteResult {
  MethodSpec spec;
  double loss = 0;
  std::vector<ClassResult> classes;  // in first-appearance order

  double max_rel_error() const;
};

// Masked-LM loss of a small encoder (dropout off, padded batch) versus
// central differences, grouped by parameter class.
GradSuiteResult gradient_suite(const MethodSpec& spec, const GradSuiteConfig& config = {});

struct ParamsRow {
  MethodSpec spec;
  std::string formula;
  std::int64_t closed_form = 0;
  std::int64_t enumerated = 0;
};

// Closed-form and enumerated position-parameter counts for every kind,
// with tables shared across heads and, when `include_unshared`, per head.
std::vector<ParamsRow> params_table(int m, int n, int d, int h, int k, bool include_unshared);

}  // namespace posemb
