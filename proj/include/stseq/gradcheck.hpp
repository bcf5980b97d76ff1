#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "stseq/config.hpp"

namespace stseq {

struct GradcheckOptions {
  std::uint64_t seed = 7;
  std::size_t samples = 50;   // scalar parameters checked
  double step = 1e-5;         // stencil spacing
  double tolerance = 1e-4;    // on the relative error
  double floor = 1e-6;        // denominator floor of the relative error
  bool global_local = false;  // adapter input with a non-zero residual MLP
};

struct GradcheckEntry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckReport {
  RunConfig config;
  std::size_t sequence_length = 0;  // after masking
  double loss = 0.0;
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = false;
};

// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

// Analytic vs fourth-order central-difference gradients of the full masked training loss
// (decoder loss plus MVM against a fixed reference) of a small 64-bit model.
GradcheckReport gradcheck_model(const GradcheckOptions& options = {});

}  // namespace stseq
