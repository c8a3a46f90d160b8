#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unidps/losses/total.h"

namespace unidps {

struct GradcheckOptions {
  std::size_t samples = 500;  // perturbed parameters; every term is read at each
  double tolerance = 1e-4;    // worst allowed relative error
  // Relative errors use max(|analytic|, |numeric|, floor) as denominator,
  // where floor is the larger of `floor` and the round-off level of the
  // central difference (roundoff_factor * eps * |L| / 2h) over tolerance, so
  // that cancellation noise on vanishing gradients is not read as a mismatch.
  double floor = 1e-8;
  double roundoff_factor = 64.0;
  double step = 1e-5;  // h = step * (1 + |theta|)
  std::size_t max_attempts_factor = 20;
  std::uint64_t seed = 0;
  // Term whose analytic gradient is deliberately scaled by 1.01 (negative
  // control), e.g. "l_mask".
  std::optional<std::string> corrupt;
};

struct TermCheck {
  std::string term;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // samples whose discrete branches changed under +-h
  double worst_rel = 0.0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool pass = true;
};

struct GradcheckReport {
  std::vector<TermCheck> terms;
  double seconds = 0.0;
  bool pass = true;

  // Timing is left out so that reruns serialise identically.
  nlohmann::json to_json() const;
};

inline const std::vector<std::string>& gradcheck_terms() {
  static const std::vector<std::string> terms{"l_cls", "l_mask", "l_depth", "l_sg", "l_dg",
                                              "total"};
  return terms;
}

// Loss weights that keep only `term` (unit weight); "total" keeps `base`.
LossWeights isolate_term(const std::string& term, const LossWeights& base);

// Central differences against total_loss's analytic gradient. Samples
// cycle through the terms; each draws a parameter entry on which that term's
// analytic gradient is nonzero ("total" draws uniformly), and both perturbed
// evaluations are compared against every term. A model with no parameters
// passes vacuously.
GradcheckReport gradcheck_model(const Scene& scene, const ModelParams& params,
                                const ModelConfig& model, const LossConfig& loss,
                                const GradcheckOptions& options);

}  // namespace unidps
