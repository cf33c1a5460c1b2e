#pragma once

// Property suites shared by `dqen selftest` and the acceptance binary. Each
// suite compares the library against an independent oracle and reports the
// worst deviation it saw.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace dqen::tools {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
  nlohmann::json metrics = nlohmann::json::object();
};

// Analytic vs central-difference gradients of the semantic fusion module
// with respect to every parameter entry.
SuiteResult isf_gradient_suite(int seeds = 20, int k = 3, int word_dim = 5, int out_dim = 4, double h = 1e-5,
                               double tolerance = 1e-4);

// Assignment cost vs an exhaustive search over injective maps.
SuiteResult hungarian_suite(int trials = 500, int max_dim = 7, std::uint64_t seed = 0);

// The token classifier loss never reaches encoder parameters; the full
// objective does.
SuiteResult stop_gradient_suite(int batches = 20);

// Coverage is non-decreasing in K and at least `bound` at K = k for each seed.
SuiteResult coverage_suite(const std::vector<std::uint64_t>& seeds = {1, 2, 3}, int k = 8, double bound = 0.5,
                           double provider_noise = 0.1);

// Score combination, final scores, training-free scores and triplet NMS
// against loop oracles, plus argmax invariance with alpha = 0.
SuiteResult scoring_suite(int instances = 100, std::uint64_t seed = 0);

// Finite-difference check of the full training objective on a micro-batch
// of 2 images, 4 queries and 3 HOI categories.
SuiteResult loss_gradient_suite(int samples = 50, double h = 1e-5, double tolerance = 1e-3, std::uint64_t seed = 0);

// mAP from the evaluator vs a threshold-sweep precision/recall integration on
// crafted detections; Known-Object AP must not fall below Default AP.
SuiteResult evaluator_suite(int images = 20, double tolerance = 1e-9, std::uint64_t seed = 0);

}  // namespace dqen::tools
