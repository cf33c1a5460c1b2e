#include "selftest.hpp"

#include "invariants.hpp"

#include <functional>
#include <iomanip>
#include <ostream>
#include <vector>

namespace dqen::tools {

int run_selftest(std::ostream& out, const std::string& filter) {
  // Reduced sizes keep this under a minute; the acceptance binary runs the
  // full-size versions.
  const std::vector<std::pair<std::string, std::function<SuiteResult()>>> suites = {
      {"hungarian", [] { return hungarian_suite(200, 6, 1); }},
      {"isf_gradient", [] { return isf_gradient_suite(5); }},
      {"loss_gradient", [] { return loss_gradient_suite(20, 1e-5, 1e-3, 1); }},
      {"stop_gradient", [] { return stop_gradient_suite(5); }},
      {"scoring", [] { return scoring_suite(50, 1); }},
      {"evaluator", [] { return evaluator_suite(20, 1e-9, 1); }},
      {"coverage", [] { return coverage_suite({1}); }},
  };
  int failed = 0, ran = 0;
  for (const auto& [name, run] : suites) {
    if (!filter.empty() && name.find(filter) == std::string::npos) continue;
    ++ran;
    SuiteResult r;
    try {
      r = run();
    } catch (const std::exception& e) {
      r.name = name;
      r.detail = std::string("threw: ") + e.what();
    }
    failed += r.passed ? 0 : 1;
    out << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(14) << name << ' ' << r.detail << " ["
        << std::fixed << std::setprecision(2) << r.seconds << " s]\n";
  }
  out << ran - failed << '/' << ran << " suites passed\n";
  return failed == 0 && ran > 0 ? 0 : 1;
}

}  // namespace dqen::tools
