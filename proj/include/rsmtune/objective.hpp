#pragma once

// Black-box objectives. A campaign only ever sees `Objective::evaluate`:
// decoded factor settings in, one finite loss out.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "rsmtune/doe.hpp"

namespace rsmtune {

// c + b'x + x'Bx (+ Gaussian noise), x in coded units of the declared factors.
struct QuadraticSurface {
  Eigen::MatrixXd b_matrix;
  Eigen::VectorXd b;
  double c = 0.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

// Child process speaking the line protocol:
//   stdin  <- {"<factor>": <value>, ..., "run_id": <id>}
//   stdout -> {"loss": <finite real>}
// and exiting 0.
struct ExternalCommand {
  std::vector<std::string> argv;
  double timeout_seconds = 3600.0;
};

using ObjectiveSpec = std::variant<QuadraticSurface, ExternalCommand>;

class Objective {
 public:
  virtual ~Objective() = default;

  // Safe to call concurrently for distinct run ids.
  virtual double evaluate(const Settings& decoded, std::uint64_t run_id) const = 0;
};

// `factors` are the declared (original) factors; the quadratic surface is
// expressed in their coding.
std::unique_ptr<Objective> make_objective(const ObjectiveSpec& spec,
                                          std::vector<FactorSpec> factors);

double evaluate(const ObjectiveSpec& spec, std::span<const FactorSpec> factors,
                const Settings& decoded, std::uint64_t run_id);

// The request line written to an external objective's stdin (no newline).
std::string request_line(std::span<const FactorSpec> factors, const Settings& decoded,
                         std::uint64_t run_id);

// Parses {"loss": x}; throws EvaluationError on anything else.
double parse_reply(const std::string& line);

struct DevianceSample {
  std::vector<double> counts;  // N_i, non-negative integers
  std::vector<double> fitted;  // lambda(x_i) * nu_i, strictly positive
};

// Mean of 2 N [mu/N - 1 - log(mu/N)]; a policy with N = 0 contributes 2 mu.
double poisson_deviance(const DevianceSample& sample);

}  // namespace rsmtune
