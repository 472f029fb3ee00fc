#include "rsmtune/doe.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "rsmtune/error.hpp"
#include "rsmtune/regress.hpp"

namespace rsmtune {

namespace {

bool is_identifier(std::string_view name) {
  if (name.empty() || !(std::isalpha(static_cast<unsigned char>(name[0])) || name[0] == '_'))
    return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  });
}

bool is_integral(double v) { return std::isfinite(v) && std::floor(v) == v; }

double floor_mod(double value, int modulus) {
  const double q = modulus;
  double r = std::fmod(value, q);
  if (r < 0) r += q;
  return r;
}

}  // namespace

void validate(const FactorSpec& f) {
  const std::string label = f.name.empty() ? std::string("<unnamed>") : f.name;
  if (!is_identifier(f.name))
    throw Error(fmt::format("factor '{}': name must be an identifier", label));
  if (!std::isfinite(f.low) || !std::isfinite(f.high))
    throw Error(fmt::format("factor '{}': low and high must be finite", label));
  if (!(f.low < f.high))
    throw Error(fmt::format("factor '{}': low ({}) must be less than high ({})", label, f.low,
                            f.high));
  if (f.mid && !(f.low <= *f.mid && *f.mid <= f.high))
    throw Error(fmt::format("factor '{}': mid ({}) must lie in [{}, {}]", label, *f.mid, f.low,
                            f.high));
  if (f.discrete() && !(is_integral(f.low) && is_integral(f.high)))
    throw Error(fmt::format("factor '{}': {} factors need integer low and high", label,
                            to_string(f.kind)));
  if (f.kind == FactorKind::cyclic && f.modulus < 1)
    throw Error(fmt::format("factor '{}': cyclic factors need a positive modulus", label));
  if (f.kind != FactorKind::cyclic && f.modulus != 0)
    throw Error(fmt::format("factor '{}': modulus is only meaningful for cyclic factors", label));
  if (f.oob == OutOfBounds::wrap && f.kind != FactorKind::cyclic)
    throw Error(fmt::format("factor '{}': policy 'wrap' requires a cyclic factor", label));
  if (f.clamp_low() > f.clamp_high())
    throw Error(fmt::format("factor '{}': limits are inverted", label));
}

std::string_view to_string(FactorKind kind) {
  switch (kind) {
    case FactorKind::continuous: return "continuous";
    case FactorKind::integer: return "integer";
    case FactorKind::cyclic: return "cyclic";
  }
  return "?";
}

std::string_view to_string(OutOfBounds policy) {
  switch (policy) {
    case OutOfBounds::none: return "none";
    case OutOfBounds::clamp: return "clamp";
    case OutOfBounds::wrap: return "wrap";
  }
  return "?";
}

FactorKind parse_factor_kind(std::string_view text) {
  if (text == "continuous") return FactorKind::continuous;
  if (text == "integer") return FactorKind::integer;
  if (text == "cyclic") return FactorKind::cyclic;
  throw Error(fmt::format("unknown factor kind '{}'", text));
}

OutOfBounds parse_out_of_bounds(std::string_view text) {
  if (text == "none") return OutOfBounds::none;
  if (text == "clamp") return OutOfBounds::clamp;
  if (text == "wrap") return OutOfBounds::wrap;
  throw Error(fmt::format("unknown out-of-bounds policy '{}'", text));
}

double nint(double value) { return std::round(value); }

double encode(const FactorSpec& f, double actual) {
  if (actual == f.high) return 1.0;
  if (actual == f.low) return -1.0;
  return (actual - f.center()) / f.half_width();
}

double realize(const FactorSpec& f, double raw) {
  if (!f.discrete()) {
    if (f.oob == OutOfBounds::clamp) return std::clamp(raw, f.clamp_low(), f.clamp_high());
    return raw;
  }
  double level = nint(raw);
  if (f.oob == OutOfBounds::wrap) {
    if (level < 0 || level > f.modulus - 1) level = floor_mod(level, f.modulus);
  } else if (f.oob == OutOfBounds::clamp) {
    level = std::clamp(level, f.clamp_low(), f.clamp_high());
  }
  return level;
}

double decode(const FactorSpec& f, double coded) {
  return realize(f, coded * f.half_width() + f.center());
}

std::string_view to_string(PointRole role) {
  switch (role) {
    case PointRole::corner: return "corner";
    case PointRole::center: return "center";
    case PointRole::star: return "star";
    case PointRole::descent: return "descent";
    case PointRole::confirmation: return "confirmation";
  }
  return "?";
}

PointRole parse_point_role(std::string_view text) {
  for (auto role : {PointRole::corner, PointRole::center, PointRole::star, PointRole::descent,
                    PointRole::confirmation})
    if (to_string(role) == text) return role;
  throw Error(fmt::format("unknown point role '{}'", text));
}

std::string_view to_string(ModelOrder order) {
  return order == ModelOrder::first ? "first" : "second";
}

Generator parse_generator(std::string_view text) {
  std::vector<std::size_t> indices;
  bool saw_equals = false;
  std::size_t i = 0;
  auto fail = [&](std::string_view why) {
    return Error(fmt::format("generator '{}': {}", text, why));
  };
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c)) || c == '*' || c == '.') {
      ++i;
    } else if (c == '=') {
      if (saw_equals || indices.size() != 1) throw fail("expected 'xT = xA*xB...'");
      saw_equals = true;
      ++i;
    } else if (c == 'x' || c == 'X') {
      std::size_t j = i + 1;
      std::size_t value = 0;
      while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j])))
        value = value * 10 + static_cast<std::size_t>(text[j++] - '0');
      if (j == i + 1 || value == 0) throw fail("factor references are x1, x2, ...");
      indices.push_back(value - 1);
      i = j;
    } else {
      throw fail(fmt::format("unexpected character '{}'", c));
    }
  }
  if (!saw_equals || indices.size() < 2) throw fail("expected 'xT = xA*xB...'");
  return Generator{indices.front(), {indices.begin() + 1, indices.end()}};
}

Design full_factorial(std::size_t factors) { return fractional_factorial(factors, {}); }

Design fractional_factorial(std::size_t factors, std::span<const Generator> generators) {
  if (factors == 0) throw Error("a factorial design needs at least one factor");
  if (generators.size() >= factors)
    throw Error(fmt::format("{} generators leave no base factors among {}", generators.size(),
                            factors));
  std::vector<bool> generated(factors, false);
  std::set<std::vector<std::size_t>> words;
  for (const auto& g : generators) {
    if (g.target >= factors) throw Error(fmt::format("generator target x{} out of range", g.target + 1));
    if (generated[g.target])
      throw Error(fmt::format("generators are contradictory: x{} defined twice", g.target + 1));
    generated[g.target] = true;
  }
  for (const auto& g : generators) {
    std::vector<std::size_t> word = g.sources;
    std::sort(word.begin(), word.end());
    if (std::adjacent_find(word.begin(), word.end()) != word.end())
      throw Error(fmt::format("generator for x{} repeats a source factor", g.target + 1));
    if (word.size() < 2)
      throw Error(fmt::format("generator for x{} aliases a main effect; use two or more sources",
                              g.target + 1));
    for (auto s : word) {
      if (s >= factors) throw Error(fmt::format("generator source x{} out of range", s + 1));
      if (generated[s])
        throw Error(fmt::format("generator for x{} uses generated factor x{}", g.target + 1, s + 1));
    }
    if (!words.insert(word).second)
      throw Error(fmt::format("generators are dependent: x{} duplicates another generated column",
                              g.target + 1));
  }

  std::vector<std::size_t> base;
  for (std::size_t j = 0; j < factors; ++j)
    if (!generated[j]) base.push_back(j);

  const std::size_t runs = std::size_t{1} << base.size();
  Design design{factors, {}};
  design.points.reserve(runs);
  for (std::size_t r = 0; r < runs; ++r) {
    DesignPoint point{std::vector<double>(factors, 0.0), PointRole::corner};
    for (std::size_t b = 0; b < base.size(); ++b) {
      const std::size_t bit = base.size() - 1 - b;  // last base factor fastest
      point.coded[base[b]] = ((r >> bit) & 1u) ? 1.0 : -1.0;
    }
    for (const auto& g : generators) {
      double v = 1.0;
      for (auto s : g.sources) v *= point.coded[s];
      point.coded[g.target] = v;
    }
    design.points.push_back(std::move(point));
  }
  return design;
}

double rotatable_alpha(std::size_t factors, std::size_t fraction, std::size_t corner_replicates,
                       std::size_t star_replicates) {
  const double corners = std::ldexp(1.0, static_cast<int>(factors - fraction));
  return std::pow(corners * static_cast<double>(corner_replicates) /
                      static_cast<double>(star_replicates),
                  0.25);
}

std::size_t CcdSpec::run_count() const {
  return (std::size_t{1} << (factors - fraction())) * corner_replicates +
         2 * factors * star_replicates + center_replicates;
}

double CcdSpec::star_distance() const {
  return alpha.value_or(
      rotatable_alpha(factors, fraction(), corner_replicates, star_replicates));
}

Design ccd(const CcdSpec& spec) {
  if (spec.factors == 0) throw Error("ccd: at least one factor is required");
  if (spec.corner_replicates == 0) throw Error("ccd: corner replicates must be at least 1");
  if (spec.star_replicates == 0) throw Error("ccd: star replicates must be at least 1");
  if (spec.alpha && !(*spec.alpha > 0.0 && std::isfinite(*spec.alpha)))
    throw Error("ccd: alpha must be positive");

  const Design corners = fractional_factorial(spec.factors, spec.generators);
  const double alpha = spec.star_distance();
  Design design{spec.factors, {}};
  design.points.reserve(spec.run_count());
  for (const auto& corner : corners.points)
    for (std::size_t r = 0; r < spec.corner_replicates; ++r) design.points.push_back(corner);
  for (std::size_t j = 0; j < spec.factors; ++j) {
    for (double sign : {-1.0, 1.0}) {
      DesignPoint star{std::vector<double>(spec.factors, 0.0), PointRole::star};
      star.coded[j] = sign * alpha;
      for (std::size_t r = 0; r < spec.star_replicates; ++r) design.points.push_back(star);
    }
  }
  for (std::size_t r = 0; r < spec.center_replicates; ++r)
    design.points.push_back({std::vector<double>(spec.factors, 0.0), PointRole::center});
  return design;
}

Design realized(const Design& design, std::span<const FactorSpec> factors) {
  if (factors.size() != design.factors)
    throw Error(fmt::format("design has {} factors but {} specs were given", design.factors,
                            factors.size()));
  Design out = design;
  for (auto& point : out.points)
    for (std::size_t j = 0; j < factors.size(); ++j)
      point.coded[j] = encode(factors[j], decode(factors[j], point.coded[j]));
  return out;
}

double d_criterion(const Design& design, ModelOrder order) {
  const Eigen::MatrixXd x = model_matrix(design, order);
  const auto collinear = collinear_columns(x);
  if (!collinear.empty() || x.rows() < x.cols()) {
    const auto names = term_names(design.factors, order);
    std::vector<std::string> bad;
    for (auto c : collinear) bad.push_back(names[c]);
    throw RankDeficientError(
        fmt::format("X'X is singular for this design; collinear terms: {}", fmt::join(bad, ", ")),
        bad);
  }
  const Eigen::MatrixXd xtx = x.transpose() * x;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(xtx);
  // log det keeps 36-term second-order designs away from overflow.
  const double log_det = ldlt.vectorD().array().log().sum();
  return std::exp(-log_det);
}

}  // namespace rsmtune
