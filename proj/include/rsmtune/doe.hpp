#pragma once

// Factor coding and experimental designs: two-level factorials (full and
// fractional), central composite designs, and the D-criterion used to
// compare rival designs.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rsmtune {

enum class FactorKind { continuous, integer, cyclic };

// What decode() does with a rounded level that falls outside the feasible
// range. `wrap` is only legal for cyclic factors.
enum class OutOfBounds { none, clamp, wrap };

struct FactorSpec {
  std::string name;
  FactorKind kind = FactorKind::continuous;
  double low = -1.0;
  double high = 1.0;
  std::optional<double> mid;  // defaults to (low + high) / 2
  int modulus = 0;            // cyclic only: levels are 0 .. modulus-1
  OutOfBounds oob = OutOfBounds::none;
  // Range used by `clamp`. Defaults to [low, high]; a re-centred factor keeps
  // the limits of its original domain here.
  std::optional<double> limit_low;
  std::optional<double> limit_high;

  double center() const { return (high + low) / 2.0; }
  double half_width() const { return (high - low) / 2.0; }
  double mid_level() const { return mid.value_or(center()); }
  double clamp_low() const { return limit_low.value_or(low); }
  double clamp_high() const { return limit_high.value_or(high); }
  bool discrete() const { return kind != FactorKind::continuous; }
};

// A decoded setting: factor name -> actual-unit level.
struct NamedValue {
  std::string name;
  double value = 0.0;

  bool operator==(const NamedValue&) const = default;
};
using Settings = std::vector<NamedValue>;

// Throws rsmtune::Error naming the factor and offending field.
void validate(const FactorSpec& factor);

std::string_view to_string(FactorKind kind);
std::string_view to_string(OutOfBounds policy);
FactorKind parse_factor_kind(std::string_view text);
OutOfBounds parse_out_of_bounds(std::string_view text);

// Nearest integer, ties away from zero.
double nint(double value);

// Actual units -> coded units: (actual - m) / s. Exact at low, mid, high.
double encode(const FactorSpec& factor, double actual);

// Applies the factor's kind rules to a raw actual-unit value: rounding for
// integer and cyclic kinds, then the out-of-bounds policy.
double realize(const FactorSpec& factor, double raw);

// Coded units -> actual units, i.e. realize(coded * s + m).
double decode(const FactorSpec& factor, double coded);

enum class PointRole { corner, center, star, descent, confirmation };

std::string_view to_string(PointRole role);
PointRole parse_point_role(std::string_view text);

struct DesignPoint {
  std::vector<double> coded;
  PointRole role = PointRole::corner;
};

struct Design {
  std::size_t factors = 0;
  std::vector<DesignPoint> points;

  std::size_t size() const { return points.size(); }
};

// Defining relation of a fractional factorial: column `target` equals the
// elementwise product of the `sources` columns. Indices are zero-based.
struct Generator {
  std::size_t target = 0;
  std::vector<std::size_t> sources;
};

// Parses "x3 = x1*x2" (one-based factor indices; '*' or '.' as product).
Generator parse_generator(std::string_view text);

// 2^p corners in standard order, last factor fastest.
Design full_factorial(std::size_t factors);

// 2^(p-f) corners satisfying every generator; base factors in standard order.
Design fractional_factorial(std::size_t factors, std::span<const Generator> generators);

struct CcdSpec {
  std::size_t factors = 0;
  std::size_t corner_replicates = 1;
  std::size_t star_replicates = 1;
  std::size_t center_replicates = 1;
  std::optional<double> alpha;  // defaults to the rotatable distance
  std::vector<Generator> generators;

  std::size_t fraction() const { return generators.size(); }
  std::size_t run_count() const;
  double star_distance() const;
};

// (2^(p-f) n_c / n_s)^(1/4)
double rotatable_alpha(std::size_t factors, std::size_t fraction,
                       std::size_t corner_replicates, std::size_t star_replicates);

// Corners (each replicated n_c times), then for every factor the -alpha and
// +alpha star points (each replicated n_s times), then n_0 centre points.
Design ccd(const CcdSpec& spec);

// Replaces every coded value by encode(decode(value)), i.e. the coded
// coordinates of what is actually run after rounding, wrapping or clamping.
Design realized(const Design& design, std::span<const FactorSpec> factors);

enum class ModelOrder { first, second };

std::string_view to_string(ModelOrder order);

// det((X'X)^-1) for the model matrix of `order`. Smaller is better.
// Throws RankDeficientError naming the collinear model terms.
double d_criterion(const Design& design, ModelOrder order);

}  // namespace rsmtune
