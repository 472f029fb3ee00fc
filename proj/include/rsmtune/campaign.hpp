#pragma once

// The sequential RSM campaign as an explicit state machine:
//
//   Screening -> Descent -> Ccd -> Confirmation -> Done
//
// Every operation takes a state by value and returns the successor; a
// rejected operation throws and leaves the caller's state untouched. Phase
// transitions only happen through the operator commands below (or
// autopilot_advance, which applies their defaults).

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "rsmtune/doe.hpp"
#include "rsmtune/objective.hpp"
#include "rsmtune/regress.hpp"
#include "rsmtune/search.hpp"

namespace rsmtune {

inline constexpr int kStateSchemaVersion = 1;

enum class Phase { screening, descent, ccd, confirmation, done };

std::string_view to_string(Phase phase);
Phase parse_phase(std::string_view text);

struct PhaseParameters {
  std::size_t n_c = 1;           // screening corner replicates
  std::size_t n_0_1 = 1;         // screening centre replicates
  std::size_t n_t = 10;          // default descent schedule length
  std::size_t n_c_ccd = 1;       // CCD corner replicates (n_c')
  std::size_t n_s = 1;           // CCD star replicates
  std::size_t n_0_2 = 1;         // CCD centre replicates
  std::optional<double> alpha;   // CCD star distance; rotatable when absent
  double p_threshold = 0.5;      // drop factors with p-value above this
  std::map<std::string, double> half_widths;
  std::size_t replicates = 1;    // confirmation runs at X_o
};

struct CampaignConfig {
  std::vector<FactorSpec> factors;
  std::optional<ObjectiveSpec> objective;  // absent: offline, losses via import
  PhaseParameters phases;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

// Field-precise validation ("factors[2].low: ..."); throws Error.
CampaignConfig parse_config(const nlohmann::json& j);
nlohmann::ordered_json to_json(const CampaignConfig& config);
CampaignConfig load_config(const std::string& path);

struct FactorState {
  FactorSpec global;   // as declared
  FactorSpec current;  // coding of the current phase
  bool active = true;
  std::optional<double> held;
};

struct Run {
  std::uint64_t run_id = 0;
  Phase phase = Phase::screening;
  PointRole role = PointRole::corner;
  std::size_t replicate = 0;
  std::optional<double> step;   // descent t
  std::vector<double> decoded;  // every declared factor, declaration order
  std::vector<double> coded;    // realized coded values under the run's coding
  std::optional<double> loss;
  std::string timestamp;
};

struct Completion {
  std::uint64_t run_id = 0;
  double loss = 0.0;
  std::string timestamp;  // empty: stamped with the current UTC time
};

struct ConfirmationReport {
  std::string target;  // "stationary" or "historic-best"
  SurfaceShape shape = SurfaceShape::degenerate;
  Settings settings;
  std::optional<double> predicted;
  std::optional<double> observed_mean;
  std::size_t observed_runs = 0;
  double historic_min = 0.0;
  std::uint64_t historic_min_run = 0;
};

struct BudgetReport {
  std::size_t k = 0, n_c = 0, n_0_1 = 0, n_t = 0;
  std::size_t p = 0, f = 0, n_c_ccd = 0, n_s = 0, n_0_2 = 0;
  std::size_t total = 0;         // T_RSM
  std::size_t confirmation = 0;  // reported separately from T_RSM
  std::size_t recorded = 0;      // runs in the ledger so far
  std::uint64_t grid2 = 0, grid3 = 0, grid4 = 0;
};

// T_RSM = 2^k n_c + n_0_1 + n_t + 2^(p-f) n_c' + 2p n_s + n_0_2
BudgetReport budget_formula(std::size_t k, std::size_t n_c, std::size_t n_0_1, std::size_t n_t,
                            std::size_t p, std::size_t f, std::size_t n_c_ccd, std::size_t n_s,
                            std::size_t n_0_2);

enum class ConfirmTarget { stationary, historic_best };

struct CampaignState {
  CampaignConfig config;
  Phase phase = Phase::screening;
  std::vector<FactorState> factors;
  std::uint64_t next_run_id = 1;
  std::vector<Run> pending;
  std::vector<Run> ledger;
  // Operator commands in the order applied; with the ledger they replay the
  // whole campaign.
  std::vector<nlohmann::ordered_json> events;
  std::size_t descent_steps = 0;
  std::size_t confirmation_runs = 0;
  std::optional<ConfirmTarget> confirm_target;

  // Derived analyses, recomputed whenever a phase's queue drains.
  std::optional<RegressionFit> screening_fit;
  std::optional<std::uint64_t> best_descent_run;
  std::optional<RegressionFit> ccd_fit;
  std::optional<std::string> ccd_fit_error;
  std::optional<StationaryAnalysis> stationary;
  std::optional<ConfirmationReport> confirmation;

  std::vector<std::string> factor_names() const;
  std::vector<std::string> active_names() const;
  std::vector<FactorSpec> active_specs() const;
  bool queue_empty() const { return pending.empty(); }
  std::string config_digest() const;
};

CampaignState init(const CampaignConfig& config);

// Records completed runs (validated as a batch, merged in run_id order).
// Resubmitting an identical (run_id, loss) is a no-op.
CampaignState step(CampaignState state, std::span<const Completion> completed);

struct PThreshold {
  double value = 0.5;
};
using DropRule = std::variant<std::vector<std::string>, PThreshold>;

CampaignState drop_factors(CampaignState state, const DropRule& rule);

// Every t must be negative (descent).
CampaignState begin_descent(CampaignState state, std::vector<double> t_schedule);

// `best_run`: explicit descent run to centre on; default is the lowest loss
// along the path, ties going to the smaller |t|.
CampaignState recenter_and_ccd(CampaignState state,
                               const std::map<std::string, double>& half_widths = {},
                               std::optional<std::uint64_t> best_run = std::nullopt);

CampaignState analyze_and_confirm(CampaignState state, std::size_t replicates,
                                  ConfirmTarget target = ConfirmTarget::stationary);

// Applies the configured default transition out of a drained phase. Returns
// the state unchanged when runs are still pending or the campaign is done.
CampaignState autopilot_advance(CampaignState state);

BudgetReport budget(const CampaignState& state);

// Lowest loss over the ledger excluding confirmation runs (ties: lower id).
const Run* historic_best(const CampaignState& state);

struct EvaluationFailure {
  std::uint64_t run_id = 0;
  std::string message;
  std::string diagnostics;
};

// Evaluates every pending run with up to `jobs` concurrent workers. Results
// come back in run_id order whatever the completion order.
std::vector<Completion> evaluate_pending(const CampaignState& state, const Objective& objective,
                                         std::size_t jobs,
                                         std::vector<EvaluationFailure>* failures = nullptr);

// Settings (name -> decoded value) of a run, declaration order.
Settings settings_of(const CampaignState& state, const Run& run);

// Rebuilds a state from its config, event journal and completed runs.
CampaignState replay(const CampaignConfig& config, std::span<const nlohmann::ordered_json> events,
                     std::span<const Run> ledger);

nlohmann::ordered_json to_json(const CampaignState& state);
CampaignState state_from_json(const nlohmann::json& j);

}  // namespace rsmtune
