#include "rsmtune/report.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <fmt/format.h>

#include "rsmtune/error.hpp"

namespace rsmtune {

namespace {

struct Table {
  std::vector<std::string> headers;
  std::vector<std::vector<std::string>> rows;

  // First column left-aligned, the rest right-aligned, two spaces apart.
  std::string render() const {
    std::vector<std::size_t> width(headers.size());
    for (std::size_t c = 0; c < headers.size(); ++c) width[c] = headers[c].size();
    for (const auto& row : rows)
      for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    std::size_t total = 0;
    for (auto w : width) total += w;
    total += 2 * (width.size() - 1);

    auto line = [&](const std::vector<std::string>& cells) {
      std::string out;
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (c) out += "  ";
        out += c == 0 ? fmt::format("{:<{}}", cells[c], width[c])
                      : fmt::format("{:>{}}", cells[c], width[c]);
      }
      while (!out.empty() && out.back() == ' ') out.pop_back();
      return out + "\n";
    };
    std::string out = line(headers);
    out += std::string(total, '-') + "\n";
    for (const auto& row : rows) out += line(row);
    return out;
  }
};

std::string fixed(double v, int digits) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::string s = fmt::format("{:.{}f}", v, digits);
  // "-0.0000" reads as a sign error
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

double parse_cell(const std::string& cell) {
  if (cell == "nan") return std::nan("");
  if (cell == "inf") return INFINITY;
  if (cell == "-inf") return -INFINITY;
  std::size_t used = 0;
  const double v = std::stod(cell, &used);
  if (used != cell.size()) throw Error(fmt::format("fit table: '{}' is not a number", cell));
  return v;
}

std::string value_cell(const FactorSpec& f, double v) {
  return f.discrete() ? fmt::format("{}", static_cast<long long>(v)) : fmt::format("{:.6g}", v);
}

}  // namespace

std::string render_fit(const RegressionFit& fit) {
  Table t{{"Variable", "Parameter", "STD Error", "t Value", "P-value"}, {}};
  for (std::size_t i = 0; i < fit.coefficients.size(); ++i) {
    if (fit.has_inference()) {
      t.rows.push_back({fit.term_names[i], fixed(fit.coefficients[i], 4),
                        fixed(fit.standard_errors[i], 4), fixed(fit.t_values[i], 2),
                        fixed(fit.p_values[i], 4)});
    } else {
      t.rows.push_back({fit.term_names[i], fixed(fit.coefficients[i], 4), "-", "-", "-"});
    }
  }
  return t.render();
}

RegressionFit parse_fit_table(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error("fit table: empty input");
  std::istringstream header(line);
  std::vector<std::string> words;
  for (std::string w; header >> w;) words.push_back(w);
  if (words.empty() || words.front() != "Variable") throw Error("fit table: missing header");

  RegressionFit fit;
  bool inference = true;
  bool second = false;
  std::size_t linear = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '-') continue;
    std::istringstream row(line);
    std::vector<std::string> cells;
    for (std::string w; row >> w;) cells.push_back(w);
    if (cells.size() != 5) throw Error(fmt::format("fit table: malformed row '{}'", line));
    const std::string& name = cells[0];
    fit.term_names.push_back(name);
    fit.coefficients.push_back(parse_cell(cells[1]));
    if (cells[2] == "-") {
      inference = false;
    } else {
      fit.standard_errors.push_back(parse_cell(cells[2]));
      fit.t_values.push_back(parse_cell(cells[3]));
      fit.p_values.push_back(parse_cell(cells[4]));
    }
    if (name.find('^') != std::string::npos) {
      second = true;
    } else if (name.find('*') == std::string::npos && fit.term_names.size() > 1) {
      ++linear;
    }
  }
  if (!inference) {
    fit.standard_errors.clear();
    fit.t_values.clear();
    fit.p_values.clear();
  }
  fit.order = second ? ModelOrder::second : ModelOrder::first;
  fit.factors = linear;
  return fit;
}

std::string render_descent(const CampaignState& s) {
  std::vector<const Run*> runs;
  for (const auto* list : {&s.ledger, &s.pending})
    for (const auto& r : *list)
      if (r.phase == Phase::descent) runs.push_back(&r);
  if (runs.empty()) return "no descent runs\n";
  std::sort(runs.begin(), runs.end(),
            [](const Run* a, const Run* b) { return a->run_id < b->run_id; });

  Table t{{"t", "Run"}, {}};
  for (const auto& f : s.factors) t.headers.push_back(f.global.name);
  t.headers.push_back("Loss");
  for (const Run* r : runs) {
    std::vector<std::string> row{fmt::format("{}", *r->step), fmt::format("{}", r->run_id)};
    for (std::size_t j = 0; j < s.factors.size(); ++j)
      row.push_back(value_cell(s.factors[j].global, r->decoded[j]));
    row.push_back(r->loss ? fmt::format("{:.6f}", *r->loss) : "pending");
    t.rows.push_back(std::move(row));
  }
  std::string out = "Steepest descent path\n" + t.render();
  if (s.best_descent_run) out += fmt::format("best descent run: {}\n", *s.best_descent_run);
  return out;
}

std::string render_canonical(const CampaignState& s) {
  if (!s.stationary) {
    if (s.ccd_fit_error) return fmt::format("second-order fit failed: {}\n", *s.ccd_fit_error);
    return "no second-order analysis yet\n";
  }
  const auto& st = *s.stationary;
  std::string out = "Canonical analysis\n";
  out += "eigenvalues:";
  for (Eigen::Index i = 0; i < st.eigenvalues.size(); ++i)
    out += fmt::format(" {:.6g}", st.eigenvalues(i));
  out += fmt::format("\nclassification: {}\n", to_string(st.shape));
  if (!st.x_o_coded) return out + "no stationary point (B is singular)\n";

  const auto names = s.active_names();
  const auto specs = s.active_specs();
  Table t{{"Point"}, {}};
  for (const auto& n : names) t.headers.push_back(n);
  t.headers.push_back("Predicted");
  std::vector<std::string> coded{"coded"};
  std::vector<std::string> actual{"actual"};
  for (std::size_t j = 0; j < names.size(); ++j) {
    coded.push_back(fixed((*st.x_o_coded)[j], 4));
    actual.push_back(value_cell(specs[j], st.x_o_decoded[j].value));
  }
  coded.push_back("");
  actual.push_back(fmt::format("{:.6f}", *st.predicted_response));
  t.rows = {coded, actual};
  out += t.render();
  if (st.out_of_region) out += "note: x_o lies outside the experimental region\n";
  return out;
}

std::string render_budget(const BudgetReport& b) {
  std::string out = "Budget\n";
  out += fmt::format(
      "T_RSM = 2^k n_c + n_0_1 + n_t + 2^(p-f) n_c' + 2p n_s + n_0_2\n"
      "      = {}*{} + {} + {} + {}*{} + {}*{} + {} = {}\n",
      std::size_t{1} << b.k, b.n_c, b.n_0_1, b.n_t, std::size_t{1} << (b.p - b.f), b.n_c_ccd,
      2 * b.p, b.n_s, b.n_0_2, b.total);
  out += fmt::format("confirmation runs: {}\nrecorded runs: {}\n", b.confirmation, b.recorded);
  Table t{{"Method", "GS two-level", "GS three-level", "GS four-level", "RSM"},
          {{"Runs", fmt::format("{}", b.grid2), fmt::format("{}", b.grid3),
            fmt::format("{}", b.grid4), fmt::format("{}", b.total)}}};
  out += t.render();
  const auto saving = [&](std::uint64_t grid) {
    return grid > b.total ? fmt::format("{:.1f}%", 100.0 * (1.0 - double(b.total) / double(grid)))
                          : std::string("none");
  };
  out += fmt::format("reduction vs GS three-level: {}, four-level: {}\n", saving(b.grid3),
                     saving(b.grid4));
  return out;
}

std::string render_confirmation(const ConfirmationReport& c) {
  std::string out = fmt::format("Confirmation ({})\n", c.target);
  for (const auto& nv : c.settings) out += fmt::format("  {} = {}\n", nv.name, nv.value);
  Table t{{"", "Predicted Loss", "Observed Loss", "Historic Min"},
          {{c.target, c.predicted ? fmt::format("{:.6f}", *c.predicted) : "-",
            c.observed_mean ? fmt::format("{:.6f}", *c.observed_mean) : "pending",
            fmt::format("{:.6f}", c.historic_min)}}};
  out += t.render();
  out += fmt::format("observed runs: {}, historic minimum from run {}\n", c.observed_runs,
                     c.historic_min_run);
  return out;
}

std::string render_status(const CampaignState& s) {
  std::string out = fmt::format("phase: {}\n", to_string(s.phase));
  out += fmt::format("pending runs: {}\nrecorded runs: {}\n", s.pending.size(), s.ledger.size());
  Table t{{"Factor", "Kind", "Low", "High", "State"}, {}};
  for (const auto& f : s.factors) {
    t.rows.push_back({f.global.name, std::string(to_string(f.global.kind)),
                      value_cell(f.current, f.current.low), value_cell(f.current, f.current.high),
                      f.active ? "active" : fmt::format("held at {}", value_cell(f.global, *f.held))});
  }
  out += t.render();
  if (const Run* best = historic_best(s))
    out += fmt::format("best so far: run {} loss {}\n", best->run_id, *best->loss);

  std::string next;
  if (!s.pending.empty()) {
    next = "run (or design/import)";
  } else {
    switch (s.phase) {
      case Phase::screening: next = "fit, drop, descend"; break;
      case Phase::descent: next = "ccd"; break;
      case Phase::ccd: next = "analyze, confirm"; break;
      case Phase::confirmation:
      case Phase::done: next = "report"; break;
    }
  }
  out += fmt::format("next: {}\n", next);
  return out;
}

std::string render_report(const CampaignState& s) {
  std::string out = render_budget(budget(s));
  if (const Run* best = historic_best(s)) {
    out += fmt::format("\nBest so far: run {} ({} phase), loss {}\n", best->run_id,
                       to_string(best->phase), best->loss.value());
    for (std::size_t j = 0; j < s.factors.size(); ++j)
      out += fmt::format("  {} = {}\n", s.factors[j].global.name,
                         value_cell(s.factors[j].global, best->decoded[j]));
  }
  if (s.stationary) out += "\n" + render_canonical(s);
  if (s.confirmation) out += "\n" + render_confirmation(*s.confirmation);
  return out;
}

}  // namespace rsmtune
