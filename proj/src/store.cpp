#include "rsmtune/store.hpp"

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <fmt/format.h>

#include "rsmtune/error.hpp"

namespace rsmtune {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

double parse_number(const std::string& cell, std::size_t line, const std::string& column) {
  double v = 0.0;
  const auto* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v))
    throw Error(fmt::format("line {}, column {}: '{}' is not a finite number", line, column, cell));
  return v;
}

std::uint64_t parse_count(const std::string& cell, std::size_t line, const std::string& column) {
  std::uint64_t v = 0;
  const auto* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (ec != std::errc() || ptr != end || cell.empty())
    throw Error(fmt::format("line {}, column {}: '{}' is not a non-negative integer", line,
                            column, cell));
  return v;
}

std::string decoded_cell(const FactorSpec& f, double v) {
  if (f.discrete()) return fmt::format("{}", static_cast<long long>(v));
  return fmt::format("{}", v);
}

std::vector<std::string> import_header(const std::vector<std::string>& names) {
  std::vector<std::string> h{"run_id", "phase", "role", "replicate"};
  h.insert(h.end(), names.begin(), names.end());
  h.push_back("loss");
  return h;
}

}  // namespace

void write_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(fmt::format("cannot write '{}': {}", tmp.string(), std::strerror(errno)));
  std::size_t done = 0;
  while (done < content.size()) {
    const ssize_t n = ::write(fd, content.data() + done, content.size() - done);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      const int err = errno;
      ::close(fd);
      throw Error(fmt::format("cannot write '{}': {}", tmp.string(), std::strerror(err)));
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0 || ::close(fd) != 0)
    throw Error(fmt::format("cannot flush '{}': {}", tmp.string(), std::strerror(errno)));
  if (::rename(tmp.c_str(), path.c_str()) != 0)
    throw Error(fmt::format("cannot replace '{}': {}", path.string(), std::strerror(errno)));
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot read '{}'", path.string()));
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

std::string runs_csv(const CampaignState& s, bool with_timestamps) {
  std::string out = "run_id,phase,role,replicate";
  for (const auto& f : s.factors) out += "," + f.global.name;
  for (const auto& f : s.factors) out += "," + f.global.name + "_coded";
  out += with_timestamps ? ",loss,timestamp\n" : ",loss\n";
  for (const auto& r : s.ledger) {
    out += fmt::format("{},{},{},{}", r.run_id, to_string(r.phase), to_string(r.role), r.replicate);
    for (std::size_t j = 0; j < s.factors.size(); ++j)
      out += "," + decoded_cell(s.factors[j].global, r.decoded[j]);
    for (double c : r.coded) out += fmt::format(",{:.6f}", c);
    out += fmt::format(",{}", *r.loss);
    if (with_timestamps) out += "," + r.timestamp;
    out += "\n";
  }
  return out;
}

std::string design_csv(const CampaignState& s) {
  const auto header = import_header(s.factor_names());
  std::string out;
  for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + header[i];
  out += "\n";
  for (const auto& r : s.pending) {
    out += fmt::format("{},{},{},{}", r.run_id, to_string(r.phase), to_string(r.role), r.replicate);
    for (std::size_t j = 0; j < s.factors.size(); ++j)
      out += "," + decoded_cell(s.factors[j].global, r.decoded[j]);
    out += ",\n";
  }
  return out;
}

void save_campaign(const fs::path& dir, const CampaignState& state) {
  write_atomic(dir / "campaign.json", to_json(state).dump(2) + "\n");
  write_atomic(dir / "runs.csv", runs_csv(state));
}

CampaignState load_campaign(const fs::path& dir) {
  const fs::path file = dir / "campaign.json";
  if (!fs::exists(file))
    throw Error(fmt::format("'{}' is not a campaign directory (no campaign.json)", dir.string()));
  const auto j = nlohmann::json::parse(read_file(file), nullptr, false);
  if (j.is_discarded()) throw Error(fmt::format("'{}' is not valid JSON", file.string()));
  CampaignState state = state_from_json(j);
  const fs::path csv = dir / "runs.csv";
  const std::string expected = runs_csv(state);
  if (!fs::exists(csv) || read_file(csv) != expected) write_atomic(csv, expected);
  return state;
}

std::vector<ImportRow> parse_import_csv(const std::string& text,
                                        const std::vector<std::string>& names) {
  const auto lines = lines_of(text);
  const auto header = import_header(names);
  if (lines.empty()) throw Error("import: the file is empty");
  if (split(lines[0]) != header) {
    std::string want;
    for (std::size_t i = 0; i < header.size(); ++i) want += (i ? "," : "") + header[i];
    throw Error(fmt::format("import: header must be '{}'", want));
  }
  std::vector<ImportRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split(lines[i]);
    const std::size_t line = i + 1;
    if (cells.size() != header.size())
      throw Error(fmt::format("import: line {} has {} fields, expected {}", line, cells.size(),
                              header.size()));
    ImportRow row;
    row.run_id = parse_count(cells[0], line, "run_id");
    row.phase = cells[1];
    row.role = cells[2];
    row.replicate = parse_count(cells[3], line, "replicate");
    for (std::size_t j = 0; j < names.size(); ++j)
      row.decoded.push_back(parse_number(cells[4 + j], line, names[j]));
    if (!cells.back().empty()) row.loss = parse_number(cells.back(), line, "loss");
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<Completion> completions_from_import(const CampaignState& s,
                                                const std::vector<ImportRow>& rows) {
  std::vector<Completion> out;
  for (const auto& row : rows) {
    if (!row.loss) continue;
    const Run* run = nullptr;
    for (const auto* list : {&s.pending, &s.ledger})
      for (const auto& r : *list)
        if (r.run_id == row.run_id) run = &r;
    if (!run) throw Error(fmt::format("import: run {} is not part of this campaign", row.run_id));
    if (to_string(run->phase) != row.phase || to_string(run->role) != row.role ||
        run->replicate != row.replicate)
      throw Error(fmt::format("import: run {} is {}/{}/{}, the file says {}/{}/{}", row.run_id,
                              to_string(run->phase), to_string(run->role), run->replicate,
                              row.phase, row.role, row.replicate));
    for (std::size_t j = 0; j < s.factors.size(); ++j) {
      const double want = run->decoded[j];
      if (std::abs(row.decoded[j] - want) > 1e-9 * std::max(1.0, std::abs(want)))
        throw Error(fmt::format("import: run {} has {} = {}, the campaign expects {}", row.run_id,
                                s.factors[j].global.name, row.decoded[j], want));
    }
    out.push_back({row.run_id, *row.loss, {}});
  }
  return out;
}

Design parse_coded_design(const std::string& text) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw Error("design file is empty");
  const auto header = split(lines[0]);
  std::vector<std::size_t> columns;
  std::optional<std::size_t> role_column;
  const std::string suffix = "_coded";
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto& h = header[c];
    if (h == "role") role_column = c;
    if (h.size() > suffix.size() && h.compare(h.size() - suffix.size(), suffix.size(), suffix) == 0)
      columns.push_back(c);
  }
  if (columns.empty()) {
    // a bare matrix of coded values
    for (std::size_t c = 0; c < header.size(); ++c) columns.push_back(c);
    role_column.reset();
  }
  Design d{columns.size(), {}};
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split(lines[i]);
    if (cells.size() != header.size())
      throw Error(fmt::format("design line {} has {} fields, expected {}", i + 1, cells.size(),
                              header.size()));
    DesignPoint p;
    for (auto c : columns) p.coded.push_back(parse_number(cells[c], i + 1, header[c]));
    if (role_column) p.role = parse_point_role(cells[*role_column]);
    d.points.push_back(std::move(p));
  }
  return d;
}

DirectoryLock::DirectoryLock(const fs::path& dir) {
  const fs::path path = dir / "campaign.lock";
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0)
    throw Error(fmt::format("cannot open lock '{}': {}", path.string(), std::strerror(errno)));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw Error(fmt::format("campaign '{}' is in use by another process", dir.string()));
  }
}

DirectoryLock::~DirectoryLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

}  // namespace rsmtune
