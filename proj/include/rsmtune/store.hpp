#pragma once

// Campaign directory layout:
//
//   campaign.json  full state (config, events, pending queue, ledger)
//   runs.csv       ledger export, rewritten with every save
//   campaign.lock  advisory lock held while a command runs

#include <filesystem>
#include <string>
#include <vector>

#include "rsmtune/campaign.hpp"

namespace rsmtune {

// Writes `path` through a temporary sibling and rename(2).
void write_atomic(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

// run_id,phase,role,replicate,<decoded...>,<name>_coded...,loss,timestamp
std::string runs_csv(const CampaignState& state, bool with_timestamps = true);

// The import layout: run_id,phase,role,replicate,<decoded...>,loss. Pending
// runs have an empty loss cell, ready to be filled in offline.
std::string design_csv(const CampaignState& state);

void save_campaign(const std::filesystem::path& dir, const CampaignState& state);

// Loads campaign.json; a stale or missing runs.csv is regenerated.
CampaignState load_campaign(const std::filesystem::path& dir);

struct ImportRow {
  std::uint64_t run_id = 0;
  std::string phase;
  std::string role;
  std::size_t replicate = 0;
  std::vector<double> decoded;
  std::optional<double> loss;  // empty cell: not yet evaluated
};

// Parses an import CSV whose header must match the import layout exactly.
std::vector<ImportRow> parse_import_csv(const std::string& text,
                                        const std::vector<std::string>& factor_names);

// Checks every row against the campaign (known run, same phase, role and
// settings) and returns the completions it carries.
std::vector<Completion> completions_from_import(const CampaignState& state,
                                                const std::vector<ImportRow>& rows);

// Coded columns of a design CSV (`<name>_coded` headers, as in runs.csv).
Design parse_coded_design(const std::string& text);

// flock(2) on <dir>/campaign.lock, released on destruction.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  int fd_ = -1;
};

}  // namespace rsmtune
