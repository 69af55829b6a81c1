#pragma once

#include "fidelity/sim/simulator.hpp"
#include "fidelity/sim/stats.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace fidelity::sim {

inline constexpr int kLogFormatVersion = 1;

nlohmann::json record_to_json(const TaskRecord& rec);
nlohmann::json summary_to_json(const EpisodeLog& log, int episode);

/// One JSON line per task followed by a summary line.
void write_episode_jsonl(std::ostream& out, const EpisodeLog& log, int episode);

/// Parses a log written by write_episode_jsonl; used by tests and by replay tooling.
struct ParsedEpisode {
    std::vector<nlohmann::json> records;
    nlohmann::json summary;
};
std::vector<ParsedEpisode> read_episode_jsonl(std::istream& in);

void write_scores_csv(std::ostream& out, const std::vector<double>& scores);
/// Accepts `episode,score` rows (with or without header) or one score per line.
std::vector<double> read_scores(const std::filesystem::path& path);

void write_sensitivity_csv(std::ostream& out, const std::vector<SensitivityRow>& rows);

std::string comparison_csv_header();
std::string comparison_csv_row(const std::string& label_a, const std::string& label_b, const GroupComparison& c);

} // namespace fidelity::sim
