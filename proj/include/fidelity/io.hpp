#pragma once

#include "fidelity/em.hpp"
#include "fidelity/policy.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace fidelity {

inline constexpr int kModelFormatVersion = 1;

nlohmann::json model_to_json(const WorkloadModel& model);
WorkloadModel model_from_json(const nlohmann::json& doc);
void write_model(const std::filesystem::path& path, const WorkloadModel& model);
WorkloadModel read_model(const std::filesystem::path& path);

/// Line-delimited trace records grouped by session_id in first-appearance order,
/// each session sorted by step. Malformed lines raise DataError with the line number.
std::vector<TaskTrace> read_traces(std::istream& in);
std::vector<TaskTrace> read_traces(const std::filesystem::path& path);
void write_traces(std::ostream& out, const std::vector<TaskTrace>& traces);
void write_traces(const std::filesystem::path& path, const std::vector<TaskTrace>& traces);

nlohmann::json fit_report_to_json(const FitReport& report);

/// Policy export with stable key order and 12-significant-digit numbers.
std::string policy_to_json(const PolicyTable& policy);
PolicyTable policy_from_json(const nlohmann::json& doc);
void write_policy(const std::filesystem::path& path, const PolicyTable& policy);
PolicyTable read_policy(const std::filesystem::path& path);

/// Parameter blocks for config files. Parsing overlays the keys present on `base` and
/// rejects unknown keys with InvalidArgument.
nlohmann::json queue_to_json(const QueueParams& q);
QueueParams queue_from_json(const nlohmann::json& j, QueueParams base = {});
nlohmann::json reward_to_json(const RewardWeights& r);
RewardWeights reward_from_json(const nlohmann::json& j, RewardWeights base = {});
nlohmann::json steps_to_json(const ChannelSteps& s);
ChannelSteps steps_from_json(const nlohmann::json& j, ChannelSteps base = {});

/// %.12g rendering used by every deterministic export.
std::string format_number(double x);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);
/// FNV-1a 64-bit digest in hex; identifies artifacts in manifests and health output.
std::string content_hash(const std::string& bytes);

} // namespace fidelity
