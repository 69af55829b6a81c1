#include "fidelity/sim/output.hpp"

#include "fidelity/io.hpp"

#include <fstream>
#include <sstream>

namespace fidelity::sim {

using nlohmann::json;

namespace {

json triple(const std::optional<ObservationTriple>& o) {
    if (!o) return nullptr;
    return json::array({o->o1, o->o2, o->o3});
}

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

json record_to_json(const TaskRecord& r) {
    return {{"type", "task"},
            {"index", r.index},
            {"q", r.q},
            {"workload", r.workload >= 0 ? json(r.workload) : json(nullptr)},
            {"b_H", r.b_high},
            {"action", std::string(to_string(r.action))},
            {"targets", r.task.targets},
            {"cue_onset", r.task.cue_onset},
            {"observation", triple(r.observation)},
            {"observed", triple(r.observed)},
            {"missed_cue", r.missed_cue},
            {"reward", r.reward},
            {"arrivals", r.arrivals},
            {"q_after", r.q_after},
            {"b_H_after", r.b_high_after},
            {"saturated", r.saturated},
            {"evidence_discarded", r.evidence_discarded},
            {"waits_before", r.waits_before}};
}

json summary_to_json(const EpisodeLog& log, int episode) {
    return {{"type", "summary"},       {"format_version", kLogFormatVersion},
            {"episode", episode},      {"seed", std::to_string(log.seed)},
            {"policy", log.policy},    {"tasks", log.records.size()},
            {"score", log.score},      {"waits", log.waits},
            {"ended_early", log.ended_early}};
}

void write_episode_jsonl(std::ostream& out, const EpisodeLog& log, int episode) {
    for (const auto& r : log.records) out << record_to_json(r).dump() << "\n";
    out << summary_to_json(log, episode).dump() << "\n";
}

std::vector<ParsedEpisode> read_episode_jsonl(std::istream& in) {
    std::vector<ParsedEpisode> out;
    ParsedEpisode cur;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error&) {
            throw DataError("not a JSON object", lineno);
        }
        const auto type = j.value("type", std::string{});
        if (type == "task") {
            cur.records.push_back(std::move(j));
        } else if (type == "summary") {
            cur.summary = std::move(j);
            out.push_back(std::move(cur));
            cur = {};
        } else {
            throw DataError("unknown record type", lineno);
        }
    }
    if (!cur.records.empty()) throw DataError("episode log ends without a summary record");
    return out;
}

void write_scores_csv(std::ostream& out, const std::vector<double>& scores) {
    out << "episode,score\n";
    for (std::size_t i = 0; i < scores.size(); ++i) out << i << "," << format_number(scores[i]) << "\n";
}

std::vector<double> read_scores(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::vector<double> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty()) continue;
        if (lineno == 1 && line.find("score") != std::string::npos) continue;
        const auto comma = line.rfind(',');
        const std::string field = comma == std::string::npos ? line : line.substr(comma + 1);
        try {
            std::size_t used = 0;
            out.push_back(std::stod(field, &used));
            if (trim(field.substr(used)).size() != 0) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw DataError("score is not a number", lineno);
        }
    }
    return out;
}

void write_sensitivity_csv(std::ostream& out, const std::vector<SensitivityRow>& rows) {
    out << "perturbation,magnitude,mean_score,abs_pct_reward_change\n";
    for (const auto& r : rows)
        out << to_string(r.point.kind) << "," << format_number(r.point.magnitude) << "," << format_number(r.mean_score) << ","
            << format_number(r.abs_pct_reward_change) << "\n";
}

std::string comparison_csv_header() {
    return "group_a,group_b,n_a,mean_a,sd_a,n_b,mean_b,sd_b,cohen_d,t_statistic,df,p_value";
}

std::string comparison_csv_row(const std::string& label_a, const std::string& label_b, const GroupComparison& c) {
    std::ostringstream os;
    os << label_a << "," << label_b << "," << c.a.n << "," << format_number(c.a.mean) << "," << format_number(c.a.sd) << ","
       << c.b.n << "," << format_number(c.b.mean) << "," << format_number(c.b.sd) << "," << format_number(c.cohen_d) << ","
       << format_number(c.t_statistic) << "," << format_number(c.df) << "," << format_number(c.p_value);
    return os.str();
}

} // namespace fidelity::sim
