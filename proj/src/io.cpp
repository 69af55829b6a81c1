#include "fidelity/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace fidelity {

using nlohmann::json;

namespace {

const char* kChannelNames[kNumChannels] = {"o1", "o2", "o3"};

json channel_to_json(const EmissionChannel& ch) {
    return {{"kind", ch.kind == ChannelKind::Gaussian ? "gaussian" : "point_mass"},
            {"mean", ch.mean},
            {"std", ch.std},
            {"point", ch.point}};
}

EmissionChannel channel_from_json(const json& j) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "gaussian") return EmissionChannel::gaussian(j.at("mean").get<double>(), j.at("std").get<double>());
    if (kind == "point_mass") return EmissionChannel::point_mass(j.at("point").get<double>());
    throw DataError("unknown channel kind '" + kind + "'");
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index k) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != k) throw DataError("transition matrix has wrong shape");
    Eigen::MatrixXd m(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
        const auto& row = j.at(static_cast<std::size_t>(i));
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != k) throw DataError("transition row has wrong length");
        for (Eigen::Index c = 0; c < k; ++c) m(i, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
    return m;
}

} // namespace

json model_to_json(const WorkloadModel& model) {
    json doc;
    doc["format_version"] = kModelFormatVersion;
    doc["num_states"] = model.num_states();
    doc["initial"] = json::array();
    for (Eigen::Index i = 0; i < model.num_states(); ++i) doc["initial"].push_back(model.initial(i));
    for (ActionId a : kServicingActions) {
        const std::string key(to_string(a));
        doc["transitions"][key] = matrix_to_json(model.transition[index_of(a)]);
        json states = json::array();
        for (const auto& set : model.emissions[index_of(a)]) {
            json chans = json::object();
            for (std::size_t c = 0; c < kNumChannels; ++c) chans[kChannelNames[c]] = channel_to_json(set[c]);
            states.push_back(chans);
        }
        doc["emissions"][key] = states;
    }
    return doc;
}

WorkloadModel model_from_json(const json& doc) {
    try {
        const int version = doc.at("format_version").get<int>();
        if (version != kModelFormatVersion) throw DataError("unsupported model format version " + std::to_string(version));
        const Eigen::Index k = doc.at("num_states").get<Eigen::Index>();
        if (k < 1) throw DataError("num_states must be positive");
        WorkloadModel m = WorkloadModel::with_states(k);
        const auto& init = doc.at("initial");
        if (static_cast<Eigen::Index>(init.size()) != k) throw DataError("initial vector has wrong length");
        for (Eigen::Index i = 0; i < k; ++i) m.initial(i) = init.at(static_cast<std::size_t>(i)).get<double>();
        for (ActionId a : kServicingActions) {
            const std::string key(to_string(a));
            m.transition[index_of(a)] = matrix_from_json(doc.at("transitions").at(key), k);
            const auto& states = doc.at("emissions").at(key);
            if (static_cast<Eigen::Index>(states.size()) != k) throw DataError("emission table has wrong size");
            for (Eigen::Index w = 0; w < k; ++w)
                for (std::size_t c = 0; c < kNumChannels; ++c)
                    m.emissions[index_of(a)][static_cast<std::size_t>(w)][c] =
                        channel_from_json(states.at(static_cast<std::size_t>(w)).at(kChannelNames[c]));
        }
        validate(m);
        return m;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed model document: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw DataError(std::string("invalid model: ") + e.what());
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << content;
}

std::string content_hash(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_model(const std::filesystem::path& path, const WorkloadModel& model) {
    write_file(path, model_to_json(model).dump(2) + "\n");
}

WorkloadModel read_model(const std::filesystem::path& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw DataError("model file '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return model_from_json(doc);
}

std::vector<TaskTrace> read_traces(std::istream& in) {
    struct Pending {
        std::vector<std::pair<long, TraceStep>> steps;
    };
    std::vector<std::string> order;
    std::map<std::string, Pending> sessions;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error&) {
            throw DataError("not a JSON object", lineno);
        }
        try {
            const auto& sid_field = rec.at("session_id");
            const std::string sid = sid_field.is_string() ? sid_field.get<std::string>() : sid_field.dump();
            const long step = rec.at("step").get<long>();
            const auto action = parse_action(rec.at("action").get<std::string>());
            if (!action) throw DataError("action must be \"N\", \"H\" or \"D\"", lineno);
            TraceStep ts{*action, std::nullopt};
            if (*action != ActionId::D) {
                for (const char* key : kChannelNames)
                    if (!rec.contains(key) || !rec.at(key).is_number())
                        throw DataError(std::string("servicing step needs numeric ") + key, lineno);
                ObservationTriple o{rec.at("o1").get<double>(), rec.at("o2").get<double>(), rec.at("o3").get<double>()};
                if (!o.admissible()) throw DataError("observation outside admissible ranges", lineno);
                ts.observation = o;
            }
            auto [it, inserted] = sessions.try_emplace(sid);
            if (inserted) order.push_back(sid);
            it->second.steps.emplace_back(step, ts);
        } catch (const json::exception& e) {
            throw DataError(std::string("malformed record: ") + e.what(), lineno);
        }
    }
    std::vector<TaskTrace> out;
    for (const auto& sid : order) {
        auto& pending = sessions[sid].steps;
        std::stable_sort(pending.begin(), pending.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        TaskTrace tr{sid, {}};
        for (auto& [_, s] : pending) tr.steps.push_back(s);
        out.push_back(std::move(tr));
    }
    if (out.empty()) throw DataError("dataset has no records");
    return out;
}

std::vector<TaskTrace> read_traces(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    return read_traces(in);
}

void write_traces(std::ostream& out, const std::vector<TaskTrace>& traces) {
    for (const auto& tr : traces)
        for (std::size_t t = 0; t < tr.steps.size(); ++t) {
            const auto& s = tr.steps[t];
            json rec = {{"session_id", tr.session_id}, {"step", t}, {"action", std::string(to_string(s.action))}};
            for (std::size_t c = 0; c < kNumChannels; ++c)
                rec[kChannelNames[c]] = s.observation ? json((*s.observation)[c]) : json(nullptr);
            out << rec.dump() << "\n";
        }
}

void write_traces(const std::filesystem::path& path, const std::vector<TaskTrace>& traces) {
    std::ostringstream ss;
    write_traces(ss, traces);
    write_file(path, ss.str());
}

json fit_report_to_json(const FitReport& report) {
    const auto ic = information_criteria(report);
    return {{"num_states", report.model.num_states()},
            {"num_params", report.num_params},
            {"num_trajectories", report.num_trajectories},
            {"log_likelihood", report.log_likelihood},
            {"loglik_trace", report.loglik_trace},
            {"restart_traces", report.restart_traces},
            {"best_restart", report.best_restart},
            {"iterations", report.iterations},
            {"converged", report.converged},
            {"degenerate_states", report.degenerate_states},
            {"criteria_normalized", report.normalize_criteria},
            {"aic", ic.aic},
            {"bic", ic.bic}};
}

std::string format_number(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", x == 0.0 ? 0.0 : x);
    return buf;
}

std::string policy_to_json(const PolicyTable& p) {
    std::ostringstream os;
    os << "{\n";
    os << "  \"action_set\": " << static_cast<int>(p.action_set) << ",\n";
    os << "  \"entries\": [\n";
    bool first = true;
    for (int q = 0; q <= p.max_queue; ++q)
        for (std::size_t b = 0; b < p.grid.size(); ++b) {
            if (!first) os << ",\n";
            first = false;
            const std::string action =
                q == 0 ? "wait" : std::string(to_string(p.action[static_cast<std::size_t>(q)][b]));
            os << "    {\"action\": \"" << action << "\", \"b_H\": " << format_number(p.grid.value(b))
               << ", \"q\": " << q << ", \"value\": " << format_number(p.value[static_cast<std::size_t>(q)][b]) << "}";
        }
    os << "\n  ],\n";
    os << "  \"gamma\": " << format_number(p.gamma) << ",\n";
    os << "  \"grid_step\": " << format_number(p.grid.step()) << ",\n";
    os << "  \"L\": " << p.max_queue << "\n";
    os << "}\n";
    return os.str();
}

PolicyTable policy_from_json(const json& doc) {
    try {
        const int set = doc.at("action_set").get<int>();
        if (set != 2 && set != 3) throw DataError("action_set must be 2 or 3");
        PolicyTable p{BeliefGrid(doc.at("grid_step").get<double>()), doc.at("L").get<int>(), static_cast<ActionSet>(set),
                      doc.at("gamma").get<double>(), {}, {}};
        if (p.max_queue < 1) throw DataError("L must be at least 1");
        const std::size_t g = p.grid.size();
        p.action.assign(static_cast<std::size_t>(p.max_queue + 1), std::vector<ActionId>(g, ActionId::N));
        p.value.assign(static_cast<std::size_t>(p.max_queue + 1), std::vector<double>(g, 0.0));
        std::vector<std::vector<bool>> seen(static_cast<std::size_t>(p.max_queue + 1), std::vector<bool>(g, false));
        for (const auto& e : doc.at("entries")) {
            const int q = e.at("q").get<int>();
            const double bh = e.at("b_H").get<double>();
            if (q < 0 || q > p.max_queue || !p.grid.on_grid(bh)) throw DataError("policy entry outside the state space");
            const std::size_t b = p.grid.snap_index(bh);
            const auto name = e.at("action").get<std::string>();
            if (q > 0) {
                const auto a = parse_action(name);
                if (!a) throw DataError("policy entry has invalid action '" + name + "'");
                p.action[static_cast<std::size_t>(q)][b] = *a;
            }
            p.value[static_cast<std::size_t>(q)][b] = e.at("value").get<double>();
            seen[static_cast<std::size_t>(q)][b] = true;
        }
        for (const auto& row : seen)
            if (std::find(row.begin(), row.end(), false) != row.end()) throw DataError("policy table is incomplete");
        if (!p.feasible()) throw DataError("policy uses an action outside its action set");
        return p;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed policy document: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw DataError(std::string("invalid policy: ") + e.what());
    }
}

void write_policy(const std::filesystem::path& path, const PolicyTable& policy) {
    write_file(path, policy_to_json(policy));
}

PolicyTable read_policy(const std::filesystem::path& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw DataError("policy file '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return policy_from_json(doc);
}

namespace {

void overlay(const json& j, const char* what, std::initializer_list<std::pair<const char*, double*>> fields) {
    if (!j.is_object()) throw InvalidArgument(std::string(what) + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const auto& [name, slot] : fields) {
            if (key != name) continue;
            if (!value.is_number()) throw InvalidArgument(std::string(what) + "." + key + " must be a number");
            *slot = value.get<double>();
            known = true;
        }
        if (!known) throw InvalidArgument("unknown key '" + key + "' in " + what);
    }
}

} // namespace

json queue_to_json(const QueueParams& q) {
    return {{"arrival_rate", q.arrival_rate}, {"max_length", q.max_length}, {"t_high", q.t_high}, {"t_normal", q.t_normal}};
}

QueueParams queue_from_json(const json& j, QueueParams base) {
    double length = base.max_length;
    overlay(j, "queue",
            {{"arrival_rate", &base.arrival_rate}, {"max_length", &length}, {"t_high", &base.t_high}, {"t_normal", &base.t_normal}});
    if (length != std::floor(length) || length < 1 || length > 1e6) throw InvalidArgument("queue.max_length must be a positive integer");
    base.max_length = static_cast<int>(length);
    return base;
}

json reward_to_json(const RewardWeights& r) {
    return {{"alpha1", r.alpha1}, {"alpha2", r.alpha2}, {"alpha3", r.alpha3}, {"delegation_accuracy", r.delegation_accuracy}};
}

RewardWeights reward_from_json(const json& j, RewardWeights base) {
    overlay(j, "reward",
            {{"alpha1", &base.alpha1}, {"alpha2", &base.alpha2}, {"alpha3", &base.alpha3},
             {"delegation_accuracy", &base.delegation_accuracy}});
    return base;
}

json steps_to_json(const ChannelSteps& s) {
    return {{"detected", s.detected}, {"false_alarms", s.false_alarms}, {"reaction_ms", s.reaction_ms}};
}

ChannelSteps steps_from_json(const json& j, ChannelSteps base) {
    overlay(j, "steps", {{"detected", &base.detected}, {"false_alarms", &base.false_alarms}, {"reaction_ms", &base.reaction_ms}});
    if (!(base.detected > 0 && base.false_alarms > 0 && base.reaction_ms > 0))
        throw InvalidArgument("discretization steps must be positive");
    return base;
}

} // namespace fidelity
