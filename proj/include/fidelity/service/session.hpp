#pragma once

#include "fidelity/belief.hpp"
#include "fidelity/policy.hpp"
#include "fidelity/sim/simulator.hpp"

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace fidelity::service {

inline constexpr int kSchemaVersion = 1;

/// Error with the HTTP status the server maps it to.
class ServiceError : public Error {
  public:
    ServiceError(int status, const std::string& what) : Error(what), status_(status) {}
    int status() const { return status_; }

  private:
    int status_;
};

/// Immutable model/policy pair shared by every session.
struct Artifacts {
    WorkloadModel model;
    PolicyTable policy;
    DiscreteObservationTable table;
    std::string model_hash;
    std::string policy_hash;

    /// Rejects a model that the policy cannot have been solved for.
    static std::shared_ptr<const Artifacts> load(WorkloadModel model, PolicyTable policy, ChannelSteps steps = {},
                                                 std::string model_hash = {}, std::string policy_hash = {});
};

enum class Mode { Enforced, Advisory };
std::string to_string(Mode mode);
std::optional<Mode> parse_mode(std::string_view s);

struct SessionConfig {
    std::uint64_t seed = 1;
    Mode mode = Mode::Enforced;
    int initial_queue = 1;
    int tasks = 48;
    QueueParams queue{};
    RewardWeights reward{};
    /// Requested grid step and action set; must match the loaded policy when given.
    std::optional<double> grid_step;
    std::optional<ActionSet> action_set;
};

struct TaskDescriptor {
    int task_id = 0;
    ActionId recommendation = ActionId::N;
    double duration_s = 0;
    double cue_onset = 0.5;
    /// Hidden from clients; used for scoring and logs.
    int targets = 0;
};

struct HistoryEntry {
    sim::TaskRecord record;
    ActionId recommended = ActionId::N;
    bool overridden = false;
    double t_ms = 0;
};

struct Snapshot {
    std::string id;
    Mode mode = Mode::Enforced;
    int q = 0;
    double b_high = 0;
    double score = 0;
    int tasks_completed = 0;
    int tasks_total = 0;
    std::optional<ActionId> recommendation;
    std::optional<TaskDescriptor> in_flight;
    double clock_ms = 0;
    bool complete = false;
    std::vector<HistoryEntry> history;
    std::uint64_t version = 0;
};

struct NextResult {
    bool wait = false;
    std::optional<TaskDescriptor> task;
    int arrivals = 0;
    /// Mean time to the next arrival when waiting.
    double expected_next_arrival_ms = 0;
    Snapshot snapshot;
};

struct SubmitRequest {
    int task_id = 0;
    ActionId action = ActionId::N;
    std::optional<ObservationTriple> observation;
};

struct SubmitResult {
    double reward = 0;
    Snapshot snapshot;
};

struct Event {
    std::uint64_t seq = 0;
    std::string type;
    double t_ms = 0;
    int q = 0;
    double b_high = 0;
    std::optional<ActionId> recommendation;
    int arrivals = 0;
};

class Session {
  public:
    Session(std::string id, SessionConfig config, std::shared_ptr<const Artifacts> artifacts);

    const std::string& id() const { return id_; }
    Snapshot snapshot() const;
    NextResult next();
    SubmitResult submit(const SubmitRequest& request);

    /// Events with seq >= since; blocks up to `timeout` when none are available yet.
    std::vector<Event> events_since(std::uint64_t since, std::chrono::milliseconds timeout) const;
    bool complete() const;

    /// Writes the session log once, in the simulator's episode format. Returns false when
    /// it was already flushed.
    bool flush_log(const std::filesystem::path& dir);
    /// Wakes event waiters so streaming connections can close.
    void close();

  private:
    Snapshot snapshot_locked() const;
    void push_event_locked(std::string type, int arrivals = 0);
    std::optional<ActionId> recommendation_locked() const;

    const std::string id_;
    const SessionConfig config_;
    const std::shared_ptr<const Artifacts> artifacts_;
    const BeliefGrid grid_;

    mutable std::mutex mutex_;
    mutable std::condition_variable changed_;
    Rng tasks_rng_;
    Rng arrivals_rng_;
    int q_;
    double b_high_;
    double score_ = 0;
    double clock_s_ = 0;
    int waits_ = 0;
    int pending_waits_ = 0;
    int next_task_id_ = 0;
    bool ended_early_ = false;
    bool closed_ = false;
    bool flushed_ = false;
    std::optional<TaskDescriptor> in_flight_;
    sim::TaskDraw in_flight_draw_{};
    std::vector<HistoryEntry> history_;
    std::vector<Event> events_;
    std::uint64_t version_ = 0;
};

class SessionManager {
  public:
    explicit SessionManager(std::shared_ptr<const Artifacts> artifacts, std::filesystem::path log_dir = {});

    std::shared_ptr<Session> create(const SessionConfig& config);
    /// Throws ServiceError(404) when unknown.
    std::shared_ptr<Session> find(const std::string& id) const;
    std::vector<std::shared_ptr<Session>> all() const;
    /// Flushes logs of completed sessions; with `everything`, also of sessions in progress.
    int flush_logs(bool everything);
    const Artifacts& artifacts() const { return *artifacts_; }
    const std::filesystem::path& log_dir() const { return log_dir_; }

  private:
    std::shared_ptr<const Artifacts> artifacts_;
    std::filesystem::path log_dir_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::uint64_t nonce_;
    std::uint64_t counter_ = 0;
};

} // namespace fidelity::service
