#include "fidelity/service/session.hpp"

#include "fidelity/io.hpp"
#include "fidelity/sim/output.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

namespace fidelity::service {

std::shared_ptr<const Artifacts> Artifacts::load(WorkloadModel model, PolicyTable policy, ChannelSteps steps,
                                                 std::string model_hash, std::string policy_hash) {
    validate(model);
    if (model.num_states() != 2) throw InvalidArgument("the session service needs a two-state model");
    if (!policy.feasible()) throw InvalidArgument("policy table is incomplete or infeasible");
    auto out = std::make_shared<Artifacts>();
    out->table = discretize_observations(model, steps);
    out->model = std::move(model);
    out->policy = std::move(policy);
    out->model_hash = std::move(model_hash);
    out->policy_hash = std::move(policy_hash);
    return out;
}

std::string to_string(Mode mode) { return mode == Mode::Enforced ? "enforced" : "advisory"; }

std::optional<Mode> parse_mode(std::string_view s) {
    if (s == "enforced") return Mode::Enforced;
    if (s == "advisory") return Mode::Advisory;
    return std::nullopt;
}

namespace {

void check_config(const SessionConfig& c, const PolicyTable& policy) {
    if (c.grid_step && std::abs(*c.grid_step - policy.grid.step()) > 1e-12)
        throw ServiceError(422, "grid step does not match the loaded policy");
    if (c.action_set && *c.action_set != policy.action_set)
        throw ServiceError(422, "action set does not match the loaded policy");
    if (c.queue.max_length != policy.max_queue)
        throw ServiceError(422, "queue capacity does not match the loaded policy");
    if (!(c.queue.arrival_rate >= 0) || !std::isfinite(c.queue.arrival_rate))
        throw ServiceError(422, "arrival rate must be nonnegative");
    if (c.initial_queue < 0 || c.initial_queue > c.queue.max_length)
        throw ServiceError(422, "initial queue outside [0, L]");
    if (c.tasks < 1) throw ServiceError(422, "a session needs at least one task");
}

bool finite(const ObservationTriple& o) { return std::isfinite(o.o1) && std::isfinite(o.o2) && std::isfinite(o.o3); }

} // namespace

Session::Session(std::string id, SessionConfig config, std::shared_ptr<const Artifacts> artifacts)
    : id_(std::move(id)), config_(std::move(config)), artifacts_(std::move(artifacts)), grid_(artifacts_->policy.grid),
      tasks_rng_(derive_seed(config_.seed, streams::kTasks)), arrivals_rng_(derive_seed(config_.seed, streams::kArrivals)),
      q_(config_.initial_queue), b_high_(grid_.snap(artifacts_->model.initial(1))) {
    check_config(config_, artifacts_->policy);
    push_event_locked("created");
}

std::optional<ActionId> Session::recommendation_locked() const {
    if (q_ < 1) return std::nullopt;
    return artifacts_->policy.at(q_, b_high_);
}

Snapshot Session::snapshot_locked() const {
    Snapshot s;
    s.id = id_;
    s.mode = config_.mode;
    s.q = q_;
    s.b_high = b_high_;
    s.score = score_;
    s.tasks_completed = static_cast<int>(history_.size());
    s.tasks_total = config_.tasks;
    s.in_flight = in_flight_;
    s.recommendation = in_flight_ ? std::optional(in_flight_->recommendation) : recommendation_locked();
    s.clock_ms = clock_s_ * 1000.0;
    s.complete = ended_early_ || s.tasks_completed >= config_.tasks;
    s.history = history_;
    s.version = version_;
    return s;
}

Snapshot Session::snapshot() const {
    std::lock_guard lock(mutex_);
    return snapshot_locked();
}

bool Session::complete() const {
    std::lock_guard lock(mutex_);
    return ended_early_ || static_cast<int>(history_.size()) >= config_.tasks;
}

void Session::push_event_locked(std::string type, int arrivals) {
    Event e;
    e.seq = events_.size();
    e.type = std::move(type);
    e.t_ms = clock_s_ * 1000.0;
    e.q = q_;
    e.b_high = b_high_;
    e.recommendation = in_flight_ ? std::optional(in_flight_->recommendation) : recommendation_locked();
    e.arrivals = arrivals;
    events_.push_back(std::move(e));
    ++version_;
    changed_.notify_all();
}

NextResult Session::next() {
    std::lock_guard lock(mutex_);
    if (in_flight_) throw ServiceError(409, "task " + std::to_string(in_flight_->task_id) + " is already in flight");
    if (ended_early_ || static_cast<int>(history_.size()) >= config_.tasks) throw ServiceError(409, "session is complete");

    NextResult out;
    const auto& queue = config_.queue;
    if (q_ == 0) {
        if (!(queue.arrival_rate > 0)) {
            ended_early_ = true;
            push_event_locked("complete");
            out.wait = true;
            out.snapshot = snapshot_locked();
            return out;
        }
        // One idle epoch per call; the simulator's wait loop draws the same sequence.
        const int a = sample_poisson(arrivals_rng_, queue.arrival_rate * queue.wait_duration());
        q_ = std::min(a, queue.max_length);
        clock_s_ += queue.wait_duration();
        ++waits_;
        ++pending_waits_;
        out.wait = true;
        out.arrivals = a;
        out.expected_next_arrival_ms = 1000.0 / queue.arrival_rate;
        push_event_locked("wait", a);
        out.snapshot = snapshot_locked();
        return out;
    }

    in_flight_draw_ = sim::draw_task(tasks_rng_);
    TaskDescriptor t;
    t.task_id = next_task_id_++;
    t.recommendation = *recommendation_locked();
    t.duration_s = queue.duration(t.recommendation);
    t.cue_onset = in_flight_draw_.cue_onset;
    t.targets = in_flight_draw_.targets;
    in_flight_ = t;
    push_event_locked("task");
    out.task = t;
    out.snapshot = snapshot_locked();
    return out;
}

SubmitResult Session::submit(const SubmitRequest& req) {
    std::lock_guard lock(mutex_);
    if (!in_flight_ || req.task_id != in_flight_->task_id) {
        if (req.task_id >= 0 && req.task_id < next_task_id_)
            throw ServiceError(409, "task " + std::to_string(req.task_id) + " was already submitted");
        throw ServiceError(404, "task " + std::to_string(req.task_id) + " is not in flight");
    }
    const ActionId rec = in_flight_->recommendation;
    const auto& allowed = actions_of(artifacts_->policy.action_set);
    if (std::find(allowed.begin(), allowed.end(), req.action) == allowed.end())
        throw ServiceError(422, "action is not in the policy's action set");
    if (config_.mode == Mode::Enforced && req.action != rec)
        throw ServiceError(422, "enforced session: action must match the recommendation");
    if (is_servicing(req.action)) {
        if (!req.observation) throw ServiceError(422, "servicing actions need an observation");
        if (!finite(*req.observation) || !req.observation->admissible())
            throw ServiceError(422, "observation outside admissible ranges");
    } else if (req.observation) {
        throw ServiceError(422, "delegation carries no observation");
    }

    const auto& queue = config_.queue;
    sim::TaskRecord r;
    r.index = static_cast<int>(history_.size());
    r.q = q_;
    r.workload = -1;
    r.b_high = b_high_;
    r.action = req.action;
    r.task = in_flight_draw_;
    r.observation = req.observation;
    r.observed = req.observation;
    r.reward = realized_reward(config_.reward, q_, req.action, req.observation);
    const double duration = queue.duration(req.action);
    r.arrivals = sample_poisson(arrivals_rng_, queue.arrival_rate * duration);
    r.saturated = q_ - 1 + r.arrivals > queue.max_length;
    r.q_after = sim::queue_after(q_, r.arrivals, queue.max_length);
    const auto tracked = track_belief(artifacts_->model, artifacts_->table, grid_, b_high_, req.action, req.observation);
    r.b_high_after = tracked.b_high;
    r.evidence_discarded = tracked.evidence_discarded;
    r.waits_before = pending_waits_;

    clock_s_ += duration;
    HistoryEntry h;
    h.record = r;
    h.recommended = rec;
    h.overridden = req.action != rec;
    h.t_ms = clock_s_ * 1000.0;
    history_.push_back(h);
    score_ += r.reward;
    q_ = r.q_after;
    b_high_ = r.b_high_after;
    pending_waits_ = 0;
    in_flight_.reset();
    push_event_locked("result", r.arrivals);
    if (static_cast<int>(history_.size()) >= config_.tasks) push_event_locked("complete");

    SubmitResult out;
    out.reward = r.reward;
    out.snapshot = snapshot_locked();
    return out;
}

std::vector<Event> Session::events_since(std::uint64_t since, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mutex_);
    changed_.wait_for(lock, timeout, [&] { return closed_ || events_.size() > since; });
    if (since >= events_.size()) return {};
    return {events_.begin() + static_cast<std::ptrdiff_t>(since), events_.end()};
}

void Session::close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    changed_.notify_all();
}

bool Session::flush_log(const std::filesystem::path& dir) {
    std::lock_guard lock(mutex_);
    if (flushed_) return false;
    sim::EpisodeLog log;
    log.seed = config_.seed;
    log.policy = "session:" + to_string(config_.mode);
    log.score = score_;
    log.waits = waits_;
    log.ended_early = ended_early_;
    for (const auto& h : history_) log.records.push_back(h.record);
    std::ostringstream out;
    for (const auto& r : log.records) out << sim::record_to_json(r).dump() << "\n";
    auto summary = sim::summary_to_json(log, 0);
    summary["session_id"] = id_;
    summary["complete"] = ended_early_ || static_cast<int>(history_.size()) >= config_.tasks;
    out << summary.dump() << "\n";
    write_file(dir / ("session-" + id_ + ".jsonl"), out.str());
    flushed_ = true;
    return true;
}

SessionManager::SessionManager(std::shared_ptr<const Artifacts> artifacts, std::filesystem::path log_dir)
    : artifacts_(std::move(artifacts)), log_dir_(std::move(log_dir)), nonce_(std::random_device{}()) {
    nonce_ = (nonce_ << 32) ^ std::random_device{}();
}

std::shared_ptr<Session> SessionManager::create(const SessionConfig& config) {
    std::string id;
    {
        std::lock_guard lock(mutex_);
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(derive_seed(nonce_, ++counter_)));
        id = buf;
    }
    auto s = std::make_shared<Session>(id, config, artifacts_);
    std::lock_guard lock(mutex_);
    sessions_.emplace(id, s);
    return s;
}

std::shared_ptr<Session> SessionManager::find(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ServiceError(404, "unknown session '" + id + "'");
    return it->second;
}

std::vector<std::shared_ptr<Session>> SessionManager::all() const {
    std::lock_guard lock(mutex_);
    std::vector<std::shared_ptr<Session>> out;
    for (const auto& [id, s] : sessions_) out.push_back(s);
    return out;
}

int SessionManager::flush_logs(bool everything) {
    if (log_dir_.empty()) return 0;
    int n = 0;
    for (const auto& s : all())
        if ((everything || s->complete()) && s->flush_log(log_dir_)) ++n;
    return n;
}

} // namespace fidelity::service
