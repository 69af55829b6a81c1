#include "fidelity/service/server.hpp"

#include "fidelity/io.hpp"
#include "fidelity/version.hpp"

#include <httplib.h>

#include <random>

namespace fidelity::service {

using nlohmann::json;

namespace {

json observation_json(const std::optional<ObservationTriple>& o) {
    if (!o) return nullptr;
    return {{"o1", o->o1}, {"o2", o->o2}, {"o3", o->o3}};
}

json action_json(const std::optional<ActionId>& a) {
    if (!a) return nullptr;
    return std::string(to_string(*a));
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
    if (p.empty() || p.is_absolute()) return p;
    return base / p;
}

ServiceError bad_request(const std::string& what) { return ServiceError(400, what); }

template <typename T> T field(const json& body, const char* key) {
    try {
        return body.at(key).get<T>();
    } catch (const json::exception&) {
        throw bad_request(std::string("field '") + key + "' is missing or has the wrong type");
    }
}

std::uint64_t parse_seed(const json& j) {
    if (j.is_number_unsigned()) return j.get<std::uint64_t>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        std::size_t used = 0;
        try {
            const auto v = std::stoull(s, &used);
            if (used == s.size()) return v;
        } catch (const std::exception&) {
        }
    }
    throw bad_request("seed must be a nonnegative integer or a decimal string");
}

} // namespace

ServerConfig server_config_from_json(const json& doc) {
    if (!doc.is_object()) throw InvalidArgument("server config must be a JSON object");
    ServerConfig c;
    for (const auto& [key, v] : doc.items()) {
        try {
            if (key == "host") c.host = v.get<std::string>();
            else if (key == "port") c.port = v.get<int>();
            else if (key == "model") c.model = v.get<std::string>();
            else if (key == "policy") c.policy = v.get<std::string>();
            else if (key == "log_dir") c.log_dir = v.get<std::string>();
            else if (key == "sse_keepalive_ms") c.sse_keepalive_ms = v.get<int>();
            else if (key == "threads") c.threads = v.get<int>();
            else if (key == "queue") c.session.queue = queue_from_json(v, c.session.queue);
            else if (key == "reward") c.session.reward = reward_from_json(v, c.session.reward);
            else if (key == "steps") c.steps = steps_from_json(v, c.steps);
            else if (key == "session") c.session = session_request(v, c.session);
            else throw InvalidArgument("unknown key '" + key + "' in server config");
        } catch (const json::exception&) {
            throw InvalidArgument("server config key '" + key + "' has the wrong type");
        } catch (const ServiceError& e) {
            throw InvalidArgument(std::string("server config: ") + e.what());
        }
    }
    if (c.port < 0 || c.port > 65535) throw InvalidArgument("port outside [0, 65535]");
    if (c.threads < 1) throw InvalidArgument("threads must be positive");
    if (c.sse_keepalive_ms < 1) throw InvalidArgument("sse_keepalive_ms must be positive");
    return c;
}

json server_config_to_json(const ServerConfig& c) {
    return {{"host", c.host},
            {"port", c.port},
            {"model", c.model.string()},
            {"policy", c.policy.string()},
            {"log_dir", c.log_dir.string()},
            {"sse_keepalive_ms", c.sse_keepalive_ms},
            {"threads", c.threads},
            {"queue", queue_to_json(c.session.queue)},
            {"reward", reward_to_json(c.session.reward)},
            {"steps", steps_to_json(c.steps)},
            {"session",
             {{"mode", to_string(c.session.mode)},
              {"initial_queue", c.session.initial_queue},
              {"tasks", c.session.tasks}}}};
}

ServerConfig load_server_config(const std::filesystem::path& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw DataError("server config is not valid JSON: " + std::string(e.what()));
    }
    auto c = server_config_from_json(doc);
    // Relative artifact paths are taken relative to the config file.
    const auto base = path.parent_path();
    c.model = resolve(base, c.model);
    c.policy = resolve(base, c.policy);
    c.log_dir = resolve(base, c.log_dir);
    return c;
}

void apply_env_overrides(ServerConfig& c, const EnvLookup& lookup) {
    if (const char* v = lookup("FIDELITY_PORT"); v && *v) {
        try {
            std::size_t used = 0;
            const int port = std::stoi(v, &used);
            if (used != std::string(v).size() || port < 0 || port > 65535) throw std::out_of_range("port");
            c.port = port;
        } catch (const std::exception&) {
            throw InvalidArgument(std::string("FIDELITY_PORT is not a port number: ") + v);
        }
    }
    if (const char* v = lookup("FIDELITY_MODEL"); v && *v) c.model = v;
    if (const char* v = lookup("FIDELITY_POLICY"); v && *v) c.policy = v;
    if (const char* v = lookup("FIDELITY_LOG_DIR"); v && *v) c.log_dir = v;
}

std::shared_ptr<const Artifacts> load_artifacts(const ServerConfig& c) {
    if (c.model.empty() || c.policy.empty()) throw InvalidArgument("both a model and a policy path are required");
    const auto model_text = read_file(c.model);
    const auto policy_text = read_file(c.policy);
    WorkloadModel model;
    PolicyTable policy;
    try {
        model = model_from_json(json::parse(model_text));
        policy = policy_from_json(json::parse(policy_text));
    } catch (const json::parse_error& e) {
        throw DataError("artifact is not valid JSON: " + std::string(e.what()));
    }
    if (policy.max_queue != c.session.queue.max_length)
        throw InvalidArgument("policy queue capacity " + std::to_string(policy.max_queue) +
                              " does not match configured L = " + std::to_string(c.session.queue.max_length));
    return Artifacts::load(std::move(model), std::move(policy), c.steps, content_hash(model_text), content_hash(policy_text));
}

json task_to_json(const TaskDescriptor& t) {
    return {{"task_id", t.task_id},
            {"recommendation", std::string(to_string(t.recommendation))},
            {"duration_ms", t.duration_s * 1000.0},
            {"cue_onset", t.cue_onset}};
}

json snapshot_to_json(const Snapshot& s) {
    json history = json::array();
    for (const auto& h : s.history) {
        const auto& r = h.record;
        history.push_back({{"task_id", r.index},
                           {"q", r.q},
                           {"b_H", r.b_high},
                           {"recommended", std::string(to_string(h.recommended))},
                           {"action", std::string(to_string(r.action))},
                           {"overridden", h.overridden},
                           {"targets", r.task.targets},
                           {"cue_onset", r.task.cue_onset},
                           {"observation", observation_json(r.observation)},
                           {"reward", r.reward},
                           {"arrivals", r.arrivals},
                           {"q_after", r.q_after},
                           {"b_H_after", r.b_high_after},
                           {"evidence_discarded", r.evidence_discarded},
                           {"waits_before", r.waits_before},
                           {"t_ms", h.t_ms}});
    }
    return {{"schema_version", kSchemaVersion},
            {"session_id", s.id},
            {"mode", to_string(s.mode)},
            {"q", s.q},
            {"b_H", s.b_high},
            {"score", s.score},
            {"tasks_completed", s.tasks_completed},
            {"tasks_total", s.tasks_total},
            {"recommendation", action_json(s.recommendation)},
            {"in_flight", s.in_flight ? task_to_json(*s.in_flight) : json(nullptr)},
            {"t_ms", s.clock_ms},
            {"complete", s.complete},
            {"version", s.version},
            {"history", std::move(history)}};
}

json next_to_json(const NextResult& r) {
    json out = {{"schema_version", kSchemaVersion},
                {"wait", r.wait},
                {"task", r.task ? task_to_json(*r.task) : json(nullptr)},
                {"q", r.snapshot.q},
                {"b_H", r.snapshot.b_high},
                {"snapshot", snapshot_to_json(r.snapshot)}};
    if (r.wait) {
        out["arrivals"] = r.arrivals;
        out["expected_next_arrival_ms"] = r.expected_next_arrival_ms;
    }
    return out;
}

json event_to_json(const Event& e) {
    return {{"schema_version", kSchemaVersion}, {"seq", e.seq},
            {"type", e.type},                   {"t_ms", e.t_ms},
            {"q", e.q},                         {"b_H", e.b_high},
            {"recommendation", action_json(e.recommendation)}, {"arrivals", e.arrivals}};
}

SessionConfig session_request(const json& body, const SessionConfig& defaults) {
    if (body.is_null()) return defaults;
    if (!body.is_object()) throw bad_request("session request must be a JSON object");
    SessionConfig c = defaults;
    for (const auto& [key, v] : body.items()) {
        if (key == "seed") {
            c.seed = parse_seed(v);
        } else if (key == "mode") {
            const auto m = v.is_string() ? parse_mode(v.get<std::string>()) : std::nullopt;
            if (!m) throw bad_request("mode must be \"enforced\" or \"advisory\"");
            c.mode = *m;
        } else if (key == "initial_queue") {
            c.initial_queue = field<int>(body, "initial_queue");
        } else if (key == "tasks") {
            c.tasks = field<int>(body, "tasks");
        } else if (key == "grid_step") {
            c.grid_step = field<double>(body, "grid_step");
        } else if (key == "action_set") {
            const int n = field<int>(body, "action_set");
            if (n != 2 && n != 3) throw bad_request("action_set must be 2 or 3");
            c.action_set = n == 2 ? ActionSet::Servicing : ActionSet::WithDelegation;
        } else {
            throw bad_request("unknown field '" + key + "'");
        }
    }
    return c;
}

SubmitRequest submit_request(const json& body) {
    if (!body.is_object()) throw bad_request("result must be a JSON object");
    SubmitRequest r;
    r.task_id = field<int>(body, "task_id");
    const auto a = parse_action(field<std::string>(body, "action"));
    if (!a) throw bad_request("action must be N, H, or D");
    r.action = *a;
    if (body.contains("observation") && !body["observation"].is_null()) {
        const auto& o = body["observation"];
        ObservationTriple t;
        if (o.is_array() && o.size() == 3 && o[0].is_number() && o[1].is_number() && o[2].is_number()) {
            t = {o[0].get<double>(), o[1].get<double>(), o[2].get<double>()};
        } else if (o.is_object()) {
            t = {field<double>(o, "o1"), field<double>(o, "o2"), field<double>(o, "o3")};
        } else {
            throw bad_request("observation must be {o1, o2, o3} or a three-number array");
        }
        r.observation = t;
    }
    for (const auto& [key, v] : body.items())
        if (key != "task_id" && key != "action" && key != "observation") throw bad_request("unknown field '" + key + "'");
    return r;
}

Server::Server(ServerConfig config, std::shared_ptr<const Artifacts> artifacts)
    : config_(std::move(config)), artifacts_(artifacts), manager_(std::move(artifacts), config_.log_dir),
      http_(std::make_unique<httplib::Server>()) {
    const int threads = config_.threads;
    http_->new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
    routes();
}

Server::~Server() { stop(); }

namespace {

void send(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send(res, status, {{"schema_version", kSchemaVersion}, {"error", {{"status", status}, {"message", message}}}});
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return nullptr;
    try {
        return json::parse(req.body);
    } catch (const json::parse_error&) {
        throw ServiceError(400, "request body is not valid JSON");
    }
}

template <typename F> httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
        try {
            f(req, res);
        } catch (const ServiceError& e) {
            send_error(res, e.status(), e.what());
        } catch (const InvalidArgument& e) {
            send_error(res, 422, e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, e.what());
        }
    };
}

std::string sse_frame(const Event& e) {
    return "id: " + std::to_string(e.seq) + "\nevent: " + e.type + "\ndata: " + event_to_json(e).dump() + "\n\n";
}

} // namespace

void Server::routes() {
    auto& s = *http_;
    s.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type, Last-Event-ID"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    s.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    s.Get("/health", guarded([this](const httplib::Request&, httplib::Response& res) {
              const auto& p = artifacts_->policy;
              send(res, 200,
                   {{"schema_version", kSchemaVersion},
                    {"status", "ok"},
                    {"version", std::string(kVersion)},
                    {"model_hash", artifacts_->model_hash},
                    {"policy_hash", artifacts_->policy_hash},
                    {"action_set", static_cast<int>(p.action_set)},
                    {"grid_step", p.grid.step()},
                    {"L", p.max_queue},
                    {"sessions", manager_.all().size()}});
          }));

    s.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
               const auto body = parse_body(req);
               auto defaults = config_.session;
               defaults.seed = std::random_device{}();
               const auto session = manager_.create(session_request(body, defaults));
               send(res, 201, {{"schema_version", kSchemaVersion},
                               {"session_id", session->id()},
                               {"snapshot", snapshot_to_json(session->snapshot())}});
           }));

    s.Get(R"(/sessions/([0-9a-f]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
              send(res, 200, snapshot_to_json(manager_.find(req.matches[1])->snapshot()));
          }));

    s.Post(R"(/sessions/([0-9a-f]+)/next)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               const auto session = manager_.find(req.matches[1]);
               const auto r = session->next();
               if (r.snapshot.complete && !manager_.log_dir().empty()) session->flush_log(manager_.log_dir());
               send(res, 200, next_to_json(r));
           }));

    s.Post(R"(/sessions/([0-9a-f]+)/result)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               const auto session = manager_.find(req.matches[1]);
               const auto r = session->submit(submit_request(parse_body(req)));
               if (r.snapshot.complete && !manager_.log_dir().empty()) session->flush_log(manager_.log_dir());
               send(res, 200, {{"schema_version", kSchemaVersion}, {"reward", r.reward}, {"snapshot", snapshot_to_json(r.snapshot)}});
           }));

    s.Get(R"(/sessions/([0-9a-f]+)/events)", guarded([this](const httplib::Request& req, httplib::Response& res) {
              const auto session = manager_.find(req.matches[1]);
              auto next = std::make_shared<std::uint64_t>(0);
              try {
                  if (req.has_param("since")) *next = std::stoull(req.get_param_value("since"));
                  else if (req.has_header("Last-Event-ID")) *next = std::stoull(req.get_header_value("Last-Event-ID")) + 1;
              } catch (const std::exception&) {
                  throw ServiceError(400, "since must be a nonnegative integer");
              }
              const bool once = req.has_param("once");
              const auto keepalive = std::chrono::milliseconds(config_.sse_keepalive_ms);
              res.set_header("Cache-Control", "no-cache");
              res.set_chunked_content_provider(
                  "text/event-stream", [this, session, next, once, keepalive](std::size_t, httplib::DataSink& sink) {
                      const auto events = session->events_since(*next, once ? std::chrono::milliseconds(0) : keepalive);
                      bool finished = false;
                      for (const auto& e : events) {
                          const auto frame = sse_frame(e);
                          if (!sink.write(frame.data(), frame.size())) return false;
                          *next = e.seq + 1;
                          finished = finished || e.type == "complete";
                      }
                      if (events.empty() && !once && !stopping_) {
                          static constexpr char ping[] = ": keepalive\n\n";
                          if (!sink.write(ping, sizeof ping - 1)) return false;
                      }
                      if (once || finished || stopping_) sink.done();
                      return true;
                  });
          }));
}

int Server::bind() {
    port_ = config_.port == 0 ? http_->bind_to_any_port(config_.host) : (http_->bind_to_port(config_.host, config_.port) ? config_.port : -1);
    return port_;
}

bool Server::listen() {
    if (port_ < 0 && bind() < 0) return false;
    return http_->listen_after_bind();
}

void Server::stop() {
    stopping_ = true;
    for (const auto& s : manager_.all()) s->close();
    if (http_) http_->stop();
    manager_.flush_logs(true);
}

} // namespace fidelity::service
