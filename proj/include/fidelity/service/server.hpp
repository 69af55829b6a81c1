#pragma once

#include "fidelity/service/session.hpp"

#include <json.hpp>

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>

namespace httplib {
class Server;
}

namespace fidelity::service {

struct ServerConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::filesystem::path model;
    std::filesystem::path policy;
    /// Session logs go here; empty disables logging.
    std::filesystem::path log_dir;
    /// Defaults for sessions; request bodies may override seed, mode, initial queue, and tasks.
    SessionConfig session{};
    ChannelSteps steps{};
    int sse_keepalive_ms = 15000;
    int threads = 8;
};

/// Unknown keys are rejected so typos do not pass silently.
ServerConfig server_config_from_json(const nlohmann::json& doc);
nlohmann::json server_config_to_json(const ServerConfig& config);
ServerConfig load_server_config(const std::filesystem::path& path);

/// FIDELITY_PORT, FIDELITY_MODEL, FIDELITY_POLICY, FIDELITY_LOG_DIR.
using EnvLookup = std::function<const char*(const char*)>;
void apply_env_overrides(ServerConfig& config, const EnvLookup& lookup);

/// Loads and cross-checks the model and policy named in the config.
std::shared_ptr<const Artifacts> load_artifacts(const ServerConfig& config);

nlohmann::json snapshot_to_json(const Snapshot& s);
nlohmann::json task_to_json(const TaskDescriptor& t);
nlohmann::json next_to_json(const NextResult& r);
nlohmann::json event_to_json(const Event& e);
/// Parses a POST /sessions body on top of the server defaults.
SessionConfig session_request(const nlohmann::json& body, const SessionConfig& defaults);
SubmitRequest submit_request(const nlohmann::json& body);

class Server {
  public:
    Server(ServerConfig config, std::shared_ptr<const Artifacts> artifacts);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds to config.port (0 picks a free port) and returns the bound port, or -1.
    int bind();
    /// Serves until stop(); returns after in-flight requests drain.
    bool listen();
    void stop();
    int port() const { return port_; }
    SessionManager& sessions() { return manager_; }

  private:
    void routes();

    ServerConfig config_;
    std::shared_ptr<const Artifacts> artifacts_;
    SessionManager manager_;
    std::unique_ptr<httplib::Server> http_;
    std::atomic<bool> stopping_{false};
    int port_ = -1;
};

} // namespace fidelity::service
