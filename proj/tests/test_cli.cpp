#include "fidelity/io.hpp"
#include "fidelity/presets.hpp"

#include <doctest.h>
#include <httplib.h>
#include <json.hpp>

#include <array>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

// Runs the binary through the shell with stderr folded into stdout.
Run fidelity_cli(const std::string& args) {
    const std::string cmd = std::string(FIDELITY_BIN) + " " + args + " 2>&1";
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    std::array<char, 4096> buf{};
    while (const auto n = fread(buf.data(), 1, buf.size(), p)) r.out.append(buf.data(), n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

fs::path workdir() {
    static const fs::path d = [] {
        auto p = fs::temp_directory_path() / ("fidelity_test_cli_" + std::to_string(getpid()));
        fs::create_directories(p);
        return p;
    }();
    return d;
}

std::string at(const std::string& name) { return (workdir() / name).string(); }

} // namespace

TEST_CASE("usage and data errors map to exit codes") {
    CHECK(fidelity_cli("").code == 1);
    CHECK(fidelity_cli("frobnicate").code == 1);
    CHECK(fidelity_cli("fit --data x.jsonl").code == 1);
    CHECK(fidelity_cli("fit --data " + at("missing.jsonl") + " --out " + at("m.json")).code == 2);
    fidelity::write_file(at("broken.jsonl"), "{\"session_id\": \"a\", \"steps\": [\n");
    const auto r = fidelity_cli("fit --data " + at("broken.jsonl") + " --out " + at("m.json"));
    CHECK(r.code == 2);
    CHECK(r.out.find("line 1") != std::string::npos);
    CHECK(fidelity_cli("solve --preset dual_task --gamma 1.0 --out " + at("p.json")).code == 1);
    CHECK(fidelity_cli("--version").code == 0);
}

TEST_CASE("generate, fit and select are reproducible byte for byte") {
    REQUIRE(fidelity_cli("generate --preset dual_task --traces 60 --steps 30 --seed 4 --out " + at("d.jsonl")).code == 0);
    REQUIRE(fidelity_cli("fit --data " + at("d.jsonl") + " --restarts 2 --out " + at("fit1.json")).code == 0);
    REQUIRE(fidelity_cli("fit --data " + at("d.jsonl") + " --restarts 2 --out " + at("fit2.json")).code == 0);
    CHECK(fidelity::read_file(at("fit1.json")) == fidelity::read_file(at("fit2.json")));
    CHECK(fs::exists(at("fit1.report.json")));
    const auto manifest = json::parse(fidelity::read_file(at("fit1.manifest.json")));
    CHECK(manifest["subcommand"] == "fit");
    CHECK(manifest["exit_code"] == 0);
    CHECK(manifest["inputs"]["data"]["hash"].get<std::string>().size() == 16);

    const auto sel = fidelity_cli("select --data " + at("d.jsonl") + " --candidates 1,2 --restarts 2 --out " + at("best.json"));
    CHECK(sel.code == 0);
    const auto table = fidelity::read_file(at("best.selection.csv"));
    CHECK(table.rfind("k,num_params,log_likelihood,aic,bic\n", 0) == 0);
    CHECK(sel.out.find("selected k=") != std::string::npos);
}

TEST_CASE("solve writes identical exports and gamma zero is allowed") {
    REQUIRE(fidelity_cli("solve --preset dual_task --out " + at("pol1.json")).code == 0);
    REQUIRE(fidelity_cli("solve --preset dual_task --out " + at("pol2.json")).code == 0);
    CHECK(fidelity::read_file(at("pol1.json")) == fidelity::read_file(at("pol2.json")));
    const auto p = fidelity::read_policy(at("pol1.json"));
    CHECK(p.max_queue == 10);
    CHECK(fs::exists(at("pol1.structure.txt")));
    CHECK(fidelity_cli("solve --preset dual_task --gamma 0 --out " + at("myopic.json")).code == 0);
}

TEST_CASE("show-config prints the resolved configuration without running") {
    const auto r = fidelity_cli("solve --preset dual_task --show-config");
    REQUIRE(r.code == 0);
    const auto cfg = json::parse(r.out);
    CHECK(cfg["solve"]["queue"]["arrival_rate"].get<double>() == doctest::Approx(0.11));
    const auto fixed = json::parse(fidelity_cli("solve --preset dual_task --arrival-rate 0.1 --show-config").out);
    CHECK(fixed["solve"]["queue"]["arrival_rate"].get<double>() == doctest::Approx(0.1));
}

TEST_CASE("simulate, sensitivity and compare") {
    const auto sim = fidelity_cli("simulate --preset dual_task --episodes 30 --seed 3 --baseline always_H --scores-dir " +
                                  workdir().string() + " --log " + at("log.jsonl") + " --log-episodes 2 --out " + at("cmp.csv"));
    REQUIRE(sim.code == 0);
    CHECK(sim.out.find("optimal vs always_H") != std::string::npos);
    CHECK(fs::exists(at("optimal.scores.csv")));
    CHECK(fs::exists(at("log.jsonl")));

    const auto sens = fidelity_cli("sensitivity --preset dual_task --episodes 10 --policy always_N --transition-pct 0,0.2 --noise-ms 0 --out " +
                                   at("sens.csv"));
    REQUIRE(sens.code == 0);
    const auto csv = fidelity::read_file(at("sens.csv"));
    CHECK(csv.find("transition,0,") != std::string::npos);

    const auto same = fidelity_cli("compare " + at("optimal.scores.csv") + " " + at("optimal.scores.csv") + " --out " + at("same.csv"));
    REQUIRE(same.code == 0);
    CHECK(same.out.find("d=0 ") != std::string::npos);
    CHECK(same.out.find("p=1\n") != std::string::npos);
    CHECK(fidelity_cli("compare " + at("optimal.scores.csv") + " " + at("always_H.scores.csv") + " --out " + at("c.csv")).code == 0);
    CHECK(fidelity_cli("sensitivity --preset dual_task --transition-pct 2 --out " + at("x.csv")).code == 1);
}

TEST_CASE("export checks that the policy matches the solve settings") {
    REQUIRE(fs::exists(at("pol1.json")));
    REQUIRE(fidelity_cli("export --preset dual_task --policy " + at("pol1.json") + " --out-dir " + at("bundle")).code == 0);
    const auto server = json::parse(fidelity::read_file(at("bundle/server.json")));
    CHECK(server["queue"]["arrival_rate"].get<double>() == doctest::Approx(0.11));
    CHECK(fs::exists(at("bundle/policy.csv")));
    CHECK(fidelity_cli("export --preset dual_task --gamma 0.9 --policy " + at("pol1.json") + " --out-dir " + at("b2")).code == 2);
}

TEST_CASE("serve stops on SIGINT and flushes session logs") {
    REQUIRE(fs::exists(at("bundle/server.json")));
    int pipefd[2];
    REQUIRE(pipe(pipefd) == 0);
    const std::string config = at("bundle/server.json");
    const pid_t pid = fork();
    REQUIRE(pid >= 0);
    if (pid == 0) {
        dup2(pipefd[1], STDOUT_FILENO);
        close(pipefd[0]);
        execl(FIDELITY_BIN, FIDELITY_BIN, "serve", "--config", config.c_str(), "--port", "0", static_cast<char*>(nullptr));
        _exit(127);
    }
    close(pipefd[1]);
    FILE* out = fdopen(pipefd[0], "r");
    char line[256] = {};
    REQUIRE(fgets(line, sizeof line, out) != nullptr);
    const std::string first(line);
    REQUIRE(first.rfind("listening on", 0) == 0);
    const int port = std::stoi(first.substr(first.rfind(':') + 1));

    httplib::Client client("127.0.0.1", port);
    const auto created = client.Post("/sessions", R"({"seed": 4})", "application/json");
    REQUIRE(created);
    CHECK(created->status == 201);
    const std::string id = json::parse(created->body)["session_id"];

    kill(pid, SIGINT);
    int status = 0;
    waitpid(pid, &status, 0);
    fclose(out);
    CHECK(WIFEXITED(status));
    CHECK(WEXITSTATUS(status) == 0);
    CHECK(fs::exists(fs::path(at("bundle/logs")) / ("session-" + id + ".jsonl")));
    CHECK(fs::exists(fs::path(at("bundle/logs")) / "serve.manifest.json"));
}
