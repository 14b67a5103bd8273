#pragma once

#include "fairstep/bundle.hpp"
#include "fairstep/stepwise.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>

namespace fairstep {

inline constexpr const char* kApiHeader = "fairstep-api";
inline constexpr const char* kApiVersion = "1";

struct ServiceResponse {
    int status = 200;
    nlohmann::json body;
};

/// In-memory interactive sessions over cohort bundles. Request handling is
/// independent of the transport; `serve` binds it to HTTP.
class Service {
public:
    explicit Service(std::optional<std::filesystem::path> default_bundle = std::nullopt);
    ~Service();

    ServiceResponse handle(const std::string& method, const std::string& path, const std::string& body);

    /// Blocks serving HTTP on host:port until `stop` is called. Port 0 picks
    /// a free port, reported through `bound_port` once listening.
    void serve(const std::string& host, int port);
    void stop();
    int bound_port() const noexcept { return bound_port_.load(); }
    bool wait_until_listening(int timeout_ms) const;

private:
    struct Session;

    ServiceResponse create_session(const nlohmann::json& request);
    ServiceResponse formula(Session& s);
    ServiceResponse candidates(Session& s);
    ServiceResponse commit(Session& s, const nlohmann::json& request);
    ServiceResponse undo(Session& s);
    ServiceResponse trace(Session& s);

    std::shared_ptr<const Bundle> bundle(const std::optional<std::string>& path);
    std::shared_ptr<Session> find(const std::string& id) const;

    std::optional<std::filesystem::path> default_bundle_;
    mutable std::shared_mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::mutex bundles_mutex_;
    std::map<std::string, std::shared_ptr<const Bundle>> bundles_;
    std::uint64_t next_session_ = 1;
    std::atomic<int> bound_port_{0};
    std::atomic<bool> listening_{false};
    struct Server;
    std::unique_ptr<Server> server_;
    std::mutex server_mutex_;
};

} // namespace fairstep
