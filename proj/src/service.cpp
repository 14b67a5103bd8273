#include "fairstep/service.hpp"

#include "fairstep/error.hpp"
#include "fairstep/serialize.hpp"

#include <httplib.h>

#include <chrono>
#include <sstream>
#include <thread>

namespace fairstep {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

/// Maps to HTTP 422: the request is well-formed but cannot be applied.
struct Unprocessable : Error {
    using Error::Error;
};

ServiceResponse error_response(int status, const std::string& message)
{
    return {status, {{"error", message}}};
}

std::vector<std::string> split_path(const std::string& path)
{
    std::vector<std::string> parts;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '/'))
        if (!part.empty()) parts.push_back(part);
    return parts;
}

/// Inline JSON, or a string naming a JSON file.
json inline_or_file(const json& value)
{
    if (value.is_string()) return read_json_file(value.get<std::string>());
    return value;
}

CandidatePool default_pool(const CodeMaps& maps)
{
    CandidatePool pool;
    for (const auto& h : maps.payment_hccs) pool.push_back({h, {VariableId::hcc(h)}});
    return pool;
}

Formula session_universe(const Formula& baseline, const CandidatePool& pool, const CodeMaps& maps)
{
    Formula u = universe_formula(baseline, pool);
    for (const auto& h : maps.payment_hccs) {
        VariableId v = VariableId::hcc(h);
        if (!u.contains(v)) u.variables.push_back(v);
    }
    return u;
}

json policy_hint(const SelectionPolicy& policy, const StepEvaluation& ev)
{
    Decision d = accept_step(policy, ev);
    return {{"policy", policy.name}, {"accepted", d.accepted}, {"reason", d.reason}};
}

} // namespace

struct Service::Session {
    std::string id;
    std::shared_ptr<const Bundle> bundle;
    std::shared_ptr<const StepwiseContext> context;
    CandidatePool pool;
    SelectionPolicy policy;
    std::vector<SelectionPolicy> hints;
    DecisionTrace trace;
    /// State before each trace entry, for undo.
    std::vector<SearchState> before;
    std::optional<SearchState> state;
    std::uint64_t revision = 0;
    std::shared_mutex mutex;
};

struct Service::Server {
    httplib::Server http;
};

Service::Service(std::optional<fs::path> default_bundle) : default_bundle_(std::move(default_bundle)) {}

Service::~Service()
{
    stop();
}

std::shared_ptr<const Bundle> Service::bundle(const std::optional<std::string>& path)
{
    fs::path p;
    if (path) {
        p = *path;
    } else if (default_bundle_) {
        p = *default_bundle_;
    } else {
        throw Unprocessable("no bundle given and the service has no default bundle");
    }
    std::string key = fs::weakly_canonical(p).string();
    std::lock_guard lock(bundles_mutex_);
    auto it = bundles_.find(key);
    if (it != bundles_.end()) return it->second;
    auto b = std::make_shared<const Bundle>(load_bundle(p));
    bundles_.emplace(key, b);
    return b;
}

std::shared_ptr<Service::Session> Service::find(const std::string& id) const
{
    std::shared_lock lock(sessions_mutex_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

ServiceResponse Service::handle(const std::string& method, const std::string& path, const std::string& body)
{
    try {
        auto parts = split_path(path);
        json request = json::object();
        if ((method == "POST" || method == "PUT") && !body.empty()) {
            try {
                request = json::parse(body);
            } catch (const json::exception& e) {
                return error_response(400, std::string("malformed JSON body: ") + e.what());
            }
        }
        if (parts.empty() || parts[0] != "sessions") return error_response(404, "no such resource");
        if (parts.size() == 1) {
            if (method != "POST") return error_response(405, "use POST /sessions");
            return create_session(request);
        }
        auto session = find(parts[1]);
        if (!session) return error_response(404, "unknown session '" + parts[1] + "'");
        if (parts.size() != 3) return error_response(404, "no such resource");
        const std::string& leaf = parts[2];
        const bool get = method == "GET";
        const bool post = method == "POST";
        if (leaf == "formula" && get) return formula(*session);
        if (leaf == "candidates" && get) return candidates(*session);
        if (leaf == "trace" && get) return trace(*session);
        if (leaf == "steps" && post) return commit(*session, request);
        if (leaf == "undo" && post) return undo(*session);
        if (leaf == "formula" || leaf == "candidates" || leaf == "trace" || leaf == "steps" || leaf == "undo")
            return error_response(405, "method not allowed");
        return error_response(404, "no such resource");
    } catch (const Unprocessable& e) {
        return error_response(422, e.what());
    } catch (const Error& e) {
        return error_response(422, e.what());
    } catch (const json::exception& e) {
        return error_response(422, e.what());
    } catch (const std::exception& e) {
        return error_response(500, e.what());
    }
}

ServiceResponse Service::create_session(const json& request)
{
    if (!request.is_object()) throw Unprocessable("session request must be a JSON object");
    std::optional<std::string> bundle_path;
    if (request.contains("bundle")) bundle_path = request.at("bundle").get<std::string>();
    auto b = bundle(bundle_path);

    if (!request.contains("baseline")) throw Unprocessable("session request needs a baseline formula");
    Formula baseline = parse_formula(inline_or_file(request.at("baseline")));
    validate_formula(baseline, AgeBanding{}, true);

    std::vector<GroupDefinition> groups = b->groups;
    if (request.contains("groups")) {
        groups = parse_group_definitions(inline_or_file(request.at("groups")).dump());
        validate_groups(groups, b->maps);
    }
    CandidatePool pool = request.contains("pool") ? parse_pool(inline_or_file(request.at("pool")))
                                                  : default_pool(b->maps);
    SelectionPolicy policy{"max_r2", Objective{MaxR2{0.0}}, false, {}};
    if (request.contains("policy")) policy = parse_policy(inline_or_file(request.at("policy")));
    std::vector<SelectionPolicy> hints;
    for (const auto& h : request.value("hint_policies", json::array())) hints.push_back(parse_policy(inline_or_file(h)));

    auto s = std::make_shared<Session>();
    s->bundle = b;
    s->pool = std::move(pool);
    s->policy = std::move(policy);
    s->hints = std::move(hints);
    s->context = std::make_shared<const StepwiseContext>(
        StepwiseContext::from_cohort(b->records, b->maps, groups, session_universe(baseline, s->pool, b->maps)));
    s->state = s->context->initial_state(baseline, s->policy.evaluation);
    s->trace = DecisionTrace{s->policy.name, baseline, {}};
    {
        std::unique_lock lock(sessions_mutex_);
        s->id = "s" + std::to_string(next_session_++);
        sessions_.emplace(s->id, s);
    }
    return {201,
            {{"session_id", s->id},
             {"revision", s->revision},
             {"formula", to_json(s->state->formula())},
             {"report", to_json(s->state->report)},
             {"policy", to_json(s->policy)}}};
}

ServiceResponse Service::formula(Session& s)
{
    std::shared_lock lock(s.mutex);
    return {200,
            {{"session_id", s.id},
             {"revision", s.revision},
             {"formula", to_json(s.state->formula())},
             {"report", to_json(s.state->report)}}};
}

ServiceResponse Service::candidates(Session& s)
{
    std::shared_lock lock(s.mutex);
    json list = json::array();
    for (const auto& action : propose_steps(s.state->formula(), s.pool)) {
        StepEvaluation ev = evaluate_step(*s.context, *s.state, action, s.policy.evaluation);
        json hints = json::array();
        hints.push_back(policy_hint(s.policy, ev));
        for (const auto& h : s.hints) hints.push_back(policy_hint(h, ev));
        json aliased = json::array();
        for (const auto& v : ev.aliased) aliased.push_back(to_json(v));
        list.push_back({{"action", to_json(action)},
                        {"deltas", to_json(ev.deltas)},
                        {"aliased", aliased},
                        {"report_after", to_json(ev.after)},
                        {"hints", hints}});
    }
    return {200, {{"session_id", s.id}, {"revision", s.revision}, {"candidates", list}}};
}

ServiceResponse Service::commit(Session& s, const json& request)
{
    std::unique_lock lock(s.mutex);
    if (!request.is_object() || !request.contains("revision"))
        return error_response(422, "commit needs the last-seen 'revision'");
    if (!request.at("revision").is_number_unsigned() || request.at("revision").get<std::uint64_t>() != s.revision) {
        return {409, {{"error", "stale revision"}, {"revision", s.revision}}};
    }
    if (!request.contains("action")) return error_response(422, "commit needs an 'action'");
    StepAction action;
    try {
        action = parse_action(request.at("action"));
    } catch (const Error& e) {
        return error_response(422, e.what());
    }
    for (const auto& v : action.variables) {
        if (v.kind != VariableKind::Hcc) return error_response(422, "only HCC variables can be stepped");
        if (!s.context->universe().find(v)) return error_response(422, v.key + " is not a payment HCC of this session");
    }
    if (!action_applies(action, s.state->formula()))
        return error_response(422, describe(action) + " does not apply to the current formula");
    const bool accept = request.value("accept", true);

    StepEvaluation ev = evaluate_step(*s.context, *s.state, action, s.policy.evaluation);
    Decision verdict = accept_step(s.policy, ev);
    if (accept && !ev.aliased.empty()) return error_response(422, "cannot commit an aliased addition");

    TraceEntry entry;
    entry.step = s.trace.entries.size();
    entry.action = action;
    entry.report_before = ev.before;
    entry.report_after = ev.after;
    entry.deltas = ev.deltas;
    entry.accepted = accept;
    entry.reason = request.value("reason", std::string(accept ? "committed" : "rejected")) + " (policy " +
                   s.policy.name + " would " + (verdict.accepted ? "accept" : "reject") + ": " + verdict.reason + ")";
    entry.fits_evaluated = (s.trace.entries.empty() ? 1 : s.trace.entries.back().fits_evaluated) + 1;

    s.before.push_back(*s.state);
    if (accept) s.state = std::move(ev.next);
    s.trace.entries.push_back(entry);
    ++s.revision;
    return {200,
            {{"session_id", s.id},
             {"revision", s.revision},
             {"entry", to_json(entry)},
             {"formula", to_json(s.state->formula())},
             {"report", to_json(s.state->report)}}};
}

ServiceResponse Service::undo(Session& s)
{
    std::unique_lock lock(s.mutex);
    if (s.trace.entries.empty()) return {409, {{"error", "nothing to undo"}, {"revision", s.revision}}};
    s.trace.entries.pop_back();
    s.state = std::move(s.before.back());
    s.before.pop_back();
    ++s.revision;
    return {200,
            {{"session_id", s.id},
             {"revision", s.revision},
             {"formula", to_json(s.state->formula())},
             {"report", to_json(s.state->report)}}};
}

ServiceResponse Service::trace(Session& s)
{
    std::shared_lock lock(s.mutex);
    return {200, {{"session_id", s.id}, {"revision", s.revision}, {"trace", to_json(s.trace)}}};
}

// --- transport -------------------------------------------------------------

void Service::serve(const std::string& host, int port)
{
    {
        std::lock_guard lock(server_mutex_);
        server_ = std::make_unique<Server>();
    }
    httplib::Server& http = server_->http;
    http.set_default_headers({{kApiHeader, kApiVersion}});
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
        ServiceResponse r = handle(req.method, req.path, req.body);
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    http.Get(".*", handler);
    http.Post(".*", handler);
    http.Put(".*", handler);
    http.Delete(".*", handler);
    int bound = port == 0 ? http.bind_to_any_port(host) : (http.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
    bound_port_ = bound;
    listening_ = true;
    http.listen_after_bind();
    listening_ = false;
}

void Service::stop()
{
    std::lock_guard lock(server_mutex_);
    if (server_) server_->http.stop();
}

bool Service::wait_until_listening(int timeout_ms) const
{
    auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    while (std::chrono::steady_clock::now() < deadline) {
        if (listening_.load()) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    return listening_.load();
}

} // namespace fairstep
