#pragma once

// Read-only HTTP API over the query engine.
//
//   POST /api/v1/query   query document (see /api/v1/schema) -> result
//   POST /api/v1/sweep   {"query": {...}, "axis": "tau_m"|"tau_p", "grid": [...]}
//   GET  /api/v1/model   artifact metadata
//   GET  /api/v1/health  {"status": "ok"} or {"status": "degraded", "reason": ...}
//   GET  /api/v1/schema  JSON Schema of request and response documents
//
// Errors are {"error": {"status", "field", "message"}}: 400 for malformed
// fields, 413 for oversized bodies, 422 for fields that do not fit the query
// kind, 503 while no model is loaded. A request without "seed" gets one
// assigned and echoed back. Response bodies depend only on (request, seed,
// model); elapsed time goes in the X-Compute-Time-Ms header.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>

#include "genhai/data.hpp"
#include "genhai/queries.hpp"
#include "httplib.h"
#include "json.hpp"

namespace genhai {

struct ServiceOptions {
  std::string bind = "127.0.0.1";
  int port = 8080;  ///< 0 picks a free port
  int workers = 1;  ///< simulation threads per request
  std::size_t max_body_bytes = 64 * 1024;
  std::string cors_origin = "*";  ///< empty disables CORS headers
};

struct ApiResponse {
  int status = 200;
  nlohmann::ordered_json body;
  double compute_ms = 0.0;
};

/// JSON Schema (draft 2020-12) for the request and response documents.
inline nlohmann::ordered_json api_schema() {
  using J = nlohmann::ordered_json;
  auto bit = J{{"type", J::array({"boolean", "integer"})}, {"minimum", 0}, {"maximum", 1}};
  J alpha = {{"type", "object"},
             {"additionalProperties", false},
             {"required", J::array({"age_years"})},
             {"properties",
              {{"gender", bit},
               {"age_years", {{"type", "number"}, {"minimum", 0}, {"maximum", 120}}},
               {"admission_type", {{"enum", J::array({"emergency", "elective", "newborn", "other"})}}},
               {"from_healthcare_facility", bit},
               {"cerebrovascular_history", bit},
               {"diabetes", bit},
               {"hospitalized_past_90d", bit},
               {"mrsa_positive_past_90d", bit}}}};
  J beta = {{"type", "object"},
            {"additionalProperties", false},
            {"properties",
             {{"ab_days_30", {{"type", "integer"}, {"minimum", 0}, {"maximum", kAbCensor}}},
              {"icu_days_7", {{"type", "integer"}, {"minimum", 0}, {"maximum", kIcuCensor}}},
              {"dialysis_7d", bit}}}};
  J query = {{"type", "object"},
             {"additionalProperties", false},
             {"required", J::array({"kind", "alpha"})},
             {"properties",
              {{"kind", {{"enum", J::array({"admission_risk", "extended_stay_risk", "retest_now", "deisolation"})}}},
               {"alpha", {{"$ref", "#/$defs/alpha"}}},
               {"beta1", {{"$ref", "#/$defs/beta"}}},
               {"r1", {{"type", "integer"}, {"minimum", 0}, {"maximum", 1}}},
               {"tau_p", {{"type", "number"}, {"minimum", 0}}},
               {"tau_m", {{"type", "number"}, {"exclusiveMinimum", 0}}},
               {"n_sequences", {{"type", "integer"}, {"minimum", 1}, {"maximum", kMaxQuerySequences}}},
               {"n_posterior_draws", {{"type", "integer"}, {"minimum", 1}}},
               {"seed", {{"type", "integer"}, {"minimum", 0}}},
               {"max_events", {{"type", "integer"}, {"minimum", 1}}}}}};
  J result = {{"type", "object"},
              {"required", J::array({"estimate", "mc_stderr", "posterior_band", "n_effective", "n_bundles"})},
              {"properties",
               {{"estimate", {{"type", "number"}, {"minimum", 0}, {"maximum", 1}}},
                {"mc_stderr", {{"type", "number"}, {"minimum", 0}}},
                {"posterior_band",
                 {{"type", "array"},
                  {"items", {{"type", "number"}, {"minimum", 0}, {"maximum", 1}}},
                  {"minItems", 2},
                  {"maxItems", 2}}},
                {"n_effective", {{"type", "integer"}, {"minimum", 0}}},
                {"n_bundles", {{"type", "integer"}, {"minimum", 1}}},
                {"acceptance_rate", {{"type", "number"}, {"minimum", 0}, {"maximum", 1}}}}}};
  J model_ref = {{"type", "object"},
                 {"required", J::array({"version", "model_hash"})},
                 {"properties", {{"version", {{"type", "integer"}}}, {"model_hash", {{"type", "string"}}}}}};
  J resolved = query;
  resolved["required"] = J::array({"kind", "alpha", "n_sequences", "n_posterior_draws", "seed", "max_events"});
  J error = {{"type", "object"},
             {"required", J::array({"error"})},
             {"properties",
              {{"error",
                {{"type", "object"},
                 {"required", J::array({"status", "field", "message"})},
                 {"properties",
                  {{"status", {{"type", "integer"}}},
                   {"field", {{"type", "string"}}},
                   {"message", {{"type", "string"}}}}}}}}}};
  return {{"$schema", "https://json-schema.org/draft/2020-12/schema"},
          {"title", "GenHAI query API v1"},
          {"$defs",
           {{"alpha", alpha},
            {"beta", beta},
            {"query_request", query},
            {"resolved_query", resolved},
            {"query_result", result},
            {"model_ref", model_ref},
            {"query_response",
             {{"type", "object"},
              {"required", J::array({"query", "result", "model"})},
              {"properties",
               {{"query", {{"$ref", "#/$defs/resolved_query"}}},
                {"result", {{"$ref", "#/$defs/query_result"}}},
                {"model", {{"$ref", "#/$defs/model_ref"}}}}}}},
            {"sweep_request",
             {{"type", "object"},
              {"additionalProperties", false},
              {"required", J::array({"query", "axis", "grid"})},
              {"properties",
               {{"query", {{"$ref", "#/$defs/query_request"}}},
                {"axis", {{"enum", J::array({"tau_m", "tau_p"})}}},
                {"grid",
                 {{"type", "array"},
                  {"items", {{"type", "number"}}},
                  {"minItems", 1},
                  {"maxItems", kMaxSweepPoints}}}}}}},
            {"sweep_response",
             {{"type", "object"},
              {"required", J::array({"query", "axis", "points", "model"})},
              {"properties",
               {{"query", {{"$ref", "#/$defs/resolved_query"}}},
                {"axis", {{"enum", J::array({"tau_m", "tau_p"})}}},
                {"points",
                 {{"type", "array"},
                  {"items",
                   {{"type", "object"},
                    {"required", J::array({"x", "result"})},
                    {"properties", {{"x", {{"type", "number"}}}, {"result", {{"$ref", "#/$defs/query_result"}}}}}}}}},
                {"model", {{"$ref", "#/$defs/model_ref"}}}}}}},
            {"error_response", error}}}};
}

/// Request handling, independent of the HTTP transport.
class QueryApi {
 public:
  explicit QueryApi(ServiceOptions opts = {}) : opts_(std::move(opts)) {
    std::random_device rd;
    seed_base_ = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  }

  void load(const ModelArtifact& artifact) {
    auto m = std::make_shared<Loaded>(Loaded{artifact.registry(), artifact.provenance, model_hash(artifact)});
    std::lock_guard lock(mu_);
    model_ = std::move(m);
  }

  bool loaded() const { return snapshot() != nullptr; }

  /// Seed for requests that carry none. 53 bits, so it survives a round
  /// trip through a JavaScript number.
  std::uint64_t next_seed() { return Rng::mix64(seed_base_ + counter_.fetch_add(1)) & ((1ULL << 53) - 1); }

  ApiResponse query(const std::string& body) {
    return guarded([&](const Loaded& m) {
      bool seeded = false;
      QuerySpec spec = query_from_json(parse(body), &seeded);
      if (!seeded) spec.seed = next_seed();
      const QueryResult r = run_query(m.registry, spec, opts_.workers);
      return nlohmann::ordered_json{
          {"query", to_json(spec)}, {"result", to_json(r)}, {"model", model_ref(m)}};
    });
  }

  ApiResponse sweep(const std::string& body) {
    return guarded([&](const Loaded& m) {
      const nlohmann::json j = parse(body);
      if (!j.is_object()) throw QueryFieldError("body", "must be a JSON object");
      for (const auto& [k, v] : j.items()) {
        if (k != "query" && k != "axis" && k != "grid") throw QueryFieldError(k, "unknown field");
      }
      if (!j.contains("query")) throw QueryFieldError("query", "required");
      if (!j.contains("axis") || !j["axis"].is_string()) throw QueryFieldError("axis", "required string");
      const std::string axis_name = j["axis"].get<std::string>();
      if (axis_name != "tau_m" && axis_name != "tau_p") throw QueryFieldError("axis", "must be tau_m or tau_p");
      const SweepAxis axis = axis_name == "tau_m" ? SweepAxis::tau_m : SweepAxis::tau_p;
      if (!j.contains("grid") || !j["grid"].is_array()) throw QueryFieldError("grid", "required array of numbers");
      if (j["grid"].size() > kMaxSweepPoints) {
        throw QueryFieldError("grid", "at most " + std::to_string(kMaxSweepPoints) + " points");
      }
      std::vector<double> grid;
      for (const auto& v : j["grid"]) {
        if (!v.is_number()) throw QueryFieldError("grid", "must contain only numbers");
        grid.push_back(v.get<double>());
      }
      // Validate the base with the first grid value substituted so that a
      // placeholder axis value is not required.
      nlohmann::json q = j["query"];
      if (q.is_object() && !grid.empty()) q[axis_name] = grid.front();
      bool seeded = false;
      QuerySpec base = query_from_json(q, &seeded);
      if (!seeded) base.seed = next_seed();
      for (double x : grid) {
        QuerySpec s = base;
        (axis == SweepAxis::tau_m ? s.tau_m : s.tau_p) = x;
        try {
          s.validate();
        } catch (const QueryFieldError& e) {
          throw QueryFieldError("grid", e.what());
        }
      }
      const auto points = genhai::sweep(m.registry, base, axis, grid, opts_.workers);
      nlohmann::ordered_json out_points = nlohmann::ordered_json::array();
      for (const auto& p : points) out_points.push_back({{"x", p.x}, {"result", to_json(p.result)}});
      return nlohmann::ordered_json{{"query", to_json(base)},
                                    {"axis", axis_name},
                                    {"points", std::move(out_points)},
                                    {"model", model_ref(m)}};
    });
  }

  ApiResponse model() const {
    const auto m = snapshot();
    if (!m) return unavailable();
    nlohmann::ordered_json subs = nlohmann::ordered_json::array();
    for (SubProgramId id : kAllSubPrograms) {
      const SubProgramSpec& s = at(m->registry, id).spec;
      subs.push_back({{"name", s.name()},
                      {"family", to_string(s.family)},
                      {"input_dim", s.input_dim},
                      {"fields", std::vector<std::string>(conditioning_layout(id).begin(), conditioning_layout(id).end())}});
    }
    return {200, {{"version", kArtifactVersion}, {"model_hash", m->hash}, {"provenance", m->provenance}, {"subprograms", subs}}};
  }

  ApiResponse health() const {
    const auto m = snapshot();
    if (!m) return {200, {{"status", "degraded"}, {"reason", "no model loaded"}}};
    try {
      QuerySpec smoke;
      smoke.alpha.age_years = 50;
      smoke.n_sequences = 1;
      smoke.n_posterior_draws = 1;
      const QueryResult r = run_query(m->registry, smoke, 1);
      if (!(r.estimate >= 0.0 && r.estimate <= 1.0)) throw std::runtime_error("smoke query returned " + std::to_string(r.estimate));
    } catch (const std::exception& e) {
      return {200, {{"status", "degraded"}, {"reason", std::string("smoke query failed: ") + e.what()}}};
    }
    return {200, {{"status", "ok"}, {"model_hash", m->hash}}};
  }

  static ApiResponse schema() { return {200, api_schema()}; }

  static ApiResponse error(int status, const std::string& field, const std::string& message) {
    return {status, {{"error", {{"status", status}, {"field", field}, {"message", message}}}}};
  }

  const ServiceOptions& options() const { return opts_; }

 private:
  struct Loaded {
    Registry registry;
    nlohmann::ordered_json provenance;
    std::string hash;
  };

  std::shared_ptr<const Loaded> snapshot() const {
    std::lock_guard lock(mu_);
    return model_;
  }

  static nlohmann::ordered_json model_ref(const Loaded& m) {
    return {{"version", kArtifactVersion}, {"model_hash", m.hash}};
  }

  static ApiResponse unavailable() { return error(503, "model", "no model loaded"); }

  static nlohmann::json parse(const std::string& body) {
    try {
      return nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      throw QueryFieldError("body", std::string("malformed JSON: ") + e.what());
    }
  }

  template <class F>
  ApiResponse guarded(F&& f) const {
    const auto m = snapshot();
    if (!m) return unavailable();
    const auto t0 = std::chrono::steady_clock::now();
    ApiResponse r;
    try {
      r = {200, f(*m)};
    } catch (const QueryFieldError& e) {
      const std::string msg = e.what();
      r = error(e.kind_mismatch() ? 422 : 400, e.field(), msg.substr(std::min(msg.size(), e.field().size() + 2)));
    } catch (const DomainError& e) {
      r = error(400, "body", e.what());
    } catch (const std::exception& e) {
      r = error(500, "", e.what());
    }
    r.compute_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return r;
  }

  ServiceOptions opts_;
  mutable std::mutex mu_;
  std::shared_ptr<const Loaded> model_;
  std::uint64_t seed_base_ = 0;
  std::atomic<std::uint64_t> counter_{0};
};

/// HTTP server around a QueryApi. stop() stops accepting connections and
/// waits for in-flight requests to finish.
class Service {
 public:
  explicit Service(ServiceOptions opts = {}) : api_(std::move(opts)) { routes(); }
  ~Service() { stop(); }
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  QueryApi& api() { return api_; }

  /// Binds and starts serving on a background thread. Returns the port.
  int start() {
    const auto& o = api_.options();
    port_ = o.port == 0 ? server_.bind_to_any_port(o.bind) : (server_.bind_to_port(o.bind, o.port) ? o.port : -1);
    if (port_ < 0) throw std::runtime_error("cannot bind " + o.bind + ":" + std::to_string(o.port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Serves on the calling thread until stop() is called from elsewhere.
  void run() {
    const auto& o = api_.options();
    if (!server_.bind_to_port(o.bind, o.port)) {
      throw std::runtime_error("cannot bind " + o.bind + ":" + std::to_string(o.port));
    }
    port_ = o.port;
    server_.listen_after_bind();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }

 private:
  void reply(httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
    if (r.compute_ms > 0.0) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3f", r.compute_ms);
      res.set_header("X-Compute-Time-Ms", buf);
    }
  }

  template <class F>
  httplib::Server::Handler post(F f) {
    return [this, f](const httplib::Request& req, httplib::Response& res) {
      if (req.body.size() > api_.options().max_body_bytes) {
        reply(res, QueryApi::error(413, "body", "request body exceeds " + std::to_string(api_.options().max_body_bytes) + " bytes"));
        return;
      }
      reply(res, (api_.*f)(req.body));
    };
  }

  void routes() {
    const std::string origin = api_.options().cors_origin;
    if (!origin.empty()) {
      server_.set_default_headers({{"Access-Control-Allow-Origin", origin},
                                   {"Access-Control-Expose-Headers", "X-Compute-Time-Ms"}});
      server_.Options(R"(/api/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
      });
    }
    // SO_REUSEADDR only: the library default of SO_REUSEPORT would let a
    // second server share an occupied port.
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    server_.set_payload_max_length(api_.options().max_body_bytes + 1);
    server_.Post("/api/v1/query", post(&QueryApi::query));
    server_.Post("/api/v1/sweep", post(&QueryApi::sweep));
    server_.Get("/api/v1/model", [this](const httplib::Request&, httplib::Response& res) { reply(res, api_.model()); });
    server_.Get("/api/v1/health", [this](const httplib::Request&, httplib::Response& res) { reply(res, api_.health()); });
    server_.Get("/api/v1/schema", [this](const httplib::Request&, httplib::Response& res) { reply(res, QueryApi::schema()); });
    server_.set_error_handler([this](const httplib::Request& req, httplib::Response& res) {
      if (res.status == 413) {
        reply(res, QueryApi::error(413, "body", "request body too large"));
      } else if (res.status == 404) {
        reply(res, QueryApi::error(404, "path", "no endpoint " + req.method + " " + req.path));
      }
    });
  }

  QueryApi api_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace genhai
