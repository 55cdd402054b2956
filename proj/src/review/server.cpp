#include "cmr/review/server.hpp"

#include <httplib.h>

#include <fmt/format.h>

namespace cmr::review {
using nlohmann::json;

namespace {

int status_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::EditRejected: return 422;
    case ErrorCode::SessionClosed:
    case ErrorCode::StaleVersion: return 409;
    default: return 400;
  }
}

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  send_json(res, {{"error", code}, {"message", message}}, status);
}

// Runs a handler, mapping library errors to HTTP status codes.
template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      send_error(res, status_for(e.code()), to_string(e.code()), e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, "bad_request", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

json session_json(const CorrectionSession& s) {
  return {{"session_id", s.session_id},
          {"patient_id", s.patient_id},
          {"phase", io::to_string(s.phase)},
          {"version", s.version},
          {"status", s.status == SessionStatus::Open ? "open" : "submitted"},
          {"audit_length", s.audit_log.size()}};
}

}  // namespace

ReviewServer::ReviewServer(ReviewService& service, ServerOptions options)
    : service_(service), options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  auto& srv = *server_;
  if (!options_.token.empty()) {
    srv.set_pre_routing_handler([token = options_.token](const httplib::Request& req, httplib::Response& res) {
      if (req.get_header_value("Authorization") == "Bearer " + token) return httplib::Server::HandlerResponse::Unhandled;
      send_error(res, 401, "unauthorized", "missing or wrong bearer token");
      return httplib::Server::HandlerResponse::Handled;
    });
  }

  srv.Get("/cases", guarded([this](const httplib::Request&, httplib::Response& res) {
            send_json(res, service_.list_cases());
          }));

  srv.Get(R"(/cases/([^/]+)/(ED|ES)/slices/(\d+))",
          guarded([this](const httplib::Request& req, httplib::Response& res) {
            send_json(res, service_.slice_payload(req.matches[1], io::parse_phase(req.matches[2].str()),
                                                  std::stoi(req.matches[3].str())));
          }));

  srv.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
             const auto body = json::parse(req.body);
             const auto s = service_.create_session(body.at("patient_id").get<std::string>(),
                                                    io::parse_phase(body.at("phase").get<std::string>()));
             send_json(res, session_json(s), 201);
           }));

  srv.Post(R"(/sessions/([^/]+)/edits)", guarded([this](const httplib::Request& req, httplib::Response& res) {
             const auto body = json::parse(req.body);
             Runs runs;
             for (const auto& r : body.at("runs")) runs.emplace_back(r.at(0).get<int>(), r.at(1).get<int>());
             const auto s = service_.apply_manual_edit(req.matches[1], body.at("version").get<long long>(),
                                                       body.at("z").get<int>(), runs, body.at("label").get<int>());
             send_json(res, session_json(s));
           }));

  srv.Post(R"(/sessions/([^/]+)/submit)", guarded([this](const httplib::Request& req, httplib::Response& res) {
             const std::string id = req.matches[1];
             const auto report = service_.submit_session(id);
             send_json(res, report.to_json(service_.session(id).phase));
           }));

  srv.Get(R"(/sessions/([^/]+)/report)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const auto s = service_.session(req.matches[1]);
            if (!s.report) {
              send_error(res, 409, "not_submitted", "session " + s.session_id + " is still open");
              return;
            }
            send_json(res, s.report->to_json(s.phase));
          }));

  srv.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
            send_json(res, session_json(service_.session(req.matches[1])));
          }));
}

ReviewServer::~ReviewServer() { stop(); }

bool ReviewServer::listen() { return server_->listen(options_.host, options_.port); }

int ReviewServer::bind() {
  if (options_.port == 0) return server_->bind_to_any_port(options_.host);
  return server_->bind_to_port(options_.host, options_.port) ? options_.port : -1;
}

bool ReviewServer::listen_after_bind() { return server_->listen_after_bind(); }

void ReviewServer::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

void ReviewServer::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace cmr::review
