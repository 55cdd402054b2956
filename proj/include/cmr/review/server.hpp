#pragma once

#include <memory>
#include <string>

#include "cmr/review/session.hpp"

namespace httplib {
class Server;
}

namespace cmr::review {

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string token;  // when set, requests need "Authorization: Bearer <token>"
};

/// HTTP+JSON front end of a ReviewService.
class ReviewServer {
 public:
  ReviewServer(ReviewService& service, ServerOptions options);
  ~ReviewServer();

  /// Binds and serves until stop(); blocks. Returns false when binding fails.
  bool listen();
  /// Binds to an ephemeral port (when options.port is 0) and returns it.
  int bind();
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  ReviewService& service_;
  ServerOptions options_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace cmr::review
