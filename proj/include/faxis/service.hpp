#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include "faxis/index.hpp"

namespace faxis::service {

struct Response {
  int status = 200;
  std::string body;
};

inline constexpr int kDefaultPort = 7878;
inline constexpr std::size_t kMaxK = 1000;

// FAXIS_PORT if set and valid, otherwise kDefaultPort.
int port_from_env();

// One result line as emitted by both /query and the CLI `query` command.
std::string result_json(const RetrievalResult& r, const ItemRecord& item);

// Request handlers over a swappable immutable index. Each request works on
// the index snapshot taken when it starts.
class QueryService {
 public:
  QueryService() = default;
  explicit QueryService(std::shared_ptr<const Index> index) : index_(std::move(index)) {}

  void swap_index(std::shared_ptr<const Index> index);
  std::shared_ptr<const Index> snapshot() const;

  Response axes() const;
  Response query(std::string_view body) const;
  Response flip_report(std::string_view body) const;

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const Index> index_;
};

struct ServeOptions {
  std::string host = "127.0.0.1";
  int port = kDefaultPort;  // 0 picks a free port
  std::optional<std::filesystem::path> static_dir;
};

class HttpServer {
 public:
  HttpServer(QueryService& service, ServeOptions options);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds the socket and returns the bound port. Throws Error(Io) on failure.
  int bind();
  // Serves until stop(); call bind() first.
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// bind() + run() with a startup line on stderr.
void serve(QueryService& service, const ServeOptions& options);

}  // namespace faxis::service
