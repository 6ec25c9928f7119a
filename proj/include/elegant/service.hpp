#pragma once

// JSON-over-HTTP inference on one loaded checkpoint.
//
//   GET  /health        {status, fingerprint}
//   GET  /attributes    {attributes: [names]}
//   POST /transfer      {image_a, image_b, attributes: [i..], alphas?: [..]}
//                       -> {image_c, image_d, residual_c, residual_d}
//   POST /interpolate   {image, refs: [..], attribute, steps} -> {grid, rows, cols}
//   POST /interpolate2  {image, ref1, attr1, ref2, attr2, rows, cols} -> {grid, rows, cols}
//
// Images travel as base64 PNG (JPEG accepted on input), are center-cropped
// square and resized to the model resolution. Errors are {error: message}
// with 400 undecodable input, 404 unknown attribute, 422 alpha outside
// [0, 1], 503 no model loaded.

#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "elegant/model.hpp"

namespace httplib {
class Server;
}

namespace elegant {
inline namespace ELEGANT_ABI {

struct SessionModel {
  Model model;
  std::vector<std::string> attribute_names;
  std::string fingerprint;

  const ModelConfig& config() const { return model.config; }
  static std::shared_ptr<const SessionModel> load(const std::filesystem::path& checkpoint_dir);
};

std::string base64_encode(std::string_view bytes);
// Throws ParseError on characters outside the alphabet or bad padding.
std::string base64_decode(std::string_view text);

struct HttpResponse {
  int status = 200;
  std::string body;  // JSON
};

inline constexpr std::size_t kMaxRequestBytes = 16u << 20;

class InferenceService {
 public:
  InferenceService();
  explicit InferenceService(std::shared_ptr<const SessionModel> session);
  ~InferenceService();

  // Swaps the model between requests; in-flight requests keep the old one.
  void reload(std::shared_ptr<const SessionModel> session);
  std::shared_ptr<const SessionModel> session() const;

  // Routes one request without a socket.
  HttpResponse handle(const std::string& method, const std::string& path, const std::string& body) const;

  // Blocking.
  bool listen(const std::string& host, int port);
  // Binds an ephemeral port and serves on a background thread; returns the port.
  int start_background(const std::string& host = "127.0.0.1");
  void stop();

 private:
  HttpResponse health() const;
  HttpResponse attributes() const;
  HttpResponse transfer(const std::string& body) const;
  HttpResponse interpolate(const std::string& body) const;
  HttpResponse interpolate2(const std::string& body) const;
  void install_routes();

  mutable std::mutex mutex_;
  std::shared_ptr<const SessionModel> session_;
  std::unique_ptr<httplib::Server> server_;
  std::unique_ptr<std::thread> thread_;
};

}  // namespace ELEGANT_ABI
}  // namespace elegant
