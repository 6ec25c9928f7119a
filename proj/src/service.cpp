#include "elegant/service.hpp"

#include <array>

#include <nlohmann/json.hpp>

#include "elegant/checkpoint.hpp"
#include "elegant/error.hpp"
#include "elegant/evaluation.hpp"
#include "elegant/image.hpp"

// Last: httplib pulls in <resolv.h>, whose _res macro breaks Eigen headers.
#include <httplib.h>

namespace elegant {
inline namespace ELEGANT_ABI {
namespace {

using nlohmann::json;

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

// Raised inside handlers, converted to a status at the route boundary.
struct HttpError : std::runtime_error {
  HttpError(int s, const std::string& m) : std::runtime_error(m), status(s) {}
  int status;
};

HttpResponse reply(int status, const json& body) { return {status, body.dump()}; }

json parse_body(const std::string& body) {
  try {
    json j = json::parse(body);
    if (!j.is_object()) throw HttpError(400, "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw HttpError(400, std::string("malformed JSON: ") + e.what());
  }
}

const json& field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw HttpError(400, std::string("missing field '") + key + "'");
  return *it;
}

int int_field(const json& j, const char* key, int fallback, bool required) {
  auto it = j.find(key);
  if (it == j.end()) {
    if (required) throw HttpError(400, std::string("missing field '") + key + "'");
    return fallback;
  }
  if (!it->is_number_integer()) throw HttpError(400, std::string("field '") + key + "' must be an integer");
  return it->get<int>();
}

ImageTensor load_request_image(const json& value, const char* what, int size) {
  if (!value.is_string()) throw HttpError(400, std::string(what) + " must be a base64 string");
  std::string text = value.get<std::string>();
  if (auto comma = text.find(','); text.rfind("data:", 0) == 0 && comma != std::string::npos) text.erase(0, comma + 1);
  try {
    const ImageU8 im = decode_image(base64_decode(text));
    return normalize(resize_bilinear(center_square_crop(im), size, size));
  } catch (const Error& e) {
    throw HttpError(400, std::string(what) + ": " + e.what());
  }
}

int resolve_attribute(const json& value, const SessionModel& s) {
  const int n = static_cast<int>(s.attribute_names.size());
  if (value.is_number_integer()) {
    const int i = value.get<int>();
    if (i < 0 || i >= n) throw HttpError(404, "unknown attribute index " + std::to_string(i));
    return i;
  }
  if (value.is_string()) {
    for (int i = 0; i < n; ++i)
      if (s.attribute_names[i] == value.get<std::string>()) return i;
    throw HttpError(404, "unknown attribute '" + value.get<std::string>() + "'");
  }
  throw HttpError(400, "attribute must be an index or a name");
}

std::string png_b64(const ImageU8& im) { return base64_encode(encode_png(im)); }
std::string png_b64(const ImageTensor& im) { return png_b64(denormalize(im)); }

template <typename F>
HttpResponse guarded(const std::shared_ptr<const SessionModel>& s, F&& fn) {
  if (!s) return reply(503, {{"error", "no model loaded"}});
  try {
    return fn(*s);
  } catch (const HttpError& e) {
    return reply(e.status, {{"error", e.what()}});
  } catch (const ContractError& e) {
    return reply(400, {{"error", e.what()}});
  } catch (const std::exception& e) {
    return reply(500, {{"error", e.what()}});
  }
}

}  // namespace

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t k = 0;
  for (; k + 2 < bytes.size(); k += 3) {
    const unsigned v = (static_cast<unsigned char>(bytes[k]) << 16) | (static_cast<unsigned char>(bytes[k + 1]) << 8) |
                       static_cast<unsigned char>(bytes[k + 2]);
    out += kAlphabet[v >> 18], out += kAlphabet[(v >> 12) & 63], out += kAlphabet[(v >> 6) & 63],
        out += kAlphabet[v & 63];
  }
  if (k < bytes.size()) {
    unsigned v = static_cast<unsigned char>(bytes[k]) << 16;
    if (k + 1 < bytes.size()) v |= static_cast<unsigned char>(bytes[k + 1]) << 8;
    out += kAlphabet[v >> 18], out += kAlphabet[(v >> 12) & 63];
    out += k + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  static const std::array<int, 256> table = [] {
    std::array<int, 256> t{};
    t.fill(-1);
    for (int i = 0; i < 64; ++i) t[static_cast<unsigned char>(kAlphabet[i])] = i;
    return t;
  }();
  std::string out;
  unsigned acc = 0;
  int bits = 0, pad = 0;
  for (char ch : text) {
    if (ch == '\n' || ch == '\r' || ch == ' ') continue;
    if (ch == '=') {
      ++pad;
      continue;
    }
    const int v = table[static_cast<unsigned char>(ch)];
    if (v < 0 || pad) throw ParseError("invalid base64 data");
    acc = (acc << 6) | static_cast<unsigned>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out += static_cast<char>((acc >> bits) & 0xFF);
    }
  }
  if (pad > 2 || bits >= 6) throw ParseError("invalid base64 padding");
  return out;
}

std::shared_ptr<const SessionModel> SessionModel::load(const std::filesystem::path& checkpoint_dir) {
  LoadedModel lm = load_model(checkpoint_dir);
  auto s = std::make_shared<SessionModel>();
  s->model = std::move(lm.model);
  s->attribute_names = lm.manifest.attribute_names;
  s->fingerprint = lm.fingerprint;
  return s;
}

InferenceService::InferenceService() = default;
InferenceService::InferenceService(std::shared_ptr<const SessionModel> session) : session_(std::move(session)) {}
InferenceService::~InferenceService() { stop(); }

void InferenceService::reload(std::shared_ptr<const SessionModel> session) {
  std::lock_guard lock(mutex_);
  session_ = std::move(session);
}

std::shared_ptr<const SessionModel> InferenceService::session() const {
  std::lock_guard lock(mutex_);
  return session_;
}

HttpResponse InferenceService::handle(const std::string& method, const std::string& path,
                                      const std::string& body) const {
  if (body.size() > kMaxRequestBytes) return reply(413, {{"error", "request exceeds 16 MiB"}});
  if (method == "GET" && path == "/health") return health();
  if (method == "GET" && path == "/attributes") return attributes();
  if (method == "POST" && path == "/transfer") return transfer(body);
  if (method == "POST" && path == "/interpolate") return interpolate(body);
  if (method == "POST" && path == "/interpolate2") return interpolate2(body);
  return reply(404, {{"error", "no route " + method + " " + path}});
}

HttpResponse InferenceService::health() const {
  const auto s = session();
  if (!s) return reply(503, {{"status", "no model loaded"}, {"fingerprint", nullptr}});
  return reply(200, {{"status", "ok"}, {"fingerprint", s->fingerprint}});
}

HttpResponse InferenceService::attributes() const {
  return guarded(session(), [](const SessionModel& s) { return reply(200, {{"attributes", s.attribute_names}}); });
}

HttpResponse InferenceService::transfer(const std::string& body) const {
  return guarded(session(), [&](const SessionModel& s) {
    const json req = parse_body(body);
    const int size = s.config().image_size;
    const ImageTensor a = load_request_image(field(req, "image_a"), "image_a", size);
    const ImageTensor b = load_request_image(field(req, "image_b"), "image_b", size);
    const json& attrs = field(req, "attributes");
    if (!attrs.is_array() || attrs.empty()) throw HttpError(400, "attributes must be a non-empty array");
    std::vector<PartBlend> blends;
    for (const auto& v : attrs) blends.push_back({resolve_attribute(v, s), 1.0});
    if (auto it = req.find("alphas"); it != req.end() && !it->is_null()) {
      if (!it->is_array() || it->size() != blends.size())
        throw HttpError(400, "alphas must be an array with one value per attribute");
      for (std::size_t k = 0; k < blends.size(); ++k) {
        if (!(*it)[k].is_number()) throw HttpError(400, "alphas must be numbers");
        const double alpha = (*it)[k].get<double>();
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw HttpError(422, "alpha " + std::to_string(alpha) + " outside [0, 1]");
        blends[k].alpha = alpha;
      }
    }
    for (std::size_t k = 0; k < blends.size(); ++k)
      for (std::size_t m = 0; m < k; ++m)
        if (blends[k].attribute == blends[m].attribute) throw HttpError(400, "attribute listed twice");
    const auto r = elegant::transfer(s.model, to_batch(std::span(&a, 1)), to_batch(std::span(&b, 1)), blends);
    return reply(200, {{"image_c", png_b64(from_batch(r.c, 0))},
                       {"image_d", png_b64(from_batch(r.d, 0))},
                       {"residual_c", png_b64(residual_to_image(from_batch(r.residual_c, 0)))},
                       {"residual_d", png_b64(residual_to_image(from_batch(r.residual_d, 0)))},
                       {"fingerprint", s.fingerprint}});
  });
}

HttpResponse InferenceService::interpolate(const std::string& body) const {
  return guarded(session(), [&](const SessionModel& s) {
    const json req = parse_body(body);
    const int size = s.config().image_size;
    const ImageTensor a = load_request_image(field(req, "image"), "image", size);
    const json& refs_json = field(req, "refs");
    if (!refs_json.is_array() || refs_json.empty() || refs_json.size() > 3)
      throw HttpError(400, "refs must be an array of 1 to 3 images");
    std::vector<ImageTensor> refs;
    for (const auto& r : refs_json) refs.push_back(load_request_image(r, "refs[]", size));
    const int attr = resolve_attribute(field(req, "attribute"), s);
    const int steps = int_field(req, "steps", 4, false);
    if (steps < 2 || steps > 16) throw HttpError(400, "steps must be in [2, 16]");
    const ImageGrid g = interpolate_single(s.model, a, refs, attr, steps);
    return reply(200, {{"grid", png_b64(tile_grid(g))}, {"rows", g.rows}, {"cols", g.cols},
                       {"fingerprint", s.fingerprint}});
  });
}

HttpResponse InferenceService::interpolate2(const std::string& body) const {
  return guarded(session(), [&](const SessionModel& s) {
    const json req = parse_body(body);
    const int size = s.config().image_size;
    const ImageTensor a = load_request_image(field(req, "image"), "image", size);
    const ImageTensor r1 = load_request_image(field(req, "ref1"), "ref1", size);
    const ImageTensor r2 = load_request_image(field(req, "ref2"), "ref2", size);
    const int i = resolve_attribute(field(req, "attr1"), s);
    const int j = resolve_attribute(field(req, "attr2"), s);
    const int rows = int_field(req, "rows", 4, false), cols = int_field(req, "cols", 4, false);
    if (rows < 1 || rows > 16 || cols < 1 || cols > 16) throw HttpError(400, "rows and cols must be in [1, 16]");
    const ImageGrid g = interpolate_matrix(s.model, a, r1, i, r2, j, rows, cols);
    return reply(200, {{"grid", png_b64(tile_grid(g))}, {"rows", g.rows}, {"cols", g.cols},
                       {"fingerprint", s.fingerprint}});
  });
}

void InferenceService::install_routes() {
  server_ = std::make_unique<httplib::Server>();
  server_->set_payload_max_length(kMaxRequestBytes);
  auto bridge = [this](const httplib::Request& req, httplib::Response& res) {
    const HttpResponse r = handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  for (const char* p : {"/health", "/attributes"}) server_->Get(p, bridge);
  for (const char* p : {"/transfer", "/interpolate", "/interpolate2"}) server_->Post(p, bridge);
}

bool InferenceService::listen(const std::string& host, int port) {
  install_routes();
  return server_->listen(host, port);
}

int InferenceService::start_background(const std::string& host) {
  install_routes();
  const int port = server_->bind_to_any_port(host);
  if (port < 0) throw IoError("cannot bind " + host);
  thread_ = std::make_unique<std::thread>([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void InferenceService::stop() {
  if (server_) server_->stop();
  if (thread_ && thread_->joinable()) thread_->join();
  thread_.reset();
}

}  // namespace ELEGANT_ABI
}  // namespace elegant
