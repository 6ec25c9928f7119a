#include <doctest.h>

#include "elegant/evaluation.hpp"
#include "elegant/service.hpp"
#include "test_util.hpp"

// After Eigen: resolv.h defines a macro that collides with Eigen internals.
#include <httplib.h>

using namespace elegant;
using nlohmann::json;

namespace {

std::shared_ptr<const SessionModel> session(bool identity = false) {
  auto s = std::make_shared<SessionModel>(SessionModel{
      Model::create(test::tiny_config(), 5, InitOptions{identity}), {"bangs", "smile"}, "0123456789abcdef"});
  return s;
}

ImageU8 noise(int size, std::uint64_t seed) {
  ImageU8 im(size, size);
  Rng rng(seed);
  for (auto& p : im.pixels) p = static_cast<std::uint8_t>(rng.index(256));
  return im;
}

std::string png64(const ImageU8& im) { return base64_encode(encode_png(im)); }
ImageU8 unpng64(const json& v) { return decode_image(base64_decode(v.get<std::string>())); }

struct Reply {
  int status;
  json body;
};

Reply call(const InferenceService& svc, const std::string& method, const std::string& path, const json& body = {}) {
  const HttpResponse r = svc.handle(method, path, body.is_null() ? "" : body.dump());
  return {r.status, json::parse(r.body)};
}

}  // namespace

TEST_CASE("base64") {
  CHECK(base64_encode("") == "");
  CHECK(base64_encode("f") == "Zg==");
  CHECK(base64_encode("fo") == "Zm8=");
  CHECK(base64_encode("foo") == "Zm9v");
  CHECK(base64_encode("foobar") == "Zm9vYmFy");
  for (const char* s : {"", "f", "fo", "foo", "foob", "fooba", "foobar"}) CHECK(base64_decode(base64_encode(s)) == s);
  std::string bin;
  for (int k = 0; k < 256; ++k) bin += static_cast<char>(k);
  CHECK(base64_decode(base64_encode(bin)) == bin);
  CHECK_THROWS_AS(base64_decode("Zm9v!"), ParseError);
  CHECK_THROWS_AS(base64_decode("Z==="), ParseError);
  CHECK_THROWS_AS(base64_decode("Zg==Zg=="), ParseError);
}

TEST_CASE("routes without a model") {
  InferenceService svc;
  const Reply h = call(svc, "GET", "/health");
  CHECK(h.status == 503);
  CHECK(h.body["fingerprint"].is_null());
  CHECK(call(svc, "GET", "/attributes").status == 503);
  CHECK(call(svc, "POST", "/transfer", json::object()).status == 503);
  CHECK(call(svc, "GET", "/nope").status == 404);
}

TEST_CASE("routes with a model") {
  InferenceService svc(session());
  const ImageU8 a = noise(16, 1), b = noise(16, 2);

  SUBCASE("health and attributes") {
    const Reply h = call(svc, "GET", "/health");
    CHECK(h.status == 200);
    CHECK(h.body["status"] == "ok");
    CHECK(h.body["fingerprint"] == "0123456789abcdef");
    CHECK(call(svc, "GET", "/attributes").body["attributes"] == json{"bangs", "smile"});
  }
  SUBCASE("transfer matches the library") {
    const Reply r = call(svc, "POST", "/transfer",
                         {{"image_a", png64(a)}, {"image_b", png64(b)}, {"attributes", {"smile"}}, {"alphas", {0.5}}});
    REQUIRE(r.status == 200);
    const std::vector<ImageTensor> va{normalize(a)}, vb{normalize(b)};
    const PartBlend blend[] = {{1, 0.5}};
    const TransferResult t = transfer(svc.session()->model, to_batch(va), to_batch(vb), blend);
    CHECK(unpng64(r.body["image_c"]) == denormalize(from_batch(t.c, 0)));
    CHECK(unpng64(r.body["image_d"]) == denormalize(from_batch(t.d, 0)));
    CHECK(unpng64(r.body["residual_c"]) == residual_to_image(from_batch(t.residual_c, 0)));
    // Index and name address the same attribute.
    const Reply by_index = call(svc, "POST", "/transfer",
                                {{"image_a", png64(a)}, {"image_b", png64(b)}, {"attributes", {1}}, {"alphas", {0.5}}});
    CHECK(by_index.body["image_c"] == r.body["image_c"]);
  }
  SUBCASE("inputs are cropped and resized to the model size") {
    const Reply r = call(svc, "POST", "/transfer",
                         {{"image_a", png64(noise(40, 3))}, {"image_b", png64(b)}, {"attributes", {0}}});
    REQUIRE(r.status == 200);
    CHECK(unpng64(r.body["image_c"]).width == 16);
  }
  SUBCASE("interpolation grids") {
    const Reply r = call(svc, "POST", "/interpolate",
                         {{"image", png64(a)}, {"refs", {png64(b)}}, {"attribute", "bangs"}, {"steps", 5}});
    REQUIRE(r.status == 200);
    CHECK(r.body["rows"] == 1);
    CHECK(r.body["cols"] == 5);
    CHECK(unpng64(r.body["grid"]).width == 5 * 16 + 4 * 2);
    const Reply m = call(svc, "POST", "/interpolate2",
                         {{"image", png64(a)}, {"ref1", png64(b)}, {"attr1", 0}, {"ref2", png64(b)}, {"attr2", 1},
                          {"rows", 2}, {"cols", 3}});
    REQUIRE(m.status == 200);
    CHECK(unpng64(m.body["grid"]).height == 2 * 16 + 2);
  }
  SUBCASE("error statuses") {
    const json ok = {{"image_a", png64(a)}, {"image_b", png64(b)}, {"attributes", {0}}};
    auto with = [&](const char* key, const json& v) {
      json j = ok;
      j[key] = v;
      return call(svc, "POST", "/transfer", j);
    };
    CHECK(svc.handle("POST", "/transfer", "{not json").status == 400);
    CHECK(svc.handle("POST", "/transfer", "[1]").status == 400);
    CHECK(call(svc, "POST", "/transfer", {{"image_a", png64(a)}}).status == 400);
    CHECK(with("image_a", "!!!").status == 400);
    CHECK(with("image_b", base64_encode("not a png")).status == 400);
    CHECK(with("attributes", json::array()).status == 400);
    CHECK(with("attributes", {"hat"}).status == 404);
    CHECK(with("attributes", {2}).status == 404);
    CHECK(with("attributes", {0, "bangs"}).status == 400);
    CHECK(with("alphas", {1.5}).status == 422);
    CHECK(with("alphas", {-0.1}).status == 422);
    CHECK(with("alphas", {0.5, 0.5}).status == 400);
    const Reply e = with("attributes", {"hat"});
    CHECK(e.body["error"].get<std::string>().find("hat") != std::string::npos);
    CHECK(call(svc, "POST", "/interpolate", {{"image", png64(a)}, {"refs", json::array()}, {"attribute", 0}}).status ==
          400);
    CHECK(call(svc, "POST", "/interpolate", {{"image", png64(a)}, {"refs", {png64(b)}}, {"attribute", 0}, {"steps", 1}})
              .status == 400);
    CHECK(svc.handle("POST", "/transfer", std::string(kMaxRequestBytes + 1, ' ')).status == 413);
  }
  SUBCASE("reload swaps the model") {
    svc.reload(nullptr);
    CHECK(call(svc, "GET", "/health").status == 503);
    svc.reload(session());
    CHECK(call(svc, "GET", "/health").status == 200);
  }
}

TEST_CASE("served over HTTP") {
  InferenceService svc(session(true));
  const int port = svc.start_background();
  REQUIRE(port > 0);
  httplib::Client cli("127.0.0.1", port);
  auto h = cli.Get("/health");
  REQUIRE(h);
  CHECK(h->status == 200);
  CHECK(json::parse(h->body)["status"] == "ok");

  const ImageU8 a = noise(16, 4), b = noise(16, 5);
  const json req = {{"image_a", png64(a)}, {"image_b", png64(b)}, {"attributes", {"bangs"}}};
  auto t = cli.Post("/transfer", req.dump(), "application/json");
  REQUIRE(t);
  CHECK(t->status == 200);
  // The identity-initialised model gives back its inputs.
  CHECK(unpng64(json::parse(t->body)["image_c"]) == a);

  auto bad = cli.Post("/transfer", "{}", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  CHECK(json::parse(bad->body).contains("error"));
  svc.stop();
}
