#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include "elegant/checkpoint.hpp"
#include "elegant/synthetic.hpp"
#include "elegant/training.hpp"
#include "test_util.hpp"

using namespace elegant;
using test::random_batch;
using test::tiny_config;
using test::tiny_train;

namespace {

Dataset synthetic_dataset(int count, int size = 16, std::uint64_t seed = 3) {
  SyntheticSpec spec;
  spec.image_size = size;
  spec.seed = seed;
  const SyntheticSet set = generate_synthetic(spec, count);
  Dataset d{set.table, size, {}};
  for (const auto& im : set.images) d.images.push_back(normalize(im));
  return d;
}

std::vector<LossReport> read_log(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<LossReport> out;
  for (std::string line; std::getline(in, line);) out.push_back(loss_report_from_json(line));
  return out;
}

bool grads_zero(const ParameterSet& ps) {
  for (const auto& p : ps)
    for (std::size_t k = 0; k < p.grad.numel(); ++k)
      if (p.grad[k] != 0) return false;
  return true;
}

}  // namespace

TEST_CASE("Adam matches a hand-rolled update") {
  ParameterSet ps;
  ps.add("w", {2});
  ps[0].value[0] = 1.0f;
  ps[0].value[1] = -2.0f;
  AdamMoments m = AdamMoments::zeros_like(ps);
  TrainConfig c;
  c.learning_rate = 0.1;

  double w[2] = {1.0, -2.0}, mm[2] = {0, 0}, vv[2] = {0, 0};
  const double grads[3][2] = {{0.5, -0.25}, {-1.0, 0.75}, {0.125, 2.0}};
  for (int t = 1; t <= 3; ++t) {
    for (int j = 0; j < 2; ++j) {
      ps[0].grad[j] = static_cast<real>(grads[t - 1][j]);
      const double g = ps[0].grad[j];
      mm[j] = 0.5 * mm[j] + 0.5 * g;
      vv[j] = 0.999 * vv[j] + 0.001 * g * g;
      const double mh = mm[j] / (1 - std::pow(0.5, t)), vh = vv[j] / (1 - std::pow(0.999, t));
      w[j] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    adam_update(ps, m, c);
    CHECK(m.step == t);
    for (int j = 0; j < 2; ++j) CHECK(ps[0].value[j] == doctest::Approx(w[j]).epsilon(1e-6));
  }
  // The first bias-corrected step has magnitude close to the learning rate.
  ParameterSet one;
  one.add("x", {1});
  one[0].grad[0] = 123.0f;
  AdamMoments m1 = AdamMoments::zeros_like(one);
  adam_update(one, m1, c);
  CHECK(one[0].value[0] == doctest::Approx(-0.1).epsilon(1e-6));

  AdamMoments wrong;
  CHECK_THROWS_AS(adam_update(ps, wrong, c), ContractError);
}

TEST_CASE("fresh model losses at the uninformative point") {
  const TrainState s = TrainState::fresh(tiny_config(), tiny_train());
  const Batch a = random_batch(3, 16, 2, 0, 1, 1), b = random_batch(3, 16, 2, 0, 0, 2);
  const LossReport r = evaluate_losses(s.model, a, b, 0, tiny_train());
  CHECK(r.d_total == doctest::Approx(8 * std::numbers::ln2).epsilon(1e-9));
  CHECK(r.g_adversarial == doctest::Approx(4 * std::numbers::ln2).epsilon(1e-9));
  CHECK(r.reconstruction == 0);
}

TEST_CASE("train step label contracts") {
  TrainState s = TrainState::fresh(tiny_config(), tiny_train());
  const Batch a = random_batch(2, 16, 2, 1, 1, 1), b = random_batch(2, 16, 2, 1, 0, 2);
  CHECK_THROWS_AS(train_step(a, b, 0, s, tiny_train()), ContractError);
  CHECK_THROWS_AS(train_step(b, a, 1, s, tiny_train()), ContractError);
  CHECK_THROWS_AS(train_step(a, b, 2, s, tiny_train()), IndexError);
  CHECK_NOTHROW(train_step(a, b, 1, s, tiny_train()));
  CHECK(s.step == 1);
  CHECK(s.attribute_steps == std::vector<std::int64_t>{0, 1});
}

TEST_CASE("generated images are detached from the discriminator update") {
  // Zero-initialised final layers would make every generator gradient vanish.
  Model m = Model::create(tiny_config(), 3, InitOptions{false});
  const Batch a = random_batch(2, 16, 2, 0, 1, 3), b = random_batch(2, 16, 2, 0, 0, 4);
  for (auto& [name, p] : m.networks()) p->zero_grad();
  const GeneratorForward f = generator_forward(m, a, b, 0);
  discriminator_pass(m, f, a, b, tiny_train(), true);
  CHECK(grads_zero(m.encoder.params()));
  CHECK(grads_zero(m.decoder.params()));
  CHECK_FALSE(grads_zero(m.d1.params()));
  CHECK_FALSE(grads_zero(m.d2.params()));

  // Generator gradients flow through the discriminators without touching theirs.
  for (auto& [name, p] : m.networks()) p->zero_grad();
  generator_pass(m, f, a, b, tiny_train(), true);
  CHECK(grads_zero(m.d1.params()));
  CHECK(grads_zero(m.d2.params()));
  CHECK_FALSE(grads_zero(m.encoder.params()));
  CHECK_FALSE(grads_zero(m.decoder.params()));
}

TEST_CASE("a train step moves every network") {
  TrainState s = TrainState::fresh(tiny_config(), tiny_train());
  const TrainState before = s;
  const Batch a = random_batch(2, 16, 2, 0, 1, 5), b = random_batch(2, 16, 2, 0, 0, 6);
  // From zero init the encoder only receives gradient once the decoder's last layer has moved.
  train_step(a, b, 0, s, tiny_train());
  train_step(a, b, 0, s, tiny_train());
  const auto n0 = before.model.networks(), n1 = std::as_const(s.model).networks();
  for (std::size_t k = 0; k < n0.size(); ++k) CHECK_FALSE(n0[k].second->same_values(*n1[k].second));
}

TEST_CASE("non-finite losses raise DivergenceError naming the term") {
  TrainState s = TrainState::fresh(tiny_config(), tiny_train());
  Batch a = random_batch(2, 16, 2, 0, 1, 7), b = random_batch(2, 16, 2, 0, 0, 8);
  a.images[0] = std::nanf("");
  try {
    train_step(a, b, 0, s, tiny_train());
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.term == "d1_loss");
  }
}

TEST_CASE("loss log lines round-trip") {
  LossReport r{12, 1, 1.25, 2.5, 3.75, 0.125, 4.5, 4.625};
  CHECK(loss_report_from_json(to_json_line(r)) == r);
}

TEST_CASE("train config validation") {
  auto bad = [](auto mutate, const char* field) {
    TrainConfig c;
    mutate(c);
    try {
      c.validate();
      FAIL("no error for " << field);
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };
  bad([](TrainConfig& c) { c.learning_rate = 0; }, "learning_rate");
  bad([](TrainConfig& c) { c.adam_beta1 = 1; }, "adam_beta1");
  bad([](TrainConfig& c) { c.batch_size = 0; }, "batch_size");
  bad([](TrainConfig& c) { c.total_steps = 0; }, "total_steps");
  bad([](TrainConfig& c) { c.log_clamp_eps = 0; }, "log_clamp_eps");
  bad([](TrainConfig& c) { c.recon_weight = -1; }, "recon_weight");
}

TEST_CASE("training loop") {
  const Dataset data = synthetic_dataset(24);
  const ModelConfig mc = tiny_config();
  test::TempDir dir("train");

  SUBCASE("attributes are visited round-robin") {
    std::vector<int> seen;
    TrainLoopOptions o;
    o.on_step = [&](const LossReport& r) { seen.push_back(r.attribute_index); };
    const TrainState s = train_loop(data, tiny_train(5), mc, std::nullopt, o);
    CHECK(seen == std::vector<int>{0, 1, 0, 1, 0});
    CHECK(s.attribute_steps == std::vector<std::int64_t>{3, 2});
  }

  SUBCASE("seeded runs are identical and resume continues bit-identically") {
    TrainConfig tc = tiny_train(6);
    tc.checkpoint_every = 3;
    TrainLoopOptions o1{dir / "a", dir / "a" / "loss.jsonl", {}};
    TrainLoopOptions o2{dir / "b", dir / "b" / "loss.jsonl", {}};
    const TrainState s1 = train_loop(data, tc, mc, std::nullopt, o1);
    const TrainState s2 = train_loop(data, tc, mc, std::nullopt, o2);
    const auto log1 = read_log(o1.loss_log), log2 = read_log(o2.loss_log);
    REQUIRE(log1.size() == 6);
    CHECK(log1 == log2);

    LoadedCheckpoint ck = load_checkpoint(dir / "a" / "checkpoints" / "step_000003");
    CHECK(ck.state.step == 3);
    TrainLoopOptions o3{dir / "c", dir / "c" / "loss.jsonl", {}};
    const TrainState s3 = train_loop(data, tc, mc, std::move(ck.state), o3);
    const auto log3 = read_log(o3.loss_log);
    REQUIRE(log3.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) CHECK(log3[k] == log1[k + 3]);
    const auto n1 = s1.model.networks(), n3 = s3.model.networks();
    for (std::size_t k = 0; k < n1.size(); ++k) CHECK(n1[k].second->same_values(*n3[k].second));
    CHECK(s1.sampler == s3.sampler);
  }

  SUBCASE("mismatched datasets are rejected") {
    CHECK_THROWS_AS(train_loop(data, tiny_train(), tiny_config(3), std::nullopt, {}), ConfigError);
    ModelConfig big = mc;
    big.image_size = 32;
    CHECK_THROWS_AS(train_loop(data, tiny_train(), big, std::nullopt, {}), ConfigError);
  }

  SUBCASE("an attribute without negatives is reported by name") {
    Dataset all_pos = data;
    AttributeTable t(data.table.attribute_names());
    for (std::size_t k = 0; k < data.table.size(); ++k) t.add(data.table.filenames()[k], AttributeLabelVector{{1, data.table.labels()[k].bits[1]}});
    all_pos.table = t;
    try {
      train_loop(all_pos, tiny_train(), mc, std::nullopt, {});
      FAIL("expected DatasetError");
    } catch (const DatasetError& e) {
      CHECK(std::string(e.what()).find("bangs") != std::string::npos);
    }
  }
}
