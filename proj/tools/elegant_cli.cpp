// elegant: data preparation, training, transfer, interpolation, evaluation
// and serving from one binary. Exit codes: 1 configuration, 2 data,
// 3 runtime/numeric failures.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "elegant/checkpoint.hpp"
#include "elegant/data.hpp"
#include "elegant/error.hpp"
#include "elegant/evaluation.hpp"
#include "elegant/run_config.hpp"
#include "elegant/service.hpp"
#include "elegant/synthetic.hpp"
#include "elegant/training.hpp"

namespace fs = std::filesystem;
using namespace elegant;

namespace {

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

void write_effective(const fs::path& path, const std::map<std::string, std::string>& values) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  YAML::Emitter e;
  e << YAML::BeginMap;
  for (const auto& [k, v] : values) e << YAML::Key << k << YAML::Value << v;
  e << YAML::EndMap;
  std::ofstream(path) << e.c_str() << '\n';
}

ImageTensor load_input(const fs::path& path, int size) {
  return normalize(resize_bilinear(center_square_crop(read_image(path)), size, size));
}

Tensor as_batch(const ImageTensor& im) { return to_batch(std::span(&im, 1)); }

int attribute_by_name(const std::vector<std::string>& names, const std::string& name) {
  for (std::size_t k = 0; k < names.size(); ++k)
    if (names[k] == name) return static_cast<int>(k);
  std::string valid;
  for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("--attr: unknown attribute '" + name + "'; valid attributes: " + valid);
}

struct Args {
  // prepare-data
  std::string attr_file, landmark_file, image_dir, out_dir;
  int size = 256;
  // synth
  int count = 2000;
  std::string attrs = "bangs,smile";
  std::uint64_t seed = 0;
  // train
  std::string config, resume;
  std::vector<std::string> overrides;
  // inference
  std::string ckpt, input, ref, refs, ref1, ref2, attr, attr1, attr2, out;
  std::vector<double> alphas;
  bool chain = false;
  int steps = 4, rows = 4, cols = 4;
  // eval
  std::string data, compare, report, extractor = "random_projection";
  std::size_t max_pairs = 0;
  // serve
  std::string host = "127.0.0.1";
  int port = 8080;
};

int cmd_prepare(const Args& a) {
  const AttributeTable table = read_attribute_file(a.attr_file);
  std::ifstream lin(a.landmark_file);
  if (!lin) throw IoError("cannot open landmark file " + a.landmark_file);
  std::map<std::string, LandmarkSet> marks;
  for (auto& [name, set] : parse_landmark_file(lin)) marks[name] = set;
  const fs::path out(a.out_dir);
  fs::create_directories(out / "images");
  AttributeTable aligned(table.attribute_names());
  for (std::size_t r = 0; r < table.size(); ++r) {
    const std::string& name = table.filenames()[r];
    auto it = marks.find(name);
    if (it == marks.end()) throw DatasetError("no landmarks for " + name);
    const AlignmentResult res = align_and_crop(read_image(fs::path(a.image_dir) / name), it->second, a.size);
    const std::string png = fs::path(name).replace_extension(".png").string();
    write_png(out / "images" / png, res.crop);
    aligned.add(png, table.labels()[r]);
    if ((r + 1) % 1000 == 0) std::cerr << "aligned " << (r + 1) << "/" << table.size() << "\n";
  }
  write_attribute_file(out / "list_attr.txt", aligned);
  write_effective(out / "effective_config.yaml", {{"command", "prepare-data"},
                                                  {"attr", a.attr_file},
                                                  {"landmarks", a.landmark_file},
                                                  {"images", a.image_dir},
                                                  {"size", std::to_string(a.size)}});
  std::cerr << "wrote " << aligned.size() << " aligned crops to " << out << "\n";
  return 0;
}

int cmd_synth(const Args& a) {
  SyntheticSpec spec;
  spec.image_size = a.size;
  spec.attributes = split_commas(a.attrs);
  spec.seed = a.seed;
  if (a.count < 2) throw ConfigError("--count must be >= 2");
  const SyntheticOracle oracle = write_synthetic(a.out_dir, spec, a.count);
  write_effective(fs::path(a.out_dir) / "effective_config.yaml", {{"command", "synth"},
                                                                  {"count", std::to_string(a.count)},
                                                                  {"size", std::to_string(a.size)},
                                                                  {"attrs", a.attrs},
                                                                  {"seed", std::to_string(a.seed)}});
  std::cerr << "wrote " << a.count << " images to " << a.out_dir << "; oracle thresholds";
  for (double t : oracle.thresholds()) std::cerr << " " << t;
  std::cerr << "\n";
  return 0;
}

int cmd_train(const Args& a) {
  RunConfig rc = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    rc.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!a.out_dir.empty()) rc.out_dir = a.out_dir;
  rc.validate();

  AttributeTable table = read_attribute_file(rc.resolved_attr_file());
  if (!rc.attributes.empty()) table = table.select(rc.attributes);
  rc.model.n_attributes = static_cast<int>(table.attribute_names().size());
  rc.model.validate();

  std::optional<TrainState> resume;
  if (!a.resume.empty()) {
    LoadedCheckpoint ck = load_checkpoint(a.resume);
    if (!(ck.manifest.model_config == rc.model))
      throw ConfigError("--resume: checkpoint model config differs from the run config");
    if (ck.manifest.attribute_names != table.attribute_names())
      throw ConfigError("--resume: checkpoint attributes differ from the dataset");
    resume = std::move(ck.state);
    std::cerr << "resuming from step " << resume->step << "\n";
  }

  const fs::path out(rc.out_dir);
  fs::create_directories(out);
  write_run_config(out / "config.yaml", rc);
  std::cerr << "loading " << table.size() << " images from " << rc.resolved_image_dir() << "\n";
  const Dataset data = load_dataset(rc.resolved_image_dir(), table, rc.model.image_size);

  TrainLoopOptions opts;
  opts.out_dir = out;
  opts.loss_log = out / "loss_log.jsonl";
  const auto t0 = std::chrono::steady_clock::now();
  opts.on_step = [&](const LossReport& r) {
    if (r.step % 50 == 0 || r.step == rc.train.total_steps) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "step %6lld attr %d  d %.4f  rec %.4f  g_adv %.4f  %.0fs\n",
                   static_cast<long long>(r.step), r.attribute_index, r.d_total, r.reconstruction, r.g_adversarial,
                   secs);
    }
  };
  const TrainState final_state = train_loop(data, rc.train, rc.model, std::move(resume), opts);
  std::cerr << "finished at step " << final_state.step << "; checkpoint " << (out / "checkpoints" / "latest") << "\n";
  return 0;
}

int cmd_transfer(const Args& a) {
  const auto s = SessionModel::load(a.ckpt);
  const int size = s->config().image_size;
  const ImageTensor ia = load_input(a.input, size), ib = load_input(a.ref, size);
  const auto names = split_commas(a.attr);
  if (names.empty()) throw ConfigError("--attr is required");
  if (!a.alphas.empty() && a.alphas.size() != names.size())
    throw ConfigError("--alpha: give one value per attribute");
  std::vector<PartBlend> blends;
  for (std::size_t k = 0; k < names.size(); ++k) {
    const double alpha = a.alphas.empty() ? 1.0 : a.alphas[k];
    if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("--alpha: value outside [0, 1]");
    blends.push_back({attribute_by_name(s->attribute_names, names[k]), alpha});
  }

  TransferResult r;
  if (a.chain) {
    Tensor c = as_batch(ia), d = as_batch(ib);
    for (const auto& b : blends) {
      const TransferResult step = transfer(s->model, c, d, std::span(&b, 1));
      c = step.c, d = step.d;
    }
    // Net change over the whole chain.
    auto minus = [](Tensor x, const Tensor& y) {
      for (std::size_t k = 0; k < x.numel(); ++k) x[k] -= y[k];
      return x;
    };
    r.residual_c = minus(c, as_batch(ia));
    r.residual_d = minus(d, as_batch(ib));
    r.c = std::move(c), r.d = std::move(d);
  } else {
    r = transfer(s->model, as_batch(ia), as_batch(ib), blends);
  }
  const fs::path out(a.out_dir.empty() ? "." : a.out_dir);
  fs::create_directories(out);
  write_png(out / "C.png", denormalize(from_batch(r.c, 0)));
  write_png(out / "D.png", denormalize(from_batch(r.d, 0)));
  write_png(out / "residual_C.png", residual_to_image(from_batch(r.residual_c, 0)));
  write_png(out / "residual_D.png", residual_to_image(from_batch(r.residual_d, 0)));
  write_png(out / "A_reconstruction.png", denormalize(from_batch(reconstruct(s->model, as_batch(ia)), 0)));
  write_effective(out / "effective_config.yaml", {{"command", "transfer"},
                                                  {"ckpt", a.ckpt},
                                                  {"fingerprint", s->fingerprint},
                                                  {"input", a.input},
                                                  {"ref", a.ref},
                                                  {"attr", a.attr},
                                                  {"chain", a.chain ? "true" : "false"}});
  std::cerr << "wrote C.png, D.png and residuals to " << out << "\n";
  return 0;
}

int cmd_interp(const Args& a) {
  const auto s = SessionModel::load(a.ckpt);
  const int size = s->config().image_size;
  std::vector<ImageTensor> refs;
  for (const auto& p : split_commas(a.refs)) refs.push_back(load_input(p, size));
  const int attr = attribute_by_name(s->attribute_names, a.attr);
  const ImageGrid g = interpolate_single(s->model, load_input(a.input, size), refs, attr, a.steps);
  write_png(a.out, tile_grid(g));
  write_effective(fs::path(a.out).string() + ".config.yaml",
                  {{"command", "interp"}, {"ckpt", a.ckpt}, {"fingerprint", s->fingerprint}, {"input", a.input},
                   {"refs", a.refs}, {"attr", a.attr}, {"steps", std::to_string(a.steps)}});
  std::cerr << "wrote " << g.rows << "x" << g.cols << " grid to " << a.out << "\n";
  return 0;
}

int cmd_interp2(const Args& a) {
  const auto s = SessionModel::load(a.ckpt);
  const int size = s->config().image_size;
  const int i = attribute_by_name(s->attribute_names, a.attr1), j = attribute_by_name(s->attribute_names, a.attr2);
  const ImageGrid g = interpolate_matrix(s->model, load_input(a.input, size), load_input(a.ref1, size), i,
                                         load_input(a.ref2, size), j, a.rows, a.cols);
  write_png(a.out, tile_grid(g));
  write_effective(fs::path(a.out).string() + ".config.yaml",
                  {{"command", "interp2"}, {"ckpt", a.ckpt}, {"fingerprint", s->fingerprint}, {"input", a.input},
                   {"ref1", a.ref1}, {"attr1", a.attr1}, {"ref2", a.ref2}, {"attr2", a.attr2},
                   {"rows", std::to_string(a.rows)}, {"cols", std::to_string(a.cols)}});
  std::cerr << "wrote " << g.rows << "x" << g.cols << " grid to " << a.out << "\n";
  return 0;
}

Dataset load_data_dir(const fs::path& dir, int size_hint) {
  const AttributeTable table = read_attribute_file(dir / "list_attr.txt");
  int size = size_hint;
  if (size <= 0) {
    if (table.size() == 0) throw DatasetError("empty dataset " + dir.string());
    size = read_image(dir / "images" / table.filenames()[0]).width;
  }
  return load_dataset(dir / "images", table, size);
}

int cmd_eval(const Args& a) {
  if (a.report.empty()) throw ConfigError("--report is required");
  const auto extractor = make_feature_extractor(a.extractor);
  nlohmann::json out;
  if (!a.compare.empty()) {
    out = compare_datasets(load_data_dir(a.data, 0), load_data_dir(a.compare, 0), *extractor);
  } else {
    if (a.ckpt.empty()) throw ConfigError("--ckpt is required unless --compare is given");
    const auto s = SessionModel::load(a.ckpt);
    const SyntheticOracle oracle = SyntheticOracle::load(fs::path(a.data) / "oracle.json");
    if (oracle.spec().attributes != s->attribute_names)
      throw ConfigError("oracle attributes do not match the checkpoint's attributes");
    const Dataset data = load_data_dir(a.data, s->config().image_size);
    out = evaluate_model(s->model, s->attribute_names, data, oracle, *extractor, a.max_pairs).to_json();
    out["fingerprint"] = s->fingerprint;
  }
  const fs::path report(a.report);
  if (report.has_parent_path()) fs::create_directories(report.parent_path());
  std::ofstream(report) << out.dump(2) << '\n';
  write_effective(report.string() + ".config.yaml", {{"command", "eval"},
                                                     {"ckpt", a.ckpt},
                                                     {"data", a.data},
                                                     {"compare", a.compare},
                                                     {"extractor", a.extractor},
                                                     {"max_pairs", std::to_string(a.max_pairs)}});
  std::cerr << out.dump(2) << "\n";
  return 0;
}

int cmd_serve(const Args& a) {
  InferenceService service(SessionModel::load(a.ckpt));
  std::cerr << "serving " << a.ckpt << " on " << a.host << ":" << a.port << "\n";
  if (!service.listen(a.host, a.port)) throw IoError("cannot listen on " + a.host + ":" + std::to_string(a.port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exemplar-based face attribute transfer"};
  app.require_subcommand(1);
  Args a;

  auto* prep = app.add_subcommand("prepare-data", "Align CelebA-format images to square crops");
  prep->add_option("--attr", a.attr_file, "list_attr_celeba.txt")->required();
  prep->add_option("--landmarks", a.landmark_file, "list_landmarks_celeba.txt")->required();
  prep->add_option("--images", a.image_dir, "Source image directory")->required();
  prep->add_option("--out", a.out_dir, "Output directory")->required();
  prep->add_option("--size", a.size, "Crop side")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "Render the synthetic benchmark");
  synth->add_option("--out", a.out_dir, "Output directory")->required();
  synth->add_option("--count", a.count, "Number of images")->capture_default_str();
  synth->add_option("--size", a.size, "Image side")->capture_default_str();
  synth->add_option("--attrs", a.attrs, "Comma list of bangs, eyeglasses, smile, mustache")->capture_default_str();
  synth->add_option("--seed", a.seed, "Render seed")->capture_default_str();

  auto* train = app.add_subcommand("train", "Train from a YAML run config");
  train->add_option("--config", a.config, "Run config (flat YAML)");
  train->add_option("--resume", a.resume, "Checkpoint directory to continue from");
  train->add_option("--set", a.overrides, "Override a config key, key=value (repeatable)");
  train->add_option("--out", a.out_dir, "Override out_dir");

  auto* tr = app.add_subcommand("transfer", "Exchange attributes between two images");
  tr->add_option("--ckpt", a.ckpt, "Checkpoint directory")->required();
  tr->add_option("--input", a.input, "Image A")->required();
  tr->add_option("--ref", a.ref, "Reference image B")->required();
  tr->add_option("--attr", a.attr, "Attribute name(s), comma separated")->required();
  tr->add_option("--alpha", a.alphas, "Blend factor per attribute, comma separated")->delimiter(',');
  tr->add_flag("--chain", a.chain, "One full transfer per attribute instead of a joint exchange");
  tr->add_option("--out", a.out_dir, "Output directory");

  auto* ip = app.add_subcommand("interp", "Interpolate one attribute towards 1-3 references");
  ip->add_option("--ckpt", a.ckpt, "Checkpoint directory")->required();
  ip->add_option("--input", a.input, "Image A")->required();
  ip->add_option("--refs", a.refs, "Reference images, comma separated")->required();
  ip->add_option("--attr", a.attr, "Attribute name")->required();
  ip->add_option("--steps", a.steps, "Steps per axis")->capture_default_str();
  ip->add_option("--out", a.out, "Grid PNG")->required();

  auto* ip2 = app.add_subcommand("interp2", "Interpolate two attributes on a grid");
  ip2->add_option("--ckpt", a.ckpt, "Checkpoint directory")->required();
  ip2->add_option("--input", a.input, "Image A")->required();
  ip2->add_option("--ref1", a.ref1, "Reference for the row attribute")->required();
  ip2->add_option("--attr1", a.attr1, "Row attribute")->required();
  ip2->add_option("--ref2", a.ref2, "Reference for the column attribute")->required();
  ip2->add_option("--attr2", a.attr2, "Column attribute")->required();
  ip2->add_option("--rows", a.rows, "Rows")->capture_default_str();
  ip2->add_option("--cols", a.cols, "Columns")->capture_default_str();
  ip2->add_option("--out", a.out, "Grid PNG")->required();

  auto* ev = app.add_subcommand("eval", "FID and transfer accuracy report");
  ev->add_option("--ckpt", a.ckpt, "Checkpoint directory");
  ev->add_option("--data", a.data, "Synthetic dataset directory")->required();
  ev->add_option("--compare", a.compare, "Second dataset: report FID between the two datasets only");
  ev->add_option("--report", a.report, "Report JSON path")->required();
  ev->add_option("--extractor", a.extractor, "Feature extractor")->capture_default_str();
  ev->add_option("--max-pairs", a.max_pairs, "Cap on transfer pairs per attribute (0 = all)");

  auto* sv = app.add_subcommand("serve", "HTTP inference service");
  sv->add_option("--ckpt", a.ckpt, "Checkpoint directory")->required();
  sv->add_option("--port", a.port, "Port")->capture_default_str();
  sv->add_option("--host", a.host, "Bind address")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*prep) return cmd_prepare(a);
    if (*synth) return cmd_synth(a);
    if (*train) return cmd_train(a);
    if (*tr) return cmd_transfer(a);
    if (*ip) return cmd_interp(a);
    if (*ip2) return cmd_interp2(a);
    if (*ev) return cmd_eval(a);
    if (*sv) return cmd_serve(a);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
