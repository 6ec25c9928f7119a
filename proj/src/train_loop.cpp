#include <cstdio>
#include <fstream>

#include "elegant/checkpoint.hpp"
#include "elegant/training.hpp"

namespace elegant {
inline namespace ELEGANT_ABI {

TrainState train_loop(const Dataset& dataset, const TrainConfig& config, const ModelConfig& model_config,
                      std::optional<TrainState> resume, const TrainLoopOptions& options) {
  config.validate();
  model_config.validate();
  const int n = model_config.n_attributes;
  if (static_cast<int>(dataset.table.attribute_names().size()) != n)
    throw ConfigError("dataset has " + std::to_string(dataset.table.attribute_names().size()) +
                      " attributes but model n_attributes is " + std::to_string(n));
  if (dataset.image_size != model_config.image_size)
    throw ConfigError("dataset image size " + std::to_string(dataset.image_size) + " does not match image_size " +
                      std::to_string(model_config.image_size));

  TrainState state = resume ? std::move(*resume) : TrainState::fresh(model_config, config);
  if (!(state.model.config == model_config)) throw ConfigError("resumed checkpoint has a different model config");
  PairSampler sampler(dataset.table, config.seed ^ 0x9e3779b97f4a7c15ULL);
  if (resume)
    sampler.restore(state.sampler);
  else
    state.sampler = sampler.state();
  for (int i = 0; i < n; ++i) sampler.require_nonempty(i);

  std::ofstream log;
  if (!options.loss_log.empty()) {
    if (options.loss_log.has_parent_path()) std::filesystem::create_directories(options.loss_log.parent_path());
    log.open(options.loss_log, std::ios::app);
    if (!log) throw IoError("cannot open loss log " + options.loss_log.string());
  }

  auto checkpoint = [&](const std::string& name) {
    save_checkpoint(options.out_dir / "checkpoints" / name, state, config, dataset.table.attribute_names(),
                    options.loss_log.string());
  };

  while (state.step < config.total_steps) {
    const int attribute = static_cast<int>(state.step % n);
    const auto [rows_a, rows_b] = sampler.sample(attribute, config.batch_size);
    const Batch a = dataset.gather(rows_a);
    const Batch b = dataset.gather(rows_b);
    const LossReport report = train_step(a, b, attribute, state, config);
    state.sampler = sampler.state();
    if (log) log << to_json_line(report) << '\n' << std::flush;
    if (options.on_step) options.on_step(report);
    if (!options.out_dir.empty()) {
      const bool periodic = config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0;
      if (periodic) {
        char name[32];
        std::snprintf(name, sizeof name, "step_%06lld", static_cast<long long>(state.step));
        checkpoint(name);
      }
      if (periodic || state.step == config.total_steps) checkpoint("latest");
    }
  }
  return state;
}

}  // namespace ELEGANT_ABI
}  // namespace elegant
