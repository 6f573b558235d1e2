#include "mtg/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "mtg/checkpoint.hpp"
#include "mtg/error.hpp"
#include "mtg/log.hpp"

namespace mtg {

namespace {

constexpr std::uint64_t kInitStream = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kShuffleStream = 0xbf58476d1ce4e5b9ULL;

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot open " + tmp.string() + " for writing");
    out << text;
    if (!out) fail(ErrorCode::io, "failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::io, "cannot move " + tmp.string() + " into place: " + ec.message());
}

std::string epoch_name(std::uint32_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03u.mtgp", epoch);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(alpha > 0.0)) fail(ErrorCode::invariant, "alpha must be positive");
  if (!(learning_rate > 0.0)) fail(ErrorCode::invariant, "learning rate must be positive");
  if (epochs == 0) fail(ErrorCode::invariant, "epochs must be positive");
  if (lr_decay_every == 0 || epochs % lr_decay_every != 0) {
    fail(ErrorCode::invariant, "lr decay interval must divide the number of epochs");
  }
  if (!(lr_decay_factor > 0.0)) fail(ErrorCode::invariant, "lr decay factor must be positive");
  if (!(tau > 0.0)) fail(ErrorCode::invariant, "tau must be positive");
  if (batch_size == 0) fail(ErrorCode::invariant, "batch size must be positive");
  if (feature_dim == 0) fail(ErrorCode::invariant, "feature_dim must be positive");
  if (threads == 0) fail(ErrorCode::invariant, "threads must be positive");
}

LossOptions TrainConfig::loss_options() const {
  LossOptions o;
  o.alpha = alpha;
  o.use_consistent_pair_term = use_consistent_pair_term;
  return o;
}

nlohmann::json to_json(const TrainConfig& cfg) {
  nlohmann::json j = {
      {"alpha", cfg.alpha},
      {"learning_rate", cfg.learning_rate},
      {"epochs", cfg.epochs},
      {"lr_decay_every", cfg.lr_decay_every},
      {"lr_decay_factor", cfg.lr_decay_factor},
      {"beta1", cfg.adamw.beta1},
      {"beta2", cfg.adamw.beta2},
      {"eps", cfg.adamw.eps},
      {"weight_decay", cfg.adamw.weight_decay},
      {"tau", cfg.tau},
      {"train_tau", cfg.train_tau},
      {"batch_size", cfg.batch_size},
      {"seed", cfg.seed},
      {"use_consistent_pair_term", cfg.use_consistent_pair_term},
      {"feature_dim", cfg.feature_dim},
  };
  if (cfg.max_steps) j["max_steps"] = *cfg.max_steps;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.alpha = j.value("alpha", c.alpha);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
  c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
  c.adamw.beta1 = j.value("beta1", c.adamw.beta1);
  c.adamw.beta2 = j.value("beta2", c.adamw.beta2);
  c.adamw.eps = j.value("eps", c.adamw.eps);
  c.adamw.weight_decay = j.value("weight_decay", c.adamw.weight_decay);
  c.tau = j.value("tau", c.tau);
  c.train_tau = j.value("train_tau", c.train_tau);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.use_consistent_pair_term = j.value("use_consistent_pair_term", c.use_consistent_pair_term);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.threads = j.value("threads", c.threads);
  if (j.contains("max_steps") && !j["max_steps"].is_null()) c.max_steps = j["max_steps"].get<std::uint64_t>();
  c.validate();
  return c;
}

// --- sources ---------------------------------------------------------------

ManifestSource::ManifestSource(std::vector<SampleRecord> records, std::filesystem::path base_dir, bool load_consistent,
                               std::uint32_t grid)
    : base_dir_(std::move(base_dir)), load_consistent_(load_consistent), grid_(grid) {
  for (auto& r : records) {
    if (r.has_inconsistent_pair() && r.correspondences) records_.push_back(std::move(r));
  }
  if (records_.empty()) fail(ErrorCode::empty_input, "manifest holds no records with an inconsistent pair");
}

ManifestSource ManifestSource::from_file(const std::filesystem::path& manifest, bool load_consistent) {
  auto records = load_manifest(manifest);
  return ManifestSource(std::move(records), manifest.parent_path(), load_consistent);
}

TrainingSample ManifestSource::load(std::size_t index) const {
  const auto& r = records_.at(index);
  const auto i1 = load_stack(resolve(base_dir_, r.inconsistent_1->stack_path));
  const auto i2 = load_stack(resolve(base_dir_, r.inconsistent_2->stack_path));
  const auto m1 = load_mask(resolve(base_dir_, *r.region_mask_1));
  const auto m2 = load_mask(resolve(base_dir_, *r.region_mask_2));
  const auto ids = i1.layer_ids();
  if (load_consistent_) {
    const auto c1 = load_stack(resolve(base_dir_, r.consistent_1.stack_path));
    const auto c2 = load_stack(resolve(base_dir_, r.consistent_2.stack_path));
    return make_training_sample(r.sample_id, i1, i2, &c1, &c2, *r.correspondences, m1, m2, ids, grid_);
  }
  return make_training_sample(r.sample_id, i1, i2, nullptr, nullptr, *r.correspondences, m1, m2, ids, grid_);
}

ModelConfig ManifestSource::model_config(std::uint32_t feature_dim) const {
  const auto& r = records_.front();
  auto cfg = model_config_for(load_stack(resolve(base_dir_, r.inconsistent_1->stack_path)), feature_dim);
  cfg.grid = grid_;
  return cfg;
}

// --- training ----------------------------------------------------------------

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,L_s,L_v_in,L_v_out,L_total,lr\n";
  char buf[256];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof buf, "%u,%.17g,%.17g,%.17g,%.17g,%.17g\n", h.epoch, h.mean.semantic, h.mean.visual_in,
                  h.mean.visual_out, h.mean.total, h.lr);
    out += buf;
  }
  return out;
}

TrainResult train(const SampleSource& source, const TrainConfig& cfg, const TrainOutputs& outputs) {
  cfg.validate();
  const auto n = source.size();
  if (n == 0) fail(ErrorCode::empty_input, "no training samples");
  auto model_cfg = source.model_config(cfg.feature_dim);
  model_cfg.tau = cfg.tau;

  TrainResult result;
  result.params = init_params(model_cfg, cfg.seed ^ kInitStream);
  const auto opts = cfg.loss_options();
  AdamWState state;
  std::mt19937_64 shuffle_rng(cfg.seed ^ kShuffleStream);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (outputs.directory) std::filesystem::create_directories(*outputs.directory);

  std::uint64_t step = 0;
  bool stop = false;
  for (std::uint32_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr = cfg.lr_for_epoch(epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    std::vector<LossBreakdown> epoch_losses;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      if (cfg.max_steps && step >= *cfg.max_steps) {
        stop = true;
        break;
      }
      const auto end = std::min<std::size_t>(n, start + cfg.batch_size);
      std::vector<TrainingSample> samples;
      samples.reserve(end - start);
      for (auto i = start; i < end; ++i) samples.push_back(source.load(order[i]));
      std::vector<const TrainingSample*> batch;
      for (const auto& s : samples) batch.push_back(&s);
      auto br = batch_gradients(result.params, batch, opts, cfg.threads);
      adamw_step(result.params, br.grad, state, lr, cfg.adamw, cfg.train_tau);
      check_finite(result.params, "parameters after step " + std::to_string(step + 1));
      ++step;
      epoch_losses.push_back(br.mean);
      result.step_losses.push_back(br.mean);
    }
    if (epoch_losses.empty()) break;
    rec.steps = epoch_losses.size();
    for (const auto& l : epoch_losses) add_scaled(rec.mean, l, 1.0 / static_cast<double>(epoch_losses.size()));
    result.history.push_back(rec);
    logger().info("epoch {} lr {:.1e} L_s {:.4f} L_v_in {:.4f} L_v_out {:.4f} L_total {:.4f}", epoch, lr,
                  rec.mean.semantic, rec.mean.visual_in, rec.mean.visual_out, rec.mean.total);
    if (outputs.directory) {
      Checkpoint ck{result.params,
                    {{"epoch", epoch}, {"steps", step}, {"lr", lr}, {"train", to_json(cfg)}}};
      save_checkpoint(ck, *outputs.directory / epoch_name(epoch));
      write_text_atomic(*outputs.directory / "history.csv", history_csv(result.history));
    }
  }
  if (outputs.directory) {
    Checkpoint ck{result.params, {{"epochs_completed", result.history.size()}, {"steps", step}, {"train", to_json(cfg)}}};
    save_checkpoint(ck, *outputs.directory / "model.mtgp");
  }
  return result;
}

}  // namespace mtg
