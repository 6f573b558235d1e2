#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtg/losses.hpp"
#include "mtg/manifest.hpp"
#include "mtg/model.hpp"
#include "mtg/optimizer.hpp"

namespace mtg {

struct TrainConfig {
  double alpha = 10.0;
  double learning_rate = 1e-3;
  std::uint32_t epochs = 30;
  std::uint32_t lr_decay_every = 10;
  double lr_decay_factor = 10.0;
  AdamWConfig adamw;
  double tau = 0.07;
  bool train_tau = false;
  std::uint32_t batch_size = 4;
  std::uint64_t seed = 0;
  bool use_consistent_pair_term = true;
  std::uint32_t feature_dim = 384;
  unsigned threads = 1;
  /// Stops after this many optimizer steps (for smoke runs).
  std::optional<std::uint64_t> max_steps;

  void validate() const;
  double lr_for_epoch(std::uint32_t epoch) const {
    return scheduled_lr(epoch, learning_rate, lr_decay_every, lr_decay_factor);
  }
  LossOptions loss_options() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Random access to training samples.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual TrainingSample load(std::size_t index) const = 0;
  /// Layer ids and channel counts of the stored stacks.
  virtual ModelConfig model_config(std::uint32_t feature_dim) const = 0;
};

/// Loads records with an inconsistent pair on demand from a manifest.
class ManifestSource : public SampleSource {
 public:
  ManifestSource(std::vector<SampleRecord> records, std::filesystem::path base_dir, bool load_consistent,
                 std::uint32_t grid = kModelGrid);
  static ManifestSource from_file(const std::filesystem::path& manifest, bool load_consistent);

  std::size_t size() const override { return records_.size(); }
  TrainingSample load(std::size_t index) const override;
  ModelConfig model_config(std::uint32_t feature_dim) const override;
  const SampleRecord& record(std::size_t index) const { return records_.at(index); }
  const std::filesystem::path& base_dir() const noexcept { return base_dir_; }

 private:
  std::vector<SampleRecord> records_;
  std::filesystem::path base_dir_;
  bool load_consistent_;
  std::uint32_t grid_;
};

/// In-memory samples, mainly for tests.
class MemorySource : public SampleSource {
 public:
  explicit MemorySource(std::vector<TrainingSample> samples, ModelConfig config)
      : samples_(std::move(samples)), config_(std::move(config)) {}
  std::size_t size() const override { return samples_.size(); }
  TrainingSample load(std::size_t index) const override { return samples_.at(index); }
  ModelConfig model_config(std::uint32_t feature_dim) const override {
    auto c = config_;
    c.feature_dim = feature_dim;
    return c;
  }

 private:
  std::vector<TrainingSample> samples_;
  ModelConfig config_;
};

struct EpochRecord {
  std::uint32_t epoch = 0;
  double lr = 0.0;
  std::uint64_t steps = 0;
  LossBreakdown mean;
};

struct TrainResult {
  AggregatorParams params;
  std::vector<EpochRecord> history;
  std::vector<LossBreakdown> step_losses;
};

struct TrainOutputs {
  /// When set: epoch_NNN.mtgp per epoch, model.mtgp at the end, history.csv.
  std::optional<std::filesystem::path> directory;
};

TrainResult train(const SampleSource& source, const TrainConfig& cfg, const TrainOutputs& outputs = {});

/// Training-history CSV: epoch,L_s,L_v_in,L_v_out,L_total,lr.
std::string history_csv(const std::vector<EpochRecord>& history);

}  // namespace mtg
