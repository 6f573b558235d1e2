#include "mtg/dataset.hpp"

#include <fstream>

#include "mtg/error.hpp"
#include "mtg/log.hpp"

namespace mtg {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot open " + path.string() + " for writing");
  return out;
}

std::string relative_to(const std::filesystem::path& target, const std::filesystem::path& base) {
  return std::filesystem::relative(std::filesystem::absolute(target), std::filesystem::absolute(base)).generic_string();
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index, std::uint64_t stream) {
  return splitmix64(splitmix64(base ^ index) + stream);
}

void SynthGenConfig::validate() const {
  if (count == 0) fail(ErrorCode::invariant, "synth-gen count must be positive");
  if (part_counts.empty()) fail(ErrorCode::invariant, "part_counts must not be empty");
  if (!(untextured_fraction >= 0.0 && untextured_fraction <= 1.0)) {
    fail(ErrorCode::invariant, "untextured_fraction must lie in [0, 1]");
  }
  if (prefix.empty()) fail(ErrorCode::invariant, "prefix must not be empty");
  for (auto p : part_counts) {
    auto w = world;
    w.part_count = p;
    w.validate();
  }
}

nlohmann::json to_json(const SynthGenConfig& cfg) {
  return {{"count", cfg.count},
          {"world", to_json(cfg.world)},
          {"part_counts", cfg.part_counts},
          {"untextured_fraction", cfg.untextured_fraction},
          {"seed", cfg.seed},
          {"prefix", cfg.prefix}};
}

SynthGenConfig synth_gen_config_from_json(const nlohmann::json& j) {
  SynthGenConfig c;
  c.count = j.value("count", c.count);
  if (j.contains("world")) c.world = synth_world_config_from_json(j["world"]);
  c.part_counts = j.value("part_counts", c.part_counts);
  c.untextured_fraction = j.value("untextured_fraction", c.untextured_fraction);
  c.seed = j.value("seed", c.seed);
  c.prefix = j.value("prefix", c.prefix);
  c.validate();
  return c;
}

SynthWorldConfig world_for_sample(const SynthGenConfig& cfg, std::size_t index) {
  auto w = cfg.world;
  w.layout_seed = derive_seed(cfg.seed, index, 1);
  w.semantic_seed = derive_seed(cfg.seed, index, 2);
  w.appearance_seed = derive_seed(cfg.seed, index, 3);
  w.noise_seed = derive_seed(cfg.seed, index, 4);
  w.part_count = cfg.part_counts[derive_seed(cfg.seed, index, 5) % cfg.part_counts.size()];
  const double u = static_cast<double>(derive_seed(cfg.seed, index, 6) >> 11) * 0x1.0p-53;
  if (u < cfg.untextured_fraction) w.textured = false;
  return w;
}

std::vector<SampleRecord> synth_generate(const SynthGenConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir / "stacks");
  std::filesystem::create_directories(out_dir / "masks");
  auto manifest = open_out(out_dir / "manifest.jsonl");
  std::vector<SampleRecord> records;
  const auto width = std::to_string(cfg.count - 1).size();
  for (std::size_t i = 0; i < cfg.count; ++i) {
    auto num = std::to_string(i);
    num.insert(0, width - num.size(), '0');
    const auto id = cfg.prefix + num;
    const auto wcfg = world_for_sample(cfg, i);
    const SynthWorld world(wcfg);
    SampleRecord r;
    r.sample_id = id;
    for (int v = 0; v < 2; ++v) {
      const auto image_id = id + "_" + std::to_string(v + 1);
      const auto stack_rel = "stacks/" + image_id + ".mtgf";
      const auto mask_rel = "masks/" + image_id + "_subject.mtgm";
      auto stack = world.stack(v);
      stack.image_id = image_id;
      save_stack(stack, out_dir / stack_rel);
      save_mask(world.subject(v), out_dir / mask_rel);
      (v == 0 ? r.consistent_1 : r.consistent_2) = ArtifactRef{image_id, stack_rel};
      (v == 0 ? r.subject_mask_1 : r.subject_mask_2) = mask_rel;
    }
    r.subject_prompt = "synthetic subject with " + std::to_string(wcfg.part_count) + " parts";
    r.target_prompt = "";
    r.provenance.source = "synthetic";
    r.provenance.seed = cfg.seed ^ i;
    r.provenance.world = to_json(wcfg);
    append_sample(manifest, r);
    records.push_back(std::move(r));
  }
  manifest.flush();
  if (!manifest) fail(ErrorCode::io, "failed writing manifest in " + out_dir.string());
  return records;
}

nlohmann::json PipelineStats::to_json() const {
  return {{"candidates", candidates}, {"accepted", accepted}, {"rejections", rejections}};
}

PipelineStats run_pipeline(const std::filesystem::path& input_manifest, const PipelineConfig& cfg,
                           const std::filesystem::path& out_dir, const InpaintStrength& strength,
                           std::optional<std::size_t> max_accepted) {
  cfg.validate();
  const auto base = input_manifest.parent_path();
  const auto records = load_manifest(input_manifest);
  std::filesystem::create_directories(out_dir / "stacks");
  std::filesystem::create_directories(out_dir / "masks");
  auto manifest = open_out(out_dir / "manifest.jsonl");
  auto rejections = open_out(out_dir / "rejections.jsonl");
  PipelineStats stats;
  for (auto r : kAllRejections) stats.rejections[std::string(to_string(r))] = 0;

  for (std::size_t index = 0; index < records.size(); ++index) {
    if (max_accepted && stats.accepted >= *max_accepted) break;
    const auto& src = records[index];
    if (src.provenance.source != "synthetic" || src.provenance.world.is_null()) {
      fail(ErrorCode::port_failure, src.sample_id + ": only synthetic records can be processed by the built-in ports");
    }
    const SynthWorld world(synth_world_config_from_json(src.provenance.world));
    const auto s1 = load_stack(resolve(base, src.consistent_1.stack_path));
    const auto s2 = load_stack(resolve(base, src.consistent_2.stack_path));
    const auto o1 = load_mask(resolve(base, src.subject_mask_1));
    const auto o2 = load_mask(resolve(base, src.subject_mask_2));
    const auto& id1 = src.consistent_1.image_id;
    const auto& id2 = src.consistent_2.image_id;
    SyntheticSegmenter segmenter(world, id1, id2);
    SyntheticInpainter inpainter(world, id1, id2, strength.min, strength.max);
    FeaturePerceptual perceptual;
    Ports ports{segmenter, inpainter, perceptual};
    const PairInput input{id1, id2, s1, s2, o1, o2, "re-textured part"};
    const auto sample_seed = cfg.seed ^ index;
    const auto gen = generate_sample(input, ports, cfg, sample_seed);
    ++stats.candidates;

    if (!gen.accepted()) {
      const auto reason = std::string(to_string(*gen.rejection));
      ++stats.rejections[reason];
      nlohmann::json j = {{"sample_id", src.sample_id}, {"rejection", reason}};
      if (gen.anchor) {
        j["anchor_index"] = *gen.anchor;
        j["anchor_score"] = gen.anchor_score;
        j["anchor_skewness"] = gen.anchor_skewness;
      }
      if (*gen.rejection == Rejection::low_perceptual) j["perceptual_distances"] = gen.perceptual;
      rejections << j.dump() << "\n";
      continue;
    }
    ++stats.accepted;
    SampleRecord r = src;
    r.consistent_1.stack_path = relative_to(resolve(base, src.consistent_1.stack_path), out_dir);
    r.consistent_2.stack_path = relative_to(resolve(base, src.consistent_2.stack_path), out_dir);
    r.subject_mask_1 = relative_to(resolve(base, src.subject_mask_1), out_dir);
    r.subject_mask_2 = relative_to(resolve(base, src.subject_mask_2), out_dir);
    const InconsistentPair& pair = *gen.inconsistent;
    const std::pair<const InpaintResult*, const Mask*> outputs[] = {{&pair.first, &gen.region_1},
                                                                    {&pair.second, &gen.region_2}};
    for (int v = 0; v < 2; ++v) {
      const auto& [res, region] = outputs[v];
      const auto stack_rel = "stacks/" + res->image_id + ".mtgf";
      const auto mask_rel = "masks/" + src.sample_id + "_" + std::to_string(v + 1) + "_region.mtgm";
      save_stack(res->stack, out_dir / stack_rel);
      save_mask(*region, out_dir / mask_rel);
      (v == 0 ? r.inconsistent_1 : r.inconsistent_2) = ArtifactRef{res->image_id, stack_rel};
      (v == 0 ? r.region_mask_1 : r.region_mask_2) = mask_rel;
    }
    r.correspondences = gen.correspondences;
    r.target_prompt = input.target_prompt;
    r.provenance.seed = sample_seed;
    r.provenance.anchor_index = *gen.anchor;
    r.provenance.anchor_score = gen.anchor_score;
    r.provenance.anchor_skewness = gen.anchor_skewness;
    r.provenance.perceptual_distances = {gen.perceptual[0], gen.perceptual[1]};
    append_sample(manifest, r);
  }
  manifest.flush();
  rejections.flush();
  if (!manifest || !rejections) fail(ErrorCode::io, "failed writing pipeline outputs in " + out_dir.string());
  auto stats_out = open_out(out_dir / "stats.json");
  stats_out << stats.to_json().dump(2) << "\n";
  logger().info("pipeline: {} candidates, {} accepted", stats.candidates, stats.accepted);
  return stats;
}

}  // namespace mtg
