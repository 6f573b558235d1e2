// mtg: command line entry point.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtg/checkpoint.hpp"
#include "mtg/config.hpp"
#include "mtg/dataset.hpp"
#include "mtg/error.hpp"
#include "mtg/eval.hpp"
#include "mtg/log.hpp"
#include "mtg/manifest.hpp"
#include "mtg/trainer.hpp"
#include "mtg/vsm.hpp"

namespace fs = std::filesystem;
using namespace mtg;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Common {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  std::string out;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out) {
  cmd->add_option("--config", c.config, "JSON config with per-module sections");
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_option("--threads", c.threads, "Worker threads (1 is bitwise reproducible)")->check(CLI::PositiveNumber);
  auto* out = cmd->add_option("--out", c.out, "Output directory");
  if (needs_out) out->required();
  cmd->add_flag("--force", c.force, "Overwrite existing outputs");
}

// Refuses to touch existing outputs unless --force was given.
void claim_output(const fs::path& path, bool force) {
  if (fs::exists(path) && !force) {
    fail(ErrorCode::usage, path.string() + " already exists (pass --force to overwrite)");
  }
}

void claim_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    fail(ErrorCode::usage, dir.string() + " is not empty (pass --force to overwrite)");
  }
  fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) fail(ErrorCode::io, "failed writing " + path.string());
}

// --- synth-gen -----------------------------------------------------------------

int cmd_synth_gen(const Common& c, std::optional<std::size_t> count) {
  auto cfg = load_run_config(c.config);
  if (!c.seed) fail(ErrorCode::usage, "synth-gen requires --seed");
  cfg.synth.seed = *c.seed;
  if (count) cfg.synth.count = *count;
  claim_dir(c.out, c.force);
  const auto records = synth_generate(cfg.synth, c.out);
  std::printf("wrote %zu records to %s\n", records.size(), (fs::path(c.out) / "manifest.jsonl").string().c_str());
  return kOk;
}

// --- pipeline ------------------------------------------------------------------

int cmd_pipeline(const Common& c, const std::string& manifest, std::optional<std::size_t> max_accepted) {
  auto cfg = load_run_config(c.config);
  if (c.seed) cfg.pipeline.seed = *c.seed;
  claim_dir(c.out, c.force);
  const auto stats = run_pipeline(manifest, cfg.pipeline, c.out, cfg.inpaint, max_accepted);
  std::printf("%s\n", stats.to_json().dump().c_str());
  return kOk;
}

// --- train ----------------------------------------------------------------------

int cmd_train(const Common& c, const std::string& manifest, std::optional<std::uint32_t> epochs,
              std::optional<std::uint64_t> max_steps) {
  auto cfg = load_run_config(c.config);
  if (!c.seed) fail(ErrorCode::usage, "train requires --seed");
  cfg.train.seed = *c.seed;
  cfg.train.threads = c.threads;
  if (epochs) cfg.train.epochs = *epochs;
  if (max_steps) cfg.train.max_steps = *max_steps;
  cfg.train.validate();
  claim_dir(c.out, c.force);
  const auto source = ManifestSource::from_file(manifest, cfg.train.use_consistent_pair_term);
  const auto result = train(source, cfg.train, TrainOutputs{fs::path(c.out)});
  const auto& last = result.history.back();
  std::printf("trained %zu epochs, final L_total %.6f\n", result.history.size(), last.mean.total);
  return kOk;
}

// --- vsm ------------------------------------------------------------------------

struct VsmArgs {
  std::vector<std::string> pair;
  std::vector<std::string> masks;
  std::string manifest;
  std::string ckpt;
  std::optional<double> t_s, t_v;
  std::optional<std::string> direction;
  bool no_restrict = false;
  bool consistent = false;
};

int cmd_vsm(const Common& c, const VsmArgs& a) {
  auto cfg = load_run_config(c.config);
  if (a.t_s) cfg.vsm.semantic_threshold = *a.t_s;
  if (a.t_v) cfg.vsm.visual_threshold = *a.t_v;
  if (a.direction) cfg.vsm.direction = vsm_direction_from_string(*a.direction);
  if (a.no_restrict) cfg.vsm.restrict_to_subject = false;
  cfg.vsm.validate();
  const auto ckpt = load_checkpoint(a.ckpt);
  const fs::path out = c.out.empty() ? fs::path(".") : fs::path(c.out);
  fs::create_directories(out);

  if (!a.pair.empty()) {
    if (a.pair.size() != 2) fail(ErrorCode::usage, "--pair takes two stack files");
    if (!a.masks.empty() && a.masks.size() != 2) fail(ErrorCode::usage, "--masks takes two mask files");
    const auto s1 = load_stack(a.pair[0]);
    const auto s2 = load_stack(a.pair[1]);
    std::optional<Mask> m1, m2;
    if (!a.masks.empty()) {
      m1 = load_mask(a.masks[0]);
      m2 = load_mask(a.masks[1]);
    }
    const auto report = vsm(s1, s2, ckpt.params, m1 ? &*m1 : nullptr, m2 ? &*m2 : nullptr, cfg.vsm);
    for (const auto* name : {"report.json", "map.f32", "map.pgm"}) claim_output(out / name, c.force);
    const auto& p = report.primary();
    write_text(out / "report.json", to_json(report).dump(2) + "\n");
    write_map_raw(p.map, out / "map.f32");
    write_map_pgm(p.map, p.grid_height, p.grid_width, out / "map.pgm");
    std::printf("%s\n", to_json(report).dump().c_str());
    return kOk;
  }
  if (a.manifest.empty()) fail(ErrorCode::usage, "vsm needs --pair or --manifest");
  const fs::path mpath(a.manifest);
  const auto records = load_manifest(mpath);
  const auto base = mpath.parent_path();
  claim_output(out / "vsm_scores.csv", c.force);
  claim_output(out / "vsm_reports.jsonl", c.force);
  MetricSeries series{"vsm", {}, {}};
  std::string reports;
  std::size_t skipped = 0;
  for (const auto& r : records) {
    const bool use_inconsistent = !a.consistent && r.has_inconsistent_pair();
    const auto& ref1 = use_inconsistent ? *r.inconsistent_1 : r.consistent_1;
    const auto& ref2 = use_inconsistent ? *r.inconsistent_2 : r.consistent_2;
    const auto s1 = load_stack(resolve(base, ref1.stack_path));
    const auto s2 = load_stack(resolve(base, ref2.stack_path));
    const auto m1 = load_mask(resolve(base, r.subject_mask_1));
    const auto m2 = load_mask(resolve(base, r.subject_mask_2));
    const auto report = vsm(s1, s2, ckpt.params, &m1, &m2, cfg.vsm);
    auto j = to_json(report);
    j["sample_id"] = r.sample_id;
    reports += j.dump() + "\n";
    if (report.vsm) {
      series.ids.push_back(r.sample_id);
      series.scores.push_back(*report.vsm);
    } else {
      ++skipped;
    }
  }
  write_scores_csv(series, out / "vsm_scores.csv");
  write_text(out / "vsm_reports.jsonl", reports);
  std::printf("scored %zu pairs (%zu without semantic overlap)\n", series.ids.size(), skipped);
  return kOk;
}

// --- evaluate -------------------------------------------------------------------

struct EvalArgs {
  std::string manifest;
  std::vector<std::string> scores;      // name=path
  std::vector<std::string> embeddings;  // name=dir
  bool mean_pooled = true;
};

std::pair<std::string, std::string> split_named(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) fail(ErrorCode::usage, "expected name=path, got '" + s + "'");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

int cmd_evaluate(const Common& c, const EvalArgs& a) {
  const fs::path mpath(a.manifest);
  const auto base = mpath.parent_path();
  const auto records = load_manifest(mpath);
  OracleSeries oracle;
  for (const auto& r : records) {
    if (!r.region_mask_1) continue;
    oracle.ids.push_back(r.sample_id);
    oracle.values.push_back(oracle_score(load_mask(resolve(base, *r.region_mask_1)),
                                         load_mask(resolve(base, r.subject_mask_1))));
  }
  if (oracle.ids.empty()) fail(ErrorCode::empty_input, "manifest has no records with region masks");
  std::vector<MetricSeries> series;
  for (const auto& s : a.scores) {
    const auto [name, path] = split_named(s);
    series.push_back(read_scores_csv(path, name));
  }
  auto pair_refs = [](const SampleRecord& r) {
    return r.has_inconsistent_pair() ? std::pair{*r.inconsistent_1, *r.inconsistent_2}
                                     : std::pair{r.consistent_1, r.consistent_2};
  };
  for (const auto& e : a.embeddings) {
    const auto [name, dir] = split_named(e);
    MetricSeries m{name, {}, {}};
    for (const auto& r : records) {
      if (!r.region_mask_1) continue;
      const auto [a1, a2] = pair_refs(r);
      m.ids.push_back(r.sample_id);
      m.scores.push_back(baseline_cosine(read_embedding_csv(fs::path(dir) / (a1.image_id + ".csv")),
                                         read_embedding_csv(fs::path(dir) / (a2.image_id + ".csv"))));
    }
    series.push_back(std::move(m));
  }
  if (a.mean_pooled) {
    MetricSeries m{"mean_pooled_cosine", {}, {}};
    for (const auto& r : records) {
      if (!r.region_mask_1) continue;
      const auto [a1, a2] = pair_refs(r);
      m.ids.push_back(r.sample_id);
      m.scores.push_back(baseline_cosine(mean_pooled_embedding(load_stack(resolve(base, a1.stack_path))),
                                         mean_pooled_embedding(load_stack(resolve(base, a2.stack_path)))));
    }
    series.push_back(std::move(m));
  }
  // Series scored on a subset (e.g. pairs without semantic overlap dropped) are compared on that subset.
  std::vector<CorrelationRow> rows;
  for (const auto& s : series) {
    OracleSeries sub;
    std::map<std::string, double> by_id;
    for (std::size_t i = 0; i < oracle.ids.size(); ++i) by_id[oracle.ids[i]] = oracle.values[i];
    for (const auto& id : s.ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) fail(ErrorCode::integrity, "series '" + s.name + "' scores unknown sample " + id);
      sub.ids.push_back(id);
      sub.values.push_back(it->second);
    }
    const MetricSeries one[] = {s};
    rows.push_back(correlation_report(one, sub).rows.front());
  }
  CorrelationReport report{rows};
  const fs::path out = c.out.empty() ? fs::path(".") : fs::path(c.out);
  fs::create_directories(out);
  claim_output(out / "report.txt", c.force);
  claim_output(out / "report.json", c.force);
  write_text(out / "report.txt", report.to_text());
  auto j = report.to_json();
  j["oracle_samples"] = oracle.ids.size();
  write_text(out / "report.json", j.dump(2) + "\n");
  series.push_back(MetricSeries{"oracle", oracle.ids, oracle.values});
  for (const auto& s : series) {
    const auto path = out / ("hist_" + s.name + ".csv");
    claim_output(path, c.force);
    write_text(path, histogram_csv(histogram(s.scores, 20)));
  }
  std::fputs(report.to_text().c_str(), stdout);
  return kOk;
}

// --- inspect-weights -------------------------------------------------------------

int cmd_inspect(const Common& c, const std::string& ckpt_path) {
  const auto ck = load_checkpoint(ckpt_path);
  std::string csv = "layer_id,semantic_weight,visual_weight\n";
  char buf[128];
  for (std::size_t l = 0; l < ck.params.semantic.blocks.size(); ++l) {
    std::snprintf(buf, sizeof buf, "%u,%.17g,%.17g\n", ck.params.semantic.layer_ids[l],
                  ck.params.semantic.blocks[l].weight, ck.params.visual.blocks[l].weight);
    csv += buf;
  }
  if (c.out.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    fs::create_directories(c.out);
    const auto path = fs::path(c.out) / "layer_weights.csv";
    claim_output(path, c.force);
    write_text(path, csv);
  }
  return kOk;
}

// --- validate --------------------------------------------------------------------

int cmd_validate(const Common& c, const std::vector<std::string>& files, bool strict) {
  auto cfg = load_run_config(c.config);
  std::size_t problems = 0;
  for (const auto& f : files) {
    const fs::path p(f);
    const auto ext = p.extension().string();
    try {
      if (ext == ".mtgf") {
        const auto s = load_stack(p);
        std::printf("%s: ok (stack, %zu layers)\n", f.c_str(), s.layers.size());
      } else if (ext == ".mtgm") {
        const auto m = load_mask(p);
        std::printf("%s: ok (mask %ux%u, %zu set)\n", f.c_str(), m.height, m.width, m.count());
      } else if (ext == ".mtgp") {
        const auto ck = load_checkpoint(p);
        std::printf("%s: ok (checkpoint, %zu layers, q=%u)\n", f.c_str(), ck.params.semantic.blocks.size(),
                    ck.params.feature_dim());
      } else {
        const auto records = load_manifest(p);
        const auto base = p.parent_path();
        for (const auto& r : records) {
          load_stack(resolve(base, r.consistent_1.stack_path));
          load_stack(resolve(base, r.consistent_2.stack_path));
          if (r.has_inconsistent_pair()) {
            load_stack(resolve(base, r.inconsistent_1->stack_path));
            load_stack(resolve(base, r.inconsistent_2->stack_path));
            if (strict) {
              for (const auto& issue : check_accepted_record(r, base, cfg.pipeline)) {
                std::printf("%s: %s\n", f.c_str(), issue.c_str());
                ++problems;
              }
            }
          }
        }
        std::printf("%s: ok (manifest, %zu records)\n", f.c_str(), records.size());
      }
    } catch (const Error& e) {
      std::printf("%s: %s\n", f.c_str(), e.what());
      ++problems;
    }
  }
  return problems == 0 ? kOk : kData;
}

int exit_code_for(const Error& e) {
  if (e.is_numeric()) return kNumeric;
  if (e.code() == ErrorCode::usage) return kUsage;
  return kData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual consistency toolkit: synthetic data, disentangled features, VSM scoring"};
  app.require_subcommand(1);

  Common synth_c, pipe_c, train_c, vsm_c, eval_c, inspect_c, validate_c;
  std::optional<std::size_t> count;
  auto* synth = app.add_subcommand("synth-gen", "Generate synthetic consistent pairs and a manifest");
  add_common(synth, synth_c, true);
  synth->add_option("--count", count, "Number of samples");

  std::string pipe_manifest;
  auto* pipe = app.add_subcommand("pipeline", "Create inconsistent pairs from a synthetic manifest");
  add_common(pipe, pipe_c, true);
  pipe->add_option("--manifest", pipe_manifest, "Input manifest")->required()->check(CLI::ExistingFile);
  std::optional<std::size_t> max_accepted;
  pipe->add_option("--max-accepted", max_accepted, "Stop once this many samples were accepted");

  std::string train_manifest;
  std::optional<std::uint32_t> epochs;
  std::optional<std::uint64_t> max_steps;
  auto* tr = app.add_subcommand("train", "Train the semantic and visual aggregators");
  add_common(tr, train_c, true);
  tr->add_option("--manifest", train_manifest, "Training manifest")->required()->check(CLI::ExistingFile);
  tr->add_option("--epochs", epochs, "Override the number of epochs");
  tr->add_option("--max-steps", max_steps, "Stop after this many optimizer steps");

  VsmArgs vargs;
  auto* vs = app.add_subcommand("vsm", "Score one pair or every pair of a manifest");
  add_common(vs, vsm_c, false);
  vs->add_option("--pair", vargs.pair, "Two stack files")->expected(2);
  vs->add_option("--masks", vargs.masks, "Two subject mask files")->expected(2);
  vs->add_option("--manifest", vargs.manifest, "Manifest to score");
  vs->add_option("--ckpt", vargs.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  vs->add_option("--t-s", vargs.t_s, "Semantic threshold");
  vs->add_option("--t-v", vargs.t_v, "Visual threshold");
  vs->add_option("--direction", vargs.direction, "forward, reverse or symmetric");
  vs->add_flag("--no-restrict", vargs.no_restrict, "Do not restrict matching to subject masks");
  vs->add_flag("--consistent", vargs.consistent, "Score the consistent pair of each record");

  EvalArgs eargs;
  bool no_mean_pooled = false;
  auto* ev = app.add_subcommand("evaluate", "Correlate metrics with the region oracle");
  add_common(ev, eval_c, false);
  ev->add_option("--manifest", eargs.manifest, "Manifest with region masks")->required()->check(CLI::ExistingFile);
  ev->add_option("--scores", eargs.scores, "name=scores.csv (repeatable)");
  ev->add_option("--embeddings", eargs.embeddings, "name=DIR with <image_id>.csv embeddings (repeatable)");
  ev->add_flag("--no-mean-pooled", no_mean_pooled, "Skip the mean-pooled feature cosine baseline");

  std::string inspect_ckpt;
  auto* insp = app.add_subcommand("inspect-weights", "Dump the per-layer scalar weights as CSV");
  add_common(insp, inspect_c, false);
  insp->add_option("--ckpt", inspect_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);

  std::vector<std::string> files;
  bool strict = false;
  auto* val = app.add_subcommand("validate", "Check stacks, masks, checkpoints and manifests");
  add_common(val, validate_c, false);
  val->add_option("files", files, "Files to check")->required();
  val->add_flag("--strict", strict, "Also re-check the pipeline filters of accepted records");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth_gen(synth_c, count);
    if (*pipe) return cmd_pipeline(pipe_c, pipe_manifest, max_accepted);
    if (*tr) return cmd_train(train_c, train_manifest, epochs, max_steps);
    if (*vs) return cmd_vsm(vsm_c, vargs);
    if (*ev) {
      eargs.mean_pooled = !no_mean_pooled;
      return cmd_evaluate(eval_c, eargs);
    }
    if (*insp) return cmd_inspect(inspect_c, inspect_ckpt);
    if (*val) return cmd_validate(validate_c, files, strict);
  } catch (const Error& e) {
    std::fprintf(stderr, "mtg: %s\n", e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "mtg: %s\n", e.what());
    return kData;
  }
  return kUsage;
}
