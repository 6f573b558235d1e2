// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <sys/wait.h>

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "mtg/checkpoint.hpp"
#include "mtg/config.hpp"
#include "mtg/dataset.hpp"
#include "mtg/eval.hpp"
#include "mtg/optimizer.hpp"
#include "mtg/trainer.hpp"
#include "mtg/vsm.hpp"

namespace fs = std::filesystem;
using namespace mtg;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path fresh(const fs::path& p) {
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// --- 1. gradient check --------------------------------------------------------

Outcome gradient_gate() {
  const auto t0 = Clock::now();
  const auto toy = testing::make_toy_sample(7);
  double worst = 0.0;
  std::string where;
  std::size_t skipped = 0, checked = 0;
  bool all_classes = true;
  for (auto term : {testing::LossTerm::semantic, testing::LossTerm::visual_in, testing::LossTerm::visual_out,
                    testing::LossTerm::total}) {
    const auto r = testing::gradient_check(toy, term, 1e-3);
    skipped += r.skipped;
    all_classes = all_classes && r.errors.size() == 8;
    for (const auto& [cls, err] : r.errors) {
      checked += r.checked.at(cls);
      if (r.checked.at(cls) == 0) all_classes = false;
      if (err > worst) {
        worst = err;
        where = std::string(testing::to_string(term)) + "/" + cls;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && all_classes && secs < 60.0,
          fmt("worst rel err %.2e (%s), %zu coords checked, %zu skipped at ReLU kinks, %.1fs", worst, where.c_str(),
              checked, skipped, secs)};
}

// --- 2. formula oracles --------------------------------------------------------

Outcome formula_gate() {
  std::vector<std::string> bad;
  const double skew = sample_skewness(std::vector<double>{0, 0, 0, 1}).value;
  if (std::abs(skew - 2.0) > 1e-9) bad.push_back(fmt("skewness %.12f", skew));

  Mask o(20, 20), r(20, 20);
  for (std::size_t i = 0; i < 200; ++i) o.bits[i] = 1;
  for (std::size_t i = 0; i < 50; ++i) r.bits[i] = 1;
  const double orc = oracle_score(r, o);
  if (orc != 0.75) bad.push_back(fmt("oracle %.12f", orc));

  const double rho = spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 3, 2, 4}).value;
  if (std::abs(rho - 0.8) > 1e-9) bad.push_back(fmt("spearman %.12f", rho));

  double m = 0.0, v = 0.0;
  const double theta = adamw_update(1.0, 2.0, m, v, 1, 1e-3, AdamWConfig{});
  if (std::abs(theta - 0.998990) > 1e-6) bad.push_back(fmt("adamw %.9f", theta));

  RowMatrix d(1, 3);
  d << 10, 0, 0;
  const std::vector<std::size_t> q{0};
  const double ce = contrastive_ce(d, q, q, 1.0, 1.0).value;
  if (std::abs(ce - 9.08e-5) > 1e-7) bad.push_back(fmt("ce %.4e", ce));

  std::string detail = fmt("skew %.9f, oracle %.4f, spearman %.9f, adamw %.6f, ce %.4e", skew, orc, rho, theta, ce);
  for (const auto& b : bad) detail += "; off: " + b;
  return {bad.empty(), detail};
}

// --- 3. matching on synthetic worlds -------------------------------------------

double match_accuracy(const SynthWorld& w) {
  const auto& gt = w.ground_truth();
  const auto g = w.config().grid;
  std::size_t hit = 0, total = 0;
  for (auto layer : w.config().layer_ids) {
    const auto c = argmax_match(similarity(flatten_layer(w.stack(0), layer, true), flatten_layer(w.stack(1), layer, true)),
                                w.subject(0), w.subject(1));
    for (std::size_t j = 0; j < c.size(); ++j) {
      const auto src = std::size_t{c.points_a[j].y} * g + c.points_a[j].x;
      const auto dst = std::int64_t{c.points_b[j].y} * g + c.points_b[j].x;
      hit += gt[src] == dst;
    }
    total += c.size();
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

Outcome matching_gate() {
  SynthGenConfig gen;
  gen.seed = 77;
  std::size_t perfect = 0, ordered = 0;
  double worst_clean = 1.0, mean_05 = 0.0, mean_10 = 0.0;
  for (std::size_t s = 0; s < 20; ++s) {
    auto w = world_for_sample(gen, s);
    // Untextured subjects carry one vector in every cell; matching them is all ties.
    w.textured = true;
    w.noise_scale = 0.0;
    const double clean = match_accuracy(SynthWorld(w));
    worst_clean = std::min(worst_clean, clean);
    perfect += clean == 1.0;
    w.noise_scale = 0.5;
    const double a05 = match_accuracy(SynthWorld(w));
    w.noise_scale = 1.0;
    const double a10 = match_accuracy(SynthWorld(w));
    ordered += a05 >= a10;
    mean_05 += a05 / 20.0;
    mean_10 += a10 / 20.0;
  }
  return {perfect == 20 && ordered == 20,
          fmt("noise-free %zu/20 perfect (min %.4f); acc(0.5) >= acc(1.0) on %zu/20 (means %.3f vs %.3f)", perfect,
              worst_clean, ordered, mean_05, mean_10)};
}

// --- 4. pipeline filters --------------------------------------------------------

RunConfig shipped_config() { return load_run_config(fs::path(MTG_SOURCE_DIR) / "configs" / "synthetic.json"); }

Outcome pipeline_gate(const fs::path& work) {
  auto cfg = shipped_config();
  const auto dir = fresh(work / "pipeline");
  cfg.synth.count = 200;
  cfg.synth.seed = 31;
  synth_generate(cfg.synth, dir / "gen");
  cfg.pipeline.seed = 32;
  const auto stats = run_pipeline(dir / "gen" / "manifest.jsonl", cfg.pipeline, dir / "acc", cfg.inpaint);
  const auto records = load_manifest(dir / "acc" / "manifest.jsonl");
  std::size_t direct = 0, validator = 0;
  for (const auto& r : records) {
    const auto& p = r.provenance;
    const auto base = dir / "acc";
    bool ok = p.anchor_skewness && *p.anchor_skewness >= cfg.pipeline.skewness_min;
    for (int v = 0; v < 2; ++v) {
      const auto region = load_mask(resolve(base, *(v == 0 ? r.region_mask_1 : r.region_mask_2)));
      const auto subject = load_mask(resolve(base, v == 0 ? r.subject_mask_1 : r.subject_mask_2));
      const double frac = static_cast<double>(region.count()) / static_cast<double>(subject.count());
      ok = ok && frac >= 0.05 && frac <= 0.60;
    }
    ok = ok && !p.perceptual_distances.empty();
    for (double d : p.perceptual_distances) ok = ok && d >= 0.15;
    direct += !ok;
    validator += check_accepted_record(r, base, cfg.pipeline).size();
  }
  return {stats.candidates == 200 && !records.empty() && direct == 0 && validator == 0,
          fmt("%zu candidates, %zu accepted, %zu records off-threshold, %zu validator issues; rejections %s",
              stats.candidates, records.size(), direct, validator, stats.to_json()["rejections"].dump().c_str())};
}

// --- 5. end to end --------------------------------------------------------------

struct E2EState {
  AggregatorParams params;
  fs::path test_dir;
  std::vector<SampleRecord> test_records;
};

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

Outcome e2e_gate(const fs::path& work, E2EState& state) {
  const auto t0 = Clock::now();
  auto cfg = shipped_config();
  const auto dir = fresh(work / "e2e");

  cfg.synth.seed = 11;
  cfg.synth.count = 400;
  synth_generate(cfg.synth, dir / "gtrain");
  cfg.pipeline.seed = 21;
  run_pipeline(dir / "gtrain" / "manifest.jsonl", cfg.pipeline, dir / "ptrain", cfg.inpaint, 300);
  cfg.synth.seed = 12;
  cfg.synth.count = 100;
  cfg.synth.prefix = "t";
  synth_generate(cfg.synth, dir / "gtest");
  cfg.pipeline.seed = 22;
  run_pipeline(dir / "gtest" / "manifest.jsonl", cfg.pipeline, dir / "ptest", cfg.inpaint, 60);

  const auto train_src = ManifestSource::from_file(dir / "ptrain" / "manifest.jsonl", true);
  const auto test_src = ManifestSource::from_file(dir / "ptest" / "manifest.jsonl", false);
  if (train_src.size() != 300 || test_src.size() != 60) {
    return {false, fmt("dataset short: %zu train, %zu test", train_src.size(), test_src.size())};
  }
  cfg.train.seed = 5;
  cfg.train.threads = 1;
  const double data_secs = seconds_since(t0);
  const auto result = train(train_src, cfg.train, TrainOutputs{dir / "model"});
  const double train_secs = seconds_since(t0) - data_secs;
  state.params = load_checkpoint(dir / "model" / "model.mtgp").params;
  state.test_dir = dir / "ptest";
  state.test_records = load_manifest(dir / "ptest" / "manifest.jsonl");

  // (a) visual cosine at corresponding points, pooled over the test set.
  std::vector<double> cos_in, cos_out;
  for (std::size_t i = 0; i < test_src.size(); ++i) {
    const auto s = test_src.load(i);
    const auto v1 = aggregate(s.inconsistent_1, state.params.visual);
    const auto v2 = aggregate(s.inconsistent_2, state.params.visual);
    auto cos = [&](std::size_t j) {
      return v1.values.row(static_cast<Eigen::Index>(s.index.first[j]))
          .dot(v2.values.row(static_cast<Eigen::Index>(s.index.second[j])));
    };
    for (auto j : s.index.partition.inside) cos_in.push_back(cos(j));
    for (auto j : s.index.partition.outside) cos_out.push_back(cos(j));
  }
  const double gap = mean(cos_out) - mean(cos_in);

  // (b) VSM and the mean-pooled baseline against the region oracle.
  std::vector<double> vsm_s, base_s, oracle_s;
  std::size_t no_overlap = 0;
  for (const auto& r : state.test_records) {
    const auto base = state.test_dir;
    const auto s1 = load_stack(resolve(base, r.inconsistent_1->stack_path));
    const auto s2 = load_stack(resolve(base, r.inconsistent_2->stack_path));
    const auto m1 = load_mask(resolve(base, r.subject_mask_1));
    const auto m2 = load_mask(resolve(base, r.subject_mask_2));
    const auto rep = vsm(s1, s2, state.params, &m1, &m2, cfg.vsm);
    if (!rep.vsm) {
      ++no_overlap;
      continue;
    }
    vsm_s.push_back(*rep.vsm);
    base_s.push_back(baseline_cosine(mean_pooled_embedding(s1), mean_pooled_embedding(s2)));
    oracle_s.push_back(oracle_score(load_mask(resolve(base, *r.region_mask_1)), m1));
  }
  const auto rho_vsm = spearman(vsm_s, oracle_s);
  const auto rho_base = spearman(base_s, oracle_s);
  const double secs = seconds_since(t0);
  const bool a = gap >= 0.2;
  const bool b = rho_vsm.defined && rho_vsm.value >= 0.6 && (!rho_base.defined || rho_vsm.value > rho_base.value);
  return {a && b && secs < 1800.0,
          fmt("(a) cos P_in %.3f vs P_out %.3f, gap %.3f [%s]; (b) spearman vsm %.3f vs mean-pooled %.3f on %zu pairs "
              "(%zu without overlap) [%s]; final L_total %.3f; data %.0fs, train %.0fs, total %.0fs",
              mean(cos_in), mean(cos_out), gap, a ? "ok" : "short", rho_vsm.value, rho_base.value, vsm_s.size(),
              no_overlap, b ? "ok" : "short", result.history.back().mean.total, data_secs, train_secs, secs)};
}

// --- 6. VSM properties on the trained model --------------------------------------

FeatureStack permute_positions(const FeatureStack& s, const std::vector<std::size_t>& perm) {
  auto out = s;
  for (std::size_t l = 0; l < s.layers.size(); ++l) {
    const auto& src = s.layers[l];
    auto& dst = out.layers[l];
    for (std::size_t i = 0; i < src.positions(); ++i)
      std::copy_n(src.values.data() + i * src.channels, src.channels, dst.values.data() + perm[i] * src.channels);
  }
  return out;
}

Outcome vsm_gate(const E2EState& state) {
  if (state.test_records.size() < 20) return {false, "needs the trained model and test set"};
  std::size_t monotone = 0, self_one = 0, invariant = 0;
  std::mt19937_64 rng(5);
  for (std::size_t k = 0; k < 20; ++k) {
    const auto& r = state.test_records[k];
    const auto& base = state.test_dir;
    const auto s1 = load_stack(resolve(base, r.inconsistent_1->stack_path));
    const auto s2 = load_stack(resolve(base, r.inconsistent_2->stack_path));
    const auto m1 = load_mask(resolve(base, r.subject_mask_1));
    const auto m2 = load_mask(resolve(base, r.subject_mask_2));
    const auto f1 = extract_features(s1, state.params);
    const auto f2 = extract_features(s2, state.params);
    VsmConfig cfg;

    bool mono = true;
    double prev = 2.0;
    for (int t = 0; t < 10; ++t) {
      cfg.visual_threshold = -0.9 + 0.2 * t;
      const auto rep = vsm_from_features(f1, f2, &m1, &m2, cfg);
      const double v = rep.vsm.value_or(-1.0);
      mono = mono && rep.vsm && v <= prev;
      prev = v;
    }
    monotone += mono;
    cfg = {};
    const auto self = vsm_from_features(f1, f1, &m1, &m1, cfg);
    self_one += self.vsm && *self.vsm == 1.0;

    // Shuffle every grid position of image 2 consistently (features and mask).
    if (s2.layers.front().height != kModelGrid) return {false, "test stacks are not on the model grid"};
    std::vector<std::size_t> perm(std::size_t{kModelGrid} * kModelGrid);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Mask pm2(m2.height, m2.width);
    for (std::size_t i = 0; i < perm.size(); ++i) pm2.bits[perm[i]] = m2.bits[i];
    const auto straight = vsm(s1, s2, state.params, &m1, &m2, cfg);
    const auto shuffled = vsm(s1, permute_positions(s2, perm), state.params, &m1, &pm2, cfg);
    invariant += straight.vsm == shuffled.vsm && straight.forward.map == shuffled.forward.map;
  }
  return {monotone == 20 && self_one == 20 && invariant == 20,
          fmt("non-increasing over T_v sweep %zu/20, self-comparison 1.0 %zu/20, permutation invariant %zu/20", monotone,
              self_one, invariant)};
}

// --- 7. determinism through the CLI ------------------------------------------------

int run(const std::string& cmd) {
  const int raw = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

Outcome determinism_gate(const fs::path& work) {
  const auto dir = fresh(work / "determinism");
  std::ofstream(dir / "small.json") << R"({
    "synth": {"world": {"grid": 24, "subject_min": 12, "subject_max": 18}},
    "train": {"feature_dim": 8, "batch_size": 2, "epochs": 10}
  })";
  const std::string bin = MTG_BINARY;
  const std::string cfg = " --threads 1 --config " + (dir / "small.json").string();
  for (const char* tag : {"a", "b"}) {
    const auto d = dir / tag;
    const bool ok = run(bin + " synth-gen" + cfg + " --seed 9 --count 10 --out " + (d / "gen").string()) == 0 &&
                    run(bin + " pipeline" + cfg + " --seed 10 --manifest " + (d / "gen" / "manifest.jsonl").string() +
                        " --out " + (d / "acc").string()) == 0 &&
                    run(bin + " train" + cfg + " --seed 11 --max-steps 8 --manifest " +
                        (d / "acc" / "manifest.jsonl").string() + " --out " + (d / "model").string()) == 0;
    if (!ok) return {false, std::string("a CLI step failed in run ") + tag};
  }
  std::vector<std::string> differing;
  std::size_t files = 0;
  for (const char* stage : {"gen", "acc", "model"}) {
    const auto a = tree_bytes(dir / "a" / stage), b = tree_bytes(dir / "b" / stage);
    files += a.size();
    if (a != b) differing.push_back(stage);
  }
  std::string detail = fmt("synth-gen, pipeline and train twice: %zu files compared", files);
  for (const auto& s : differing) detail += ", " + s + " differs";
  return {differing.empty() && files > 0, detail};
}

// --- 8. serialization round trips -----------------------------------------------------

std::string random_text(std::mt19937_64& rng) {
  static const std::vector<std::string> pieces = {"a", "q", "Z", "7", "_", "-", ".", " ", "\"", "\\", "/", "\xc3\xa9", "\xe2\x82\xac"};
  std::string s;
  for (auto n = rng() % 12; n > 0; --n) s += pieces[rng() % pieces.size()];
  return s;
}

SampleRecord random_record(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  auto ref = [&] { return ArtifactRef{random_text(rng), "stacks/" + random_text(rng) + ".mtgf"}; };
  SampleRecord r;
  r.sample_id = random_text(rng) + std::to_string(rng() % 1000);
  r.consistent_1 = ref();
  r.consistent_2 = ref();
  r.subject_mask_1 = random_text(rng);
  r.subject_mask_2 = random_text(rng);
  r.subject_prompt = random_text(rng);
  r.target_prompt = random_text(rng);
  r.provenance.seed = rng();
  r.provenance.world = {{"grid", rng() % 100}, {"x", u(rng)}};
  if (rng() & 1) {
    r.inconsistent_1 = ref();
    r.inconsistent_2 = ref();
    r.region_mask_1 = random_text(rng);
    r.region_mask_2 = random_text(rng);
    CorrespondenceSet c;
    const auto n = rng() % 6;
    for (std::size_t j = 0; j < n; ++j) {
      c.points_a.push_back({static_cast<std::uint32_t>(rng() % 48), static_cast<std::uint32_t>(rng() % 48)});
      c.points_b.push_back({static_cast<std::uint32_t>(rng() % 48), static_cast<std::uint32_t>(rng() % 48)});
      c.scores.push_back(u(rng));
      c.skewness.push_back(u(rng));
    }
    r.correspondences = c;
    r.provenance.anchor_index = rng() % 100;
    r.provenance.anchor_score = u(rng);
    r.provenance.anchor_skewness = u(rng);
    r.provenance.perceptual_distances = {u(rng), u(rng)};
  } else if (rng() & 1) {
    r.provenance.rejection = random_text(rng);
  }
  return r;
}

Outcome roundtrip_gate() {
  std::mt19937_64 rng(2024);
  std::size_t stacks = 0, masks = 0, manifests = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto layers = 1 + static_cast<std::uint32_t>(rng() % 4);
    const auto h = 1 + static_cast<std::uint32_t>(rng() % 12), w = 1 + static_cast<std::uint32_t>(rng() % 12);
    const auto stack = testing::random_stack(rng, layers, h, w, 1 + static_cast<std::uint32_t>(rng() % 9),
                                             static_cast<std::uint32_t>(rng() % 20));
    std::ostringstream a;
    write_stack(stack, a);
    std::istringstream in(a.str());
    std::ostringstream b;
    write_stack(read_stack(in), b);
    stacks += a.str() == b.str();

    const auto mask = testing::random_mask(rng, h, w, std::uniform_real_distribution<double>(0, 1)(rng));
    std::ostringstream ma;
    write_mask(mask, ma);
    std::istringstream min(ma.str());
    std::ostringstream mb;
    const auto back = read_mask(min);
    write_mask(back, mb);
    masks += ma.str() == mb.str() && back == mask;

    std::ostringstream ja;
    const auto n = 1 + rng() % 4;
    std::vector<SampleRecord> recs;
    for (std::size_t k = 0; k < n; ++k) {
      recs.push_back(random_record(rng));
      append_sample(ja, recs.back());
    }
    std::istringstream jin(ja.str());
    const auto read = read_manifest(jin, ".", ManifestCheck{false, false});
    std::ostringstream jb;
    for (const auto& r : read) append_sample(jb, r);
    manifests += ja.str() == jb.str() && read == recs;
  }
  return {stacks == 1000 && masks == 1000 && manifests == 1000,
          fmt("byte-identical: stacks %zu/1000, masks %zu/1000, manifests %zu/1000", stacks, masks, manifests)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work = (fs::temp_directory_path() / "mtg_acceptance").string();
  std::vector<int> only;
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--only", only, "Run just these criteria (6 needs 5)");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  E2EState state;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> gates = {
      {"gradient check", gradient_gate},
      {"formula oracles", formula_gate},
      {"matching", matching_gate},
      {"pipeline", [&] { return pipeline_gate(work); }},
      {"end to end", [&] { return e2e_gate(work, state); }},
      {"vsm properties", [&] { return vsm_gate(state); }},
      {"determinism", [&] { return determinism_gate(work); }},
      {"round trips", roundtrip_gate},
  };
  int failed = 0;
  for (std::size_t i = 0; i < gates.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = gates[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, gates[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
