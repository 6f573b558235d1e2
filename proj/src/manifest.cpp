#include "mtg/manifest.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "mtg/error.hpp"

namespace mtg {

using nlohmann::json;

namespace {

json ref_json(const ArtifactRef& ref) { return json{{"image_id", ref.image_id}, {"stack_path", ref.stack_path}}; }

ArtifactRef ref_from(const json& j) { return ArtifactRef{j.at("image_id").get<std::string>(), j.at("stack_path").get<std::string>()}; }

json points_json(const std::vector<GridPoint>& pts) {
  json arr = json::array();
  for (const auto& p : pts) arr.push_back(json::array({p.x, p.y}));
  return arr;
}

std::vector<GridPoint> points_from(const json& j) {
  std::vector<GridPoint> pts;
  pts.reserve(j.size());
  for (const auto& p : j) pts.push_back(GridPoint{p.at(0).get<std::uint32_t>(), p.at(1).get<std::uint32_t>()});
  return pts;
}

template <class T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <class T>
std::optional<T> optional_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace

json to_json(const SampleRecord& r) {
  json j;
  j["sample_id"] = r.sample_id;
  j["consistent"] = json::array({ref_json(r.consistent_1), ref_json(r.consistent_2)});
  if (r.inconsistent_1 && r.inconsistent_2) {
    j["inconsistent"] = json::array({ref_json(*r.inconsistent_1), ref_json(*r.inconsistent_2)});
  } else {
    j["inconsistent"] = nullptr;
  }
  j["subject_masks"] = json::array({r.subject_mask_1, r.subject_mask_2});
  if (r.region_mask_1 && r.region_mask_2) {
    j["region_masks"] = json::array({*r.region_mask_1, *r.region_mask_2});
  } else {
    j["region_masks"] = nullptr;
  }
  if (r.correspondences) {
    const auto& c = *r.correspondences;
    j["correspondences"] = json{{"points_1", points_json(c.points_a)},
                                {"points_2", points_json(c.points_b)},
                                {"scores", c.scores},
                                {"skewness", c.skewness}};
  } else {
    j["correspondences"] = nullptr;
  }
  j["subject_prompt"] = r.subject_prompt;
  j["target_prompt"] = r.target_prompt;
  const auto& p = r.provenance;
  j["provenance"] = json{{"source", p.source},
                         {"seed", p.seed},
                         {"world", p.world},
                         {"anchor_index", optional_json(p.anchor_index)},
                         {"anchor_score", optional_json(p.anchor_score)},
                         {"anchor_skewness", optional_json(p.anchor_skewness)},
                         {"perceptual_distances", p.perceptual_distances},
                         {"rejection", optional_json(p.rejection)}};
  return j;
}

SampleRecord record_from_json(const json& j) {
  SampleRecord r;
  r.sample_id = j.at("sample_id").get<std::string>();
  const auto& cons = j.at("consistent");
  if (cons.size() != 2) fail(ErrorCode::invariant, "record '" + r.sample_id + "': 'consistent' needs two entries");
  r.consistent_1 = ref_from(cons.at(0));
  r.consistent_2 = ref_from(cons.at(1));
  if (j.contains("inconsistent") && !j.at("inconsistent").is_null()) {
    r.inconsistent_1 = ref_from(j.at("inconsistent").at(0));
    r.inconsistent_2 = ref_from(j.at("inconsistent").at(1));
  }
  r.subject_mask_1 = j.at("subject_masks").at(0).get<std::string>();
  r.subject_mask_2 = j.at("subject_masks").at(1).get<std::string>();
  if (j.contains("region_masks") && !j.at("region_masks").is_null()) {
    r.region_mask_1 = j.at("region_masks").at(0).get<std::string>();
    r.region_mask_2 = j.at("region_masks").at(1).get<std::string>();
  }
  if (j.contains("correspondences") && !j.at("correspondences").is_null()) {
    const auto& c = j.at("correspondences");
    CorrespondenceSet cs;
    cs.points_a = points_from(c.at("points_1"));
    cs.points_b = points_from(c.at("points_2"));
    cs.scores = c.at("scores").get<std::vector<double>>();
    cs.skewness = c.at("skewness").get<std::vector<double>>();
    r.correspondences = std::move(cs);
  }
  r.subject_prompt = j.value("subject_prompt", "");
  r.target_prompt = j.value("target_prompt", "");
  const auto& p = j.at("provenance");
  r.provenance.source = p.value("source", "synthetic");
  r.provenance.seed = p.value<std::uint64_t>("seed", 0);
  r.provenance.world = p.contains("world") ? p.at("world") : json();
  r.provenance.anchor_index = optional_from<std::uint64_t>(p, "anchor_index");
  r.provenance.anchor_score = optional_from<double>(p, "anchor_score");
  r.provenance.anchor_skewness = optional_from<double>(p, "anchor_skewness");
  r.provenance.perceptual_distances = p.value("perceptual_distances", std::vector<double>{});
  r.provenance.rejection = optional_from<std::string>(p, "rejection");
  return r;
}

void append_sample(std::ostream& manifest, const SampleRecord& record) {
  manifest << to_json(record).dump() << '\n';
  if (!manifest) fail(ErrorCode::io, "failed appending record '" + record.sample_id + "'");
}

std::filesystem::path resolve(const std::filesystem::path& base_dir, const std::string& relative) {
  const std::filesystem::path p(relative);
  return p.is_absolute() ? p : base_dir / p;
}

namespace {

void check_record(const SampleRecord& r, const std::filesystem::path& base_dir, const ManifestCheck& check) {
  auto require = [&](const std::string& rel, const char* what) {
    if (!std::filesystem::exists(resolve(base_dir, rel))) {
      fail(ErrorCode::integrity, "record '" + r.sample_id + "': unresolvable " + what + " '" + rel + "'");
    }
  };
  if (check.resolve_files) {
    require(r.consistent_1.stack_path, "stack");
    require(r.consistent_2.stack_path, "stack");
    if (r.inconsistent_1) require(r.inconsistent_1->stack_path, "stack");
    if (r.inconsistent_2) require(r.inconsistent_2->stack_path, "stack");
    require(r.subject_mask_1, "mask");
    require(r.subject_mask_2, "mask");
    if (r.region_mask_1) require(*r.region_mask_1, "mask");
    if (r.region_mask_2) require(*r.region_mask_2, "mask");
  }
  if (check.check_regions && r.region_mask_1 && r.region_mask_2) {
    const std::pair<const std::string*, const std::string*> pairs[] = {{&*r.region_mask_1, &r.subject_mask_1},
                                                                        {&*r.region_mask_2, &r.subject_mask_2}};
    int i = 1;
    for (const auto& [region_path, subject_path] : pairs) {
      const auto region = load_mask(resolve(base_dir, *region_path));
      const auto subject = load_mask(resolve(base_dir, *subject_path));
      if (region.height != subject.height || region.width != subject.width || !region.subset_of(subject)) {
        fail(ErrorCode::integrity,
             "record '" + r.sample_id + "': region mask R" + std::to_string(i) + " is not inside subject mask O" +
                 std::to_string(i));
      }
      ++i;
    }
  }
}

}  // namespace

std::vector<SampleRecord> read_manifest(std::istream& in, const std::filesystem::path& base_dir,
                                        const ManifestCheck& check) {
  std::vector<SampleRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    SampleRecord r;
    try {
      r = record_from_json(json::parse(line));
    } catch (const json::exception& e) {
      fail(ErrorCode::invariant, "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    check_record(r, base_dir, check);
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<SampleRecord> load_manifest(const std::filesystem::path& path, const ManifestCheck& check) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open manifest " + path.string());
  return read_manifest(in, path.parent_path(), check);
}

}  // namespace mtg
