// Python bindings: file formats, the synthetic generator, and VSM scoring.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "mtg/checkpoint.hpp"
#include "mtg/config.hpp"
#include "mtg/correspondence.hpp"
#include "mtg/dataset.hpp"
#include "mtg/error.hpp"
#include "mtg/eval.hpp"
#include "mtg/vsm.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace mtg;

namespace {

using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;

// {layer_id: float32 array (H, W, C)}
py::dict stack_to_dict(const FeatureStack& s) {
  py::dict out;
  for (const auto& l : s.layers) {
    F32 a({py::ssize_t(l.height), py::ssize_t(l.width), py::ssize_t(l.channels)});
    std::memcpy(a.mutable_data(), l.values.data(), l.values.size() * sizeof(float));
    out[py::int_(l.layer_id)] = a;
  }
  return out;
}

FeatureStack dict_to_stack(const py::dict& layers, const std::string& image_id) {
  FeatureStack s;
  s.image_id = image_id;
  for (const auto& [key, value] : layers) {
    const auto a = value.cast<F32>();
    if (a.ndim() != 3) fail(ErrorCode::dimension_mismatch, "layer arrays must be (H, W, C)");
    LayerBlock l;
    l.layer_id = key.cast<std::uint32_t>();
    l.height = static_cast<std::uint32_t>(a.shape(0));
    l.width = static_cast<std::uint32_t>(a.shape(1));
    l.channels = static_cast<std::uint32_t>(a.shape(2));
    l.values.assign(a.data(), a.data() + a.size());
    s.layers.push_back(std::move(l));
  }
  std::sort(s.layers.begin(), s.layers.end(), [](const auto& a, const auto& b) { return a.layer_id < b.layer_id; });
  s.validate();
  return s;
}

py::array_t<bool> mask_to_array(const Mask& m) {
  py::array_t<bool> a({py::ssize_t(m.height), py::ssize_t(m.width)});
  auto* d = a.mutable_data();
  for (std::size_t i = 0; i < m.size(); ++i) d[i] = m.bits[i] != 0;
  return a;
}

Mask array_to_mask(const py::array_t<bool, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) fail(ErrorCode::dimension_mismatch, "masks must be 2-D");
  Mask m(static_cast<std::uint32_t>(a.shape(0)), static_cast<std::uint32_t>(a.shape(1)));
  for (std::size_t i = 0; i < m.size(); ++i) m.bits[i] = a.data()[i] ? 1 : 0;
  return m;
}

std::vector<double> to_vec(const F64& a) { return {a.data(), a.data() + a.size()}; }

py::object corr_or_none(const Correlation& c) { return c.defined ? py::object(py::float_(c.value)) : py::none(); }

py::dict score_pair(const fs::path& stack_1, const fs::path& stack_2, const fs::path& checkpoint,
                    std::optional<fs::path> mask_1, std::optional<fs::path> mask_2, double t_s, double t_v,
                    const std::string& direction, bool restrict_to_subject) {
  VsmConfig cfg;
  cfg.semantic_threshold = t_s;
  cfg.visual_threshold = t_v;
  cfg.direction = vsm_direction_from_string(direction);
  cfg.restrict_to_subject = restrict_to_subject;
  const auto ck = load_checkpoint(checkpoint);
  std::optional<Mask> m1, m2;
  if (mask_1) m1 = load_mask(*mask_1);
  if (mask_2) m2 = load_mask(*mask_2);
  const auto r = vsm(load_stack(stack_1), load_stack(stack_2), ck.params, m1 ? &*m1 : nullptr, m2 ? &*m2 : nullptr,
                     cfg);
  const auto& p = r.primary();
  F32 map({py::ssize_t(p.grid_height), py::ssize_t(p.grid_width)});
  std::copy(p.map.begin(), p.map.end(), map.mutable_data());
  py::dict out;
  out["vsm"] = r.vsm ? py::object(py::float_(*r.vsm)) : py::none();
  out["matched"] = p.matched.size();
  out["map"] = map;
  out["report"] = to_json(r).dump();
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core: feature stacks, masks, synthetic data and VSM scoring";

  py::register_exception<Error>(m, "MtgError", PyExc_RuntimeError);

  m.def("load_stack", [](const fs::path& p) { return stack_to_dict(load_stack(p)); }, py::arg("path"),
        "Read an MTGF stack as {layer_id: float32 array (H, W, C)}.");
  m.def(
      "save_stack",
      [](const py::dict& layers, const fs::path& p) { save_stack(dict_to_stack(layers, p.stem().string()), p); },
      py::arg("layers"), py::arg("path"), "Write {layer_id: array (H, W, C)} as an MTGF stack.");
  m.def("load_mask", [](const fs::path& p) { return mask_to_array(load_mask(p)); }, py::arg("path"));
  m.def(
      "save_mask", [](const py::array_t<bool, py::array::c_style | py::array::forcecast>& a,
                      const fs::path& p) { save_mask(array_to_mask(a), p); },
      py::arg("mask"), py::arg("path"));

  m.def("skewness", [](const F64& x) { return sample_skewness(to_vec(x)).value; }, py::arg("values"));
  m.def("spearman", [](const F64& x, const F64& y) { return corr_or_none(spearman(to_vec(x), to_vec(y))); });
  m.def("pearson", [](const F64& x, const F64& y) { return corr_or_none(pearson(to_vec(x), to_vec(y))); });
  m.def(
      "oracle_score",
      [](const py::array_t<bool, py::array::c_style | py::array::forcecast>& region,
         const py::array_t<bool, py::array::c_style | py::array::forcecast>& subject) {
        return oracle_score(array_to_mask(region), array_to_mask(subject));
      },
      py::arg("region"), py::arg("subject"));

  m.def(
      "synth_generate",
      [](const std::string& config_json, std::uint64_t seed, std::size_t count, const fs::path& out) {
        auto cfg = run_config_from_json(nlohmann::json::parse(config_json)).synth;
        cfg.seed = seed;
        cfg.count = count;
        return synth_generate(cfg, out).size();
      },
      py::arg("config_json"), py::arg("seed"), py::arg("count"), py::arg("out_dir"),
      "Write a synthetic manifest of consistent pairs; returns the record count.");
  m.def(
      "run_pipeline",
      [](const std::string& config_json, const fs::path& manifest, std::uint64_t seed, const fs::path& out,
         std::optional<std::size_t> max_accepted) {
        auto cfg = run_config_from_json(nlohmann::json::parse(config_json));
        cfg.pipeline.seed = seed;
        return run_pipeline(manifest, cfg.pipeline, out, cfg.inpaint, max_accepted).to_json().dump();
      },
      py::arg("config_json"), py::arg("manifest"), py::arg("seed"), py::arg("out_dir"),
      py::arg("max_accepted") = py::none(), "Run the inconsistency pipeline; returns the stats as JSON text.");

  m.def("vsm", &score_pair, py::arg("stack_1"), py::arg("stack_2"), py::arg("checkpoint"),
        py::arg("mask_1") = py::none(), py::arg("mask_2") = py::none(), py::arg("t_s") = 0.7, py::arg("t_v") = 0.6,
        py::arg("direction") = "1to2", py::arg("restrict_to_subject") = true);
}
