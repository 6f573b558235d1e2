#include "mtg/checkpoint.hpp"

#include <fstream>

#include "binary_io.hpp"
#include "mtg/error.hpp"

namespace mtg {

namespace {

constexpr std::uint32_t kMaxDim = 1u << 16;

void write_tensor(detail::LeWriter& w, const std::string& name, const double* data, std::uint32_t rows,
                  std::uint32_t cols) {
  w.str(name);
  w.u32(rows);
  w.u32(cols);
  for (std::size_t i = 0; i < std::size_t{rows} * cols; ++i) w.f64(data[i]);
}

struct RawTensor {
  std::string name;
  std::uint32_t rows = 0, cols = 0;
  std::vector<double> values;
};

RawTensor read_tensor(detail::LeReader& r) {
  RawTensor t;
  t.name = r.str();
  t.rows = r.u32();
  t.cols = r.u32();
  if (t.rows > kMaxDim || t.cols > kMaxDim) fail(ErrorCode::invariant, "MTGP: tensor " + t.name + " is too large");
  t.values.resize(std::size_t{t.rows} * t.cols);
  for (auto& v : t.values) v = r.f64();
  return t;
}

void expect(const RawTensor& t, const char* name, std::uint32_t rows, std::uint32_t cols) {
  if (t.name != name) fail(ErrorCode::invariant, std::string("MTGP: expected tensor ") + name + ", found " + t.name);
  if (t.rows != rows || t.cols != cols) fail(ErrorCode::invariant, std::string("MTGP: tensor ") + name + " has wrong shape");
}

RowMatrix to_matrix(const RawTensor& t) {
  return Eigen::Map<const RowMatrix>(t.values.data(), t.rows, t.cols);
}

Eigen::VectorXd to_vector(const RawTensor& t) {
  return Eigen::Map<const Eigen::VectorXd>(t.values.data(), t.rows);
}

}  // namespace

std::size_t write_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  ckpt.params.validate();
  detail::LeWriter w(out);
  w.magic("MTGP");
  w.u32(kCheckpointFormatVersion);
  w.f64(ckpt.params.tau);
  w.u32(2);
  for (const auto* name : {"semantic", "visual"}) {
    const auto& b = ckpt.params.branch(std::string_view(name) == "semantic" ? Branch::semantic : Branch::visual);
    w.str(name);
    w.u32(static_cast<std::uint32_t>(b.blocks.size()));
    for (std::size_t l = 0; l < b.blocks.size(); ++l) {
      const auto& p = b.blocks[l];
      const auto q = static_cast<std::uint32_t>(p.w_in.rows());
      const auto c = static_cast<std::uint32_t>(p.w_in.cols());
      w.u32(b.layer_ids[l]);
      w.u32(c);
      w.u32(q);
      w.f64(p.weight);
      w.u32(6);
      write_tensor(w, "w_in", p.w_in.data(), q, c);
      write_tensor(w, "b_in", p.b_in.data(), q, 1);
      write_tensor(w, "w_hidden", p.w_hidden.data(), q, q);
      write_tensor(w, "b_hidden", p.b_hidden.data(), q, 1);
      write_tensor(w, "w_out", p.w_out.data(), q, q);
      write_tensor(w, "b_out", p.b_out.data(), q, 1);
    }
  }
  w.str(ckpt.metadata.dump());
  return w.written();
}

Checkpoint read_checkpoint(std::istream& in) {
  detail::LeReader r(in, "MTGP");
  r.expect_magic("MTGP");
  const auto version = r.u32();
  if (version != kCheckpointFormatVersion) {
    fail(ErrorCode::unsupported_version, "MTGP: unsupported format version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.params.tau = r.f64();
  const auto branches = r.u32();
  if (branches != 2) fail(ErrorCode::invariant, "MTGP: expected 2 branches");
  for (const auto* expected_name : {"semantic", "visual"}) {
    const auto name = r.str();
    if (name != expected_name) fail(ErrorCode::invariant, "MTGP: unexpected branch " + name);
    auto& b = ck.params.branch(name == "semantic" ? Branch::semantic : Branch::visual);
    const auto layers = r.u32();
    if (layers > 1024) fail(ErrorCode::invariant, "MTGP: implausible layer count");
    for (std::uint32_t l = 0; l < layers; ++l) {
      b.layer_ids.push_back(r.u32());
      const auto c = r.u32();
      const auto q = r.u32();
      BlockParams p;
      p.weight = r.f64();
      if (r.u32() != 6) fail(ErrorCode::invariant, "MTGP: a block holds 6 tensors");
      auto t = read_tensor(r);
      expect(t, "w_in", q, c);
      p.w_in = to_matrix(t);
      t = read_tensor(r);
      expect(t, "b_in", q, 1);
      p.b_in = to_vector(t);
      t = read_tensor(r);
      expect(t, "w_hidden", q, q);
      p.w_hidden = to_matrix(t);
      t = read_tensor(r);
      expect(t, "b_hidden", q, 1);
      p.b_hidden = to_vector(t);
      t = read_tensor(r);
      expect(t, "w_out", q, q);
      p.w_out = to_matrix(t);
      t = read_tensor(r);
      expect(t, "b_out", q, 1);
      p.b_out = to_vector(t);
      b.blocks.push_back(std::move(p));
    }
  }
  const auto meta = r.str();
  try {
    ck.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invariant, std::string("MTGP: bad metadata: ") + e.what());
  }
  if (!r.at_end()) fail(ErrorCode::invariant, "MTGP: trailing bytes");
  try {
    ck.params.validate();
  } catch (const Error& e) {
    fail(e.code(), std::string("MTGP: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot open " + tmp.string() + " for writing");
    write_checkpoint(ckpt, out);
    out.flush();
    if (!out) fail(ErrorCode::io, "failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::io, "cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace mtg
