#include "tdlab/mnist.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "tdlab/errors.hpp"

namespace tdlab::orchestrator {

namespace {

std::uint32_t read_be32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError(std::string("truncated IDX ") + what);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

void write_be32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

IdxTensor read_idx(const std::filesystem::path& path, std::uint32_t expected_magic) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path.string());
  IdxTensor t;
  t.magic = read_be32(is, "header");
  if (t.magic != expected_magic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "bad IDX magic 0x%08x (expected 0x%08x)", t.magic, expected_magic);
    throw FormatError(buf);
  }
  const std::uint32_t ndim = t.magic & 0xff;
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    t.dims.push_back(read_be32(is, "dimensions"));
    count *= t.dims.back();
  }
  if (count > (std::uint64_t{1} << 34)) throw FormatError("IDX tensor too large");
  t.data.resize(count);
  if (count && !is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(count)))
    throw FormatError("truncated IDX payload in " + path.string());
  return t;
}

void write_idx(const std::filesystem::path& path, const IdxTensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open " + path.string() + " for writing");
  write_be32(os, t.magic);
  for (auto d : t.dims) write_be32(os, d);
  os.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size()));
  if (!os) throw InputError("write failed: " + path.string());
}

Eigen::VectorXd bilinear_resize(const double* image, int side_in, int side_out) {
  if (side_in < 1 || side_out < 1) throw ConfigError("image sides must be positive");
  const double scale = static_cast<double>(side_in) / side_out;
  // per-axis source index pair and weight
  std::vector<int> lo(side_out), hi(side_out);
  std::vector<double> w(side_out);
  for (int i = 0; i < side_out; ++i) {
    const double s = std::clamp((i + 0.5) * scale - 0.5, 0.0, static_cast<double>(side_in - 1));
    lo[i] = static_cast<int>(std::floor(s));
    hi[i] = std::min(lo[i] + 1, side_in - 1);
    w[i] = s - lo[i];
  }
  Eigen::VectorXd out(Eigen::Index{side_out} * side_out);
  for (int r = 0; r < side_out; ++r)
    for (int c = 0; c < side_out; ++c) {
      auto px = [&](int y, int x) { return image[y * side_in + x]; };
      const double top = (1 - w[c]) * px(lo[r], lo[c]) + w[c] * px(lo[r], hi[c]);
      const double bot = (1 - w[c]) * px(hi[r], lo[c]) + w[c] * px(hi[r], hi[c]);
      out(r * side_out + c) = (1 - w[r]) * top + w[r] * bot;
    }
  return out;
}

void standardize(Eigen::MatrixXd& m) {
  if (m.size() == 0) throw InputError("empty matrix");
  const double mean = m.mean();
  const double var = (m.array() - mean).square().mean();
  if (!(var > 1e-24)) throw ZeroVarianceError("input has zero variance; cannot standardize");
  m.array() = (m.array() - mean) / std::sqrt(var);
}

Dataset ingest_mnist(const std::filesystem::path& images, const std::filesystem::path& labels,
                     int target_side, int limit) {
  if (target_side < 1) throw ConfigError("target side must be positive");
  const IdxTensor img = read_idx(images, kIdxImagesMagic);
  const IdxTensor lab = read_idx(labels, kIdxLabelsMagic);
  if (img.dims.size() != 3 || img.dims[1] != img.dims[2])
    throw FormatError("expected square images (n x side x side)");
  if (lab.dims.size() != 1) throw FormatError("expected a label vector");
  if (img.dims[0] != lab.dims[0]) throw ConsistencyError("image and label counts differ");
  std::size_t n = img.dims[0];
  if (limit > 0) n = std::min(n, static_cast<std::size_t>(limit));
  const int side = static_cast<int>(img.dims[1]);

  Dataset ds;
  ds.name = images.filename().string();
  ds.inputs.resize(static_cast<Eigen::Index>(n), Eigen::Index{target_side} * target_side);
  std::vector<double> buf(static_cast<std::size_t>(side) * side);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* src = img.data.data() + i * buf.size();
    std::copy(src, src + buf.size(), buf.begin());
    ds.inputs.row(static_cast<Eigen::Index>(i)) = bilinear_resize(buf.data(), side, target_side).transpose();
  }
  standardize(ds.inputs);
  ds.labels.assign(lab.data.begin(), lab.data.begin() + static_cast<std::ptrdiff_t>(n));
  return ds;
}

}  // namespace tdlab::orchestrator
