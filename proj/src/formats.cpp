#include "afford3d/formats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "afford3d/error.hpp"

namespace afford3d {

// --------------------------------------------------------------- numbers

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::optional<double> parse_double(std::string_view text) {
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

}  // namespace

// ----------------------------------------------------------------- A3DW

namespace {

constexpr char kMagic[4] = {'A', '3', 'D', 'W'};
constexpr std::uint8_t kArchiveVersion = 1;
constexpr std::string_view kHashPrefix = "meta:config_hash:";

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v = 0.0;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail(ErrorKind::Format, "A3DW: truncated at byte " + std::to_string(pos_));
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::string hex16(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
  return s;
}

}  // namespace

const ad::Tensor* TensorArchive::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.tensor;
  return nullptr;
}

std::string encode_archive(const TensorArchive& archive) {
  std::string out(kMagic, kMagic + 4);
  out.push_back(static_cast<char>(kArchiveVersion));
  auto put_record = [&](const std::string& name, const ad::Tensor* t) {
    put_u64(out, name.size());
    out += name;
    if (!t) {
      put_u64(out, 1);
      put_u64(out, 0);
      return;
    }
    put_u64(out, t->rank());
    for (std::size_t e : t->shape()) put_u64(out, e);
    for (double v : t->values()) put_f64(out, v);
  };
  if (archive.config_hash) put_record(std::string(kHashPrefix) + hex16(*archive.config_hash), nullptr);
  for (const auto& t : archive.tensors) put_record(t.name, &t.tensor);
  return out;
}

TensorArchive decode_archive(const std::string& bytes) {
  Reader r(bytes);
  if (r.bytes(4) != std::string(kMagic, 4)) fail(ErrorKind::Format, "A3DW: bad magic");
  const std::uint8_t version = r.u8();
  if (version != kArchiveVersion) fail(ErrorKind::Format, "A3DW: unsupported version " + std::to_string(version));
  TensorArchive archive;
  while (!r.done()) {
    const std::uint64_t name_len = r.u64();
    if (name_len > (1u << 20)) fail(ErrorKind::Format, "A3DW: implausible name length");
    std::string name = r.bytes(name_len);
    const std::uint64_t rank = r.u64();
    if (rank < 1 || rank > 8) fail(ErrorKind::Format, "A3DW: bad rank for " + name);
    std::vector<std::size_t> shape;
    std::uint64_t count = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      shape.push_back(r.u64());
      count *= shape.back();
      if (count > (1ull << 32)) fail(ErrorKind::Format, "A3DW: implausible extent for " + name);
    }
    if (name.starts_with(kHashPrefix)) {
      const std::string hex = name.substr(kHashPrefix.size());
      std::uint64_t h = 0;
      const auto res = std::from_chars(hex.data(), hex.data() + hex.size(), h, 16);
      if (res.ec != std::errc() || hex.size() != 16 || count != 0) fail(ErrorKind::Format, "A3DW: bad hash record");
      archive.config_hash = h;
      continue;
    }
    if (count == 0) fail(ErrorKind::Format, "A3DW: empty tensor " + name);
    std::vector<double> values(count);
    for (auto& v : values) v = r.f64();
    archive.tensors.push_back({std::move(name), ad::Tensor(std::move(shape), std::move(values))});
  }
  return archive;
}

void write_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  write_text_file(path, encode_archive(archive));
}

TensorArchive read_archive(const std::filesystem::path& path) {
  try {
    return decode_archive(read_text_file(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Format) fail(ErrorKind::Format, path.string() + ": " + e.what());
    throw;
  }
}

// ---------------------------------------------------------- point cloud

std::string format_point_cloud(const PointCloud& cloud) {
  std::string out = "#afford3d-pc v1 N=" + std::to_string(cloud.size()) + "\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.coords[i];
    out += format_double(p[0]) + " " + format_double(p[1]) + " " + format_double(p[2]);
    if (cloud.labels) out += " " + format_double((*cloud.labels)[i]);
    out += "\n";
  }
  return out;
}

PointCloud parse_point_cloud(const std::string& text, const std::string& origin) {
  const auto lines = split_lines(text);
  auto where = [&](std::size_t line) { return origin + ":" + std::to_string(line + 1) + ": "; };
  if (lines.empty()) fail(ErrorKind::Format, origin + ": empty point-cloud file");

  const auto header = split_ws(lines[0]);
  if (header.size() != 3 || header[0] != "#afford3d-pc" || header[1] != "v1" || !header[2].starts_with("N=")) {
    fail(ErrorKind::Format, where(0) + "expected header '#afford3d-pc v1 N=<count>'");
  }
  std::size_t declared = 0;
  const auto count_text = header[2].substr(2);
  const auto res = std::from_chars(count_text.data(), count_text.data() + count_text.size(), declared);
  if (res.ec != std::errc() || res.ptr != count_text.data() + count_text.size()) {
    fail(ErrorKind::Format, where(0) + "bad point count");
  }

  PointCloud cloud;
  std::vector<double> labels;
  std::optional<bool> labelled;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    const auto fields = split_ws(lines[ln]);
    if (fields.empty() || fields[0].starts_with("#")) continue;
    if (fields.size() != 3 && fields.size() != 4) fail(ErrorKind::Format, where(ln) + "expected 'x y z [label]'");
    const bool has_label = fields.size() == 4;
    if (labelled && *labelled != has_label) fail(ErrorKind::Format, where(ln) + "label column present on some lines only");
    labelled = has_label;
    double v[4] = {};
    for (std::size_t f = 0; f < fields.size(); ++f) {
      const auto parsed = parse_double(fields[f]);
      if (!parsed) fail(ErrorKind::Format, where(ln) + "invalid or non-finite number '" + std::string(fields[f]) + "'");
      v[f] = *parsed;
    }
    cloud.coords.push_back({v[0], v[1], v[2]});
    if (has_label) {
      if (v[3] < 0.0 || v[3] > 1.0) fail(ErrorKind::Format, where(ln) + "label outside [0,1]");
      labels.push_back(v[3]);
    }
  }
  if (cloud.size() != declared) {
    fail(ErrorKind::Format, origin + ": header declares " + std::to_string(declared) + " points, found " +
                                std::to_string(cloud.size()));
  }
  if (labelled.value_or(false)) cloud.labels = std::move(labels);
  return cloud;
}

void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  write_text_file(path, format_point_cloud(cloud));
}

PointCloud read_point_cloud(const std::filesystem::path& path) {
  return parse_point_cloud(read_text_file(path), path.string());
}

// ------------------------------------------------------------------- PLY

std::array<std::uint8_t, 3> heat_color(double probability) {
  const double p = std::clamp(probability, 0.0, 1.0);
  const auto red = static_cast<std::uint8_t>(std::lround(255.0 * p));
  const auto cyan = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - p) * 0.8));
  return {red, cyan, cyan};
}

std::string format_ply(const ColoredCloud& cloud) {
  if (cloud.colors.size() != cloud.coords.size()) fail(ErrorKind::Shape, "PLY: color count mismatch");
  std::string out = "ply\nformat ascii 1.0\n";
  for (const auto& c : cloud.comments) out += "comment " + c + "\n";
  out += "element vertex " + std::to_string(cloud.coords.size()) + "\n";
  out += "property double x\nproperty double y\nproperty double z\n";
  out += "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (std::size_t i = 0; i < cloud.coords.size(); ++i) {
    const auto& p = cloud.coords[i];
    const auto& c = cloud.colors[i];
    out += format_double(p[0]) + " " + format_double(p[1]) + " " + format_double(p[2]) + " " +
           std::to_string(c[0]) + " " + std::to_string(c[1]) + " " + std::to_string(c[2]) + "\n";
  }
  return out;
}

ColoredCloud parse_ply(const std::string& text) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0] != "ply") fail(ErrorKind::Format, "PLY: missing 'ply' magic");
  ColoredCloud cloud;
  std::size_t vertices = 0;
  std::size_t ln = 1;
  bool ended = false;
  for (; ln < lines.size(); ++ln) {
    const std::string_view line = lines[ln];
    if (line == "end_header") {
      ended = true;
      ++ln;
      break;
    }
    if (line.starts_with("comment ")) {
      cloud.comments.emplace_back(line.substr(8));
    } else if (line.starts_with("element vertex ")) {
      const auto n = line.substr(15);
      if (std::from_chars(n.data(), n.data() + n.size(), vertices).ec != std::errc()) {
        fail(ErrorKind::Format, "PLY: bad vertex count");
      }
    } else if (line != "format ascii 1.0" && !line.starts_with("property ")) {
      fail(ErrorKind::Format, "PLY: unexpected header line '" + std::string(line) + "'");
    }
  }
  if (!ended) fail(ErrorKind::Format, "PLY: missing end_header");
  for (; ln < lines.size() && cloud.coords.size() < vertices; ++ln) {
    const auto f = split_ws(lines[ln]);
    if (f.size() != 6) fail(ErrorKind::Format, "PLY: expected 6 fields on vertex line");
    Vec3 p{};
    for (int a = 0; a < 3; ++a) {
      const auto v = parse_double(f[static_cast<std::size_t>(a)]);
      if (!v) fail(ErrorKind::Format, "PLY: bad coordinate");
      p[static_cast<std::size_t>(a)] = *v;
    }
    std::array<std::uint8_t, 3> c{};
    for (int a = 0; a < 3; ++a) {
      unsigned v = 0;
      const auto s = f[static_cast<std::size_t>(3 + a)];
      if (std::from_chars(s.data(), s.data() + s.size(), v).ec != std::errc() || v > 255) {
        fail(ErrorKind::Format, "PLY: bad color");
      }
      c[static_cast<std::size_t>(a)] = static_cast<std::uint8_t>(v);
    }
    cloud.coords.push_back(p);
    cloud.colors.push_back(c);
  }
  if (cloud.coords.size() != vertices) fail(ErrorKind::Format, "PLY: vertex count mismatch");
  return cloud;
}

}  // namespace afford3d
