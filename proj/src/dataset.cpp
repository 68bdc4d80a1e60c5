#include "afford3d/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include "afford3d/error.hpp"
#include "afford3d/formats.hpp"
#include "afford3d/geometry.hpp"
#include "afford3d/hash.hpp"
#include "afford3d/kdtree.hpp"

namespace afford3d::dataset {

const char* to_string(Split split) { return split == Split::Train ? "train" : "test"; }

namespace {

constexpr std::string_view kManifestHeader = "#afford3d-manifest v1";
constexpr std::string_view kTaxonomyDirective = "#taxonomy\t";

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::vector<std::string> split_words(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace

// -------------------------------------------------------------- taxonomy

bool Taxonomy::has_affordance(const std::string& name) const { return contains(affordances, name); }
bool Taxonomy::has_object(const std::string& name) const { return contains(objects, name); }

Taxonomy parse_taxonomy(const std::string& text, const std::string& origin) {
  Taxonomy tax;
  enum class Section { None, Affordances, Objects, Rules } section = Section::None;
  std::set<std::pair<std::string, std::string>> rule_keys;
  const auto lines = lines_of(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string where = origin + ":" + std::to_string(ln + 1) + ": ";
    const auto words = split_words(lines[ln]);
    if (words.empty() || words[0].starts_with("#")) continue;
    if (words.size() == 1 && words[0].front() == '[') {
      if (words[0] == "[affordances]") section = Section::Affordances;
      else if (words[0] == "[objects]") section = Section::Objects;
      else if (words[0] == "[rules]") section = Section::Rules;
      else fail(ErrorKind::Format, where + "unknown section " + words[0]);
      continue;
    }
    switch (section) {
      case Section::None:
        fail(ErrorKind::Format, where + "entry outside of a section");
      case Section::Affordances:
      case Section::Objects: {
        auto& list = section == Section::Affordances ? tax.affordances : tax.objects;
        for (const auto& w : words) {
          if (contains(list, w)) fail(ErrorKind::Taxonomy, where + "duplicate name '" + w + "'");
          list.push_back(w);
        }
        break;
      }
      case Section::Rules: {
        if (words.size() != 3) fail(ErrorKind::Format, where + "expected 'action_pattern object_class affordance'");
        Rule r{words[0], words[1], words[2]};
        if (!tax.has_affordance(r.affordance)) {
          fail(ErrorKind::Taxonomy, where + "rule maps to unknown affordance '" + r.affordance + "'");
        }
        if (r.object_class != "*" && !tax.has_object(r.object_class)) {
          fail(ErrorKind::Taxonomy, where + "rule names unknown object class '" + r.object_class + "'");
        }
        if (!rule_keys.emplace(r.action_pattern, r.object_class).second) {
          fail(ErrorKind::Taxonomy, where + "duplicate rule key (" + r.action_pattern + ", " + r.object_class + ")");
        }
        tax.rules.push_back(std::move(r));
        break;
      }
    }
  }
  return tax;
}

std::string format_taxonomy(const Taxonomy& tax) {
  std::string out = "[affordances]\n";
  for (const auto& a : tax.affordances) out += a + "\n";
  out += "[objects]\n";
  for (const auto& o : tax.objects) out += o + "\n";
  out += "[rules]\n";
  for (const auto& r : tax.rules) out += r.action_pattern + " " + r.object_class + " " + r.affordance + "\n";
  return out;
}

// -------------------------------------------------------------- manifest

Manifest parse_manifest(const std::string& text, const Taxonomy& taxonomy, const std::string& origin) {
  Manifest m;
  m.taxonomy = taxonomy;
  const auto lines = lines_of(text);
  if (lines.empty() || lines[0] != kManifestHeader) {
    fail(ErrorKind::Format, origin + ":1: expected header '" + std::string(kManifestHeader) + "'");
  }
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    const std::string& line = lines[ln];
    const std::string where = origin + ":" + std::to_string(ln + 1) + ": ";
    if (line.starts_with(kTaxonomyDirective)) {
      m.taxonomy_ref = line.substr(kTaxonomyDirective.size());
      continue;
    }
    if (line.empty() || line.starts_with("#")) continue;
    const auto f = split_fields(line, '\t');
    if (f.size() != 6) fail(ErrorKind::Format, where + "expected 6 tab-separated fields, got " + std::to_string(f.size()));
    for (const auto& field : f) {
      if (field.empty()) fail(ErrorKind::Format, where + "empty field");
    }
    ManifestEntry e{f[0], f[1], f[2], f[3], f[4], Split::Train};
    if (f[5] == "train") e.split = Split::Train;
    else if (f[5] == "test") e.split = Split::Test;
    else fail(ErrorKind::Format, where + "split must be 'train' or 'test', got '" + f[5] + "'");
    if (!taxonomy.has_affordance(e.affordance_type)) {
      fail(ErrorKind::Taxonomy, where + "affordance '" + e.affordance_type + "' is not in the taxonomy");
    }
    if (!taxonomy.has_object(e.object_class)) {
      fail(ErrorKind::Taxonomy, where + "object class '" + e.object_class + "' is not in the taxonomy");
    }
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty()) m.warnings.push_back(origin + ": manifest has no entries");
  return m;
}

std::string format_manifest(const Manifest& m) {
  std::string out = std::string(kManifestHeader) + "\n";
  out += std::string(kTaxonomyDirective) + m.taxonomy_ref + "\n";
  for (const auto& e : m.entries) {
    out += e.video_id + "\t" + e.embedding_source + "\t" + e.object_class + "\t" + e.affordance_type + "\t" +
           e.point_cloud_path + "\t" + to_string(e.split) + "\n";
  }
  return out;
}

Manifest load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::Reference, "manifest not found: " + path.string());
  const std::string text = read_text_file(path);
  const std::filesystem::path base = path.parent_path();

  // The taxonomy reference lives in the manifest itself; peek at it first.
  std::string taxonomy_ref = "taxonomy.txt";
  for (const auto& line : lines_of(text)) {
    if (line.starts_with(kTaxonomyDirective)) taxonomy_ref = line.substr(kTaxonomyDirective.size());
  }
  const auto taxonomy_path = base / taxonomy_ref;
  if (!std::filesystem::exists(taxonomy_path)) {
    fail(ErrorKind::Reference, "taxonomy not found: " + taxonomy_path.string());
  }
  const Taxonomy taxonomy = parse_taxonomy(read_text_file(taxonomy_path), taxonomy_path.string());

  Manifest m = parse_manifest(text, taxonomy, path.string());
  m.base_dir = base;
  m.taxonomy_ref = taxonomy_ref;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    if (!std::filesystem::exists(m.resolve(e.point_cloud_path))) {
      fail(ErrorKind::Reference, path.string() + ": entry " + std::to_string(i + 1) + " (" + e.video_id +
                                     "): point cloud not found: " + e.point_cloud_path);
    }
    if (e.embedding_source != kSyntheticSource && !std::filesystem::exists(m.resolve(e.embedding_source))) {
      fail(ErrorKind::Reference, path.string() + ": entry " + std::to_string(i + 1) + " (" + e.video_id +
                                     "): embedding file not found: " + e.embedding_source);
    }
  }
  return m;
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  write_text_file(path, format_manifest(manifest));
}

// --------------------------------------------------------------- pairing

PairingReport validate_pairing(const std::vector<ManifestEntry>& entries) {
  PairingReport report;
  // affordance -> video -> clouds, affordance -> cloud -> videos (test only)
  std::map<std::string, std::map<std::string, std::set<std::string>>> clouds_of, videos_of;
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  for (const auto& e : entries) {
    if (!seen.emplace(e.affordance_type, e.video_id, e.point_cloud_path).second) {
      report.violations.push_back("duplicate entry (" + e.affordance_type + ", " + e.video_id + ", " +
                                  e.point_cloud_path + ")");
    }
    if (e.split != Split::Test) continue;
    clouds_of[e.affordance_type][e.video_id].insert(e.point_cloud_path);
    videos_of[e.affordance_type][e.point_cloud_path].insert(e.video_id);
  }
  for (const auto& [aff, videos] : clouds_of) {
    for (const auto& [video, clouds] : videos) {
      if (clouds.size() > 1) {
        report.violations.push_back("test video '" + video + "' (" + aff + ") is paired with " +
                                    std::to_string(clouds.size()) + " point clouds");
      }
    }
  }
  for (const auto& [aff, clouds] : videos_of) {
    for (const auto& [cloud, videos] : clouds) {
      if (videos.size() > 1) {
        report.violations.push_back("test point cloud '" + cloud + "' (" + aff + ") is shared by " +
                                    std::to_string(videos.size()) + " videos");
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------- splits

std::vector<ManifestEntry> make_splits(std::vector<ManifestEntry> entries, const SplitSpec& spec) {
  if (spec.mode == SplitSpec::Mode::Unseen) {
    if (spec.held_out_objects.empty() && spec.held_out_affordances.empty()) {
      fail(ErrorKind::Config, "unseen split needs at least one held-out object class or affordance");
    }
    std::size_t train = 0;
    for (auto& e : entries) {
      const bool held = contains(spec.held_out_objects, e.object_class) ||
                        contains(spec.held_out_affordances, e.affordance_type);
      e.split = held ? Split::Test : Split::Train;
      train += !held;
    }
    if (train == 0) fail(ErrorKind::Config, "unseen hold-out covers every entry; no training data left");
    return entries;
  }

  if (!(spec.test_ratio >= 0.0 && spec.test_ratio < 1.0)) fail(ErrorKind::Config, "test ratio must be in [0, 1)");
  // Stratify by (object, affordance); each group keeps at least one train
  // entry so every test pair also occurs in train.
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    groups[{entries[i].object_class, entries[i].affordance_type}].push_back(i);
  }
  std::mt19937_64 rng(spec.seed);
  for (auto& [key, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto n = members.size();
    auto n_test = static_cast<std::size_t>(std::floor(spec.test_ratio * static_cast<double>(n) + 0.5));
    n_test = std::min(n_test, n - 1);
    for (std::size_t k = 0; k < n; ++k) entries[members[k]].split = k < n_test ? Split::Test : Split::Train;
  }
  return entries;
}

// -------------------------------------------------------- rule mapping

std::optional<std::string> map_action_to_affordance(const std::string& action, const std::string& object_class,
                                                    const Taxonomy& taxonomy) {
  // Score: exact match beats any prefix; longer prefixes beat shorter ones.
  auto score = [&](const Rule& r) -> long {
    const std::string& p = r.action_pattern;
    if (!p.empty() && p.back() == '*') {
      const std::string prefix = p.substr(0, p.size() - 1);
      return action.starts_with(prefix) ? static_cast<long>(prefix.size()) : -1;
    }
    return p == action ? std::numeric_limits<long>::max() : -1;
  };
  for (const bool specific : {true, false}) {
    const Rule* best = nullptr;
    long best_score = -1;
    for (const auto& r : taxonomy.rules) {
      const bool tier = specific ? r.object_class == object_class : r.object_class == "*";
      if (!tier) continue;
      const long s = score(r);
      if (s > best_score) {
        best_score = s;
        best = &r;
      }
    }
    if (best) return best->affordance;
  }
  return std::nullopt;
}

// ---------------------------------------------------------- synthesizer

void SynthConfig::validate() const {
  if (types < 1 || types > synth_affordances().size()) {
    fail(ErrorKind::Parameter, "synth: types must be in [1, " + std::to_string(synth_affordances().size()) + "]");
  }
  if (samples_per_type < 1) fail(ErrorKind::Parameter, "synth: need at least one sample per type");
  if (points < 32) fail(ErrorKind::Parameter, "synth: need at least 32 points per cloud");
  if (!(noise >= 0.0) || !(soft_boundary >= 0.0)) fail(ErrorKind::Parameter, "synth: noise and soft boundary must be >= 0");
  if (!(test_ratio >= 0.0 && test_ratio < 1.0)) fail(ErrorKind::Parameter, "synth: test ratio must be in [0, 1)");
}

const std::vector<std::string>& synth_affordances() {
  static const std::vector<std::string> names = {"grasp", "open", "support", "push"};
  return names;
}

const std::vector<std::string>& synth_objects() {
  static const std::vector<std::string> names = {"mug", "kettle", "jar", "pitcher"};
  return names;
}

namespace {

enum class Part { Body, Top, Bottom, Handle };

struct ShapeParams {
  double radius, height, handle_radius;
};

ShapeParams class_shape(std::size_t object_index) {
  static const ShapeParams shapes[] = {{0.45, 0.9, 0.25}, {0.6, 0.7, 0.3}, {0.5, 1.1, 0.2}, {0.4, 1.2, 0.3}};
  return shapes[object_index % 4];
}

struct SynthCloud {
  std::vector<Vec3> coords;
  std::vector<Part> parts;
  std::vector<char> push_zone;  // body points opposite the handle, lower half
};

// Capped cylinder with a half-ring handle on the +x side, then a random
// rotation about the vertical axis and Gaussian jitter.
SynthCloud make_shape(const ShapeParams& base, std::size_t n, double noise, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double jitter_r = 0.9 + 0.2 * unit(rng);
  const double jitter_h = 0.9 + 0.2 * unit(rng);
  const double radius = base.radius * jitter_r;
  const double height = base.height * jitter_h;
  const double handle = base.handle_radius * jitter_h;
  const double tube = 0.05;
  const double pi = std::numbers::pi;

  const auto n_handle = static_cast<std::size_t>(std::lround(0.20 * static_cast<double>(n)));
  const auto n_top = static_cast<std::size_t>(std::lround(0.15 * static_cast<double>(n)));
  const auto n_bottom = n_top;
  const std::size_t n_body = n - n_handle - n_top - n_bottom;

  SynthCloud c;
  auto push = [&](Vec3 p, Part part, bool zone) {
    c.coords.push_back(p);
    c.parts.push_back(part);
    c.push_zone.push_back(zone);
  };
  for (std::size_t i = 0; i < n_body; ++i) {
    const double theta = 2.0 * pi * unit(rng);
    const double z = height * unit(rng);
    const bool opposite = std::cos(theta) < 0.0 && z < 0.5 * height;
    push({radius * std::cos(theta), radius * std::sin(theta), z}, Part::Body, opposite);
  }
  for (std::size_t i = 0; i < n_top + n_bottom; ++i) {
    const double r = radius * std::sqrt(unit(rng));
    const double theta = 2.0 * pi * unit(rng);
    const bool top = i < n_top;
    push({r * std::cos(theta), r * std::sin(theta), top ? height : 0.0}, top ? Part::Top : Part::Bottom, false);
  }
  for (std::size_t i = 0; i < n_handle; ++i) {
    const double theta = pi * (unit(rng) - 0.5);
    const double phi = 2.0 * pi * unit(rng);
    const double ring = handle + tube * std::cos(phi);
    push({radius + ring * std::cos(theta), tube * std::sin(phi), 0.5 * height + ring * std::sin(theta)}, Part::Handle,
         false);
  }

  const double alpha = 2.0 * pi * unit(rng);
  const double ca = std::cos(alpha), sa = std::sin(alpha);
  for (auto& p : c.coords) {
    const double x = ca * p[0] - sa * p[1];
    const double y = sa * p[0] + ca * p[1];
    p = {x + noise * gauss(rng), y + noise * gauss(rng), p[2] + noise * gauss(rng)};
  }
  return c;
}

bool in_region(const SynthCloud& c, std::size_t i, const std::string& affordance) {
  if (affordance == "grasp") return c.parts[i] == Part::Handle;
  if (affordance == "open") return c.parts[i] == Part::Top;
  if (affordance == "support") return c.parts[i] == Part::Bottom;
  return c.push_zone[i] != 0;  // push
}

Taxonomy synth_taxonomy(std::size_t types, std::size_t objects) {
  Taxonomy tax;
  tax.affordances.assign(synth_affordances().begin(), synth_affordances().begin() + static_cast<std::ptrdiff_t>(types));
  tax.objects.assign(synth_objects().begin(), synth_objects().begin() + static_cast<std::ptrdiff_t>(objects));
  const std::vector<Rule> rules = {
      {"grasp*", "*", "grasp"},   {"hold*", "*", "grasp"},     {"pick*", "*", "grasp"},
      {"open*", "*", "open"},     {"unscrew*", "*", "open"},   {"lift*", "kettle", "open"},
      {"set*", "*", "support"},   {"place*", "*", "support"},  {"push*", "*", "push"},
      {"press*", "*", "push"},    {"shov*", "*", "push"},
  };
  for (const auto& r : rules) {
    if (tax.has_affordance(r.affordance) && (r.object_class == "*" || tax.has_object(r.object_class))) {
      tax.rules.push_back(r);
    }
  }
  return tax;
}

}  // namespace

Manifest synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  const std::size_t n_objects = std::clamp<std::size_t>(config.samples_per_type / 5, 1, synth_objects().size());

  Manifest m;
  m.base_dir = out_dir;
  m.taxonomy = synth_taxonomy(config.types, n_objects);
  std::filesystem::create_directories(out_dir / "clouds");

  for (std::size_t t = 0; t < config.types; ++t) {
    const std::string& affordance = synth_affordances()[t];
    for (std::size_t s = 0; s < config.samples_per_type; ++s) {
      const std::size_t object_index = s % n_objects;
      char id[64];
      std::snprintf(id, sizeof(id), "%s_%03zu", affordance.c_str(), s);
      std::mt19937_64 rng(fnv1a(id, config.seed + 1));
      const SynthCloud shape = make_shape(class_shape(object_index), config.points, config.noise, rng);

      PointCloud cloud;
      cloud.coords = shape.coords;
      std::vector<double> labels(shape.coords.size(), 0.0);
      std::vector<Vec3> region;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (in_region(shape, i, affordance)) {
          labels[i] = 1.0;
          region.push_back(shape.coords[i]);
        }
      }
      if (config.soft_boundary > 0.0 && !region.empty()) {
        const SpatialIndex index(region);
        const double inv = 1.0 / (2.0 * config.soft_boundary * config.soft_boundary);
        for (std::size_t i = 0; i < labels.size(); ++i) {
          if (labels[i] == 1.0) continue;
          labels[i] = std::exp(-index.knn(shape.coords[i], 1).sq_dists[0] * inv);
        }
      }
      cloud.labels = std::move(labels);

      const std::string rel = std::string("clouds/") + id + ".pc";
      write_point_cloud(out_dir / rel, cloud);
      m.entries.push_back({std::string("vid_") + id, kSyntheticSource, synth_objects()[object_index], affordance, rel,
                           Split::Train});
    }
  }

  SplitSpec split;
  split.mode = SplitSpec::Mode::Seen;
  split.seed = config.seed;
  split.test_ratio = config.test_ratio;
  m.entries = make_splits(std::move(m.entries), split);

  write_text_file(out_dir / m.taxonomy_ref, format_taxonomy(m.taxonomy));
  save_manifest(out_dir / "manifest.tsv", m);
  return m;
}

}  // namespace afford3d::dataset
