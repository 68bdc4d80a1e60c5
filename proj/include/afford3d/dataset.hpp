#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace afford3d::dataset {

enum class Split { Train, Test };
const char* to_string(Split split);

struct ManifestEntry {
  std::string video_id;
  std::string embedding_source;  // "synthetic" or a path relative to the manifest
  std::string object_class;
  std::string affordance_type;
  std::string point_cloud_path;  // relative to the manifest
  Split split = Split::Train;

  bool operator==(const ManifestEntry&) const = default;
};

inline constexpr const char* kSyntheticSource = "synthetic";

/// "action_pattern object_class affordance"; a trailing '*' on the pattern
/// is a prefix match and object "*" matches any object.
struct Rule {
  std::string action_pattern;
  std::string object_class;
  std::string affordance;
};

struct Taxonomy {
  std::vector<std::string> affordances;
  std::vector<std::string> objects;
  std::vector<Rule> rules;

  bool has_affordance(const std::string& name) const;
  bool has_object(const std::string& name) const;
};

Taxonomy parse_taxonomy(const std::string& text, const std::string& origin = "<memory>");
std::string format_taxonomy(const Taxonomy& taxonomy);

struct Manifest {
  std::vector<ManifestEntry> entries;
  Taxonomy taxonomy;
  std::string taxonomy_ref = "taxonomy.txt";  // relative to base_dir
  std::filesystem::path base_dir;
  std::vector<std::string> warnings;

  std::filesystem::path resolve(const std::string& relative) const { return base_dir / relative; }
};

/// Parses manifest text and checks entries against the taxonomy. File
/// references are not checked here.
Manifest parse_manifest(const std::string& text, const Taxonomy& taxonomy, const std::string& origin = "<memory>");
std::string format_manifest(const Manifest& manifest);

/// Reads the manifest and its taxonomy, then checks that every referenced
/// file exists.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct PairingReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

/// Train entries may pair one video with many clouds. Within each affordance
/// type, test entries must pair videos and clouds one-to-one.
PairingReport validate_pairing(const std::vector<ManifestEntry>& entries);

struct SplitSpec {
  enum class Mode { Seen, Unseen };
  Mode mode = Mode::Seen;
  std::uint64_t seed = 0;
  double test_ratio = 0.2;  // seen mode
  std::vector<std::string> held_out_objects;
  std::vector<std::string> held_out_affordances;
};

std::vector<ManifestEntry> make_splits(std::vector<ManifestEntry> entries, const SplitSpec& spec);

/// Rule-table lookup: object-specific rules shadow "*" rules; within a tier
/// an exact pattern beats the longest matching prefix. nullopt = unmapped,
/// left for manual review.
std::optional<std::string> map_action_to_affordance(const std::string& action, const std::string& object_class,
                                                    const Taxonomy& taxonomy);

struct SynthConfig {
  std::size_t types = 2;
  std::size_t samples_per_type = 5;
  std::size_t points = 512;
  double noise = 0.005;
  double soft_boundary = 0.0;  // 0 = hard labels; otherwise Gaussian falloff width
  double test_ratio = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Affordances the generator knows, with the object part each one labels.
const std::vector<std::string>& synth_affordances();
const std::vector<std::string>& synth_objects();

/// Writes manifest.tsv, taxonomy.txt and clouds/ under out_dir and returns
/// the manifest (with a seen split already assigned).
Manifest synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace afford3d::dataset
