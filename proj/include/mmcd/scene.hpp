#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mmcd/tensor.hpp"

namespace mmcd::scene {

// Land cover classes.
inline constexpr int kOther = 0;
inline constexpr int kBuilding = 1;
inline constexpr int kRoad = 2;
inline constexpr int kWater = 3;
inline constexpr int kNumLandClasses = 4;

// Change labels: 0 background, 1..3 added {building,road,water},
// 4..6 removed {building,road,water}.
inline constexpr int kNumChangeClasses = 7;

using LandCoverMap = IntTensor;    // (H,W), values 0..3
using ChangeLabelMap = IntTensor;  // (H,W), values 0..6

struct Rect {
    long x = 0, y = 0, w = 0, h = 0;
};
struct Disk {
    double cx = 0, cy = 0, r = 0;
};
struct Segment {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    double half_width = 1.0;
};

enum class GeometryKind { Rect, Disk, Segment };

struct Geometry {
    GeometryKind kind = GeometryKind::Rect;
    Rect rect;
    Disk disk;
    Segment seg;

    static Geometry of(Rect r) { Geometry g; g.kind = GeometryKind::Rect; g.rect = r; return g; }
    static Geometry of(Disk d) { Geometry g; g.kind = GeometryKind::Disk; g.disk = d; return g; }
    static Geometry of(Segment s) { Geometry g; g.kind = GeometryKind::Segment; g.seg = s; return g; }

    // Flat cell indices covered inside an h x w grid (cell-center sampling).
    std::vector<long> footprint(long h, long w) const;
};

struct ChangeEvent {
    int land_class = kBuilding;  // 1..3
    bool removal = false;
    Geometry geometry;
};

struct ChangeSpec {
    std::vector<ChangeEvent> events;
};

struct SceneConfig {
    long size = 64;

    int buildings_min = 2, buildings_max = 4;
    int roads_min = 1, roads_max = 2;
    int water_min = 1, water_max = 2;
    long building_side_min = 6, building_side_max = 12;
    double road_half_width_min = 1.0, road_half_width_max = 1.6;
    double water_radius_min = 4.0, water_radius_max = 8.0;

    int events_min = 1, events_max = 4;

    double optical_noise = 0.04;     // additive smooth noise amplitude, <= 0.05
    double speckle_variance = 0.25;  // 1/looks; 0 disables speckle
};

// Epoch-1 land cover. Deterministic in (config, seed).
LandCoverMap synth_landcover(const SceneConfig& cfg, std::uint64_t seed);

// Epoch-2 map: "add" events write their class onto cells that are currently 0,
// "remove" events clear cells currently equal to their class. Overlapping
// events with different (class, direction) raise ConflictError; violated
// preconditions raise InvalidArgument.
LandCoverMap apply_changes(const LandCoverMap& base, const ChangeSpec& spec);

// Per-cell transition table between the two epochs.
ChangeLabelMap change_label(const LandCoverMap& before, const LandCoverMap& after);

// (3,H,W) in [0,1]: flat class colors + additive smooth texture noise.
Tensor render_optical(const LandCoverMap& map, std::uint64_t seed, double noise_amp);

// (4,H,W) in [0,1]: per class/polarization backscatter with unit-mean
// multiplicative gamma speckle. variance 0 disables speckle.
Tensor render_sar(const LandCoverMap& map, std::uint64_t seed, double speckle_variance);

const std::array<std::array<double, 3>, kNumLandClasses>& optical_palette();
const std::array<std::array<double, 4>, kNumLandClasses>& sar_backscatter();

struct Sample {
    LandCoverMap before;
    LandCoverMap after;
    ChangeSpec spec;
    Tensor optical;  // epoch-1, (3,H,W)
    Tensor sar;      // epoch-2, (4,H,W)
    ChangeLabelMap label;
};

// Full generation pipeline for one sample; all randomness derives from seed.
Sample generate_sample(const SceneConfig& cfg, std::uint64_t seed);

// Largest-remainder apportionment of `count` into parts proportional to
// `ratios` (ties broken toward earlier entries).
std::vector<long> largest_remainder_split(long count, const std::vector<double>& ratios);

inline const std::array<std::string, 3> kSplitNames = {"train", "test", "val"};

struct ManifestEntry {
    std::string id;
    std::string split;
    std::uint64_t seed = 0;
};

struct Manifest {
    std::uint64_t seed = 0;
    long count = 0;
    long size = 0;
    std::array<long, 3> split_sizes{0, 0, 0};
    std::vector<ManifestEntry> samples;
};

// Writes <root>/<split>/<id>/{opt.png, sar_hh.png, sar_hv.png, sar_vh.png,
// sar_vv.png, label.png} plus <root>/manifest.json. Returns the manifest.
Manifest build_dataset(const std::string& root, long count, const SceneConfig& cfg,
                       const std::array<double, 3>& split_ratios, std::uint64_t seed);

Manifest read_manifest(const std::string& root);

struct DatasetSample {
    std::string id;
    Tensor optical;   // (3,H,W)
    Tensor sar;       // (4,H,W)
    IntTensor label;  // (H,W)
};

std::vector<DatasetSample> load_split(const std::string& root, const std::string& split);
// Loads one sample directory (opt.png + sar_*.png [+ label.png if present]).
DatasetSample load_sample_dir(const std::string& dir);

}  // namespace mmcd::scene
