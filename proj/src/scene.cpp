#include "mmcd/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "mmcd/errors.hpp"
#include "mmcd/png_io.hpp"
#include "mmcd/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mmcd::scene {

namespace {

double point_segment_dist(double px, double py, const Segment& s) {
    const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double qx = s.x0 + t * dx, qy = s.y0 + t * dy;
    return std::hypot(px - qx, py - qy);
}

}  // namespace

std::vector<long> Geometry::footprint(long h, long w) const {
    std::vector<long> cells;
    switch (kind) {
        case GeometryKind::Rect: {
            const long x0 = std::max<long>(0, rect.x), y0 = std::max<long>(0, rect.y);
            const long x1 = std::min(w, rect.x + rect.w), y1 = std::min(h, rect.y + rect.h);
            for (long y = y0; y < y1; ++y)
                for (long x = x0; x < x1; ++x) cells.push_back(y * w + x);
            break;
        }
        case GeometryKind::Disk: {
            const long x0 = std::max<long>(0, static_cast<long>(std::floor(disk.cx - disk.r)));
            const long x1 = std::min(w - 1, static_cast<long>(std::ceil(disk.cx + disk.r)));
            const long y0 = std::max<long>(0, static_cast<long>(std::floor(disk.cy - disk.r)));
            const long y1 = std::min(h - 1, static_cast<long>(std::ceil(disk.cy + disk.r)));
            const double r2 = disk.r * disk.r;
            for (long y = y0; y <= y1; ++y)
                for (long x = x0; x <= x1; ++x) {
                    const double ddx = static_cast<double>(x) - disk.cx;
                    const double ddy = static_cast<double>(y) - disk.cy;
                    if (ddx * ddx + ddy * ddy <= r2) cells.push_back(y * w + x);
                }
            break;
        }
        case GeometryKind::Segment: {
            const double m = seg.half_width;
            const long x0 = std::max<long>(0, static_cast<long>(std::floor(std::min(seg.x0, seg.x1) - m)));
            const long x1 = std::min(w - 1, static_cast<long>(std::ceil(std::max(seg.x0, seg.x1) + m)));
            const long y0 = std::max<long>(0, static_cast<long>(std::floor(std::min(seg.y0, seg.y1) - m)));
            const long y1 = std::min(h - 1, static_cast<long>(std::ceil(std::max(seg.y0, seg.y1) + m)));
            for (long y = y0; y <= y1; ++y)
                for (long x = x0; x <= x1; ++x)
                    if (point_segment_dist(static_cast<double>(x), static_cast<double>(y), seg) <= m)
                        cells.push_back(y * w + x);
            break;
        }
    }
    return cells;
}

namespace {

struct PlacedObject {
    int land_class;
    Geometry geometry;
};

std::vector<PlacedObject> draw_objects(const SceneConfig& cfg, Rng& rng) {
    std::vector<PlacedObject> objs;
    const long s = cfg.size;
    const int nw = static_cast<int>(rng.uniform_int(cfg.water_min, cfg.water_max));
    for (int i = 0; i < nw; ++i) {
        Disk d;
        d.r = rng.uniform(cfg.water_radius_min, cfg.water_radius_max);
        d.cx = rng.uniform(d.r, static_cast<double>(s) - 1.0 - d.r);
        d.cy = rng.uniform(d.r, static_cast<double>(s) - 1.0 - d.r);
        objs.push_back({kWater, Geometry::of(d)});
    }
    const int nr = static_cast<int>(rng.uniform_int(cfg.roads_min, cfg.roads_max));
    for (int i = 0; i < nr; ++i) {
        // Edge-to-edge segment: endpoints on two distinct borders.
        Segment sg;
        sg.half_width = rng.uniform(cfg.road_half_width_min, cfg.road_half_width_max);
        const long e0 = rng.uniform_int(0, 3);
        long e1 = rng.uniform_int(0, 2);
        if (e1 >= e0) ++e1;
        auto border_point = [&](long edge, double& x, double& y) {
            const double t = rng.uniform(0.0, static_cast<double>(s - 1));
            switch (edge) {
                case 0: x = t; y = 0; break;
                case 1: x = t; y = static_cast<double>(s - 1); break;
                case 2: x = 0; y = t; break;
                default: x = static_cast<double>(s - 1); y = t; break;
            }
        };
        border_point(e0, sg.x0, sg.y0);
        border_point(e1, sg.x1, sg.y1);
        objs.push_back({kRoad, Geometry::of(sg)});
    }
    const int nb = static_cast<int>(rng.uniform_int(cfg.buildings_min, cfg.buildings_max));
    for (int i = 0; i < nb; ++i) {
        Rect r;
        r.w = rng.uniform_int(cfg.building_side_min, cfg.building_side_max);
        r.h = rng.uniform_int(cfg.building_side_min, cfg.building_side_max);
        r.x = rng.uniform_int(0, std::max<long>(0, s - r.w));
        r.y = rng.uniform_int(0, std::max<long>(0, s - r.h));
        objs.push_back({kBuilding, Geometry::of(r)});
    }
    return objs;
}

void paint(LandCoverMap& map, const std::vector<PlacedObject>& objs, long h, long w) {
    // Water first, then roads, then buildings; later classes overwrite.
    for (const int cls : {kWater, kRoad, kBuilding})
        for (const PlacedObject& o : objs)
            if (o.land_class == cls)
                for (const long cell : o.geometry.footprint(h, w)) map[cell] = cls;
}

bool acceptable(const LandCoverMap& map, long size) {
    if (size < 64) return true;
    long counts[kNumLandClasses] = {0, 0, 0, 0};
    for (long i = 0; i < map.numel(); ++i) ++counts[map[i]];
    return counts[kBuilding] > 0 && counts[kRoad] > 0 && counts[kWater] > 0 &&
           counts[kOther] * 2 > map.numel();
}

LandCoverMap build_base(const SceneConfig& cfg, std::uint64_t seed, std::vector<PlacedObject>* out_objs) {
    if (cfg.size <= 0) throw InvalidArgument("scene size must be positive");
    for (int attempt = 0; attempt < 16; ++attempt) {
        Rng rng(derive_seed(seed, "landcover", static_cast<std::uint64_t>(attempt)));
        auto objs = draw_objects(cfg, rng);
        LandCoverMap map(Shape{cfg.size, cfg.size});
        paint(map, objs, cfg.size, cfg.size);
        if (acceptable(map, cfg.size) || attempt == 15) {
            if (out_objs != nullptr) *out_objs = std::move(objs);
            return map;
        }
    }
    throw Error("unreachable");
}

}  // namespace

LandCoverMap synth_landcover(const SceneConfig& cfg, std::uint64_t seed) {
    return build_base(cfg, seed, nullptr);
}

LandCoverMap apply_changes(const LandCoverMap& base, const ChangeSpec& spec) {
    if (base.shape.size() != 2) throw ShapeError("land cover map must be 2-d");
    const long h = base.shape[0], w = base.shape[1];
    std::vector<std::int8_t> claim(static_cast<std::size_t>(h * w), 0);
    LandCoverMap out = base;
    for (const ChangeEvent& ev : spec.events) {
        if (ev.land_class < kBuilding || ev.land_class > kWater)
            throw InvalidArgument("change event class must be 1..3");
        const std::int8_t key = static_cast<std::int8_t>(ev.land_class * 2 + (ev.removal ? 1 : 0));
        for (const long cell : ev.geometry.footprint(h, w)) {
            if (claim[static_cast<std::size_t>(cell)] != 0 && claim[static_cast<std::size_t>(cell)] != key)
                throw ConflictError("overlapping change events disagree at cell " + std::to_string(cell));
            claim[static_cast<std::size_t>(cell)] = key;
            if (ev.removal) {
                if (base[cell] != ev.land_class)
                    throw InvalidArgument("removal event covers a cell that is not its class");
                out[cell] = kOther;
            } else {
                if (base[cell] != kOther)
                    throw InvalidArgument("addition event covers a non-empty cell");
                out[cell] = ev.land_class;
            }
        }
    }
    return out;
}

ChangeLabelMap change_label(const LandCoverMap& before, const LandCoverMap& after) {
    if (before.shape != after.shape) throw ShapeError("epoch maps must share a shape");
    ChangeLabelMap label(before.shape);
    for (long i = 0; i < before.numel(); ++i) {
        const int b = before[i], a = after[i];
        if (b == a) {
            label[i] = 0;
        } else if (b == kOther && a >= kBuilding && a <= kWater) {
            label[i] = a;
        } else if (a == kOther && b >= kBuilding && b <= kWater) {
            label[i] = b + 3;
        } else {
            throw InvalidArgument("transition " + std::to_string(b) + "->" + std::to_string(a) +
                                  " is not an add or remove");
        }
    }
    return label;
}

const std::array<std::array<double, 3>, kNumLandClasses>& optical_palette() {
    static const std::array<std::array<double, 3>, kNumLandClasses> p = {{
        {0.35, 0.42, 0.28},  // other: vegetation green-brown
        {0.55, 0.25, 0.22},  // building: brick red
        {0.55, 0.55, 0.55},  // road: asphalt gray
        {0.10, 0.20, 0.45},  // water: deep blue
    }};
    return p;
}

const std::array<std::array<double, 4>, kNumLandClasses>& sar_backscatter() {
    // HH, HV, VH, VV. Kept <= 0.5 so gamma speckle clipping at 1.0 biases the
    // channel means by well under the 5% verification tolerance.
    static const std::array<std::array<double, 4>, kNumLandClasses> b = {{
        {0.22, 0.10, 0.10, 0.20},
        {0.50, 0.25, 0.25, 0.45},
        {0.07, 0.03, 0.03, 0.06},
        {0.035, 0.015, 0.015, 0.03},
    }};
    return b;
}

Tensor render_optical(const LandCoverMap& map, std::uint64_t seed, double noise_amp) {
    if (map.shape.size() != 2) throw ShapeError("land cover map must be 2-d");
    if (noise_amp < 0.0 || noise_amp > 0.05) throw InvalidArgument("optical noise amplitude must be in [0, 0.05]");
    const long h = map.shape[0], w = map.shape[1];
    const auto& palette = optical_palette();
    Tensor img({3, h, w});

    // Smooth texture: coarse grid of uniform values, bilinearly interpolated.
    const long cell = 8;
    const long gw = (w - 1) / cell + 2, gh = (h - 1) / cell + 2;
    std::vector<double> grid(static_cast<std::size_t>(3 * gh * gw));
    Rng rng(seed);
    for (double& v : grid) v = rng.uniform(-noise_amp, noise_amp);
    auto noise_at = [&](long ch, long y, long x) {
        const double gy = static_cast<double>(y) / static_cast<double>(cell);
        const double gx = static_cast<double>(x) / static_cast<double>(cell);
        const long i0 = static_cast<long>(gy), j0 = static_cast<long>(gx);
        const double ty = gy - static_cast<double>(i0), tx = gx - static_cast<double>(j0);
        const double* g = grid.data() + ch * gh * gw;
        const double v00 = g[i0 * gw + j0], v01 = g[i0 * gw + j0 + 1];
        const double v10 = g[(i0 + 1) * gw + j0], v11 = g[(i0 + 1) * gw + j0 + 1];
        return (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
    };
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            const auto& color = palette[static_cast<std::size_t>(map[y * w + x])];
            for (long ch = 0; ch < 3; ++ch)
                img.data()[(ch * h + y) * w + x] =
                    std::clamp(color[static_cast<std::size_t>(ch)] + noise_at(ch, y, x), 0.0, 1.0);
        }
    return img;
}

Tensor render_sar(const LandCoverMap& map, std::uint64_t seed, double speckle_variance) {
    if (map.shape.size() != 2) throw ShapeError("land cover map must be 2-d");
    if (speckle_variance < 0.0) throw InvalidArgument("speckle variance must be nonnegative");
    const long h = map.shape[0], w = map.shape[1];
    const auto& back = sar_backscatter();
    Tensor img({4, h, w});
    Rng rng(seed);
    const bool speckled = speckle_variance > 0.0;
    const double k = speckled ? 1.0 / speckle_variance : 0.0;
    for (long ch = 0; ch < 4; ++ch)
        for (long y = 0; y < h; ++y)
            for (long x = 0; x < w; ++x) {
                const double mu = back[static_cast<std::size_t>(map[y * w + x])][static_cast<std::size_t>(ch)];
                const double s = speckled ? rng.gamma(k, speckle_variance) : 1.0;
                img.data()[(ch * h + y) * w + x] = std::clamp(mu * s, 0.0, 1.0);
            }
    return img;
}

namespace {

ChangeSpec sample_events(const SceneConfig& cfg, const LandCoverMap& base,
                         const std::vector<PlacedObject>& objs, std::uint64_t seed) {
    const long h = base.shape[0], w = base.shape[1];
    Rng rng(seed);
    std::vector<bool> claimed(static_cast<std::size_t>(h * w), false);
    ChangeSpec spec;
    const int n = static_cast<int>(rng.uniform_int(cfg.events_min, cfg.events_max));
    for (int e = 0; e < n; ++e) {
        const int cls = static_cast<int>(rng.uniform_int(kBuilding, kWater));
        bool removal = rng.uniform_int(0, 1) == 1;
        if (removal) {
            // Remove an epoch-1 object whose footprint is still intact.
            std::vector<const PlacedObject*> candidates;
            for (const PlacedObject& o : objs) {
                if (o.land_class != cls) continue;
                const auto cells = o.geometry.footprint(h, w);
                if (cells.empty()) continue;
                bool pure = true;
                for (const long c : cells)
                    if (base[c] != cls || claimed[static_cast<std::size_t>(c)]) {
                        pure = false;
                        break;
                    }
                if (pure) candidates.push_back(&o);
            }
            if (candidates.empty()) {
                removal = false;  // fall back to an addition
            } else {
                const auto pick = static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<std::int64_t>(candidates.size()) - 1));
                const PlacedObject& o = *candidates[pick];
                for (const long c : o.geometry.footprint(h, w)) claimed[static_cast<std::size_t>(c)] = true;
                spec.events.push_back({cls, true, o.geometry});
                continue;
            }
        }
        for (int attempt = 0; attempt < 40; ++attempt) {
            Geometry geom;
            if (cls == kBuilding) {
                Rect r;
                r.w = rng.uniform_int(cfg.building_side_min, cfg.building_side_max);
                r.h = rng.uniform_int(cfg.building_side_min, cfg.building_side_max);
                r.x = rng.uniform_int(0, std::max<long>(0, w - r.w));
                r.y = rng.uniform_int(0, std::max<long>(0, h - r.h));
                geom = Geometry::of(r);
            } else if (cls == kWater) {
                Disk d;
                d.r = rng.uniform(cfg.water_radius_min, cfg.water_radius_max);
                d.cx = rng.uniform(d.r, static_cast<double>(w - 1) - d.r);
                d.cy = rng.uniform(d.r, static_cast<double>(h - 1) - d.r);
                geom = Geometry::of(d);
            } else {
                Segment sg;
                sg.half_width = rng.uniform(cfg.road_half_width_min, cfg.road_half_width_max);
                sg.x0 = rng.uniform(0.0, static_cast<double>(w - 1));
                sg.y0 = rng.uniform(0.0, static_cast<double>(h - 1));
                const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
                const double len = rng.uniform(18.0, 36.0);
                sg.x1 = std::clamp(sg.x0 + len * std::cos(ang), 0.0, static_cast<double>(w - 1));
                sg.y1 = std::clamp(sg.y0 + len * std::sin(ang), 0.0, static_cast<double>(h - 1));
                geom = Geometry::of(sg);
            }
            const auto cells = geom.footprint(h, w);
            if (cells.size() < 12) continue;
            bool free = true;
            for (const long c : cells)
                if (base[c] != kOther || claimed[static_cast<std::size_t>(c)]) {
                    free = false;
                    break;
                }
            if (!free) continue;
            for (const long c : cells) claimed[static_cast<std::size_t>(c)] = true;
            spec.events.push_back({cls, false, geom});
            break;
        }
    }
    return spec;
}

}  // namespace

Sample generate_sample(const SceneConfig& cfg, std::uint64_t seed) {
    Sample s;
    std::vector<PlacedObject> objs;
    s.before = build_base(cfg, seed, &objs);
    s.spec = sample_events(cfg, s.before, objs, derive_seed(seed, "events"));
    s.after = apply_changes(s.before, s.spec);
    s.label = change_label(s.before, s.after);
    s.optical = render_optical(s.before, derive_seed(seed, "optical"), cfg.optical_noise);
    s.sar = render_sar(s.after, derive_seed(seed, "sar"), cfg.speckle_variance);
    return s;
}

std::vector<long> largest_remainder_split(long count, const std::vector<double>& ratios) {
    if (count < 0) throw InvalidArgument("count must be nonnegative");
    double total = 0.0;
    for (const double r : ratios) {
        if (r < 0.0) throw InvalidArgument("split ratios must be nonnegative");
        total += r;
    }
    if (total <= 0.0) throw InvalidArgument("split ratios must not all be zero");
    std::vector<long> sizes(ratios.size(), 0);
    std::vector<std::pair<double, std::size_t>> fracs;
    long assigned = 0;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        const double q = static_cast<double>(count) * ratios[i] / total;
        sizes[i] = static_cast<long>(std::floor(q));
        assigned += sizes[i];
        fracs.emplace_back(q - std::floor(q), i);
    }
    std::stable_sort(fracs.begin(), fracs.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (long r = 0; r < count - assigned; ++r) ++sizes[fracs[static_cast<std::size_t>(r)].second];
    return sizes;
}

namespace {

std::string sample_id(long index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06ld", index);
    return buf;
}

void write_sample_files(const fs::path& dir, const Sample& s) {
    fs::create_directories(dir);
    write_png((dir / "opt.png").string(), quantize_chw(s.optical));
    static const char* pol_names[4] = {"sar_hh.png", "sar_hv.png", "sar_vh.png", "sar_vv.png"};
    const long h = s.sar.dim(1), w = s.sar.dim(2);
    for (long ch = 0; ch < 4; ++ch) {
        Tensor plane({1, h, w});
        std::copy_n(s.sar.data() + ch * h * w, h * w, plane.data());
        write_png((dir / pol_names[ch]).string(), quantize_chw(plane));
    }
    Image8 label;
    label.width = w;
    label.height = h;
    label.channels = 1;
    label.pixels.resize(static_cast<std::size_t>(h * w));
    for (long i = 0; i < h * w; ++i) label.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(s.label[i]);
    write_png((dir / "label.png").string(), label);
}

}  // namespace

Manifest build_dataset(const std::string& root, long count, const SceneConfig& cfg,
                       const std::array<double, 3>& split_ratios, std::uint64_t seed) {
    if (count < 1) throw InvalidArgument("dataset count must be >= 1");
    const auto sizes = largest_remainder_split(count, {split_ratios[0], split_ratios[1], split_ratios[2]});

    std::vector<long> order(static_cast<std::size_t>(count));
    for (long i = 0; i < count; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng shuffle_rng(derive_seed(seed, "split"));
    shuffle_rng.shuffle(order);
    std::vector<std::string> split_of(static_cast<std::size_t>(count));
    long cursor = 0;
    for (std::size_t s = 0; s < kSplitNames.size(); ++s)
        for (long k = 0; k < sizes[s]; ++k) split_of[static_cast<std::size_t>(order[static_cast<std::size_t>(cursor++)])] = kSplitNames[s];

    Manifest m;
    m.seed = seed;
    m.count = count;
    m.size = cfg.size;
    m.split_sizes = {sizes[0], sizes[1], sizes[2]};
    const fs::path rootp(root);
    fs::create_directories(rootp);
    for (long i = 0; i < count; ++i) {
        ManifestEntry e;
        e.id = sample_id(i);
        e.split = split_of[static_cast<std::size_t>(i)];
        e.seed = derive_seed(seed, "sample", static_cast<std::uint64_t>(i));
        const Sample s = generate_sample(cfg, e.seed);
        write_sample_files(rootp / e.split / e.id, s);
        m.samples.push_back(std::move(e));
    }

    json j;
    j["seed"] = m.seed;
    j["count"] = m.count;
    j["size"] = m.size;
    j["split"] = {{"train", sizes[0]}, {"test", sizes[1]}, {"val", sizes[2]}};
    json arr = json::array();
    for (const ManifestEntry& e : m.samples)
        arr.push_back({{"id", e.id}, {"split", e.split}, {"seed", e.seed}});
    j["samples"] = std::move(arr);
    std::ofstream f(rootp / "manifest.json", std::ios::trunc);
    if (!f) throw IoError("cannot write manifest under " + root);
    f << j.dump(2) << "\n";
    return m;
}

Manifest read_manifest(const std::string& root) {
    const fs::path p = fs::path(root) / "manifest.json";
    std::ifstream f(p);
    if (!f) throw IoError("cannot open manifest: " + p.string());
    json j;
    try {
        f >> j;
        Manifest m;
        m.seed = j.at("seed").get<std::uint64_t>();
        m.count = j.at("count").get<long>();
        m.size = j.at("size").get<long>();
        m.split_sizes = {j.at("split").at("train").get<long>(), j.at("split").at("test").get<long>(),
                         j.at("split").at("val").get<long>()};
        for (const json& e : j.at("samples"))
            m.samples.push_back({e.at("id").get<std::string>(), e.at("split").get<std::string>(),
                                 e.at("seed").get<std::uint64_t>()});
        return m;
    } catch (const json::exception& ex) {
        throw IoError("malformed manifest " + p.string() + ": " + ex.what());
    }
}

namespace {

Tensor load_sar_stack(const fs::path& dir) {
    static const char* pol_names[4] = {"sar_hh.png", "sar_hv.png", "sar_vh.png", "sar_vv.png"};
    Tensor sar;
    for (long ch = 0; ch < 4; ++ch) {
        const Image8 img = read_png((dir / pol_names[ch]).string());
        if (img.channels != 1) throw IoError("sar channel file must be grayscale: " + dir.string());
        if (!sar.defined()) sar = Tensor({4, img.height, img.width});
        const Tensor plane = dequantize_chw(img);
        std::copy_n(plane.data(), img.height * img.width, sar.data() + ch * img.height * img.width);
    }
    return sar;
}

}  // namespace

DatasetSample load_sample_dir(const std::string& dir) {
    const fs::path d(dir);
    DatasetSample s;
    s.id = d.filename().string();
    const Image8 opt = read_png((d / "opt.png").string());
    if (opt.channels != 3) throw IoError("optical file must be rgb: " + dir);
    s.optical = dequantize_chw(opt);
    s.sar = load_sar_stack(d);
    const fs::path lp = d / "label.png";
    if (fs::exists(lp)) {
        const Image8 lab = read_png(lp.string());
        if (lab.channels != 1) throw IoError("label file must be grayscale: " + dir);
        s.label = IntTensor(Shape{lab.height, lab.width});
        for (long i = 0; i < lab.height * lab.width; ++i) {
            const int v = lab.pixels[static_cast<std::size_t>(i)];
            if (v >= kNumChangeClasses) throw IoError("label value out of range in " + dir);
            s.label[i] = v;
        }
    }
    return s;
}

std::vector<DatasetSample> load_split(const std::string& root, const std::string& split) {
    const Manifest m = read_manifest(root);
    std::vector<DatasetSample> out;
    for (const ManifestEntry& e : m.samples) {
        if (e.split != split) continue;
        out.push_back(load_sample_dir((fs::path(root) / e.split / e.id).string()));
    }
    return out;
}

}  // namespace mmcd::scene
