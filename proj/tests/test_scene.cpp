#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "mmcd/errors.hpp"
#include "mmcd/png_io.hpp"
#include "mmcd/rng.hpp"
#include "mmcd/scene.hpp"

using namespace mmcd;
using namespace mmcd::scene;
namespace fs = std::filesystem;

namespace {

LandCoverMap uniform_map(long h, long w, int cls) {
    LandCoverMap m(Shape{h, w});
    for (long i = 0; i < m.numel(); ++i) m[i] = cls;
    return m;
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (long i = 0; i < a.numel(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(bool(f));
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("rect footprint enumerates a half-open box with clamping") {
    Geometry g = Geometry::of(Rect{5, 7, 10, 4});
    const auto cells = g.footprint(64, 64);
    CHECK(cells.size() == 40);
    std::set<long> got(cells.begin(), cells.end());
    for (long y = 0; y < 64; ++y)
        for (long x = 0; x < 64; ++x) {
            const bool inside = x >= 5 && x < 15 && y >= 7 && y < 11;
            CHECK(got.count(y * 64 + x) == (inside ? 1u : 0u));
        }
    // Partially off-grid boxes clip instead of wrapping.
    const auto clipped = Geometry::of(Rect{60, 62, 10, 10}).footprint(64, 64);
    CHECK(clipped.size() == 8);
}

TEST_CASE("disk footprint matches brute-force membership") {
    Disk d{20.3, 11.7, 5.25};
    const auto cells = Geometry::of(d).footprint(40, 40);
    std::set<long> got(cells.begin(), cells.end());
    long count = 0;
    for (long y = 0; y < 40; ++y)
        for (long x = 0; x < 40; ++x) {
            const double dx = x - d.cx, dy = y - d.cy;
            const bool inside = dx * dx + dy * dy <= d.r * d.r;
            if (inside) ++count;
            CHECK(got.count(y * 40 + x) == (inside ? 1u : 0u));
        }
    CHECK(count == static_cast<long>(cells.size()));
    CHECK(count > 0);
}

TEST_CASE("segment footprint matches brute-force point-to-segment distance") {
    Segment s{3.0, 35.0, 30.0, 4.0, 1.5};
    const auto cells = Geometry::of(s).footprint(40, 40);
    std::set<long> got(cells.begin(), cells.end());
    const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
    const double len2 = dx * dx + dy * dy;
    for (long y = 0; y < 40; ++y)
        for (long x = 0; x < 40; ++x) {
            double t = ((x - s.x0) * dx + (y - s.y0) * dy) / len2;
            t = std::clamp(t, 0.0, 1.0);
            const double qx = s.x0 + t * dx - x, qy = s.y0 + t * dy - y;
            const bool inside = std::hypot(qx, qy) <= s.half_width;
            CHECK(got.count(y * 40 + x) == (inside ? 1u : 0u));
        }
}

TEST_CASE("apply_changes adds and removes with precondition checks") {
    LandCoverMap base = uniform_map(64, 64, kOther);
    ChangeSpec spec;
    spec.events.push_back({kBuilding, false, Geometry::of(Rect{5, 5, 10, 10})});
    const LandCoverMap after = apply_changes(base, spec);
    long changed = 0;
    for (long i = 0; i < after.numel(); ++i)
        if (after[i] != base[i]) {
            CHECK(after[i] == kBuilding);
            ++changed;
        }
    CHECK(changed == 100);

    const ChangeLabelMap lab = change_label(base, after);
    long lab1 = 0;
    for (long i = 0; i < lab.numel(); ++i)
        if (lab[i] != 0) {
            CHECK(lab[i] == 1);
            ++lab1;
        }
    CHECK(lab1 == 100);

    // Empty spec is the identity.
    const LandCoverMap same = apply_changes(base, ChangeSpec{});
    for (long i = 0; i < base.numel(); ++i) CHECK(same[i] == base[i]);

    // Removal restores cells to empty and labels them class+3.
    ChangeSpec rm;
    rm.events.push_back({kBuilding, true, Geometry::of(Rect{5, 5, 10, 10})});
    const LandCoverMap undone = apply_changes(after, rm);
    for (long i = 0; i < undone.numel(); ++i) CHECK(undone[i] == kOther);
    const ChangeLabelMap lab2 = change_label(after, undone);
    for (long y = 0; y < 64; ++y)
        for (long x = 0; x < 64; ++x)
            CHECK(lab2[y * 64 + x] == ((x >= 5 && x < 15 && y >= 5 && y < 15) ? kBuilding + 3 : 0));
}

TEST_CASE("apply_changes rejects violated preconditions and contradictory overlaps") {
    LandCoverMap base = uniform_map(32, 32, kOther);
    for (long i = 0; i < 32; ++i) base[i] = kWater;  // first row

    ChangeSpec add_on_water;
    add_on_water.events.push_back({kBuilding, false, Geometry::of(Rect{0, 0, 4, 4})});
    CHECK_THROWS_AS(apply_changes(base, add_on_water), InvalidArgument);

    ChangeSpec remove_wrong_class;
    remove_wrong_class.events.push_back({kBuilding, true, Geometry::of(Rect{0, 0, 4, 4})});
    CHECK_THROWS_AS(apply_changes(base, remove_wrong_class), InvalidArgument);

    ChangeSpec bad_class;
    bad_class.events.push_back({0, false, Geometry::of(Rect{4, 4, 2, 2})});
    CHECK_THROWS_AS(apply_changes(base, bad_class), InvalidArgument);

    ChangeSpec conflict;
    conflict.events.push_back({kBuilding, false, Geometry::of(Rect{4, 4, 6, 6})});
    conflict.events.push_back({kRoad, false, Geometry::of(Rect{8, 8, 6, 6})});
    CHECK_THROWS_AS(apply_changes(base, conflict), ConflictError);

    // Identical-intent overlap is allowed.
    ChangeSpec agree;
    agree.events.push_back({kBuilding, false, Geometry::of(Rect{4, 4, 6, 6})});
    agree.events.push_back({kBuilding, false, Geometry::of(Rect{8, 8, 6, 6})});
    const LandCoverMap after = apply_changes(base, agree);
    CHECK(after[5 * 32 + 5] == kBuilding);
    CHECK(after[12 * 32 + 12] == kBuilding);
}

TEST_CASE("change_label covers the full transition table and rejects the rest") {
    LandCoverMap before(Shape{1, 7}), after(Shape{1, 7});
    const int b[7] = {0, 0, 0, 0, 1, 2, 3};
    const int a[7] = {0, 1, 2, 3, 0, 0, 0};
    for (long i = 0; i < 7; ++i) before[i] = b[i], after[i] = a[i];
    // Same-class cells keep label 0 regardless of class.
    before[0] = 2, after[0] = 2;
    const ChangeLabelMap lab = change_label(before, after);
    const int want[7] = {0, 1, 2, 3, 4, 5, 6};
    for (long i = 0; i < 7; ++i) CHECK(lab[i] == want[i]);

    LandCoverMap direct_b(Shape{1, 1}), direct_a(Shape{1, 1});
    direct_b[0] = 1, direct_a[0] = 2;  // class swap without passing through empty
    CHECK_THROWS_AS(change_label(direct_b, direct_a), InvalidArgument);

    LandCoverMap short_a(Shape{1, 2});
    CHECK_THROWS_AS(change_label(before, short_a), ShapeError);
}

TEST_CASE("landcover synthesis is deterministic and well-formed") {
    SceneConfig cfg;
    const LandCoverMap m1 = synth_landcover(cfg, 77);
    const LandCoverMap m2 = synth_landcover(cfg, 77);
    const LandCoverMap m3 = synth_landcover(cfg, 78);
    CHECK(m1.v == m2.v);
    CHECK(m1.v != m3.v);
    CHECK(m1.shape == Shape{64, 64});

    long counts[kNumLandClasses] = {0, 0, 0, 0};
    for (long i = 0; i < m1.numel(); ++i) {
        REQUIRE(m1[i] >= 0);
        REQUIRE(m1[i] < kNumLandClasses);
        ++counts[m1[i]];
    }
    // At the default 64x64 size every class is present and background dominates.
    for (int c = 1; c < kNumLandClasses; ++c) CHECK(counts[c] > 0);
    CHECK(counts[kOther] * 2 > m1.numel());
}

TEST_CASE("optical renderer paints palette colors plus bounded smooth noise") {
    const auto& pal = optical_palette();
    for (int cls = 0; cls < kNumLandClasses; ++cls) {
        const LandCoverMap m = uniform_map(32, 32, cls);
        const Tensor clean = render_optical(m, 5, 0.0);
        for (long ch = 0; ch < 3; ++ch)
            for (long i = 0; i < 32 * 32; ++i)
                CHECK(clean[ch * 32 * 32 + i] == doctest::Approx(pal[cls][ch]).epsilon(1e-12));
    }

    const LandCoverMap m = uniform_map(64, 64, kOther);
    const Tensor noisy = render_optical(m, 5, 0.04);
    CHECK(tensors_equal(noisy, render_optical(m, 5, 0.04)));
    CHECK_FALSE(tensors_equal(noisy, render_optical(m, 6, 0.04)));
    double dev_max = 0.0, var = 0.0;
    for (long ch = 0; ch < 3; ++ch)
        for (long i = 0; i < 64 * 64; ++i) {
            const double d = noisy[ch * 64 * 64 + i] - pal[kOther][ch];
            dev_max = std::max(dev_max, std::abs(d));
            var += d * d;
            CHECK(noisy[ch * 64 * 64 + i] >= 0.0);
            CHECK(noisy[ch * 64 * 64 + i] <= 1.0);
        }
    var /= 3 * 64 * 64;
    CHECK(dev_max <= 0.04 + 1e-12);
    CHECK(dev_max > 0.005);
    CHECK(std::sqrt(var) < 0.05);

    CHECK_THROWS_AS(render_optical(m, 5, 0.2), InvalidArgument);
}

TEST_CASE("sar renderer reproduces backscatter exactly without speckle") {
    const auto& back = sar_backscatter();
    for (int cls = 0; cls < kNumLandClasses; ++cls) {
        const LandCoverMap m = uniform_map(16, 16, cls);
        const Tensor img = render_sar(m, 9, 0.0);
        for (long ch = 0; ch < 4; ++ch)
            for (long i = 0; i < 16 * 16; ++i)
                CHECK(img[ch * 16 * 16 + i] == back[cls][ch]);
    }
}

TEST_CASE("sar speckle keeps channel means near backscatter at the default variance") {
    const auto& back = sar_backscatter();
    for (int cls = 0; cls < kNumLandClasses; ++cls) {
        const LandCoverMap m = uniform_map(128, 128, cls);
        const Tensor img = render_sar(m, 41 + cls, 0.25);
        CHECK(tensors_equal(img, render_sar(m, 41 + cls, 0.25)));
        for (long ch = 0; ch < 4; ++ch) {
            double mean = 0.0, mn = 1e9, mx = -1e9;
            for (long i = 0; i < 128 * 128; ++i) {
                const double v = img[ch * 128 * 128 + i];
                mean += v;
                mn = std::min(mn, v);
                mx = std::max(mx, v);
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
            mean /= 128 * 128;
            CHECK(std::abs(mean - back[cls][ch]) <= 0.05 * back[cls][ch]);
            CHECK(mx > mn);  // speckle actually varies
        }
    }
}

TEST_CASE("backscatter table separates classes per polarization") {
    const auto& back = sar_backscatter();
    for (int a = 0; a < kNumLandClasses; ++a)
        for (int b = a + 1; b < kNumLandClasses; ++b) {
            double gap = 0.0;
            for (int ch = 0; ch < 4; ++ch) gap = std::max(gap, std::abs(back[a][ch] - back[b][ch]));
            CHECK(gap >= 0.01);
        }
    const auto& pal = optical_palette();
    for (int a = 0; a < kNumLandClasses; ++a)
        for (int b = a + 1; b < kNumLandClasses; ++b) {
            double gap = 0.0;
            for (int ch = 0; ch < 3; ++ch) gap = std::max(gap, std::abs(pal[a][ch] - pal[b][ch]));
            CHECK(gap >= 0.15);
        }
}

TEST_CASE("8-bit quantization round-trips within half a step") {
    Rng rng(123);
    Tensor t({3, 9, 11});
    for (long i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
    const Tensor back = dequantize_chw(quantize_chw(t));
    REQUIRE(back.shape() == t.shape());
    for (long i = 0; i < t.numel(); ++i) CHECK(std::abs(back[i] - t[i]) <= 0.5 / 255.0 + 1e-12);
}

TEST_CASE("png files round-trip bytes exactly") {
    const fs::path dir = fresh_dir("mmcd_png_rt");
    fs::create_directories(dir);
    Image8 img;
    img.width = 13;
    img.height = 7;
    img.channels = 3;
    img.pixels.resize(13 * 7 * 3);
    Rng rng(5);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
    write_png((dir / "x.png").string(), img);
    const Image8 r = read_png((dir / "x.png").string());
    CHECK(r.width == img.width);
    CHECK(r.height == img.height);
    CHECK(r.channels == img.channels);
    CHECK(r.pixels == img.pixels);
    CHECK_THROWS_AS(read_png((dir / "missing.png").string()), IoError);
    fs::remove_all(dir);
}

TEST_CASE("generated samples are internally consistent") {
    SceneConfig cfg;
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
        const Sample s = generate_sample(cfg, seed);
        CHECK(s.optical.shape() == Shape{3, cfg.size, cfg.size});
        CHECK(s.sar.shape() == Shape{4, cfg.size, cfg.size});
        CHECK(s.label.shape == Shape{cfg.size, cfg.size});
        REQUIRE(!s.spec.events.empty());

        // Replaying the spec against the before map reproduces after + label.
        const LandCoverMap after = apply_changes(s.before, s.spec);
        CHECK(after.v == s.after.v);
        const ChangeLabelMap lab = change_label(s.before, s.after);
        CHECK(lab.v == s.label.v);

        for (long i = 0; i < s.label.numel(); ++i) {
            REQUIRE(s.label[i] >= 0);
            REQUIRE(s.label[i] < kNumChangeClasses);
        }

        // Each event leaves its mark somewhere in the label map.
        for (const ChangeEvent& ev : s.spec.events) {
            const int want = ev.removal ? ev.land_class + 3 : ev.land_class;
            bool found = false;
            for (const long c : ev.geometry.footprint(cfg.size, cfg.size))
                if (s.label[c] == want) {
                    found = true;
                    break;
                }
            CHECK(found);
        }
    }

    const Sample a = generate_sample(cfg, 99);
    const Sample b = generate_sample(cfg, 99);
    CHECK(a.before.v == b.before.v);
    CHECK(a.after.v == b.after.v);
    CHECK(a.label.v == b.label.v);
    CHECK(tensors_equal(a.optical, b.optical));
    CHECK(tensors_equal(a.sar, b.sar));
}

TEST_CASE("every change class appears across a modest sample budget") {
    SceneConfig cfg;
    std::set<int> seen;
    for (std::uint64_t seed = 0; seed < 60 && seen.size() < 7; ++seed) {
        const Sample s = generate_sample(cfg, derive_seed(4242, "coverage", seed));
        for (long i = 0; i < s.label.numel(); ++i) seen.insert(s.label[i]);
    }
    CHECK(seen.size() == 7);
}

TEST_CASE("largest-remainder apportionment") {
    CHECK(largest_remainder_split(7, {0.6, 0.2, 0.2}) == std::vector<long>{4, 2, 1});
    CHECK(largest_remainder_split(10, {0.5, 0.3, 0.2}) == std::vector<long>{5, 3, 2});
    CHECK(largest_remainder_split(1, {0.7, 0.15, 0.15}) == std::vector<long>{1, 0, 0});
    CHECK(largest_remainder_split(0, {1.0, 1.0}) == std::vector<long>{0, 0});
    const auto s = largest_remainder_split(997, {0.61, 0.23, 0.16});
    CHECK(s[0] + s[1] + s[2] == 997);
    CHECK_THROWS_AS(largest_remainder_split(5, {-0.1, 1.0}), InvalidArgument);
    CHECK_THROWS_AS(largest_remainder_split(5, {0.0, 0.0}), InvalidArgument);
}

TEST_CASE("dataset build writes a loadable, reproducible tree") {
    SceneConfig cfg;
    cfg.size = 32;
    const fs::path root1 = fresh_dir("mmcd_ds1");
    const fs::path root2 = fresh_dir("mmcd_ds2");

    const Manifest m = build_dataset(root1.string(), 7, cfg, {0.6, 0.2, 0.2}, 31);
    CHECK(m.count == 7);
    CHECK(m.split_sizes == std::array<long, 3>{4, 2, 1});
    CHECK(m.samples.size() == 7);
    CHECK(m.samples[0].id == "000000");
    CHECK(fs::exists(root1 / "manifest.json"));

    const Manifest r = read_manifest(root1.string());
    CHECK(r.seed == 31);
    CHECK(r.count == 7);
    CHECK(r.split_sizes == m.split_sizes);
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(r.samples[i].id == m.samples[i].id);
        CHECK(r.samples[i].split == m.samples[i].split);
        CHECK(r.samples[i].seed == m.samples[i].seed);
        for (const char* f : {"opt.png", "sar_hh.png", "sar_hv.png", "sar_vh.png", "sar_vv.png", "label.png"})
            CHECK(fs::exists(root1 / m.samples[i].split / m.samples[i].id / f));
    }

    build_dataset(root2.string(), 7, cfg, {0.6, 0.2, 0.2}, 31);
    CHECK(slurp(root1 / "manifest.json") == slurp(root2 / "manifest.json"));
    // Pixel payloads are reproducible too.
    for (const ManifestEntry& e : m.samples)
        for (const char* f : {"opt.png", "sar_hh.png", "label.png"})
            CHECK(slurp(root1 / e.split / e.id / f) == slurp(root2 / e.split / e.id / f));

    const auto train = load_split(root1.string(), "train");
    REQUIRE(train.size() == 4);
    for (const DatasetSample& s : train) {
        CHECK(s.optical.shape() == Shape{3, 32, 32});
        CHECK(s.sar.shape() == Shape{4, 32, 32});
        CHECK(s.label.shape == Shape{32, 32});
        for (long i = 0; i < s.label.numel(); ++i) {
            CHECK(s.label[i] >= 0);
            CHECK(s.label[i] < kNumChangeClasses);
        }
    }
    // Loaded pixels match the generated sample after 8-bit quantization.
    const ManifestEntry& e0 = m.samples[0];
    const Sample gen = generate_sample(cfg, e0.seed);
    const DatasetSample ld = load_sample_dir((root1 / e0.split / e0.id).string());
    CHECK(ld.id == e0.id);
    for (long i = 0; i < gen.optical.numel(); ++i)
        CHECK(std::abs(ld.optical[i] - gen.optical[i]) <= 0.5 / 255.0 + 1e-12);
    for (long i = 0; i < gen.sar.numel(); ++i)
        CHECK(std::abs(ld.sar[i] - gen.sar[i]) <= 0.5 / 255.0 + 1e-12);
    for (long i = 0; i < gen.label.numel(); ++i) CHECK(ld.label[i] == gen.label[i]);

    CHECK_THROWS_AS(build_dataset((root1 / "bad").string(), 0, cfg, {1, 1, 1}, 1), InvalidArgument);
    CHECK_THROWS_AS(read_manifest((root1 / "nope").string()), IoError);

    fs::remove_all(root1);
    fs::remove_all(root2);
}
