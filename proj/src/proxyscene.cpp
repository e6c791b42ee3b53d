#include "gap/proxyscene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "gap/numerics.hpp"
#include "gap/rng.hpp"

namespace gap {

long long MaskGrid::count() const {
    long long n = 0;
    for (uint8_t v : a) n += v;
    return n;
}

namespace {

constexpr std::array<std::array<double, 3>, 6> kPalette = {{
    {0.85, 0.10, 0.10},  // red
    {0.10, 0.20, 0.85},  // blue
    {0.10, 0.70, 0.15},  // green
    {0.95, 0.60, 0.05},  // orange
    {0.55, 0.10, 0.70},  // purple
    {0.05, 0.70, 0.75},  // cyan
}};

bool inside_shape(const EntityGeom& g, double cx, double cy, double px, double py) {
    const double dx = px - cx, dy = py - cy;
    switch (g.shape) {
        case ShapeKind::Rect:
            return std::fabs(dx) <= g.half_w && std::fabs(dy) <= g.half_h;
        case ShapeKind::Disc:
            return dx * dx + dy * dy <= g.half_w * g.half_w;
        case ShapeKind::LShape: {
            if (std::fabs(dx) > g.half_w || std::fabs(dy) > g.half_h) return false;
            const double sx = (g.cut_quadrant & 1) ? 1.0 : -1.0;
            const double sy = (g.cut_quadrant & 2) ? 1.0 : -1.0;
            return !(sx * dx >= 0.0 && sy * dy >= 0.0);
        }
    }
    return false;
}

EntityGeom sample_geom(Rng& rng, int entity_index, double size_min, double size_max, int width) {
    EntityGeom g;
    const int kind = static_cast<int>(rng.next_below(3));
    g.shape = kind == 0 ? ShapeKind::Rect : kind == 1 ? ShapeKind::Disc : ShapeKind::LShape;
    const double size = rng.uniform(size_min, size_max) * width;
    g.color = entity_index;
    switch (g.shape) {
        case ShapeKind::Rect: {
            const double aspect = rng.uniform(0.6, 1.0);
            if (rng.next_below(2)) {
                g.half_w = size / 2.0;
                g.half_h = size * aspect / 2.0;
            } else {
                g.half_w = size * aspect / 2.0;
                g.half_h = size / 2.0;
            }
            break;
        }
        case ShapeKind::Disc:
            g.half_w = g.half_h = size / 2.0;
            break;
        case ShapeKind::LShape:
            g.half_w = g.half_h = size / 2.0;
            g.cut_quadrant = static_cast<int>(rng.next_below(4));
            break;
    }
    return g;
}

std::array<int, 4> center_bounds(const EntityGeom& g, int x_begin, int x_end, int height) {
    // integer centers keeping the entity fully inside [x_begin, x_end) x [0, height)
    int x_lo = x_begin + static_cast<int>(std::ceil(g.half_w));
    int x_hi = x_end - 1 - static_cast<int>(std::ceil(g.half_w));
    int y_lo = static_cast<int>(std::ceil(g.half_h));
    int y_hi = height - 1 - static_cast<int>(std::ceil(g.half_h));
    return {x_lo, x_hi, y_lo, y_hi};
}

bool masks_overlap(const MaskGrid& a, const MaskGrid& b) {
    for (size_t i = 0; i < a.a.size(); ++i)
        if (a.a[i] && b.a[i]) return true;
    return false;
}

int reflect_coord(int p0, int v, int t, int lo, int hi) {
    if (hi <= lo) return lo;
    const long long span = hi - lo;
    const long long period = 2 * span;
    long long x = (static_cast<long long>(p0 - lo) + static_cast<long long>(v) * t) % period;
    if (x < 0) x += period;
    return lo + static_cast<int>(x <= span ? x : period - x);
}

}  // namespace

std::array<double, 3> palette_color(int index, bool shifted) {
    std::array<double, 3> c = kPalette[static_cast<size_t>(index % 6)];
    if (shifted)
        for (double& v : c) v = std::min(1.0, 0.72 * v + 0.22);
    return c;
}

MaskGrid raster_entity(const EntityGeom& g, double cx, double cy, int h, int w) {
    MaskGrid m;
    m.h = h;
    m.w = w;
    m.a.assign(static_cast<size_t>(h) * w, 0);
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - g.half_w - 1)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + g.half_w + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - g.half_h - 1)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + g.half_h + 1)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            if (inside_shape(g, cx, cy, x + 0.5, y + 0.5))
                m.a[static_cast<size_t>(y) * w + x] = 1;
    return m;
}

Tensor compose_image(const SceneSpec& spec, const std::vector<EntityGeom>& geoms,
                     const std::vector<std::array<double, 2>>& centers,
                     const std::vector<MaskGrid>& masks) {
    const int h = spec.height, w = spec.width;
    Tensor img({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double v = 1.0;
            if (spec.background == BackgroundStyle::Checker)
                v = (((x / 8) + (y / 8)) % 2 == 0) ? 0.93 : 0.80;
            for (int c = 0; c < 3; ++c) img.at3(c, y, x) = v;
        }
    (void)centers;
    for (size_t m = 0; m < geoms.size(); ++m) {
        const auto color = palette_color(geoms[m].color, spec.palette_shift);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (masks[m].at(x, y))
                    for (int c = 0; c < 3; ++c) img.at3(c, y, x) = color[static_cast<size_t>(c)];
    }
    return img;
}

SceneSample render_scene(const SceneSpec& spec, uint64_t seed) {
    if (spec.entities < 1 || spec.width < 8 || spec.height < 8 ||
        spec.size_min <= 0.0 || spec.size_max < spec.size_min)
        throw std::invalid_argument("render_scene: invalid scene spec");
    Rng rng(mix_seed(spec.seed, seed, 0x5CE2E));
    // outer retries redraw the geometry: a pair of maximal entities can be
    // impossible to place disjointly, so placement-only retries could spin
    for (int round = 0; round < 64; ++round) {
        std::vector<EntityGeom> geoms;
        for (int m = 0; m < spec.entities; ++m)
            geoms.push_back(sample_geom(rng, m, spec.size_min, spec.size_max, spec.width));

        SceneSample s;
        s.episode = seed;
        s.t = 0;
        std::vector<std::array<double, 2>> centers;
        bool placed_all = true;
        for (int m = 0; m < spec.entities && placed_all; ++m) {
            const auto b =
                center_bounds(geoms[static_cast<size_t>(m)], 0, spec.width, spec.height);
            if (b[1] < b[0] || b[3] < b[2])
                throw std::invalid_argument("render_scene: entity too large for the frame; "
                                            "use smaller sizes");
            bool placed = false;
            for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
                const int cx = rng.uniform_int(b[0], b[1]);
                const int cy = rng.uniform_int(b[2], b[3]);
                MaskGrid cand = raster_entity(geoms[static_cast<size_t>(m)], cx, cy,
                                              spec.height, spec.width);
                bool ok = cand.count() > 0;
                for (const MaskGrid& prev : s.masks)
                    if (ok && masks_overlap(cand, prev)) ok = false;
                MaskGrid feat = downsample_mask(cand, 4);
                if (ok && feat.count() == 0) ok = false;
                if (!ok) continue;
                s.masks.push_back(std::move(cand));
                s.feat_masks.push_back(std::move(feat));
                centers.push_back({cx + 0.0, cy + 0.0});
                placed = true;
            }
            placed_all = placed;
        }
        if (!placed_all) continue;
        s.image = compose_image(spec, geoms, centers, s.masks);
        return s;
    }
    throw std::runtime_error("render_scene: could not place entities after 64 geometry "
                             "redraws; use smaller entity sizes");
}

EpisodeParams sample_episode(const SceneSpec& spec, uint64_t seed) {
    if (spec.entities < 1) throw std::invalid_argument("sample_episode: need >= 1 entity");
    const int n = spec.entities;
    for (int attempt = 0; attempt < 50; ++attempt) {
        Rng rng(mix_seed(spec.seed, seed, 0xE915 + static_cast<uint64_t>(attempt)));
        EpisodeParams ep;
        ep.episode_id = seed;

        std::vector<EntityGeom> geoms;
        for (int m = 0; m < n; ++m)
            geoms.push_back(sample_geom(rng, m, spec.size_min, spec.size_max, spec.width));

        // Disjoint strips along a random axis, with randomized split points
        // and a random entity-to-strip assignment, so episodes cover the
        // same layout variety as free-placed static scenes.
        const bool horizontal = rng.next_below(2) != 0;
        const int axis_len = horizontal ? spec.height : spec.width;
        std::vector<int> order(static_cast<size_t>(n));
        for (int m = 0; m < n; ++m) order[static_cast<size_t>(m)] = m;
        for (int m = n - 1; m > 0; --m)
            std::swap(order[static_cast<size_t>(m)],
                      order[rng.next_below(static_cast<uint64_t>(m + 1))]);

        std::vector<int> need(static_cast<size_t>(n));
        int need_total = 0;
        for (int i = 0; i < n; ++i) {
            const EntityGeom& g = geoms[static_cast<size_t>(order[static_cast<size_t>(i)])];
            need[static_cast<size_t>(i)] =
                2 * static_cast<int>(std::ceil(horizontal ? g.half_h : g.half_w)) + 1;
            need_total += need[static_cast<size_t>(i)];
        }
        if (need_total > axis_len) continue;

        bool ok = true;
        ep.geoms.resize(static_cast<size_t>(n));
        ep.pos0.resize(static_cast<size_t>(n));
        ep.vel.resize(static_cast<size_t>(n));
        ep.bounds.resize(static_cast<size_t>(n));
        int lo = 0, remaining = need_total;
        for (int i = 0; i < n && ok; ++i) {
            remaining -= need[static_cast<size_t>(i)];
            const int hi_max = axis_len - remaining;
            const int hi = i + 1 < n
                               ? rng.uniform_int(lo + need[static_cast<size_t>(i)], hi_max)
                               : axis_len;
            const int m = order[static_cast<size_t>(i)];
            const EntityGeom& g = geoms[static_cast<size_t>(m)];
            const auto b = horizontal
                               ? std::array<int, 4>{static_cast<int>(std::ceil(g.half_w)),
                                                    spec.width - 1 -
                                                        static_cast<int>(std::ceil(g.half_w)),
                                                    lo + static_cast<int>(std::ceil(g.half_h)),
                                                    hi - 1 -
                                                        static_cast<int>(std::ceil(g.half_h))}
                               : center_bounds(g, lo, hi, spec.height);
            if (b[1] < b[0] || b[3] < b[2]) {
                ok = false;
                break;
            }
            int vx, vy;
            do {
                vx = rng.uniform_int(-3, 3);
                vy = rng.uniform_int(-3, 3);
            } while (vx == 0 && vy == 0);
            ep.geoms[static_cast<size_t>(m)] = g;
            ep.pos0[static_cast<size_t>(m)] = {rng.uniform_int(b[0], b[1]),
                                               rng.uniform_int(b[2], b[3])};
            ep.vel[static_cast<size_t>(m)] = {vx, vy};
            ep.bounds[static_cast<size_t>(m)] = b;
            lo = hi;
        }
        if (!ok) continue;
        // every reachable position must keep the feature-resolution mask non-empty
        for (int m = 0; m < spec.entities && ok; ++m) {
            for (int t = 0; t < 200 && ok; ++t) {
                const int cx = reflect_coord(ep.pos0[m][0], ep.vel[m][0], t, ep.bounds[m][0],
                                             ep.bounds[m][1]);
                const int cy = reflect_coord(ep.pos0[m][1], ep.vel[m][1], t, ep.bounds[m][2],
                                             ep.bounds[m][3]);
                MaskGrid mask = raster_entity(ep.geoms[m], cx, cy, spec.height, spec.width);
                if (downsample_mask(mask, 4).count() == 0) ok = false;
            }
        }
        if (ok) return ep;
    }
    throw std::runtime_error("sample_episode: could not find a valid episode; "
                             "use larger entity sizes");
}

SceneSample render_frame(const SceneSpec& spec, const EpisodeParams& ep, int t) {
    SceneSample s;
    s.episode = ep.episode_id;
    s.t = t;
    std::vector<std::array<double, 2>> centers;
    for (size_t m = 0; m < ep.geoms.size(); ++m) {
        const int cx = reflect_coord(ep.pos0[m][0], ep.vel[m][0], t, ep.bounds[m][0],
                                     ep.bounds[m][1]);
        const int cy = reflect_coord(ep.pos0[m][1], ep.vel[m][1], t, ep.bounds[m][2],
                                     ep.bounds[m][3]);
        MaskGrid mask = raster_entity(ep.geoms[m], cx, cy, spec.height, spec.width);
        s.feat_masks.push_back(downsample_mask(mask, 4));
        s.masks.push_back(std::move(mask));
        centers.push_back({cx + 0.0, cy + 0.0});
    }
    s.image = compose_image(spec, ep.geoms, centers, s.masks);
    return s;
}

std::vector<SceneSample> generate_episode(const SceneSpec& spec, uint64_t seed, int length) {
    if (length < 2) throw std::invalid_argument("generate_episode: length must be >= 2");
    EpisodeParams ep = sample_episode(spec, seed);
    std::vector<SceneSample> frames;
    frames.reserve(static_cast<size_t>(length));
    for (int t = 0; t < length; ++t) frames.push_back(render_frame(spec, ep, t));
    return frames;
}

MaskGrid downsample_mask(const MaskGrid& mask, int factor) {
    if (factor < 1 || mask.h % factor != 0 || mask.w % factor != 0)
        throw std::invalid_argument("downsample_mask: dimensions not divisible by factor");
    MaskGrid out;
    out.h = mask.h / factor;
    out.w = mask.w / factor;
    out.a.assign(static_cast<size_t>(out.h) * out.w, 0);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
            int cnt = 0;
            for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx)
                    cnt += mask.at(x * factor + dx, y * factor + dy) ? 1 : 0;
            if (2 * cnt >= factor * factor) out.a[static_cast<size_t>(y) * out.w + x] = 1;
        }
    return out;
}

FrozenBackbone FrozenBackbone::create(uint64_t seed) {
    FrozenBackbone b;
    Rng rng(mix_seed(seed, 0xF0BB));
    b.w1 = Tensor({16, 3, 5, 5});
    b.b1 = Tensor({16});
    b.w2 = Tensor({32, 16, 5, 5});
    b.b2 = Tensor({32});
    const double s1 = 1.0 / std::sqrt(3.0 * 25.0);
    for (double& v : b.w1.data) v = s1 * rng.gaussian();
    const double s2 = 1.0 / std::sqrt(16.0 * 25.0);
    for (double& v : b.w2.data) v = s2 * rng.gaussian();
    return b;
}

Tensor backbone_features(const Tensor& image, const FrozenBackbone& backbone) {
    if (image.ndim() != 3 || image.dim(0) != 3 || image.dim(1) % 4 != 0 || image.dim(2) % 4 != 0)
        throw std::invalid_argument("backbone_features: image must be 3xHxW with H,W % 4 == 0");
    Tensor h1 = relu(conv2d(image, backbone.w1, backbone.b1, Padding::Same, 2));
    return relu(conv2d(h1, backbone.w2, backbone.b2, Padding::Same, 2));
}

void write_ppm(const std::string& path, const Tensor& image) {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw std::invalid_argument("write_ppm: image must be 3xHxW");
    const int h = image.dim(1), w = image.dim(2);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
    f << "P6\n" << w << " " << h << "\n255\n";
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(image.at3(c, y, x), 0.0, 1.0);
                f.put(static_cast<char>(std::lround(v * 255.0)));
            }
    if (!f) throw std::runtime_error("write_ppm: write failed for " + path);
}

Tensor read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_ppm: cannot open " + path);
    std::string magic;
    f >> magic;
    if (magic != "P6") throw std::runtime_error("read_ppm: not a P6 file: " + path);
    auto next_int = [&f, &path]() {
        int v;
        while (f >> std::ws && f.peek() == '#') f.ignore(4096, '\n');
        if (!(f >> v)) throw std::runtime_error("read_ppm: bad header in " + path);
        return v;
    };
    const int w = next_int(), h = next_int(), maxval = next_int();
    if (maxval != 255) throw std::runtime_error("read_ppm: unsupported maxval");
    f.get();  // single whitespace after header
    Tensor img({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const int v = f.get();
                if (v < 0) throw std::runtime_error("read_ppm: truncated file " + path);
                img.at3(c, y, x) = v / 255.0;
            }
    return img;
}

void write_pgm(const std::string& path, const MaskGrid& mask) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_pgm: cannot open " + path);
    f << "P5\n" << mask.w << " " << mask.h << "\n255\n";
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x) f.put(mask.at(x, y) ? static_cast<char>(255) : 0);
    if (!f) throw std::runtime_error("write_pgm: write failed for " + path);
}

void dump_scene(const std::string& dir, const SceneSample& sample) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "ep%llu_t%d_img.ppm",
                  static_cast<unsigned long long>(sample.episode), sample.t);
    write_ppm(dir + "/" + buf, sample.image);
    for (size_t m = 0; m < sample.masks.size(); ++m) {
        std::snprintf(buf, sizeof(buf), "ep%llu_t%d_mask%zu.pgm",
                      static_cast<unsigned long long>(sample.episode), sample.t, m);
        write_pgm(dir + "/" + buf, sample.masks[m]);
    }
}

}  // namespace gap
