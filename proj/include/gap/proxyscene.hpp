#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gap/tensor.hpp"

namespace gap {

enum class ShapeKind { Rect, Disc, LShape };
enum class BackgroundStyle { Plain, Checker };

struct SceneSpec {
    int width = 64;
    int height = 64;
    int entities = 2;
    double size_min = 0.12;  // characteristic extent, fraction of image width
    double size_max = 0.30;
    BackgroundStyle background = BackgroundStyle::Plain;
    bool palette_shift = false;
    uint64_t seed = 0;
};

struct MaskGrid {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> a;  // row-major, 0/1

    bool at(int x, int y) const { return a[static_cast<size_t>(y) * w + x] != 0; }
    long long count() const;
};

struct SceneSample {
    Tensor image;                       // 3 x H x W, values in [0,1]
    std::vector<MaskGrid> masks;        // per entity, image resolution
    std::vector<MaskGrid> feat_masks;   // per entity, (H/4) x (W/4)
    uint64_t episode = 0;
    int t = 0;
};

// Geometry of one placed entity, in pixel units. Positions are integers so
// that masks translate rigidly frame to frame.
struct EntityGeom {
    ShapeKind shape = ShapeKind::Rect;
    double half_w = 0.0;
    double half_h = 0.0;
    int cut_quadrant = 0;  // L-shape: which quadrant of the rect is removed
    int color = 0;         // palette index
};

struct EpisodeParams {
    std::vector<EntityGeom> geoms;
    std::vector<std::array<int, 2>> pos0;    // initial centers, px
    std::vector<std::array<int, 2>> vel;     // px per frame
    std::vector<std::array<int, 4>> bounds;  // per entity: x_lo, x_hi, y_lo, y_hi for the center
    uint64_t episode_id = 0;
};

std::array<double, 3> palette_color(int index, bool shifted);

// Rasterizes one entity into a fresh image-resolution mask.
MaskGrid raster_entity(const EntityGeom& g, double cx, double cy, int h, int w);

// Paints background + entities; entity pixels are exactly the mask pixels.
Tensor compose_image(const SceneSpec& spec, const std::vector<EntityGeom>& geoms,
                     const std::vector<std::array<double, 2>>& centers,
                     const std::vector<MaskGrid>& masks);

// Single static scene: entities placed anywhere (rejection-sampled to be
// disjoint and fully inside). Deterministic in (spec, seed).
SceneSample render_scene(const SceneSpec& spec, uint64_t seed);

// Motion parameters for an episode. Entities bounce inside disjoint vertical
// strips so masks stay pairwise disjoint at every frame.
EpisodeParams sample_episode(const SceneSpec& spec, uint64_t seed);

// Frame t of an episode, computed in closed form (reflective bounce).
SceneSample render_frame(const SceneSpec& spec, const EpisodeParams& ep, int t);

std::vector<SceneSample> generate_episode(const SceneSpec& spec, uint64_t seed, int length);

// >= 50% cell occupancy rule. May return an empty grid; callers must check.
MaskGrid downsample_mask(const MaskGrid& mask, int factor = 4);

// Frozen random-filter feature extractor: two 5x5/stride-2 conv+ReLU stages,
// 3 -> 16 -> 32 channels, zero biases. Never updated.
struct FrozenBackbone {
    Tensor w1, b1, w2, b2;
    static FrozenBackbone create(uint64_t seed);
};

inline constexpr uint64_t kBackboneSeed = 0xBACBB0AEull;

// image 3xHxW with H, W divisible by 4 -> features 32 x H/4 x W/4.
Tensor backbone_features(const Tensor& image, const FrozenBackbone& backbone);

// PPM (P6) / PGM (P5) round trip for scene dumps and overlays.
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);
void write_pgm(const std::string& path, const MaskGrid& mask);

// Writes ep{E}_t{T}_img.ppm and ep{E}_t{T}_mask{m}.pgm into dir.
void dump_scene(const std::string& dir, const SceneSample& sample);

}  // namespace gap
