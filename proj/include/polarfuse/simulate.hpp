#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "polarfuse/depth_map.hpp"
#include "polarfuse/polarization.hpp"
#include "polarfuse/tensor.hpp"

namespace polarfuse {

enum class MaterialMode { Diffuse, Specular, Transparent };

struct Material {
    MaterialMode mode = MaterialMode::Diffuse;
    double dolp = 0.2;    // constant per-material DoLP
    double albedo = 0.6;  // I_un = light * albedo at the surface
    bool low_texture = false;
};

struct Primitive {
    enum class Kind { Plane, Sphere, Box };
    Kind kind = Kind::Plane;
    Material material;

    // plane: dot(normal, p) = offset, normal unit
    std::array<double, 3> normal = {0.0, 0.0, -1.0};
    double offset = 0.0;
    // sphere
    std::array<double, 3> center = {0.0, 0.0, 0.0};
    double radius = 0.0;
    // axis-aligned box
    std::array<double, 3> box_min = {0.0, 0.0, 0.0};
    std::array<double, 3> box_max = {0.0, 0.0, 0.0};

    static Primitive plane(const std::array<double, 3>& normal, const std::array<double, 3>& point,
                           Material material);
    static Primitive sphere(const std::array<double, 3>& center, double radius,
                            Material material);
    static Primitive box(const std::array<double, 3>& bmin, const std::array<double, 3>& bmax,
                         Material material);
};

struct SceneSpec {
    std::vector<Primitive> primitives;
    CameraIntrinsics intrinsics;
    std::size_t height = 64, width = 64;
    double light_intensity = 1.0;
    double background_intensity = 0.12;  // unpolarized no-hit pixels
    double noise_sigma = 0.0;            // Gaussian, intensity units
    std::uint64_t seed = 0;

    void validate() const;
};

// Per-pixel side products of the ray caster used by degrade().
struct RenderAux {
    Tensor material;     // [H,W] first-hit primitive index, -1 for background
    Tensor low_texture;  // [H,W] 0/1
    Tensor transparent;  // [H,W] 0/1 first hit has transparent material
    Tensor passthrough;  // [H,W] depth of first non-transparent hit, 0 if none
};

struct RenderResult {
    DofpCapture capture;
    DepthMap gt;
    Tensor normals;  // [3,H,W] camera-facing unit normals; zeros at background
    RenderAux aux;
    bool empty_scene = false;  // no primitive hit anywhere
};

// Closed-form ray cast along the viewing field. Transparent surfaces emit
// polarization from their own surface (specular relation) but take the
// intensity of the first non-transparent surface behind them.
RenderResult render(const SceneSpec& scene);

enum class DegradationMode { StereoHoles, DtofTransparent, ItofFovCrop };

DegradationMode degradation_from_string(const std::string& s);
std::string to_string(DegradationMode m);

struct DegradationSpec {
    DegradationMode mode = DegradationMode::StereoHoles;
    double hole_rate = 0.15;           // stereo-holes
    std::size_t crop_margin = 8;       // itof-fov-crop
    double transparent_offset = 25.0;  // mm added to the see-through depth
    double depth_sigma = 5.0;          // mm, all modes

    void validate(std::size_t height, std::size_t width) const;
};

// Produces the degraded sensor depth; gt itself is never altered.
DepthMap degrade(const DepthMap& gt, const DegradationSpec& spec, const RenderAux& aux,
                 std::uint64_t seed);

// --- dataset generation ---

struct SceneSampler {
    std::size_t height = 64, width = 64;
    double focal_scale = 1.1;  // fx = fy = focal_scale * width
    std::size_t min_objects = 2, max_objects = 3;
    double transparent_prob = 1.0;  // chance the first object is transparent
    double wall_low_texture_prob = 0.5;
    double noise_sigma = 0.01;

    CameraIntrinsics intrinsics() const;
    SceneSpec sample(std::uint64_t seed) const;
};

struct DegradationSampler {
    std::vector<DegradationMode> cycle = {DegradationMode::StereoHoles,
                                          DegradationMode::DtofTransparent,
                                          DegradationMode::ItofFovCrop};
    double hole_rate = 0.15;
    double depth_sigma = 6.0;
    double transparent_offset = 25.0;
    std::size_t crop_margin = 0;  // 0 = width/8 (at least 4)

    DegradationSpec sample(std::size_t index, std::size_t height, std::size_t width) const;
};

struct ManifestRow {
    std::size_t index = 0;
    std::string guidance, sensor, gt, normals;  // paths relative to the manifest
    std::string mode;
    std::uint64_t seed = 0;
};

struct DatasetOptions {
    std::size_t count = 1;
    std::uint64_t seed = 1;
    SceneSampler scenes;
    DegradationSampler degradations;
    std::string out_dir;
    std::size_t threads = 1;
};

// One fully prepared training sample; pure function of (options.seed, index).
struct SampleBundle {
    GuidanceTensor guidance;
    DepthMap sensor;
    DepthMap gt;
    Tensor normals;
    DegradationMode mode = DegradationMode::StereoHoles;
    std::uint64_t seed = 0;
};

SampleBundle build_sample(const DatasetOptions& options, std::size_t index);

// Writes PFT1 sample files plus manifest.csv and intrinsics.txt under
// out_dir. Content is a pure function of (seed, index); thread count does
// not change any byte.
std::vector<ManifestRow> generate_dataset(const DatasetOptions& options);

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_manifest(const std::string& path);

void write_intrinsics(const std::string& path, const CameraIntrinsics& k);
CameraIntrinsics read_intrinsics(const std::string& path);

}  // namespace polarfuse
