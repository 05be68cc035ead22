#include "polarfuse/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <thread>

#include "polarfuse/rng.hpp"
#include "polarfuse/tensor_io.hpp"

namespace polarfuse {

namespace {

constexpr double kRayEps = 1e-6;

struct Hit {
    double t = std::numeric_limits<double>::infinity();
    std::size_t prim = 0;
    std::array<double, 3> normal = {0.0, 0.0, 0.0};
    bool ok = false;
};

double dot3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

// Rays start at the origin; direction d is unit length.
bool intersect(const Primitive& p, const std::array<double, 3>& d, double& t_out,
               std::array<double, 3>& n_out) {
    switch (p.kind) {
        case Primitive::Kind::Plane: {
            const double denom = dot3(p.normal, d);
            if (std::abs(denom) < 1e-12) return false;
            const double t = p.offset / denom;
            if (t <= kRayEps) return false;
            t_out = t;
            n_out = p.normal;
            return true;
        }
        case Primitive::Kind::Sphere: {
            const double b = dot3(d, p.center);
            const double disc = b * b - (dot3(p.center, p.center) - p.radius * p.radius);
            if (disc < 0.0) return false;
            const double sq = std::sqrt(disc);
            double t = b - sq;
            if (t <= kRayEps) t = b + sq;
            if (t <= kRayEps) return false;
            t_out = t;
            const double inv_r = 1.0 / p.radius;
            n_out = {(t * d[0] - p.center[0]) * inv_r, (t * d[1] - p.center[1]) * inv_r,
                     (t * d[2] - p.center[2]) * inv_r};
            return true;
        }
        case Primitive::Kind::Box: {
            double tmin = -std::numeric_limits<double>::infinity();
            double tmax = std::numeric_limits<double>::infinity();
            int entry_axis = -1;
            double entry_sign = 0.0;
            for (int a = 0; a < 3; ++a) {
                if (std::abs(d[a]) < 1e-15) {
                    if (0.0 < p.box_min[a] || 0.0 > p.box_max[a]) return false;
                    continue;
                }
                double t1 = p.box_min[a] / d[a];
                double t2 = p.box_max[a] / d[a];
                double sign = -1.0;  // entering through the min face
                if (t1 > t2) {
                    std::swap(t1, t2);
                    sign = 1.0;
                }
                if (t1 > tmin) {
                    tmin = t1;
                    entry_axis = a;
                    entry_sign = sign;
                }
                tmax = std::min(tmax, t2);
                if (tmin > tmax) return false;
            }
            if (entry_axis < 0 || tmin <= kRayEps) return false;
            t_out = tmin;
            n_out = {0.0, 0.0, 0.0};
            n_out[entry_axis] = entry_sign;
            return true;
        }
    }
    return false;
}

}  // namespace

Primitive Primitive::plane(const std::array<double, 3>& normal,
                           const std::array<double, 3>& point, Material material) {
    const double len = std::sqrt(dot3(normal, normal));
    if (len < 1e-12) throw std::invalid_argument("Primitive::plane: zero normal");
    Primitive p;
    p.kind = Kind::Plane;
    p.material = material;
    p.normal = {normal[0] / len, normal[1] / len, normal[2] / len};
    p.offset = dot3(p.normal, point);
    return p;
}

Primitive Primitive::sphere(const std::array<double, 3>& center, double radius,
                            Material material) {
    if (!(radius > 0.0)) throw std::invalid_argument("Primitive::sphere: radius must be > 0");
    Primitive p;
    p.kind = Kind::Sphere;
    p.material = material;
    p.center = center;
    p.radius = radius;
    return p;
}

Primitive Primitive::box(const std::array<double, 3>& bmin, const std::array<double, 3>& bmax,
                         Material material) {
    for (int a = 0; a < 3; ++a)
        if (!(bmin[a] < bmax[a])) throw std::invalid_argument("Primitive::box: empty extent");
    Primitive p;
    p.kind = Kind::Box;
    p.material = material;
    p.box_min = bmin;
    p.box_max = bmax;
    return p;
}

void SceneSpec::validate() const {
    if (height < 16 || width < 16)
        throw std::invalid_argument("SceneSpec: resolution must be at least 16x16");
    intrinsics.validate();
    if (noise_sigma < 0.0) throw std::invalid_argument("SceneSpec: noise sigma must be >= 0");
    if (light_intensity < 0.0 || background_intensity < 0.0)
        throw std::invalid_argument("SceneSpec: intensities must be >= 0");
    for (const Primitive& p : primitives)
        if (p.material.dolp < 0.0 || p.material.dolp > 1.0)
            throw std::invalid_argument("SceneSpec: material DoLP must be in [0,1]");
}

RenderResult render(const SceneSpec& scene) {
    scene.validate();
    const std::size_t h = scene.height, w = scene.width;
    ViewingField view = viewing_field(scene.intrinsics, h, w);

    RenderResult r{DofpCapture{Tensor({4, h, w})},
                   DepthMap{Tensor({h, w}), Tensor({h, w})},
                   Tensor({3, h, w}),
                   RenderAux{Tensor({h, w}, -1.0), Tensor({h, w}), Tensor({h, w}),
                             Tensor({h, w})},
                   false};

    Rng noise(mix_seed(scene.seed, 0xCAFE));
    bool any_hit = false;

    for (std::size_t row = 0; row < h; ++row) {
        for (std::size_t col = 0; col < w; ++col) {
            const std::array<double, 3> dir = {view.directions.at3(0, row, col),
                                               view.directions.at3(1, row, col),
                                               view.directions.at3(2, row, col)};
            Hit first, first_solid;
            for (std::size_t k = 0; k < scene.primitives.size(); ++k) {
                double t;
                std::array<double, 3> n;
                if (!intersect(scene.primitives[k], dir, t, n)) continue;
                if (t < first.t) first = Hit{t, k, n, true};
                if (scene.primitives[k].material.mode != MaterialMode::Transparent &&
                    t < first_solid.t)
                    first_solid = Hit{t, k, n, true};
            }

            double i_un = scene.background_intensity;
            double rho = 0.0, phi = 0.0;
            if (first.ok) {
                any_hit = true;
                const Primitive& prim = scene.primitives[first.prim];
                std::array<double, 3> n = first.normal;
                if (dot3(n, dir) > 0.0) n = {-n[0], -n[1], -n[2]};  // face the camera

                r.gt.depth.at2(row, col) = first.t * dir[2];
                r.gt.valid.at2(row, col) = 1.0;
                r.normals.at3(0, row, col) = n[0];
                r.normals.at3(1, row, col) = n[1];
                r.normals.at3(2, row, col) = n[2];
                r.aux.material.at2(row, col) = static_cast<double>(first.prim);
                r.aux.low_texture.at2(row, col) = prim.material.low_texture ? 1.0 : 0.0;

                const bool transparent = prim.material.mode == MaterialMode::Transparent;
                r.aux.transparent.at2(row, col) = transparent ? 1.0 : 0.0;
                if (first_solid.ok) r.aux.passthrough.at2(row, col) = first_solid.t * dir[2];

                if (transparent) {
                    // see-through intensity, surface-borne polarization
                    i_un = first_solid.ok ? scene.light_intensity *
                                                scene.primitives[first_solid.prim].material.albedo
                                          : scene.background_intensity;
                } else {
                    i_un = scene.light_intensity * prim.material.albedo;
                }
                const ReflectionMode mode = prim.material.mode == MaterialMode::Diffuse
                                                ? ReflectionMode::Diffuse
                                                : ReflectionMode::Specular;
                auto aolp = try_aolp_from_normal(n, dir, mode);
                if (aolp && prim.material.dolp > 0.0) {
                    rho = prim.material.dolp;
                    phi = *aolp;
                }
            }

            for (std::size_t k = 0; k < 4; ++k) {
                double v = forward_malus(i_un, rho, phi, kDofpAngles[k]);
                if (scene.noise_sigma > 0.0) v += noise.gaussian(0.0, scene.noise_sigma);
                r.capture.data.at3(k, row, col) = v < 0.0 ? 0.0 : v;
            }
        }
    }
    r.empty_scene = !any_hit;
    return r;
}

DegradationMode degradation_from_string(const std::string& s) {
    if (s == "stereo-holes") return DegradationMode::StereoHoles;
    if (s == "dtof-transparent") return DegradationMode::DtofTransparent;
    if (s == "itof-fov-crop") return DegradationMode::ItofFovCrop;
    throw std::invalid_argument("unknown degradation mode '" + s + "'");
}

std::string to_string(DegradationMode m) {
    switch (m) {
        case DegradationMode::StereoHoles: return "stereo-holes";
        case DegradationMode::DtofTransparent: return "dtof-transparent";
        case DegradationMode::ItofFovCrop: return "itof-fov-crop";
    }
    return "?";
}

void DegradationSpec::validate(std::size_t height, std::size_t width) const {
    if (hole_rate < 0.0 || hole_rate > 1.0)
        throw std::invalid_argument("DegradationSpec: hole rate must be in [0,1]");
    if (crop_margin >= std::min(height, width) / 2)
        throw std::invalid_argument("DegradationSpec: crop margin must be < min(H,W)/2");
    if (depth_sigma < 0.0)
        throw std::invalid_argument("DegradationSpec: depth sigma must be >= 0");
}

DepthMap degrade(const DepthMap& gt, const DegradationSpec& spec, const RenderAux& aux,
                 std::uint64_t seed) {
    gt.validate();
    require_same_dims(gt.depth, aux.material, "degrade");
    const std::size_t h = gt.height(), w = gt.width();
    spec.validate(h, w);

    DepthMap sensor = gt;
    Rng rng(mix_seed(seed, 0xD36D));

    switch (spec.mode) {
        case DegradationMode::StereoHoles:
            for (std::size_t i = 0; i < h * w; ++i) {
                const bool drop = rng.uniform() < spec.hole_rate;  // drawn for every pixel
                if (sensor.valid[i] == 0.0) continue;
                if (drop || aux.low_texture[i] != 0.0) {
                    sensor.valid[i] = 0.0;
                    sensor.depth[i] = 0.0;
                }
            }
            break;
        case DegradationMode::DtofTransparent:
            for (std::size_t i = 0; i < h * w; ++i) {
                if (sensor.valid[i] == 0.0 || aux.transparent[i] == 0.0) continue;
                if (aux.passthrough[i] > 0.0) {
                    sensor.depth[i] = aux.passthrough[i] + spec.transparent_offset;
                } else {
                    sensor.valid[i] = 0.0;
                    sensor.depth[i] = 0.0;
                }
            }
            break;
        case DegradationMode::ItofFovCrop:
            for (std::size_t row = 0; row < h; ++row)
                for (std::size_t col = 0; col < w; ++col) {
                    const bool inner = row >= spec.crop_margin && row < h - spec.crop_margin &&
                                       col >= spec.crop_margin && col < w - spec.crop_margin;
                    if (!inner) {
                        sensor.valid.at2(row, col) = 0.0;
                        sensor.depth.at2(row, col) = 0.0;
                    }
                }
            break;
    }

    if (spec.depth_sigma > 0.0) {
        for (std::size_t i = 0; i < h * w; ++i) {
            const double g = rng.gaussian(0.0, spec.depth_sigma);  // drawn for every pixel
            if (sensor.valid[i] == 0.0) continue;
            sensor.depth[i] = std::max(1e-3, sensor.depth[i] + g);
        }
    }
    return sensor;
}

CameraIntrinsics SceneSampler::intrinsics() const {
    CameraIntrinsics k;
    k.fx = k.fy = focal_scale * static_cast<double>(width);
    k.cx = (static_cast<double>(width) - 1.0) / 2.0;
    k.cy = (static_cast<double>(height) - 1.0) / 2.0;
    return k;
}

SceneSpec SceneSampler::sample(std::uint64_t seed) const {
    Rng rng(mix_seed(seed, 0x5CE11E));
    SceneSpec scene;
    scene.height = height;
    scene.width = width;
    scene.intrinsics = intrinsics();
    scene.noise_sigma = noise_sigma;
    scene.seed = seed;

    Material wall;
    wall.mode = MaterialMode::Diffuse;
    wall.albedo = rng.uniform(0.35, 0.7);
    wall.dolp = rng.uniform(0.08, 0.3);
    wall.low_texture = rng.uniform() < wall_low_texture_prob;
    const double wall_z = rng.uniform(2300.0, 3100.0);
    const std::array<double, 3> wall_n = {rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), -1.0};
    scene.primitives.push_back(Primitive::plane(wall_n, {0.0, 0.0, wall_z}, wall));

    const std::size_t n_obj =
        static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(min_objects),
                                                 static_cast<std::int64_t>(max_objects)));
    for (std::size_t k = 0; k < n_obj; ++k) {
        Material mat;
        if (k == 0 && rng.uniform() < transparent_prob) {
            mat.mode = MaterialMode::Transparent;
            mat.dolp = rng.uniform(0.82, 0.95);
            mat.albedo = rng.uniform(0.3, 0.9);
        } else if (rng.uniform() < 0.6) {
            mat.mode = MaterialMode::Diffuse;
            mat.dolp = rng.uniform(0.1, 0.45);
            mat.albedo = rng.uniform(0.3, 0.95);
        } else {
            mat.mode = MaterialMode::Specular;
            mat.dolp = rng.uniform(0.3, 0.6);
            mat.albedo = rng.uniform(0.3, 0.95);
        }
        const std::array<double, 3> c = {rng.uniform(-600.0, 600.0), rng.uniform(-450.0, 450.0),
                                         rng.uniform(950.0, 1900.0)};
        if (rng.uniform() < 0.6) {
            scene.primitives.push_back(Primitive::sphere(c, rng.uniform(150.0, 400.0), mat));
        } else {
            const std::array<double, 3> he = {rng.uniform(120.0, 330.0),
                                              rng.uniform(120.0, 330.0),
                                              rng.uniform(120.0, 330.0)};
            scene.primitives.push_back(Primitive::box({c[0] - he[0], c[1] - he[1], c[2] - he[2]},
                                                      {c[0] + he[0], c[1] + he[1], c[2] + he[2]},
                                                      mat));
        }
    }
    return scene;
}

DegradationSpec DegradationSampler::sample(std::size_t index, std::size_t height,
                                           std::size_t width) const {
    if (cycle.empty()) throw std::invalid_argument("DegradationSampler: empty mode cycle");
    DegradationSpec spec;
    spec.mode = cycle[index % cycle.size()];
    spec.hole_rate = hole_rate;
    spec.depth_sigma = depth_sigma;
    spec.transparent_offset = transparent_offset;
    spec.crop_margin = crop_margin != 0 ? crop_margin : std::max<std::size_t>(4, width / 8);
    spec.validate(height, width);
    return spec;
}

namespace {

std::string sample_stem(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%05zu", index);
    return buf;
}

void generate_one(const DatasetOptions& options, std::size_t index,
                  const std::filesystem::path& samples_dir, ManifestRow& row) {
    SampleBundle bundle = build_sample(options, index);

    const std::string stem = sample_stem(index);
    row.index = index;
    row.guidance = "samples/" + stem + "_guidance.pft";
    row.sensor = "samples/" + stem + "_sensor.pft";
    row.gt = "samples/" + stem + "_gt.pft";
    row.normals = "samples/" + stem + "_normals.pft";
    row.mode = to_string(bundle.mode);
    row.seed = bundle.seed;

    write_pft1((samples_dir / (stem + "_guidance.pft")).string(), bundle.guidance.data);
    write_pft1((samples_dir / (stem + "_sensor.pft")).string(), bundle.sensor.to_stack());
    write_pft1((samples_dir / (stem + "_gt.pft")).string(), bundle.gt.to_stack());
    write_pft1((samples_dir / (stem + "_normals.pft")).string(), bundle.normals);
}

}  // namespace

SampleBundle build_sample(const DatasetOptions& options, std::size_t index) {
    const std::uint64_t sample_seed = mix_seed(options.seed, index);
    SceneSpec scene = options.scenes.sample(sample_seed);
    RenderResult rendered = render(scene);
    const DegradationSpec dspec = options.degradations.sample(index, scene.height, scene.width);
    DepthMap sensor = degrade(rendered.gt, dspec, rendered.aux, mix_seed(sample_seed, 0xDE6));

    auto [stokes, state] = decode_dofp(rendered.capture);
    (void)stokes;
    ViewingField view = viewing_field(scene.intrinsics, scene.height, scene.width);

    SampleBundle bundle;
    bundle.guidance = build_guidance(state, view);
    bundle.sensor = std::move(sensor);
    bundle.gt = std::move(rendered.gt);
    bundle.normals = std::move(rendered.normals);
    bundle.mode = dspec.mode;
    bundle.seed = sample_seed;
    return bundle;
}

std::vector<ManifestRow> generate_dataset(const DatasetOptions& options) {
    if (options.count < 1) throw std::invalid_argument("generate_dataset: count must be >= 1");
    const std::filesystem::path out_dir(options.out_dir);
    const std::filesystem::path samples_dir = out_dir / "samples";
    std::filesystem::create_directories(samples_dir);

    std::vector<ManifestRow> rows(options.count);
    const std::size_t workers =
        std::max<std::size_t>(1, std::min(options.threads, options.count));
    if (workers == 1) {
        for (std::size_t i = 0; i < options.count; ++i)
            generate_one(options, i, samples_dir, rows[i]);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(workers);
        for (std::size_t wi = 0; wi < workers; ++wi) {
            pool.emplace_back([&, wi] {
                try {
                    for (std::size_t i = wi; i < options.count; i += workers)
                        generate_one(options, i, samples_dir, rows[i]);
                } catch (...) {
                    errors[wi] = std::current_exception();
                }
            });
        }
        for (auto& t : pool) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    write_manifest((out_dir / "manifest.csv").string(), rows);
    write_intrinsics((out_dir / "intrinsics.txt").string(), options.scenes.intrinsics());
    return rows;
}

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("write_manifest: cannot open '" + path + "'");
    os << "index,guidance,sensor,gt,normals,mode,seed\n";
    for (const ManifestRow& r : rows)
        os << r.index << "," << r.guidance << "," << r.sensor << "," << r.gt << "," << r.normals
           << "," << r.mode << "," << r.seed << "\n";
    if (!os) throw IoError("write_manifest: write failure on '" + path + "'");
}

std::vector<ManifestRow> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_manifest: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw IoError("read_manifest: empty file '" + path + "'");
    std::vector<ManifestRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                fields.push_back(line.substr(start, i - start));
                start = i + 1;
            }
        }
        if (fields.size() != 7)
            throw IoError("read_manifest: malformed row in '" + path + "': " + line);
        ManifestRow r;
        r.index = static_cast<std::size_t>(std::stoull(fields[0]));
        r.guidance = fields[1];
        r.sensor = fields[2];
        r.gt = fields[3];
        r.normals = fields[4];
        r.mode = fields[5];
        r.seed = std::stoull(fields[6]);
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_intrinsics(const std::string& path, const CameraIntrinsics& k) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("write_intrinsics: cannot open '" + path + "'");
    char buf[256];
    std::snprintf(buf, sizeof(buf), "fx=%.17g\nfy=%.17g\ncx=%.17g\ncy=%.17g\n", k.fx, k.fy, k.cx,
                  k.cy);
    os << buf;
}

CameraIntrinsics read_intrinsics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_intrinsics: cannot open '" + path + "'");
    CameraIntrinsics k;
    bool has_fx = false, has_fy = false, has_cx = false, has_cy = false;
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const double value = std::stod(line.substr(eq + 1));
        if (key == "fx") k.fx = value, has_fx = true;
        else if (key == "fy") k.fy = value, has_fy = true;
        else if (key == "cx") k.cx = value, has_cx = true;
        else if (key == "cy") k.cy = value, has_cy = true;
    }
    if (!has_fx || !has_fy || !has_cx || !has_cy)
        throw IoError("read_intrinsics: '" + path + "' missing fx/fy/cx/cy");
    k.validate();
    return k;
}

}  // namespace polarfuse
