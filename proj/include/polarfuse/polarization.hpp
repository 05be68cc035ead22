#pragma once

#include <array>
#include <optional>

#include "polarfuse/tensor.hpp"

namespace polarfuse {

// Linear-polarization conventions used throughout:
//   s0 = 2*I_un, so a polarizer at angle a sees (s0 + s1 cos 2a + s2 sin 2a)/2.
//   AoLP is canonical in [0, pi), with pi mapped to 0.
//   Image coordinates: u = column, w = row, origin top-left, +z into the scene.

inline constexpr double kPi = 3.141592653589793238462643383279502884;

// Polarizer angles of a division-of-focal-plane capture, in raster order.
inline constexpr std::array<double, 4> kDofpAngles = {0.0, kPi / 4.0, kPi / 2.0, 3.0 * kPi / 4.0};

// Wraps an angle into [0, pi); pi itself maps to 0.
double canonical_aolp(double phi);

// Raw 4-angle capture, one intensity raster per polarizer angle (0, 45, 90,
// 135 degrees), stored as a [4,H,W] stack.
struct DofpCapture {
    Tensor data;  // [4,H,W], finite, >= 0

    std::size_t height() const { return data.dim(1); }
    std::size_t width() const { return data.dim(2); }
    double angle(std::size_t k, std::size_t i, std::size_t j) const { return data.at3(k, i, j); }
    void validate() const;  // throws std::invalid_argument on any broken invariant
};

struct StokesImage {
    Tensor s0, s1, s2;  // [H,W] each; s0 >= 0, sqrt(s1^2+s2^2) <= s0 (+eps)
};

struct PolarizationState {
    Tensor intensity;  // I_un, unpolarized total incident light
    Tensor aolp;       // phi in [0, pi)
    Tensor dolp;       // rho in [0, 1]
};

struct CameraIntrinsics {
    double fx = 1.0, fy = 1.0;
    double cx = 0.0, cy = 0.0;
    void validate() const;  // fx, fy must be positive
};

struct ViewingField {
    Tensor directions;  // [3,H,W], unit per-pixel rays, +z forward
};

// Six fixed channels: [I; phi; rho; Vx; Vy; Vz].
struct GuidanceTensor {
    Tensor data;  // [6,H,W]

    std::size_t height() const { return data.dim(1); }
    std::size_t width() const { return data.dim(2); }
};

enum class ReflectionMode { Diffuse, Specular };

// Intensity through a linear polarizer at angle phi_pol for unpolarized
// intensity i_un, DoLP rho and AoLP phi: i_un * (1 + rho*cos(2 phi - 2 phi_pol)).
double forward_malus(double i_un, double rho, double phi, double phi_pol);

// Inverts the 4-angle capture to Stokes parameters and (I_un, rho, phi).
// Per pixel: s0 = (I0+I45+I90+I135)/2, s1 = I0-I90, s2 = I45-I135.
std::pair<StokesImage, PolarizationState> decode_dofp(const DofpCapture& capture);

// Per-pixel unit rays v = normalize([(u-cx)/fx, (w-cy)/fy, 1]).
ViewingField viewing_field(const CameraIntrinsics& intrinsics, std::size_t height,
                           std::size_t width);

// AoLP induced by surface normal n seen along v. Diffuse: Phi = (n x v) x z;
// specular: Phi = ((n x v) x v) x z; phi = atan2(Phi_y, Phi_x) canonicalized.
// Returns nullopt when ||Phi_xy|| < 1e-12 (nothrow variant for rasterizers).
std::optional<double> try_aolp_from_normal(const std::array<double, 3>& n,
                                           const std::array<double, 3>& v, ReflectionMode mode);
// Throwing variant: std::domain_error on the degenerate configuration.
double aolp_from_normal(const std::array<double, 3>& n, const std::array<double, 3>& v,
                        ReflectionMode mode);

// Concatenates [I; phi; rho; V] into the fixed 6-channel layout.
GuidanceTensor build_guidance(const PolarizationState& state, const ViewingField& view);

}  // namespace polarfuse
