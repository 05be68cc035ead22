#include "polarfuse/polarization.hpp"

#include <cmath>
#include <stdexcept>

namespace polarfuse {

namespace {

// Floor below which a pixel counts as dark and (rho, phi) collapse to (0, 0).
constexpr double kDarkFloor = 1e-12;

std::array<double, 3> cross(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double norm3(const std::array<double, 3>& a) {
    return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
}

void require_unit(const std::array<double, 3>& a, const char* what) {
    if (std::abs(norm3(a) - 1.0) > 1e-6)
        throw std::invalid_argument(std::string(what) + " must be a unit vector");
}

}  // namespace

double canonical_aolp(double phi) {
    double p = std::fmod(phi, kPi);
    if (p < 0.0) p += kPi;
    if (p >= kPi) p = 0.0;  // fmod can land exactly on pi after the shift
    return p;
}

void DofpCapture::validate() const {
    if (data.rank() != 3 || data.dim(0) != 4)
        throw std::invalid_argument("DofpCapture: expected [4,H,W] stack, got " +
                                    data.shape_str());
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i]))
            throw std::invalid_argument("DofpCapture: non-finite intensity");
        if (data[i] < 0.0) throw std::invalid_argument("DofpCapture: negative intensity");
    }
}

void CameraIntrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0))
        throw std::invalid_argument("CameraIntrinsics: focal lengths must be positive");
}

double forward_malus(double i_un, double rho, double phi, double phi_pol) {
    if (!(i_un >= 0.0)) throw std::domain_error("forward_malus: i_un must be >= 0");
    if (!(rho >= 0.0 && rho <= 1.0)) throw std::domain_error("forward_malus: rho must be in [0,1]");
    return i_un * (1.0 + rho * std::cos(2.0 * phi - 2.0 * phi_pol));
}

std::pair<StokesImage, PolarizationState> decode_dofp(const DofpCapture& capture) {
    capture.validate();
    const std::size_t h = capture.height(), w = capture.width();

    StokesImage stokes{Tensor({h, w}), Tensor({h, w}), Tensor({h, w})};
    PolarizationState state{Tensor({h, w}), Tensor({h, w}), Tensor({h, w})};

    const double* i0 = capture.data.data();
    const double* i45 = i0 + h * w;
    const double* i90 = i45 + h * w;
    const double* i135 = i90 + h * w;

    for (std::size_t p = 0; p < h * w; ++p) {
        const double s0 = 0.5 * (i0[p] + i45[p] + i90[p] + i135[p]);
        const double s1 = i0[p] - i90[p];
        const double s2 = i45[p] - i135[p];
        stokes.s0[p] = s0;
        stokes.s1[p] = s1;
        stokes.s2[p] = s2;

        state.intensity[p] = 0.5 * s0;
        if (s0 < kDarkFloor) {
            state.dolp[p] = 0.0;
            state.aolp[p] = 0.0;
        } else {
            double rho = std::sqrt(s1 * s1 + s2 * s2) / s0;
            state.dolp[p] = rho > 1.0 ? 1.0 : rho;
            state.aolp[p] = canonical_aolp(0.5 * std::atan2(s2, s1));
        }
    }
    return {std::move(stokes), std::move(state)};
}

ViewingField viewing_field(const CameraIntrinsics& intrinsics, std::size_t height,
                           std::size_t width) {
    intrinsics.validate();
    if (height < 1 || width < 1)
        throw std::invalid_argument("viewing_field: height and width must be >= 1");
    ViewingField field{Tensor({3, height, width})};
    for (std::size_t row = 0; row < height; ++row) {
        for (std::size_t col = 0; col < width; ++col) {
            const double x = (static_cast<double>(col) - intrinsics.cx) / intrinsics.fx;
            const double y = (static_cast<double>(row) - intrinsics.cy) / intrinsics.fy;
            const double inv = 1.0 / std::sqrt(x * x + y * y + 1.0);
            field.directions.at3(0, row, col) = x * inv;
            field.directions.at3(1, row, col) = y * inv;
            field.directions.at3(2, row, col) = inv;
        }
    }
    return field;
}

std::optional<double> try_aolp_from_normal(const std::array<double, 3>& n,
                                           const std::array<double, 3>& v, ReflectionMode mode) {
    require_unit(n, "aolp_from_normal: n");
    require_unit(v, "aolp_from_normal: v");
    static constexpr std::array<double, 3> z_axis = {0.0, 0.0, 1.0};
    std::array<double, 3> t = cross(n, v);
    if (mode == ReflectionMode::Specular) t = cross(t, v);
    const std::array<double, 3> phi_vec = cross(t, z_axis);
    if (std::hypot(phi_vec[0], phi_vec[1]) < 1e-12) return std::nullopt;
    return canonical_aolp(std::atan2(phi_vec[1], phi_vec[0]));
}

double aolp_from_normal(const std::array<double, 3>& n, const std::array<double, 3>& v,
                        ReflectionMode mode) {
    auto phi = try_aolp_from_normal(n, v, mode);
    if (!phi)
        throw std::domain_error(
            "aolp_from_normal: degenerate configuration (normal parallel to view or projection "
            "aligned with optical axis)");
    return *phi;
}

GuidanceTensor build_guidance(const PolarizationState& state, const ViewingField& view) {
    require_same_dims(state.intensity, state.aolp, "build_guidance");
    require_same_dims(state.intensity, state.dolp, "build_guidance");
    if (view.directions.rank() != 3 || view.directions.dim(0) != 3)
        throw std::invalid_argument("build_guidance: viewing field must be [3,H,W]");
    const std::size_t h = state.intensity.dim(0), w = state.intensity.dim(1);
    if (view.directions.dim(1) != h || view.directions.dim(2) != w)
        throw std::invalid_argument("build_guidance: viewing field spatial dims mismatch");

    GuidanceTensor g{Tensor({6, h, w})};
    double* out = g.data.data();
    const std::size_t plane = h * w;
    std::copy(state.intensity.data(), state.intensity.data() + plane, out);
    std::copy(state.aolp.data(), state.aolp.data() + plane, out + plane);
    std::copy(state.dolp.data(), state.dolp.data() + plane, out + 2 * plane);
    std::copy(view.directions.data(), view.directions.data() + 3 * plane, out + 3 * plane);
    return g;
}

}  // namespace polarfuse
