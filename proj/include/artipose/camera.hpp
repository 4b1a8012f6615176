#pragma once

#include <optional>
#include <vector>

#include "artipose/math.hpp"

namespace artipose {

/// Pinhole camera on an azimuthal ring, looking at the origin.
/// World is right-handed with +y up; the camera looks toward -z in its own
/// frame. Pixel coordinates have +u right and +v up, origin at the image
/// corner implied by the principal point.
struct Camera {
  int view_id = 0;
  double azimuth = 0.0;    // radians
  double elevation = 0.0;  // radians
  double radius = 1.0;     // model units
  double focal = 1.0;      // pixels
  Vec2 principal;          // pixels
  int image_width = 0;
  int image_height = 0;

  Vec3 position() const;
  /// World-to-camera rigid transform (camera frame, -z forward).
  RigidTransform extrinsic() const;
};

struct ViewRig {
  std::vector<Camera> cameras;
  int n_views() const { return static_cast<int>(cameras.size()); }
};

void validate_rig(const ViewRig& rig);

struct Intrinsics {
  double focal = 0.0;
  Vec2 principal;
  int image_width = 0;
  int image_height = 0;
};

/// Evenly spaced azimuths azimuth_k = 2*pi*k/N, all cameras at the given
/// elevation/radius looking at the origin.
ViewRig make_ring_rig(int n_views, double elevation, double radius,
                      const Intrinsics& intrinsics);

struct Projection {
  Vec2 pixel;
  double depth = 0.0;    // camera-space forward depth
  bool visible = false;  // false when depth <= near-plane epsilon
};

inline constexpr double kNearPlaneEps = 1e-9;

/// u = focal * x_c / z_c + principal.x (likewise v), z_c the forward depth.
/// Points at or behind the near plane come back flagged invisible.
Projection project(const Camera& camera, const Vec3& point);

}  // namespace artipose
