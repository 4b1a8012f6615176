#include "artipose/camera.hpp"

#include <cmath>

#include "artipose/errors.hpp"

namespace artipose {

Vec3 Camera::position() const {
  const double ce = std::cos(elevation);
  return Vec3{ce * std::sin(azimuth), std::sin(elevation), ce * std::cos(azimuth)} *
         radius;
}

RigidTransform Camera::extrinsic() const {
  const Vec3 center = position();
  // The camera looks at the origin: +z_cam points from the origin toward the
  // camera, +y_cam is up-ish, +x_cam completes the right-handed frame.
  Vec3 z_cam = center / center.norm();
  const Vec3 up{0.0, 1.0, 0.0};
  Vec3 x_cam = up.cross(z_cam);
  const double xn = x_cam.norm();
  ARTI_REQUIRE(xn > 1e-12, "degenerate viewing direction (camera on the vertical axis)");
  x_cam = x_cam / xn;
  const Vec3 y_cam = z_cam.cross(x_cam);

  Mat3 world_to_cam;
  for (int j = 0; j < 3; ++j) {
    world_to_cam(0, j) = x_cam[j];
    world_to_cam(1, j) = y_cam[j];
    world_to_cam(2, j) = z_cam[j];
  }
  return {world_to_cam, -(world_to_cam * center)};
}

void validate_rig(const ViewRig& rig) {
  ARTI_REQUIRE(rig.n_views() >= 1, "camera rig must contain at least one view");
  for (int i = 0; i < rig.n_views(); ++i) {
    const Camera& c = rig.cameras[static_cast<size_t>(i)];
    ARTI_REQUIRE(c.view_id == i, "view ids must be dense 0..N-1 and ordered");
    ARTI_REQUIRE(c.radius > 0.0, "camera radius must be positive");
    ARTI_REQUIRE(c.focal > 0.0, "camera focal must be positive");
    ARTI_REQUIRE(c.image_width > 0 && c.image_height > 0,
                 "image size must be positive");
    ARTI_REQUIRE(c.principal.x >= 0.0 && c.principal.x <= c.image_width &&
                     c.principal.y >= 0.0 && c.principal.y <= c.image_height,
                 "principal point outside image bounds");
  }
}

ViewRig make_ring_rig(int n_views, double elevation, double radius,
                      const Intrinsics& intrinsics) {
  ARTI_REQUIRE(n_views >= 1, "ring rig needs at least one view");
  ViewRig rig;
  rig.cameras.reserve(static_cast<size_t>(n_views));
  for (int k = 0; k < n_views; ++k) {
    Camera c;
    c.view_id = k;
    c.azimuth = 2.0 * M_PI * k / n_views;
    c.elevation = elevation;
    c.radius = radius;
    c.focal = intrinsics.focal;
    c.principal = intrinsics.principal;
    c.image_width = intrinsics.image_width;
    c.image_height = intrinsics.image_height;
    rig.cameras.push_back(c);
  }
  validate_rig(rig);
  return rig;
}

Projection project(const Camera& camera, const Vec3& point) {
  const Vec3 pc = camera.extrinsic().apply(point);
  Projection out;
  out.depth = -pc.z;  // camera looks toward -z; forward depth is positive
  if (out.depth <= kNearPlaneEps) {
    out.visible = false;
    return out;
  }
  out.visible = true;
  out.pixel.x = camera.focal * pc.x / out.depth + camera.principal.x;
  out.pixel.y = camera.focal * pc.y / out.depth + camera.principal.y;
  return out;
}

}  // namespace artipose
