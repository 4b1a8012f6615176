#include "artipose/rig.hpp"

#include <cmath>
#include <set>

#include "artipose/errors.hpp"

namespace artipose {

void validate_skeleton(const Skeleton& skeleton) {
  ARTI_REQUIRE(!skeleton.empty(), "skeleton has no bones");
  int roots = 0;
  for (size_t i = 0; i < skeleton.size(); ++i) {
    const Bone& b = skeleton[i];
    ARTI_REQUIRE(b.id == static_cast<int>(i),
                 "bone ids must be dense and match their position");
    if (b.parent) {
      ARTI_REQUIRE(*b.parent >= 0 && *b.parent < static_cast<int>(i),
                   "bone '" + b.name + "': parent index must precede the bone");
    } else {
      ++roots;
    }
    ARTI_REQUIRE(b.rest_head.finite() && b.rest_tail.finite(),
                 "bone '" + b.name + "': non-finite rest geometry");
    ARTI_REQUIRE(b.rest_length() > 0.0,
                 "bone '" + b.name + "': zero rest length");
  }
  ARTI_REQUIRE(roots == 1, "skeleton must have exactly one root bone");
}

Vec3 canonicalize_axis_angle(const Vec3& r) {
  const double a = r.norm();
  if (a == 0.0) return r;
  constexpr double two_pi = 2.0 * M_PI;
  double reduced = std::fmod(a, two_pi);
  if (reduced < 0.0) reduced += two_pi;
  Vec3 axis = r / a;
  if (reduced > M_PI) {
    reduced = two_pi - reduced;
    axis = -axis;
  }
  return axis * reduced;
}

Pose canonicalize(const Pose& pose) {
  Pose out = pose;
  for (auto& r : out.rotations) r = canonicalize_axis_angle(r);
  return out;
}

void validate_mesh(const SkinnedMesh& mesh, const Skeleton& skeleton) {
  ARTI_REQUIRE(mesh.weights.size() == mesh.vertices.size(),
               "mesh weights must cover every vertex");
  const int n_bones = static_cast<int>(skeleton.size());
  const int n_verts = static_cast<int>(mesh.vertices.size());
  for (const auto& f : mesh.faces) {
    for (int idx : f)
      ARTI_REQUIRE(idx >= 0 && idx < n_verts, "face index out of range");
  }
  for (size_t v = 0; v < mesh.weights.size(); ++v) {
    const auto& ws = mesh.weights[v];
    ARTI_REQUIRE(ws.size() <= 4, "vertex " + std::to_string(v) +
                                     ": more than 4 bone influences");
    double sum = 0.0;
    for (const auto& w : ws) {
      ARTI_REQUIRE(w.bone >= 0 && w.bone < n_bones,
                   "vertex " + std::to_string(v) +
                       ": weight references nonexistent bone " +
                       std::to_string(w.bone));
      ARTI_REQUIRE(w.weight >= 0.0, "vertex " + std::to_string(v) +
                                        ": negative skin weight");
      sum += w.weight;
    }
    ARTI_REQUIRE(std::abs(sum - 1.0) <= 1e-6,
                 "vertex " + std::to_string(v) + ": weights sum to " +
                     std::to_string(sum) + ", expected 1");
  }
}

void validate_bindings(const std::vector<KeypointBinding>& bindings,
                       const Skeleton& skeleton, const SkinnedMesh& mesh) {
  std::set<std::string> seen;
  for (const auto& b : bindings) {
    ARTI_REQUIRE(seen.insert(b.keypoint_id).second,
                 "duplicate keypoint binding '" + b.keypoint_id + "'");
    ARTI_REQUIRE(b.bone.has_value() != b.face.has_value(),
                 "binding '" + b.keypoint_id +
                     "': exactly one of bone/face attachment required");
    if (b.bone) {
      ARTI_REQUIRE(b.bone->bone >= 0 &&
                       b.bone->bone < static_cast<int>(skeleton.size()),
                   "binding '" + b.keypoint_id + "': unknown bone");
      ARTI_REQUIRE(b.bone->fraction >= 0.0 && b.bone->fraction <= 1.0,
                   "binding '" + b.keypoint_id + "': fraction outside [0,1]");
    } else {
      ARTI_REQUIRE(b.face->face >= 0 &&
                       b.face->face < static_cast<int>(mesh.faces.size()),
                   "binding '" + b.keypoint_id + "': unknown face");
      double sum = 0.0;
      for (double c : b.face->barycentric) {
        ARTI_REQUIRE(c >= 0.0, "binding '" + b.keypoint_id +
                                   "': negative barycentric coordinate");
        sum += c;
      }
      ARTI_REQUIRE(std::abs(sum - 1.0) <= 1e-6,
                   "binding '" + b.keypoint_id +
                       "': barycentric coordinates must sum to 1");
    }
  }
}

std::vector<RigidTransform> forward_kinematics(const Skeleton& skeleton,
                                               const Pose& pose) {
  validate_skeleton(skeleton);
  ARTI_REQUIRE(pose.rotations.size() == skeleton.size(),
               "pose has " + std::to_string(pose.rotations.size()) +
                   " rotations for " + std::to_string(skeleton.size()) +
                   " bones");
  ARTI_REQUIRE(pose.root_translation.finite(), "non-finite root translation");
  for (size_t i = 0; i < pose.rotations.size(); ++i)
    ARTI_REQUIRE(pose.rotations[i].finite(),
                 "non-finite rotation at bone " + std::to_string(i));

  std::vector<RigidTransform> world(skeleton.size());
  for (size_t i = 0; i < skeleton.size(); ++i) {
    const Bone& b = skeleton[i];
    RigidTransform local;
    local.rotation = axis_angle_to_matrix(pose.rotations[i]);
    if (b.parent) {
      local.translation = b.rest_head - skeleton[static_cast<size_t>(*b.parent)].rest_head;
      world[i] = world[static_cast<size_t>(*b.parent)].compose(local);
    } else {
      local.translation = b.rest_head + pose.root_translation;
      world[i] = local;
    }
  }
  return world;
}

std::vector<Vec3> skin(const SkinnedMesh& mesh,
                       const Skeleton& skeleton,
                       const std::vector<RigidTransform>& world_transforms) {
  validate_mesh(mesh, skeleton);
  ARTI_REQUIRE(world_transforms.size() == skeleton.size(),
               "transform count does not match bone count");

  std::vector<Vec3> out(mesh.vertices.size());
  for (size_t v = 0; v < mesh.vertices.size(); ++v) {
    Vec3 acc;
    for (const auto& w : mesh.weights[v]) {
      // Bind transform is the translation to the rest head, so the delta
      // transform applied to vertex p is W_b(p - head_b).
      const Vec3 local = mesh.vertices[v] - skeleton[static_cast<size_t>(w.bone)].rest_head;
      acc += w.weight * world_transforms[static_cast<size_t>(w.bone)].apply(local);
    }
    out[v] = acc;
  }
  return out;
}

std::map<std::string, Vec3> evaluate_keypoints_3d(
    const Skeleton& skeleton, const Pose& pose, const SkinnedMesh& mesh,
    const std::vector<KeypointBinding>& bindings) {
  validate_bindings(bindings, skeleton, mesh);
  const auto world = forward_kinematics(skeleton, pose);

  std::map<std::string, Vec3> out;
  std::vector<Vec3> skinned;
  for (const auto& b : bindings) {
    Vec3 p;
    if (b.bone) {
      const Bone& bone = skeleton[static_cast<size_t>(b.bone->bone)];
      const Vec3 local = bone.rest_direction() * b.bone->fraction;
      p = world[static_cast<size_t>(b.bone->bone)].apply(local);
    } else {
      if (skinned.empty()) skinned = skin(mesh, skeleton, world);
      const auto& f = mesh.faces[static_cast<size_t>(b.face->face)];
      p = skinned[static_cast<size_t>(f[0])] * b.face->barycentric[0] +
          skinned[static_cast<size_t>(f[1])] * b.face->barycentric[1] +
          skinned[static_cast<size_t>(f[2])] * b.face->barycentric[2];
    }
    out.emplace(b.keypoint_id, p);
  }
  return out;
}

}  // namespace artipose
