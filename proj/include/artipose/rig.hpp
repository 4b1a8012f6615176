#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "artipose/math.hpp"

namespace artipose {

struct Bone {
  int id = 0;
  std::optional<int> parent;  // absent for the root
  Vec3 rest_head;
  Vec3 rest_tail;
  std::string name;

  Vec3 rest_direction() const { return rest_tail - rest_head; }
  double rest_length() const { return rest_direction().norm(); }
};

/// Bones stored topologically sorted: parent index < own index, exactly one
/// root. The loader sorts and remaps on ingest; in-memory skeletons are
/// assumed already ordered and are validated on use.
using Skeleton = std::vector<Bone>;

/// Throws invalid_input if the skeleton invariants do not hold.
void validate_skeleton(const Skeleton& skeleton);

struct Pose {
  std::vector<Vec3> rotations;  // per-bone axis-angle, radians
  Vec3 root_translation;

  static Pose identity(size_t bone_count) {
    Pose p;
    p.rotations.resize(bone_count);
    return p;
  }
};

/// Folds every axis-angle into the canonical range: magnitude reduced mod
/// 2*pi, then angles above pi re-expressed as (2*pi - angle) about the
/// negated axis. Idempotent.
Vec3 canonicalize_axis_angle(const Vec3& r);
Pose canonicalize(const Pose& pose);

struct VertexWeight {
  int bone = 0;
  double weight = 0.0;
};

struct SkinnedMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<std::vector<VertexWeight>> weights;  // per vertex, <= 4 entries
};

/// Throws invalid_input on weight/face violations (weights must sum to 1
/// within 1e-6, be non-negative, reference existing bones; <= 4 per vertex).
void validate_mesh(const SkinnedMesh& mesh, const Skeleton& skeleton);

struct BoneAttachment {
  int bone = 0;
  double fraction = 0.0;  // in [0,1] along head -> tail
};

struct FaceAttachment {
  int face = 0;
  std::array<double, 3> barycentric{};
};

struct KeypointBinding {
  std::string keypoint_id;
  // exactly one of the two is set
  std::optional<BoneAttachment> bone;
  std::optional<FaceAttachment> face;
};

void validate_bindings(const std::vector<KeypointBinding>& bindings,
                       const Skeleton& skeleton, const SkinnedMesh& mesh);

/// World transform per bone: world(b) = world(parent(b)) o local(b), where
/// local(b) translates by the rest head offset then rotates by the bone's
/// axis-angle about its own head. The root additionally carries
/// pose.root_translation.
std::vector<RigidTransform> forward_kinematics(const Skeleton& skeleton,
                                               const Pose& pose);

/// Linear blend skinning: v' = sum_b w_b * (T_b o T_b,rest^-1)(v).
/// The bind transform of bone b is the pure translation to its rest head.
std::vector<Vec3> skin(const SkinnedMesh& mesh,
                       const Skeleton& skeleton,
                       const std::vector<RigidTransform>& world_transforms);

/// Posed 3D keypoint positions: bone attachments lerp along the posed bone,
/// face attachments combine skinned vertices barycentrically.
std::map<std::string, Vec3> evaluate_keypoints_3d(
    const Skeleton& skeleton, const Pose& pose, const SkinnedMesh& mesh,
    const std::vector<KeypointBinding>& bindings);

}  // namespace artipose
