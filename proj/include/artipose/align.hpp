#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "artipose/camera.hpp"
#include "artipose/rig.hpp"

namespace artipose {

struct KeypointObservation {
  int view_id = 0;
  std::string keypoint_id;
  Vec2 position;       // pixels
  bool visible = true;
  double confidence = 1.0;  // in [0,1]
};

struct TargetSet {
  std::vector<KeypointObservation> observations;
};

void validate_targets(const TargetSet& targets, int n_views);

/// Per-view root-bone override. The rotation is an axis-angle that gets
/// scaled by the attenuation factor s before being composed in front of the
/// shared root rotation; the translation adds to the shared root translation.
struct ViewRoot {
  Vec3 rotation;
  Vec3 translation;
};

struct MaskGrid {
  int width = 0;
  int height = 0;
  std::vector<double> values;  // row-major indicator, values[y*width + x]

  /// Nearest-pixel sample with +v up; outside the grid reads as 0.
  double sample(const Vec2& p) const;
};

struct AlignProblem {
  Skeleton skeleton;
  SkinnedMesh mesh;
  std::vector<KeypointBinding> bindings;
  ViewRig rig;
  TargetSet targets;
  Pose shared_pose;
  std::vector<ViewRoot> per_view_root;  // length == rig.n_views()
  double root_attenuation = 0.3;        // s in [0,1]

  // Optional silhouette term, L_total = L_kp + lambda * L_mask. Off by
  // default; the indicator is piecewise constant so it never contributes
  // to the gradient.
  double mask_lambda = 0.0;
  std::vector<MaskGrid> rendered_masks;  // per view when lambda != 0
  std::vector<MaskGrid> target_masks;
};

void validate_problem(const AlignProblem& problem);

struct RenderedKeypoint {
  Vec2 pixel;
  bool visible = false;
};

/// World transforms for one view: shared pose plus the view's attenuated
/// root override, effective root rotation R(s * r_v) * R(theta_root).
std::vector<RigidTransform> view_world_transforms(const AlignProblem& problem,
                                                  int view);

std::map<std::string, RenderedKeypoint> render_keypoints(
    const AlignProblem& problem, int view);

struct LossDetail {
  double loss = 0.0;          // weighted mean + mask term when enabled
  double keypoint_loss = 0.0; // (1/M) sum conf * |r|^2
  double weighted_sum = 0.0;
  double mask_term = 0.0;     // unscaled mean mask loss over views
  int matched_pairs = 0;      // M: visible matched pairs
  int skipped_unbound = 0;    // target keypoints with no rig binding
  int skipped_invisible = 0;  // matched pairs dropped by a visibility flag
  std::vector<double> per_view_loss;  // per-view mean over that view's pairs
};

/// Throws invalid_input when no visible matched pair exists.
LossDetail keypoint_loss_detail(const AlignProblem& problem);
double keypoint_loss(const AlignProblem& problem);

/// Mean squared difference between the two indicators sampled at the given
/// points. Masks must share a resolution.
double mask_loss(const std::vector<Vec2>& sample_points,
                 const MaskGrid& rendered, const MaskGrid& target);

struct AlignGradient {
  std::vector<Vec3> rotations;  // per bone, matches shared_pose
  Vec3 root_translation;
  std::vector<ViewRoot> per_view;
};

/// Analytic gradient of the keypoint loss by the chain rule through
/// projection, forward kinematics and the axis-angle map. Throws
/// numeric_error naming the offending parameter if any component is
/// non-finite.
AlignGradient loss_gradient(const AlignProblem& problem);

struct OptimizerConfig {
  double learning_rate = 0.05;
  int max_iterations = 300;
  double convergence_tol = 1e-10;
  uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimReport {
  int iterations = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> per_view_loss;
  std::vector<double> loss_trace;  // loss after each iteration
  bool converged = false;
  bool diverged = false;
  double wall_time_ms = 0.0;
  int matched_pairs = 0;
  int skipped_unbound = 0;
};

struct OptimizeResult {
  Pose pose;
  std::vector<ViewRoot> per_view_root;
  OptimReport report;
};

/// Adaptive-moment gradient descent over (shared rotations, root
/// translation, per-view roots). Stops at max_iterations or when the loss
/// improvement over a 20-iteration window drops below convergence_tol;
/// flags divergence after 50 consecutive iterations above 1e3 x the initial
/// loss. Returns the best-seen parameters, not the last-seen.
OptimizeResult optimize_pose(const AlignProblem& problem,
                             const OptimizerConfig& config);

}  // namespace artipose
