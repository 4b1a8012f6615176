#include "artipose/align.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "artipose/errors.hpp"

namespace artipose {

namespace {

// A posed keypoint is an affine combination of rigidly transformed points:
// p = sum_k weight_k * W_{bone_k}(local_k). Bone attachments have a single
// support; barycentric attachments expand to one support per (face vertex,
// bone influence).
struct Support {
  int bone = 0;
  double weight = 0.0;
  Vec3 local;
};

std::vector<Support> binding_supports(const KeypointBinding& binding,
                                      const Skeleton& skeleton,
                                      const SkinnedMesh& mesh) {
  std::vector<Support> out;
  if (binding.bone) {
    const Bone& b = skeleton[static_cast<size_t>(binding.bone->bone)];
    out.push_back({binding.bone->bone,
                   1.0,
                   b.rest_direction() * binding.bone->fraction});
  } else {
    const auto& face = mesh.faces[static_cast<size_t>(binding.face->face)];
    for (int j = 0; j < 3; ++j) {
      const double beta = binding.face->barycentric[static_cast<size_t>(j)];
      const int vtx = face[static_cast<size_t>(j)];
      for (const auto& w : mesh.weights[static_cast<size_t>(vtx)]) {
        out.push_back({w.bone, beta * w.weight,
                       mesh.vertices[static_cast<size_t>(vtx)] -
                           skeleton[static_cast<size_t>(w.bone)].rest_head});
      }
    }
  }
  return out;
}

Vec3 evaluate_supports(const std::vector<Support>& supports,
                       const std::vector<RigidTransform>& world) {
  Vec3 p;
  for (const auto& s : supports)
    p += s.weight * world[static_cast<size_t>(s.bone)].apply(s.local);
  return p;
}

// Fixed reduction order: ascending view id, ascending keypoint id.
struct PairRecord {
  int view = 0;
  int binding = -1;          // index into problem.bindings, -1 when unbound
  const KeypointObservation* obs = nullptr;
};

std::vector<PairRecord> ordered_pairs(const AlignProblem& problem) {
  std::vector<std::map<std::string, const KeypointObservation*>> by_view(
      static_cast<size_t>(problem.rig.n_views()));
  for (const auto& obs : problem.targets.observations)
    by_view[static_cast<size_t>(obs.view_id)].emplace(obs.keypoint_id, &obs);

  std::map<std::string, int> binding_index;
  for (size_t i = 0; i < problem.bindings.size(); ++i)
    binding_index.emplace(problem.bindings[i].keypoint_id, static_cast<int>(i));

  std::vector<PairRecord> out;
  for (int v = 0; v < problem.rig.n_views(); ++v) {
    for (const auto& [id, obs] : by_view[static_cast<size_t>(v)]) {
      const auto it = binding_index.find(id);
      out.push_back({v, it == binding_index.end() ? -1 : it->second, obs});
    }
  }
  return out;
}

}  // namespace

void validate_targets(const TargetSet& targets, int n_views) {
  std::set<std::pair<int, std::string>> seen;
  for (const auto& obs : targets.observations) {
    ARTI_REQUIRE(obs.view_id >= 0 && obs.view_id < n_views,
                 "target keypoint '" + obs.keypoint_id +
                     "': view id out of range");
    ARTI_REQUIRE(seen.insert({obs.view_id, obs.keypoint_id}).second,
                 "duplicate target (view " + std::to_string(obs.view_id) +
                     ", '" + obs.keypoint_id + "')");
    ARTI_REQUIRE(obs.confidence >= 0.0 && obs.confidence <= 1.0,
                 "target keypoint '" + obs.keypoint_id +
                     "': confidence outside [0,1]");
    if (obs.visible)
      ARTI_REQUIRE(std::isfinite(obs.position.x) && std::isfinite(obs.position.y),
                   "target keypoint '" + obs.keypoint_id +
                       "': non-finite position");
  }
}

double MaskGrid::sample(const Vec2& p) const {
  const int px = static_cast<int>(std::floor(p.x));
  const int py = static_cast<int>(std::floor(p.y));
  if (px < 0 || px >= width || py < 0 || py >= height) return 0.0;
  return values[static_cast<size_t>(py) * static_cast<size_t>(width) +
                static_cast<size_t>(px)];
}

void validate_problem(const AlignProblem& problem) {
  validate_skeleton(problem.skeleton);
  validate_mesh(problem.mesh, problem.skeleton);
  validate_bindings(problem.bindings, problem.skeleton, problem.mesh);
  validate_rig(problem.rig);
  validate_targets(problem.targets, problem.rig.n_views());
  ARTI_REQUIRE(problem.shared_pose.rotations.size() == problem.skeleton.size(),
               "shared pose length does not match bone count");
  ARTI_REQUIRE(static_cast<int>(problem.per_view_root.size()) ==
                   problem.rig.n_views(),
               "per-view root list must have one entry per view");
  ARTI_REQUIRE(problem.root_attenuation >= 0.0 && problem.root_attenuation <= 1.0,
               "root attenuation must lie in [0,1]");
  if (problem.mask_lambda != 0.0) {
    ARTI_REQUIRE(problem.rendered_masks.size() == problem.target_masks.size() &&
                     static_cast<int>(problem.rendered_masks.size()) ==
                         problem.rig.n_views(),
                 "mask term enabled but masks do not cover every view");
  }
}

std::vector<RigidTransform> view_world_transforms(const AlignProblem& problem,
                                                  int view) {
  ARTI_REQUIRE(view >= 0 && view < problem.rig.n_views(), "view out of range");
  const Skeleton& skeleton = problem.skeleton;
  const Pose& pose = problem.shared_pose;
  const ViewRoot& vr = problem.per_view_root[static_cast<size_t>(view)];
  const double s = problem.root_attenuation;

  std::vector<RigidTransform> world(skeleton.size());
  const Mat3 view_rot = axis_angle_to_matrix(vr.rotation * s);
  const Mat3 root_rot = axis_angle_to_matrix(pose.rotations[0]);
  world[0].rotation = view_rot * root_rot;
  world[0].translation =
      skeleton[0].rest_head + pose.root_translation + vr.translation;
  for (size_t b = 1; b < skeleton.size(); ++b) {
    RigidTransform local;
    local.rotation = axis_angle_to_matrix(pose.rotations[b]);
    local.translation =
        skeleton[b].rest_head -
        skeleton[static_cast<size_t>(*skeleton[b].parent)].rest_head;
    world[b] = world[static_cast<size_t>(*skeleton[b].parent)].compose(local);
  }
  return world;
}

std::map<std::string, RenderedKeypoint> render_keypoints(
    const AlignProblem& problem, int view) {
  validate_problem(problem);
  const auto world = view_world_transforms(problem, view);
  const Camera& cam = problem.rig.cameras[static_cast<size_t>(view)];

  std::map<std::string, RenderedKeypoint> out;
  for (const auto& binding : problem.bindings) {
    const auto supports = binding_supports(binding, problem.skeleton, problem.mesh);
    const Vec3 p = evaluate_supports(supports, world);
    const Projection proj = project(cam, p);
    out[binding.keypoint_id] = {proj.pixel, proj.visible};
  }
  return out;
}

double mask_loss(const std::vector<Vec2>& sample_points,
                 const MaskGrid& rendered, const MaskGrid& target) {
  ARTI_REQUIRE(rendered.width == target.width && rendered.height == target.height,
               "mask resolution mismatch");
  if (sample_points.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : sample_points) {
    const double d = rendered.sample(p) - target.sample(p);
    sum += d * d;
  }
  return sum / static_cast<double>(sample_points.size());
}

namespace {

double mask_term_value(const AlignProblem& problem) {
  double sum = 0.0;
  for (int v = 0; v < problem.rig.n_views(); ++v) {
    const auto world = view_world_transforms(problem, v);
    const auto verts = skin(problem.mesh, problem.skeleton, world);
    const Camera& cam = problem.rig.cameras[static_cast<size_t>(v)];
    std::vector<Vec2> pts;
    pts.reserve(verts.size());
    for (const auto& p : verts) {
      const Projection proj = project(cam, p);
      if (proj.visible) pts.push_back(proj.pixel);
    }
    sum += mask_loss(pts, problem.rendered_masks[static_cast<size_t>(v)],
                     problem.target_masks[static_cast<size_t>(v)]);
  }
  return sum / static_cast<double>(problem.rig.n_views());
}

}  // namespace

LossDetail keypoint_loss_detail(const AlignProblem& problem) {
  validate_problem(problem);
  const auto pairs = ordered_pairs(problem);

  LossDetail detail;
  detail.per_view_loss.assign(static_cast<size_t>(problem.rig.n_views()), 0.0);
  std::vector<int> per_view_pairs(static_cast<size_t>(problem.rig.n_views()), 0);

  int current_view = -1;
  std::vector<RigidTransform> world;
  for (const auto& pr : pairs) {
    if (pr.binding < 0) {
      ++detail.skipped_unbound;
      continue;
    }
    if (pr.view != current_view) {
      current_view = pr.view;
      world = view_world_transforms(problem, pr.view);
    }
    const auto supports = binding_supports(
        problem.bindings[static_cast<size_t>(pr.binding)], problem.skeleton,
        problem.mesh);
    const Vec3 p = evaluate_supports(supports, world);
    const Projection proj =
        project(problem.rig.cameras[static_cast<size_t>(pr.view)], p);
    if (!pr.obs->visible || !proj.visible) {
      ++detail.skipped_invisible;
      continue;
    }
    const Vec2 r = proj.pixel - pr.obs->position;
    detail.weighted_sum += pr.obs->confidence * r.squared_norm();
    detail.per_view_loss[static_cast<size_t>(pr.view)] +=
        pr.obs->confidence * r.squared_norm();
    ++per_view_pairs[static_cast<size_t>(pr.view)];
    ++detail.matched_pairs;
  }

  ARTI_REQUIRE(detail.matched_pairs > 0,
               "no visible matched keypoint pairs (unusable targets)");
  detail.keypoint_loss = detail.weighted_sum / detail.matched_pairs;
  for (size_t v = 0; v < detail.per_view_loss.size(); ++v)
    if (per_view_pairs[v] > 0) detail.per_view_loss[v] /= per_view_pairs[v];

  detail.loss = detail.keypoint_loss;
  if (problem.mask_lambda != 0.0) {
    detail.mask_term = mask_term_value(problem);
    detail.loss += problem.mask_lambda * detail.mask_term;
  }
  return detail;
}

double keypoint_loss(const AlignProblem& problem) {
  return keypoint_loss_detail(problem).keypoint_loss;
}

namespace {

// One rotation in the kinematic chain, prepared for differentiation.
// For a point p rigidly attached below the node,
//   dp/dphi_i = R_before * dR/dphi_i * y,  y = R_after^T (p - origin),
// where R_before is the world rotation ahead of the node and R_after the
// world rotation including it. param_scale carries the attenuation chain
// factor for the per-view root node.
struct RotationNode {
  std::array<Mat3, 3> premultiplied;  // R_before * dR/dphi_i
  Mat3 rotation_after_t;              // R_after^T
  Vec3 origin;
  double param_scale = 1.0;
};

struct ViewGradientContext {
  std::vector<RigidTransform> world;
  RotationNode view_node;
  std::vector<RotationNode> bone_nodes;  // one per bone
};

ViewGradientContext make_view_context(const AlignProblem& problem, int view) {
  ViewGradientContext ctx;
  ctx.world = view_world_transforms(problem, view);
  const Skeleton& skeleton = problem.skeleton;
  const Pose& pose = problem.shared_pose;
  const ViewRoot& vr = problem.per_view_root[static_cast<size_t>(view)];
  const double s = problem.root_attenuation;
  const Mat3 view_rot = axis_angle_to_matrix(vr.rotation * s);

  ctx.view_node.premultiplied = axis_angle_jacobian(vr.rotation * s);
  ctx.view_node.rotation_after_t = view_rot.transposed();
  ctx.view_node.origin = ctx.world[0].translation;
  ctx.view_node.param_scale = s;

  ctx.bone_nodes.resize(skeleton.size());
  for (size_t b = 0; b < skeleton.size(); ++b) {
    RotationNode& node = ctx.bone_nodes[b];
    const Mat3 before =
        b == 0 ? view_rot
               : ctx.world[static_cast<size_t>(*skeleton[b].parent)].rotation;
    const auto jac = axis_angle_jacobian(pose.rotations[b]);
    for (int i = 0; i < 3; ++i)
      node.premultiplied[static_cast<size_t>(i)] = before * jac[static_cast<size_t>(i)];
    node.rotation_after_t = ctx.world[b].rotation.transposed();
    node.origin = ctx.world[b].translation;
  }
  return ctx;
}

Vec3 pixel_gradient_to_world(const Camera& cam, const Vec3& point, const Vec2& r) {
  // Transpose-Jacobian of the pinhole map applied to the pixel residual.
  const RigidTransform ext = cam.extrinsic();
  const Vec3 pc = ext.apply(point);
  const double d = -pc.z;
  const double f = cam.focal;
  const Vec3 cam_grad{f / d * r.x, f / d * r.y,
                      f * (pc.x * r.x + pc.y * r.y) / (d * d)};
  return ext.rotation.transposed() * cam_grad;
}

}  // namespace

AlignGradient loss_gradient(const AlignProblem& problem) {
  validate_problem(problem);
  const auto pairs = ordered_pairs(problem);
  const Skeleton& skeleton = problem.skeleton;

  // Pass 1: count the visible matched pairs so that the 1/M factor is known
  // before accumulation.
  struct Contribution {
    int view;
    int binding;
    Vec2 residual;
    double confidence;
    Vec3 point;
  };
  std::vector<Contribution> contributions;
  std::vector<ViewGradientContext> contexts;
  contexts.reserve(static_cast<size_t>(problem.rig.n_views()));
  for (int v = 0; v < problem.rig.n_views(); ++v)
    contexts.push_back(make_view_context(problem, v));

  for (const auto& pr : pairs) {
    if (pr.binding < 0) continue;
    const auto supports = binding_supports(
        problem.bindings[static_cast<size_t>(pr.binding)], skeleton, problem.mesh);
    const Vec3 p =
        evaluate_supports(supports, contexts[static_cast<size_t>(pr.view)].world);
    const Projection proj =
        project(problem.rig.cameras[static_cast<size_t>(pr.view)], p);
    if (!pr.obs->visible || !proj.visible) continue;
    contributions.push_back(
        {pr.view, pr.binding, proj.pixel - pr.obs->position, pr.obs->confidence, p});
  }
  ARTI_REQUIRE(!contributions.empty(),
               "no visible matched keypoint pairs (unusable targets)");
  const double inv_m = 1.0 / static_cast<double>(contributions.size());

  AlignGradient grad;
  grad.rotations.assign(skeleton.size(), Vec3{});
  grad.per_view.assign(static_cast<size_t>(problem.rig.n_views()), ViewRoot{});

  for (const auto& c : contributions) {
    const ViewGradientContext& ctx = contexts[static_cast<size_t>(c.view)];
    const Camera& cam = problem.rig.cameras[static_cast<size_t>(c.view)];
    const double factor = 2.0 * c.confidence * inv_m;
    const Vec3 g_pix = pixel_gradient_to_world(cam, c.point, c.residual);

    const auto supports = binding_supports(
        problem.bindings[static_cast<size_t>(c.binding)], skeleton, problem.mesh);
    for (const auto& sup : supports) {
      const double w = factor * sup.weight;
      const Vec3 p_single =
          ctx.world[static_cast<size_t>(sup.bone)].apply(sup.local);

      // Translations move every support point by the identity.
      grad.root_translation += w * g_pix;
      grad.per_view[static_cast<size_t>(c.view)].translation += w * g_pix;

      // Walk the rotation chain: the bone itself, its ancestors, then the
      // attenuated per-view root node.
      int b = sup.bone;
      while (true) {
        const RotationNode& node = ctx.bone_nodes[static_cast<size_t>(b)];
        const Vec3 y = node.rotation_after_t * (p_single - node.origin);
        Vec3& slot = grad.rotations[static_cast<size_t>(b)];
        for (int i = 0; i < 3; ++i)
          slot[i] += w * g_pix.dot(node.premultiplied[static_cast<size_t>(i)] * y);
        if (!skeleton[static_cast<size_t>(b)].parent) break;
        b = *skeleton[static_cast<size_t>(b)].parent;
      }
      const RotationNode& vn = ctx.view_node;
      const Vec3 y = vn.rotation_after_t * (p_single - vn.origin);
      Vec3& slot = grad.per_view[static_cast<size_t>(c.view)].rotation;
      for (int i = 0; i < 3; ++i)
        slot[i] += w * vn.param_scale *
                   g_pix.dot(vn.premultiplied[static_cast<size_t>(i)] * y);
    }
  }

  for (size_t b = 0; b < grad.rotations.size(); ++b)
    for (int i = 0; i < 3; ++i)
      if (!std::isfinite(grad.rotations[b][i]))
        throw numeric_error("non-finite gradient at shared rotation, bone " +
                            std::to_string(b) + " component " + std::to_string(i));
  for (int i = 0; i < 3; ++i)
    if (!std::isfinite(grad.root_translation[i]))
      throw numeric_error("non-finite gradient at root translation component " +
                          std::to_string(i));
  for (size_t v = 0; v < grad.per_view.size(); ++v)
    for (int i = 0; i < 3; ++i) {
      if (!std::isfinite(grad.per_view[v].rotation[i]))
        throw numeric_error("non-finite gradient at per-view root rotation, view " +
                            std::to_string(v) + " component " + std::to_string(i));
      if (!std::isfinite(grad.per_view[v].translation[i]))
        throw numeric_error(
            "non-finite gradient at per-view root translation, view " +
            std::to_string(v) + " component " + std::to_string(i));
    }
  return grad;
}

namespace {

size_t param_count(const AlignProblem& problem) {
  return 3 * problem.skeleton.size() + 3 +
         6 * static_cast<size_t>(problem.rig.n_views());
}

void pack_params(const AlignProblem& problem, std::vector<double>& out) {
  out.clear();
  out.reserve(param_count(problem));
  for (const auto& r : problem.shared_pose.rotations)
    for (int i = 0; i < 3; ++i) out.push_back(r[i]);
  for (int i = 0; i < 3; ++i) out.push_back(problem.shared_pose.root_translation[i]);
  for (const auto& vr : problem.per_view_root) {
    for (int i = 0; i < 3; ++i) out.push_back(vr.rotation[i]);
    for (int i = 0; i < 3; ++i) out.push_back(vr.translation[i]);
  }
}

void unpack_params(const std::vector<double>& params, AlignProblem& problem) {
  size_t k = 0;
  for (auto& r : problem.shared_pose.rotations)
    for (int i = 0; i < 3; ++i) r[i] = params[k++];
  for (int i = 0; i < 3; ++i) problem.shared_pose.root_translation[i] = params[k++];
  for (auto& vr : problem.per_view_root) {
    for (int i = 0; i < 3; ++i) vr.rotation[i] = params[k++];
    for (int i = 0; i < 3; ++i) vr.translation[i] = params[k++];
  }
}

void pack_gradient(const AlignGradient& grad, std::vector<double>& out) {
  out.clear();
  for (const auto& r : grad.rotations)
    for (int i = 0; i < 3; ++i) out.push_back(r[i]);
  for (int i = 0; i < 3; ++i) out.push_back(grad.root_translation[i]);
  for (const auto& vr : grad.per_view) {
    for (int i = 0; i < 3; ++i) out.push_back(vr.rotation[i]);
    for (int i = 0; i < 3; ++i) out.push_back(vr.translation[i]);
  }
}

}  // namespace

OptimizeResult optimize_pose(const AlignProblem& problem,
                             const OptimizerConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  validate_problem(problem);
  ARTI_REQUIRE(config.max_iterations >= 0, "negative iteration budget");
  ARTI_REQUIRE(config.learning_rate > 0.0, "learning rate must be positive");

  AlignProblem work = problem;
  std::vector<double> params;
  pack_params(work, params);

  LossDetail detail = keypoint_loss_detail(work);
  OptimReport report;
  report.initial_loss = detail.loss;
  report.matched_pairs = detail.matched_pairs;
  report.skipped_unbound = detail.skipped_unbound;
  report.loss_trace.push_back(detail.loss);

  std::vector<double> best_params = params;
  double best_loss = detail.loss;
  LossDetail best_detail = detail;

  std::vector<double> m(params.size(), 0.0), v(params.size(), 0.0), g;
  const double divergence_threshold =
      1e3 * std::max(report.initial_loss, 1e-12);
  int diverging_streak = 0;

  for (int it = 1; it <= config.max_iterations; ++it) {
    const AlignGradient grad = loss_gradient(work);
    pack_gradient(grad, g);

    const double bc1 = 1.0 - std::pow(config.beta1, it);
    const double bc2 = 1.0 - std::pow(config.beta2, it);
    for (size_t i = 0; i < params.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      params[i] -= config.learning_rate * (m[i] / bc1) /
                   (std::sqrt(v[i] / bc2) + config.epsilon);
    }
    unpack_params(params, work);

    detail = keypoint_loss_detail(work);
    report.loss_trace.push_back(detail.loss);
    report.iterations = it;

    if (detail.loss < best_loss) {
      best_loss = detail.loss;
      best_params = params;
      best_detail = detail;
    }

    if (detail.loss > divergence_threshold) {
      if (++diverging_streak >= 50) {
        report.diverged = true;
        break;
      }
    } else {
      diverging_streak = 0;
    }

    const size_t n = report.loss_trace.size();
    if (n > 20 &&
        report.loss_trace[n - 21] - report.loss_trace[n - 1] <
            config.convergence_tol) {
      report.converged = true;
      break;
    }
  }

  unpack_params(best_params, work);
  report.final_loss = best_loss;
  report.per_view_loss = best_detail.per_view_loss;
  report.wall_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                t0)
          .count();

  OptimizeResult result;
  result.pose = work.shared_pose;
  result.per_view_root = work.per_view_root;
  result.report = std::move(report);
  return result;
}

}  // namespace artipose
