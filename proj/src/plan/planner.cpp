#include "softgrasp/planner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "softgrasp/error.hpp"

namespace softgrasp::plan {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const char* kind_name(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::smooth_max_stress: return "smooth_max_stress";
    case ObjectiveKind::mean_stress: return "mean_stress";
    default: return "mean_deformation";
  }
}

ObjectiveKind kind_from(const std::string& s) {
  if (s == "mean_deformation") return ObjectiveKind::mean_deformation;
  if (s == "smooth_max_stress") return ObjectiveKind::smooth_max_stress;
  if (s == "mean_stress") return ObjectiveKind::mean_stress;
  throw Error("parse_error", "unknown objective '" + s + "'");
}

bool needs_stress(const Objective& o) { return o.kind != ObjectiveKind::mean_deformation; }

graph::TargetFields to_fields(const fem::FieldOutput& f) {
  graph::TargetFields out(static_cast<Eigen::Index>(f.stress.size()), 4);
  for (size_t v = 0; v < f.stress.size(); ++v) {
    out(v, 0) = f.stress[v];
    out.row(v).segment<3>(1) = f.displacement[v].transpose();
  }
  return out;
}

graph::MultiGraph frozen_graph(const mesh::TetMesh& mesh, const GraspSetup& setup, const FrozenGrasp& f,
                               const grasp::Pose& T) {
  const auto posed = grasp::pose_gripper(setup.gripper, T, f.p_g);
  return graph::build_graph(mesh, posed, f.contacts, setup.grasp_force);
}

double predicted_q(const nn::ModelParams& p, const graph::MultiGraph& raw, const Objective& o,
                   graph::TargetFields* fields = nullptr) {
  graph::TargetFields out = train::expand_outputs(nn::predict(p, raw), p.config);
  const double q = reduce_fields(o, out);
  if (fields) *fields = std::move(out);
  return q;
}

}  // namespace

void Objective::validate() const {
  if (!(smooth_max_beta > 0.0)) throw Error("invalid_config", "smooth_max_beta must be positive");
}

json to_json(const Objective& o) {
  return {{"kind", kind_name(o.kind)}, {"smooth_max_beta", o.smooth_max_beta}, {"sign", o.maximize ? "maximize" : "minimize"}};
}

Objective objective_from_json(const json& j) {
  try {
    Objective o;
    o.kind = kind_from(j.value("kind", std::string("mean_deformation")));
    o.smooth_max_beta = j.value("smooth_max_beta", o.smooth_max_beta);
    const auto sign = j.value("sign", std::string("minimize"));
    if (sign != "minimize" && sign != "maximize") throw Error("parse_error", "objective sign must be minimize|maximize");
    o.maximize = sign == "maximize";
    o.validate();
    return o;
  } catch (const json::exception& e) {
    throw Error("parse_error", std::string("objective: ") + e.what());
  }
}

double default_smooth_max_beta(const train::Dataset& d) {
  std::vector<double> s;
  for (const auto& r : d.records)
    for (Eigen::Index v = 0; v < r.target.rows(); ++v) s.push_back(r.target(v, 0));
  if (s.empty()) throw Error("empty_dataset", "no stresses to calibrate beta");
  const size_t k = std::min(s.size() - 1, static_cast<size_t>(std::ceil(0.95 * static_cast<double>(s.size()))) - 1);
  std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(k), s.end());
  const double ref = s[k];
  if (!(ref > 0.0)) throw Error("invalid_argument", "95th percentile stress is not positive");
  return 10.0 / ref;
}

double reduce_fields(const Objective& o, const graph::TargetFields& f) {
  if (f.rows() == 0 || f.cols() != 4) throw Error("shape_mismatch", "fields must be non-empty with 4 channels");
  switch (o.kind) {
    case ObjectiveKind::mean_deformation: return f.rightCols(3).rowwise().norm().mean();
    case ObjectiveKind::mean_stress: return f.col(0).mean();
    case ObjectiveKind::smooth_max_stress: {
      const double m = f.col(0).maxCoeff();
      return m + std::log((o.smooth_max_beta * (f.col(0).array() - m)).exp().sum()) / o.smooth_max_beta;
    }
  }
  return kNaN;
}

nn::Var reduce_fields(nn::Tape& t, nn::Var real, const nn::ModelConfig& c, const Objective& o) {
  if (needs_stress(o) && !c.predicts_stress()) throw Error("invalid_objective", "model does not predict stress");
  if (!needs_stress(o) && !c.predicts_displacement())
    throw Error("invalid_objective", "model does not predict displacement");
  switch (o.kind) {
    case ObjectiveKind::mean_deformation: {
      const int first = c.output_dim == 3 ? 0 : 1;
      return t.mean(t.row_norm(t.slice_cols(real, first, 3)));
    }
    case ObjectiveKind::mean_stress: return t.mean(t.slice_cols(real, 0, 1));
    case ObjectiveKind::smooth_max_stress: return t.smooth_max(t.slice_cols(real, 0, 1), o.smooth_max_beta);
  }
  throw Error("invalid_objective", "unknown objective");
}

// ---------------------------------------------------------------------------

FrozenGrasp freeze(const mesh::TetMesh& mesh, const GraspSetup& setup, const grasp::Pose& T) {
  FrozenGrasp f;
  f.T = T;
  f.p_g = grasp::compute_joint_closure(mesh, setup.gripper, T);
  f.contacts = grasp::find_contacts(mesh, grasp::pose_gripper(setup.gripper, T, f.p_g), setup.epsilon);
  if (!f.contacts.both_fingers()) throw Error("no_contact", "only one finger touches the object");
  return f;
}

QEvaluation evaluate_q(const nn::ModelParams& p, const mesh::TetMesh& mesh, const GraspSetup& setup,
                       const grasp::Pose& T, const Objective& o) {
  const FrozenGrasp f = freeze(mesh, setup, T);
  QEvaluation out;
  out.pose = {T, f.p_g, setup.grasp_force};
  out.q = predicted_q(p, frozen_graph(mesh, setup, f, T), o, &out.fields);
  return out;
}

QEvaluation oracle_q(const mesh::TetMesh& mesh, const fem::Material& mat, const GraspSetup& setup,
                     const grasp::Pose& T, const Objective& o) {
  const FrozenGrasp f = freeze(mesh, setup, T);
  QEvaluation out;
  out.pose = {T, f.p_g, setup.grasp_force};
  const auto load = fem::make_contact_load(mesh, f.contacts, setup.grasp_force);
  out.fields = to_fields(fem::solve_equilibrium(mesh, mat, load));
  out.q = reduce_fields(o, out.fields);
  return out;
}

double frozen_q(const nn::ModelParams& p, const mesh::TetMesh& mesh, const GraspSetup& setup, const FrozenGrasp& f,
                const grasp::Vec6& delta, const Objective& o) {
  return predicted_q(p, frozen_graph(mesh, setup, f, f.T.perturbed(delta)), o);
}

PoseGradient pose_gradient(const nn::ModelParams& p, const mesh::TetMesh& mesh, const GraspSetup& setup,
                           const FrozenGrasp& f, const Objective& o) {
  const auto posed = grasp::pose_gripper(setup.gripper, f.T, f.p_g);
  const auto raw = nn::prepare_graph(p.config, graph::build_graph(mesh, posed, f.contacts, setup.grasp_force));
  graph::MultiGraph g = raw;
  graph::apply_norm(g, p.norm);

  nn::Tape t(true);
  const auto vars = nn::bind_params(t, p, false);
  const auto in = nn::bind_inputs(t, g, true);
  const auto out = nn::forward(t, p, vars, g, in);
  const nn::Var q = reduce_fields(t, out.real, p.config, o);
  t.backward(q);

  // Gradients w.r.t. raw features: undo the z-score per channel.
  auto raw_grad = [&](nn::Var v, const graph::ChannelStats& s) {
    Matrix G = t.has_grad(v) ? t.grad(v) : Matrix::Zero(t.value(v).rows(), t.value(v).cols());
    for (Eigen::Index c = 0; c < G.cols(); ++c) G.col(c) /= s.std(c);
    return G;
  };
  const Matrix gn = raw_grad(in.node, p.norm.node);
  const Matrix gm = raw_grad(in.mesh_edge, p.norm.mesh_edge);
  const Matrix gc = raw_grad(in.contact_edge, p.norm.contact_edge);

  const int n_obj = g.object_nodes;
  std::vector<Vec3> gx(static_cast<size_t>(g.gripper_nodes), Vec3::Zero());
  std::array<Vec3, 2> gdir{Vec3::Zero(), Vec3::Zero()};
  for (int k = 0; k < g.gripper_nodes; ++k) {
    const int row = n_obj + k;
    gx[k] += gn.row(row).segment<3>(graph::kNodePosCol).transpose();
    gdir[posed.finger[k]] += gn.row(row).segment<3>(graph::kNodeClosingCol).transpose();
  }
  // Edge displacement x_r - x_s and its length.
  auto edges = [&](const std::vector<int>& s, const std::vector<int>& r, const Matrix& feats, const Matrix& G) {
    for (size_t e = 0; e < s.size(); ++e) {
      if (s[e] < n_obj && r[e] < n_obj) continue;
      const Vec3 d = feats.row(e).segment<3>(graph::kEdgeDispCol).transpose();
      const double len = d.norm();
      Vec3 gd = G.row(e).segment<3>(graph::kEdgeDispCol).transpose();
      if (len > 0.0) gd += G(e, graph::kEdgeDistCol) * d / len;
      if (r[e] >= n_obj) gx[r[e] - n_obj] += gd;
      if (s[e] >= n_obj) gx[s[e] - n_obj] -= gd;
    }
  };
  edges(raw.mesh_senders, raw.mesh_receivers, raw.mesh_features, gm);
  edges(raw.contact_senders, raw.contact_receivers, raw.contact_features, gc);

  // x = R (exp(w) q + dt) + t  =>  dQ/ddt = R^T g,  dQ/dw = q x (R^T g).
  const Mat3 Rt = f.T.R().transpose();
  PoseGradient pg;
  pg.q = t.scalar(q);
  for (int k = 0; k < g.gripper_nodes; ++k) {
    const Vec3 local = Rt * gx[k];
    pg.grad.head<3>() += local;
    pg.grad.tail<3>() += posed.local_vertices[k].cross(local);
  }
  for (int fi = 0; fi < 2; ++fi) pg.grad.tail<3>() += posed.local_closing_dirs[fi].cross(Rt * gdir[fi]);
  return pg;
}

// ---------------------------------------------------------------------------

RankReport rank_sampled_grasps(const nn::ModelParams& p, const mesh::TetMesh& mesh, const GraspSetup& setup, int n,
                               const Objective& o, std::uint64_t seed, int group_size, int batch) {
  if (n < 1) throw Error("invalid_argument", "need at least one grasp to rank");
  const int rot = std::max(1, setup.rotations);
  auto grasps =
      grasp::sample_antipodal(mesh, setup.gripper, (n + rot - 1) / rot, rot, seed, setup.epsilon, setup.grasp_force);
  grasps.resize(static_cast<size_t>(n));
  RankReport r;
  r.grasps.resize(grasps.size());
  r.q_pred.resize(grasps.size());
  // Parameters are read-only; each worker builds its own tape.
  const size_t width = static_cast<size_t>(std::max(1, batch));
  for (size_t start = 0; start < grasps.size(); start += width) {
    const size_t stop = std::min(grasps.size(), start + width);
    std::vector<std::future<QEvaluation>> jobs;
    for (size_t i = start; i < stop; ++i)
      jobs.push_back(std::async(std::launch::async, [&, i] { return evaluate_q(p, mesh, setup, grasps[i].T, o); }));
    for (size_t i = start; i < stop; ++i) {
      auto e = jobs[i - start].get();
      r.grasps[i] = e.pose;
      r.q_pred[i] = e.q;
    }
  }
  const double s = o.sign();
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return s * r.q_pred[a] < s * r.q_pred[b]; });
  r.argmin = order.front();
  const int k = std::min(group_size, n / 3);
  r.low.assign(order.begin(), order.begin() + k);
  r.high.assign(order.rbegin(), order.rbegin() + k);
  std::vector<int> rest(order.begin() + k, order.end() - k);
  std::sort(rest.begin(), rest.end());
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (int i = 0; i < k && i < static_cast<int>(rest.size()); ++i) {
    const size_t j = i + static_cast<size_t>(rng() % (rest.size() - i));
    std::swap(rest[i], rest[j]);
    r.random.push_back(rest[i]);
  }
  return r;
}

void attach_oracle(RankReport& r, const mesh::TetMesh& mesh, const fem::Material& mat, const GraspSetup& setup,
                   const Objective& o) {
  r.q_true.clear();
  for (const auto& g : r.grasps) r.q_true.push_back(oracle_q(mesh, mat, setup, g.T, o).q);
}

double threshold_overlap(const RankReport& r, int k) {
  if (r.q_true.size() != r.q_pred.size()) throw Error("shape_mismatch", "ranking has no ground truth attached");
  const int n = static_cast<int>(r.q_true.size());
  k = std::min(k, n);
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return r.q_true[a] < r.q_true[b]; });
  std::vector<int> true_low(order.begin(), order.begin() + k), true_high(order.end() - k, order.end());
  int hits = 0;
  for (int i : r.low) hits += std::count(true_low.begin(), true_low.end(), i) > 0;
  for (int i : r.high) hits += std::count(true_high.begin(), true_high.end(), i) > 0;
  const auto total = r.low.size() + r.high.size();
  return total ? static_cast<double>(hits) / static_cast<double>(total) : kNaN;
}

std::string rank_to_csv(const RankReport& r) {
  std::string out = "index,group,q_pred,q_true,qw,qx,qy,qz,tx,ty,tz,p_g0,p_g1\n";
  char buf[512];
  for (size_t i = 0; i < r.grasps.size(); ++i) {
    const int id = static_cast<int>(i);
    const char* group = std::count(r.low.begin(), r.low.end(), id)       ? "threshold_low"
                        : std::count(r.high.begin(), r.high.end(), id)   ? "threshold_high"
                        : std::count(r.random.begin(), r.random.end(), id) ? "random"
                                                                           : "";
    const auto& g = r.grasps[i];
    const auto& q = g.T.rotation;
    const auto& t = g.T.translation;
    std::snprintf(buf, sizeof buf, "%zu,%s,%.9e,%.9e,%.12f,%.12f,%.12f,%.12f,%.9e,%.9e,%.9e,%.9e,%.9e\n", i, group,
                  r.q_pred[i], i < r.q_true.size() ? r.q_true[i] : kNaN, q.w(), q.x(), q.y(), q.z(), t.x(), t.y(),
                  t.z(), g.p_g[0], g.p_g[1]);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------

void RefinementConfig::validate() const {
  if (steps < 1) throw Error("invalid_config", "refinement steps must be >= 1");
  if (!(gamma > 0.0 && gamma < 1.0)) throw Error("invalid_config", "annealing decay must lie in (0, 1)");
  if (!(shrink > 0.0 && shrink < 1.0)) throw Error("invalid_config", "line-search shrink must lie in (0, 1)");
  if (!(armijo > 0.0 && armijo < 1.0)) throw Error("invalid_config", "Armijo constant must lie in (0, 1)");
  if (!(max_vertex_motion > 0.0)) throw Error("invalid_config", "max_vertex_motion must be positive");
  if (tau0_fraction < 0.0) throw Error("invalid_config", "tau0_fraction must be >= 0");
  if (max_backtracks < 0 || max_rejections < 1) throw Error("invalid_config", "invalid backtrack/rejection limits");
}

json to_json(const RefinementConfig& c) {
  return {{"steps", c.steps},
          {"shrink", c.shrink},
          {"armijo", c.armijo},
          {"max_vertex_motion", c.max_vertex_motion},
          {"max_backtracks", c.max_backtracks},
          {"tau0_fraction", c.tau0_fraction},
          {"gamma", c.gamma},
          {"max_rejections", c.max_rejections},
          {"seed", c.seed}};
}

RefinementConfig refinement_config_from_json(const json& j) {
  try {
    RefinementConfig c;
    c.steps = j.value("steps", c.steps);
    c.shrink = j.value("shrink", c.shrink);
    c.armijo = j.value("armijo", c.armijo);
    c.max_vertex_motion = j.value("max_vertex_motion", c.max_vertex_motion);
    c.max_backtracks = j.value("max_backtracks", c.max_backtracks);
    c.tau0_fraction = j.value("tau0_fraction", c.tau0_fraction);
    c.gamma = j.value("gamma", c.gamma);
    c.max_rejections = j.value("max_rejections", c.max_rejections);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw Error("parse_error", std::string("refinement config: ") + e.what());
  }
}

RefinementResult refine_grasp(const nn::ModelParams& p, const mesh::TetMesh& mesh, const GraspSetup& setup,
                              const grasp::Pose& T_init, const Objective& o, const RefinementConfig& cfg) {
  cfg.validate();
  o.validate();
  const double s = o.sign();
  FrozenGrasp cur = freeze(mesh, setup, T_init);
  double q_cur = frozen_q(p, mesh, setup, cur, grasp::Vec6::Zero(), o);

  RefinementResult res;
  res.initial = res.best = {T_init, cur.p_g, setup.grasp_force};
  res.initial_q = res.best_q = q_cur;
  res.q_trace.push_back(q_cur);

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  double temperature = cfg.tau0_fraction * std::abs(q_cur);
  double step_scale = 1.0;
  int consecutive_rejections = 0;

  for (int step = 0; step < cfg.steps; ++step, temperature *= cfg.gamma) {
    const PoseGradient pg = pose_gradient(p, mesh, setup, cur, o);
    const grasp::Vec6 g = s * pg.grad;
    if (!(g.squaredNorm() > 0.0)) break;
    const grasp::Vec6 dir = -g;

    // First probe moves no gripper vertex by more than the cap (linearised).
    double motion = 0.0;
    for (const auto& q : grasp::pose_gripper(setup.gripper, cur.T, cur.p_g).local_vertices)
      motion = std::max(motion, (dir.head<3>() + dir.tail<3>().cross(q)).norm());
    double alpha = step_scale * cfg.max_vertex_motion / motion;

    // Backtracking on the frozen topology.
    const double f0 = s * q_cur;
    const double slope = g.dot(dir);
    for (int b = 0; b <= cfg.max_backtracks; ++b) {
      const double f = s * frozen_q(p, mesh, setup, cur, alpha * dir, o);
      if (f <= f0 + cfg.armijo * alpha * slope || b == cfg.max_backtracks) break;
      alpha *= cfg.shrink;
    }

    // Re-form closure and contacts at the candidate pose.
    const grasp::Pose candidate = cur.T.perturbed(alpha * dir);
    FrozenGrasp next;
    double q_next = 0.0;
    try {
      next = freeze(mesh, setup, candidate);
      q_next = frozen_q(p, mesh, setup, next, grasp::Vec6::Zero(), o);
    } catch (const Error& e) {
      if (e.kind() != "no_contact" && e.kind() != "grasp_miss" && e.kind() != "object_too_large") throw;
      ++res.rejected;
      step_scale *= 0.5;
      if (++consecutive_rejections >= cfg.max_rejections) {
        res.stopped_early = true;
        break;
      }
      continue;
    }

    const double delta = s * (q_next - q_cur);
    const bool accept = delta <= 0.0 || (temperature > 0.0 && uni(rng) < std::exp(-delta / temperature));
    if (!accept) {
      ++res.rejected;
      step_scale *= 0.5;
      continue;
    }
    ++res.accepted;
    consecutive_rejections = 0;
    step_scale = 1.0;
    cur = std::move(next);
    q_cur = q_next;
    res.q_trace.push_back(q_cur);
    if (s * q_cur < s * res.best_q) {
      res.best = {cur.T, cur.p_g, setup.grasp_force};
      res.best_q = q_cur;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------

namespace {

// Number of tied pairs among runs of equal values in a sorted sequence.
template <class Eq>
long long tied_pairs(const std::vector<int>& order, Eq eq) {
  long long total = 0, run = 1;
  for (size_t i = 1; i <= order.size(); ++i) {
    if (i < order.size() && eq(order[i - 1], order[i])) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total;
}

// Merge sort of `v` counting exchanges (discordant pairs).
long long merge_count(std::vector<double>& v, std::vector<double>& buf, size_t lo, size_t hi) {
  if (hi - lo < 2) return 0;
  const size_t mid = lo + (hi - lo) / 2;
  long long swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
  size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<long long>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

}  // namespace

double kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw Error("shape_mismatch", "kendall_tau needs two lists of equal length >= 2");
  for (size_t i = 0; i < a.size(); ++i)
    if (std::isnan(a[i]) || std::isnan(b[i])) throw Error("invalid_argument", "kendall_tau input contains NaN");
  const size_t n = a.size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int i, int j) { return a[i] < a[j] || (a[i] == a[j] && b[i] < b[j]); });

  const long long n0 = static_cast<long long>(n) * static_cast<long long>(n - 1) / 2;
  const long long n1 = tied_pairs(order, [&](int i, int j) { return a[i] == a[j]; });
  const long long n3 = tied_pairs(order, [&](int i, int j) { return a[i] == a[j] && b[i] == b[j]; });

  std::vector<double> bs(n), buf(n);
  for (size_t i = 0; i < n; ++i) bs[i] = b[order[i]];
  const long long swaps = merge_count(bs, buf, 0, n);
  std::vector<int> sorted_b(n);
  std::iota(sorted_b.begin(), sorted_b.end(), 0);  // bs is now sorted
  const long long n2 = tied_pairs(sorted_b, [&](int i, int j) { return bs[i] == bs[j]; });

  if (n0 == n1 || n0 == n2) throw Error("undefined_tau", "kendall_tau is undefined when a list is constant");
  const double num = static_cast<double>(n0 - n1 - n2 + n3 - 2 * swaps);
  return num / std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
}

Mae mae(const std::vector<graph::TargetFields>& pred, const std::vector<graph::TargetFields>& truth) {
  if (pred.size() != truth.size() || pred.empty()) throw Error("shape_mismatch", "mae needs matching non-empty lists");
  double s = 0.0, d = 0.0;
  long count = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].rows() != truth[i].rows() || pred[i].cols() != 4 || truth[i].cols() != 4)
      throw Error("shape_mismatch", "field shapes differ for sample " + std::to_string(i));
    s += (pred[i].col(0) - truth[i].col(0)).cwiseAbs().sum();
    d += (pred[i].rightCols(3) - truth[i].rightCols(3)).rowwise().norm().sum();
    count += pred[i].rows();
  }
  return {s / static_cast<double>(count) * 1e-3, d / static_cast<double>(count) * 1e3};
}

EvalReport evaluate(const nn::ModelParams& p, const train::Dataset& d, const std::vector<int>& indices) {
  if (indices.empty()) throw Error("empty_dataset", "nothing to evaluate");
  const auto preds = train::predict_records(p, d, indices);
  EvalReport rep;
  std::vector<graph::TargetFields> truths;
  std::map<int, std::vector<size_t>> by_level;
  for (size_t i = 0; i < indices.size(); ++i) {
    const auto& r = d.records.at(static_cast<size_t>(indices[i]));
    const auto& y = r.target;
    const auto& yp = preds[i];
    EvalRow row{indices[i], r.object_id, r.grasp_index, r.substep, r.F_g,
                y.col(0).mean(), yp.col(0).mean(), y.rightCols(3).rowwise().norm().mean(),
                yp.rightCols(3).rowwise().norm().mean()};
    rep.rows.push_back(row);
    truths.push_back(y);
    by_level[r.substep].push_back(i);
  }
  rep.error = mae(preds, truths);

  auto tau_of = [&](const std::vector<size_t>& ids, bool stress) {
    std::vector<double> a, b;
    for (size_t i : ids) {
      a.push_back(stress ? rep.rows[i].stress_pred : rep.rows[i].def_pred);
      b.push_back(stress ? rep.rows[i].stress_true : rep.rows[i].def_true);
    }
    if (std::isnan(a.front())) return kNaN;
    try {
      return kendall_tau(a, b);
    } catch (const Error&) {
      return kNaN;
    }
  };
  double ss = 0.0, sd = 0.0;
  int ns = 0, nd = 0;
  for (const auto& [_, ids] : by_level) {
    if (ids.size() < 2) continue;
    const double ts = tau_of(ids, true), td = tau_of(ids, false);
    if (!std::isnan(ts)) ss += ts, ++ns;
    if (!std::isnan(td)) sd += td, ++nd;
  }
  rep.levels = static_cast<int>(by_level.size());
  rep.tau_s = ns ? ss / ns : kNaN;
  rep.tau_d = nd ? sd / nd : kNaN;
  std::vector<size_t> all(indices.size());
  std::iota(all.begin(), all.end(), 0);
  rep.tau_s_pooled = all.size() >= 2 ? tau_of(all, true) : kNaN;
  rep.tau_d_pooled = all.size() >= 2 ? tau_of(all, false) : kNaN;
  return rep;
}

std::string eval_rows_to_csv(const EvalReport& r) {
  std::string out = "record,object_id,grasp_index,substep,F_g,stress_true,stress_pred,def_true,def_pred\n";
  char buf[512];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%d,%s,%d,%d,%.6f,%.9e,%.9e,%.9e,%.9e\n", row.record, row.object_id.c_str(),
                  row.grasp_index, row.substep, row.F_g, row.stress_true, row.stress_pred, row.def_true, row.def_pred);
    out += buf;
  }
  return out;
}

}  // namespace softgrasp::plan
