#pragma once

// Seeded random-walker segmentation on a 4-connected intensity lattice. Each unseeded pixel's
// foreground probability solves the combinatorial Dirichlet problem L_U x_U = -B^T x_S.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "plrefine/errors.hpp"
#include "plrefine/grid.hpp"
#include "plrefine/maps.hpp"
#include "plrefine/morphology.hpp"
#include "plrefine/prompts.hpp"
#include "plrefine/refine.hpp"

namespace plrefine {

inline constexpr double kMinEdgeWeight = 1e-10;

/// Edge weights w = exp(-beta * (g_a - g_b)^2) over 4-neighbour edges, with intensities g rescaled
/// to [0,1] by the image's own min/max, floored at kMinEdgeWeight.
struct LatticeGraph {
  int width = 0;
  int height = 0;
  double beta = 0;
  std::vector<double> horizontal;  // edge (x,y)-(x+1,y) at y*(width-1)+x
  std::vector<double> vertical;    // edge (x,y)-(x,y+1) at y*width+x

  double right(int x, int y) const { return horizontal[static_cast<std::size_t>(y) * (width - 1) + x]; }
  double down(int x, int y) const { return vertical[static_cast<std::size_t>(y) * width + x]; }

  /// Calls fn(neighbour_index, weight) for each 4-neighbour of pixel (x, y).
  template <typename Fn>
  void for_each_neighbour(int x, int y, Fn&& fn) const {
    const std::size_t i = static_cast<std::size_t>(y) * width + x;
    if (x > 0) fn(i - 1, right(x - 1, y));
    if (x + 1 < width) fn(i + 1, right(x, y));
    if (y > 0) fn(i - width, down(x, y - 1));
    if (y + 1 < height) fn(i + width, down(x, y));
  }

  double degree(int x, int y) const {
    double d = 0;
    for_each_neighbour(x, y, [&](std::size_t, double w) { d += w; });
    return d;
  }
};

inline LatticeGraph build_lattice(const Image& image, double beta) {
  if (!(beta > 0) || !std::isfinite(beta)) throw ConfigError("random walker beta must be positive");
  LatticeGraph g;
  g.width = image.width();
  g.height = image.height();
  g.beta = beta;
  const auto [lo_it, hi_it] = std::minmax_element(image.begin(), image.end());
  const double lo = *lo_it;
  const double range = static_cast<double>(*hi_it) - lo;
  auto norm = [&](int x, int y) { return range > 0 ? (image(x, y) - lo) / range : 0.0; };
  auto weight = [&](double a, double b) { return std::max(std::exp(-beta * (a - b) * (a - b)), kMinEdgeWeight); };
  g.horizontal.resize(static_cast<std::size_t>(g.width - 1) * g.height);
  g.vertical.resize(static_cast<std::size_t>(g.width) * (g.height - 1));
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x + 1 < g.width; ++x) g.horizontal[static_cast<std::size_t>(y) * (g.width - 1) + x] = weight(norm(x, y), norm(x + 1, y));
  for (int y = 0; y + 1 < g.height; ++y)
    for (int x = 0; x < g.width; ++x) g.vertical[static_cast<std::size_t>(y) * g.width + x] = weight(norm(x, y), norm(x, y + 1));
  return g;
}

struct SeedAssignment {
  std::vector<std::size_t> foreground;  // row-major pixel indices
  std::vector<std::size_t> background;
};

struct WalkerSolution {
  Grid<double> probabilities;   // foreground probability per pixel
  int iterations = 0;
  double residual = 0;          // max over unseeded pixels of |(L x + B x_S)_i| / degree_i
  bool converged = false;
  double max_violation = 0;     // largest excursion outside [0,1] before clamping
};

enum class WalkerSolver {
  automatic,           // elimination when its band fits kEliminationBudget, else conjugate gradients
  elimination,
  conjugate_gradient,
};

/// Largest band (unknowns x bandwidth) the automatic choice will factor, in doubles.
inline constexpr std::size_t kEliminationBudget = std::size_t{1} << 23;

namespace detail {

/// The reduced system L_U x = b over the unseeded pixels. `excess` is each unknown's total edge
/// weight to seeds, so that diag = excess + sum of weights to other unknowns.
struct ReducedSystem {
  std::vector<std::size_t> unknowns;  // pixel index per unknown, raster order
  std::vector<int> role;              // per pixel: unknown number, or a negative seed tag
  std::vector<double> diag, excess, rhs;
};

inline constexpr int kForegroundSeed = -2, kBackgroundSeed = -3;

inline void residual(const LatticeGraph& g, const ReducedSystem& sys, const std::vector<double>& x,
                     std::vector<double>& r) {
  for (std::size_t k = 0; k < sys.unknowns.size(); ++k) {
    const int px = static_cast<int>(sys.unknowns[k] % g.width);
    const int py = static_cast<int>(sys.unknowns[k] / g.width);
    double acc = sys.rhs[k] - sys.diag[k] * x[k];
    g.for_each_neighbour(px, py, [&](std::size_t j, double w) {
      if (sys.role[j] >= 0) acc += w * x[static_cast<std::size_t>(sys.role[j])];
    });
    r[k] = acc;
  }
}

inline double scaled_max(const ReducedSystem& sys, const std::vector<double>& r) {
  double worst = 0;
  for (std::size_t k = 0; k < r.size(); ++k) worst = std::max(worst, std::abs(r[k]) / sys.diag[k]);
  return worst;
}

/// Banded Gaussian elimination of the symmetric M-matrix in the form of Grassmann, Taksar and
/// Heyman: off-diagonals are kept as magnitudes and every pivot is recomputed as its row's seed
/// excess plus remaining off-diagonals, so each step only adds non-negative numbers and the result
/// carries componentwise relative accuracy however small the edge weights get.
inline std::vector<double> eliminate(const LatticeGraph& g, const ReducedSystem& sys, bool column_major) {
  const std::size_t m = sys.unknowns.size();
  // position of each unknown in the elimination order
  std::vector<std::size_t> order(m), pos(m);
  for (std::size_t k = 0; k < m; ++k) order[k] = k;
  if (column_major) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return sys.unknowns[a] % g.width < sys.unknowns[b] % g.width;
    });
  }
  for (std::size_t k = 0; k < m; ++k) pos[order[k]] = k;
  std::size_t band = 1;
  for (std::size_t k = 0; k < m; ++k) {
    const int px = static_cast<int>(sys.unknowns[k] % g.width), py = static_cast<int>(sys.unknowns[k] / g.width);
    g.for_each_neighbour(px, py, [&](std::size_t j, double) {
      if (sys.role[j] >= 0) {
        const std::size_t o = pos[static_cast<std::size_t>(sys.role[j])];
        if (o > pos[k]) band = std::max(band, o - pos[k]);
      }
    });
  }
  const std::size_t stride = band + 1;
  std::vector<double> c(m * stride, 0.0);  // c[p*stride + d] = |A(p, p+d)|, d >= 1
  std::vector<double> excess(m), y(m);
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t p = pos[k];
    excess[p] = sys.excess[k];
    y[p] = sys.rhs[k];
    const int px = static_cast<int>(sys.unknowns[k] % g.width), py = static_cast<int>(sys.unknowns[k] / g.width);
    g.for_each_neighbour(px, py, [&](std::size_t j, double w) {
      if (sys.role[j] < 0) return;
      const std::size_t o = pos[static_cast<std::size_t>(sys.role[j])];
      if (o > p) c[p * stride + (o - p)] = w;
    });
  }
  std::vector<double> pivot(m);
  for (std::size_t p = 0; p < m; ++p) {
    double* row = &c[p * stride];
    const std::size_t reach = std::min(band, m - 1 - p);
    double a = excess[p];
    for (std::size_t d = 1; d <= reach; ++d) a += row[d];
    pivot[p] = a;
    for (std::size_t i = 1; i <= reach; ++i) {
      const double ci = row[i];
      if (ci == 0) continue;
      const double f = ci / a;
      double* target = &c[(p + i) * stride];
      for (std::size_t j = i + 1; j <= reach; ++j) target[j - i] += f * row[j];
      excess[p + i] += f * excess[p];
      y[p + i] += f * y[p];
    }
  }
  std::vector<double> z(m);
  for (std::size_t p = m; p-- > 0;) {
    const double* row = &c[p * stride];
    const std::size_t reach = std::min(band, m - 1 - p);
    double acc = y[p];
    for (std::size_t d = 1; d <= reach; ++d) acc += row[d] * z[p + d];
    z[p] = acc / pivot[p];
  }
  std::vector<double> x(m);
  for (std::size_t k = 0; k < m; ++k) x[k] = z[pos[k]];
  return x;
}

inline std::size_t elimination_size(const LatticeGraph& g, std::size_t m) {
  return m * (static_cast<std::size_t>(std::min(g.width, g.height)) + 1);
}

/// Conjugate gradients preconditioned by IC(0) on the 5-point pattern. Returns the iterate with
/// the smallest scaled residual.
inline std::vector<double> conjugate_gradient(const LatticeGraph& g, const ReducedSystem& sys, double tol, int max_iter,
                                              int& iterations, bool& converged) {
  const std::size_t m = sys.unknowns.size();
  const auto& role = sys.role;
  std::vector<std::ptrdiff_t> left(m, -1), up(m, -1), right(m, -1), down(m, -1);
  std::vector<double> l_diag(m), l_left(m, 0.0), l_up(m, 0.0);
  // Unknowns are numbered in raster order, so the lower-triangular neighbours are the left and
  // upper ones. The reduced Laplacian is an M-matrix, which keeps every pivot positive.
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t i = sys.unknowns[k];
    const int px = static_cast<int>(i % g.width), py = static_cast<int>(i / g.width);
    if (px > 0 && role[i - 1] >= 0) left[k] = role[i - 1];
    if (py > 0 && role[i - g.width] >= 0) up[k] = role[i - g.width];
    if (px + 1 < g.width && role[i + 1] >= 0) right[k] = role[i + 1];
    if (py + 1 < g.height && role[i + g.width] >= 0) down[k] = role[i + g.width];
    double a = sys.diag[k];
    if (left[k] >= 0) {
      l_left[k] = -g.right(px - 1, py) / l_diag[static_cast<std::size_t>(left[k])];
      a -= l_left[k] * l_left[k];
    }
    if (up[k] >= 0) {
      l_up[k] = -g.down(px, py - 1) / l_diag[static_cast<std::size_t>(up[k])];
      a -= l_up[k] * l_up[k];
    }
    l_diag[k] = std::sqrt(std::max(a, sys.diag[k] * 1e-12));
  }
  auto precondition = [&](const std::vector<double>& r, std::vector<double>& z) {
    for (std::size_t k = 0; k < m; ++k) {
      double acc = r[k];
      if (left[k] >= 0) acc -= l_left[k] * z[static_cast<std::size_t>(left[k])];
      if (up[k] >= 0) acc -= l_up[k] * z[static_cast<std::size_t>(up[k])];
      z[k] = acc / l_diag[k];
    }
    for (std::size_t k = m; k-- > 0;) {
      double acc = z[k];
      if (right[k] >= 0) acc -= l_left[static_cast<std::size_t>(right[k])] * z[static_cast<std::size_t>(right[k])];
      if (down[k] >= 0) acc -= l_up[static_cast<std::size_t>(down[k])] * z[static_cast<std::size_t>(down[k])];
      z[k] = acc / l_diag[k];
    }
  };
  auto apply = [&](const std::vector<double>& v, std::vector<double>& out) {
    for (std::size_t k = 0; k < m; ++k) {
      const int px = static_cast<int>(sys.unknowns[k] % g.width), py = static_cast<int>(sys.unknowns[k] / g.width);
      double acc = sys.diag[k] * v[k];
      g.for_each_neighbour(px, py, [&](std::size_t j, double w) {
        if (role[j] >= 0) acc -= w * v[static_cast<std::size_t>(role[j])];
      });
      out[k] = acc;
    }
  };

  std::vector<double> x(m, 0.0), best_x(m, 0.0), r(m), z(m), p(m), ap(m);
  residual(g, sys, x, r);
  double best_res = scaled_max(sys, r);
  converged = best_res <= tol;
  iterations = 0;
  while (!converged && iterations < max_iter) {
    precondition(r, z);
    p = z;
    double rz = 0;
    for (std::size_t k = 0; k < m; ++k) rz += r[k] * z[k];
    bool restart = false;
    while (iterations < max_iter) {
      apply(p, ap);
      double pap = 0;
      for (std::size_t k = 0; k < m; ++k) pap += p[k] * ap[k];
      if (!(pap > 0)) break;
      const double alpha = rz / pap;
      for (std::size_t k = 0; k < m; ++k) {
        x[k] += alpha * p[k];
        r[k] -= alpha * ap[k];
      }
      ++iterations;
      const double res = scaled_max(sys, r);
      if (res < best_res) {
        best_res = res;
        best_x = x;
      }
      if (res <= tol) {
        // confirm against the true residual; recurrence drift triggers a restart
        residual(g, sys, x, r);
        if (scaled_max(sys, r) <= tol) {
          converged = true;
          best_x = x;
        } else {
          restart = true;
        }
        break;
      }
      precondition(r, z);
      double rz_next = 0;
      for (std::size_t k = 0; k < m; ++k) rz_next += r[k] * z[k];
      const double beta = rz_next / rz;
      rz = rz_next;
      for (std::size_t k = 0; k < m; ++k) p[k] = z[k] + beta * p[k];
    }
    if (!restart) break;
  }
  return best_x;
}

}  // namespace detail

/// Solves for the foreground probabilities on the unseeded pixels. Elimination is exact up to
/// rounding; conjugate gradients stop once the degree-scaled residual (the deviation of each
/// unseeded pixel from the weighted mean of its neighbours) is <= tol everywhere, or after max_iter
/// iterations with their best iterate and converged == false.
inline WalkerSolution solve_walker(const LatticeGraph& graph, const SeedAssignment& seeds, double tol = 1e-6,
                                   int max_iter = 2000, WalkerSolver solver = WalkerSolver::automatic) {
  if (!(tol > 0)) throw ConfigError("solver tolerance must be positive");
  if (max_iter < 1) throw ConfigError("max_iter must be >= 1");
  const std::size_t n = static_cast<std::size_t>(graph.width) * graph.height;
  if (seeds.foreground.empty() || seeds.background.empty())
    throw ConfigError("random walker needs both foreground and background seeds");

  detail::ReducedSystem sys;
  sys.role.assign(n, -1);
  for (auto i : seeds.foreground) {
    if (i >= n) throw ConfigError("foreground seed index out of range");
    sys.role[i] = detail::kForegroundSeed;
  }
  for (auto i : seeds.background) {
    if (i >= n) throw ConfigError("background seed index out of range");
    if (sys.role[i] == detail::kForegroundSeed) throw ConfigError("seed sets overlap at pixel " + std::to_string(i));
    sys.role[i] = detail::kBackgroundSeed;
  }
  for (std::size_t i = 0; i < n; ++i)
    if (sys.role[i] == -1) {
      sys.role[i] = static_cast<int>(sys.unknowns.size());
      sys.unknowns.push_back(i);
    }
  const std::size_t m = sys.unknowns.size();
  sys.diag.assign(m, 0.0);
  sys.excess.assign(m, 0.0);
  sys.rhs.assign(m, 0.0);
  for (std::size_t k = 0; k < m; ++k) {
    const int x = static_cast<int>(sys.unknowns[k] % graph.width);
    const int y = static_cast<int>(sys.unknowns[k] / graph.width);
    graph.for_each_neighbour(x, y, [&](std::size_t j, double w) {
      sys.diag[k] += w;
      if (sys.role[j] < 0) sys.excess[k] += w;
      if (sys.role[j] == detail::kForegroundSeed) sys.rhs[k] += w;
    });
  }

  WalkerSolution sol{Grid<double>(graph.width, graph.height, 0.0), 0, 0, true, 0};
  std::vector<double> x;
  if (m > 0) {
    if (solver == WalkerSolver::automatic)
      solver = detail::elimination_size(graph, m) <= kEliminationBudget ? WalkerSolver::elimination
                                                                         : WalkerSolver::conjugate_gradient;
    if (solver == WalkerSolver::elimination) {
      x = detail::eliminate(graph, sys, graph.width > graph.height);
    } else {
      x = detail::conjugate_gradient(graph, sys, tol, max_iter, sol.iterations, sol.converged);
    }
    std::vector<double> r(m);
    detail::residual(graph, sys, x, r);
    sol.residual = detail::scaled_max(sys, r);
    if (solver == WalkerSolver::elimination) sol.converged = sol.residual <= tol;
  }

  for (std::size_t i = 0; i < n; ++i) {
    const int role = sys.role[i];
    if (role == detail::kForegroundSeed) {
      sol.probabilities[i] = 1.0;
    } else if (role == detail::kBackgroundSeed) {
      sol.probabilities[i] = 0.0;
    } else {
      const double v = x[static_cast<std::size_t>(role)];
      sol.max_violation = std::max({sol.max_violation, -v, v - 1.0});
      sol.probabilities[i] = std::clamp(v, 0.0, 1.0);
    }
  }
  return sol;
}

/// How refinement prompts become walker seeds.
struct SeedPolicy {
  int point_brush_radius = 3;         // positive points are painted as disks of this radius
  bool mask_foreground = false;       // also seed the cleaned component (in-process context)
  int foreground_erosion_radius = 2;  // square erosion applied to that component first; 0 keeps it
  int box_margin = 1;                 // pixels beyond the box expanded by this are background
  bool border_is_background = true;
};

struct RandomWalkParams {
  double beta = 500.0;
  double threshold = 0.5;
  SeedPolicy seeds;
  double tol = 1e-6;
  int max_iter = 2000;

  void validate() const {
    if (!(beta > 0)) throw ConfigError("random walker beta must be positive");
    if (!(threshold > 0 && threshold < 1)) throw ConfigError("random walker threshold must lie in (0,1)");
    if (seeds.point_brush_radius < 0) throw ConfigError("point brush radius must be >= 0");
    if (seeds.foreground_erosion_radius < 0) throw ConfigError("seed erosion radius must be >= 0");
    if (seeds.box_margin < 0) throw ConfigError("box margin must be >= 0");
    if (!(tol > 0) || max_iter < 1) throw ConfigError("invalid random walker solver settings");
  }
};

/// Refiner backed by the random walker. Foreground seeds: disks around the positive points (kept
/// inside the cleaned component when one is supplied), plus the eroded
/// cleaned component when the policy asks for it. Background seeds: the negative points, every
/// pixel outside the (margin-expanded) box, and the image border ring. Cannot self-refine. A solve
/// that misses its tolerance still yields its best iterate.
class RandomWalkRefiner final : public Refiner {
 public:
  explicit RandomWalkRefiner(RandomWalkParams params = {}) : params_(params) { params_.validate(); }

  RefinerCapabilities capabilities() const override { return {true, true, false}; }

  RefineResponse refine(const RefineRequest& request) override {
    const auto& image = request.image;
    const int w = image.width(), h = image.height();
    const auto& policy = params_.seeds;
    BinaryPlane fg(w, h);
    for (auto p : request.prompt.points(Polarity::positive)) fg(p.x, p.y) = 1;
    if (policy.point_brush_radius > 0) fg = dilate(fg, {ElementShape::disk, policy.point_brush_radius});
    if (request.cleaned && !is_empty(*request.cleaned))
      for (std::size_t i = 0; i < fg.size(); ++i) fg[i] &= (*request.cleaned)[i];
    if (policy.mask_foreground && request.cleaned && !is_empty(*request.cleaned)) {
      const BinaryPlane core = policy.foreground_erosion_radius > 0
                                   ? erode(*request.cleaned, {ElementShape::square, policy.foreground_erosion_radius})
                                   : *request.cleaned;
      for (std::size_t i = 0; i < fg.size(); ++i) fg[i] |= core[i];
    }
    if (is_empty(fg)) return {BinaryPlane(w, h), std::nullopt};

    BinaryPlane bg(w, h);
    for (auto p : request.prompt.points(Polarity::negative)) bg(p.x, p.y) = 1;
    if (request.prompt.box) {
      const BoundingBox region = request.prompt.box->expanded(policy.box_margin, w, h);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (!region.contains({x, y})) bg(x, y) = 1;
    }
    if (policy.border_is_background) {
      for (int x = 0; x < w; ++x) bg(x, 0) = bg(x, h - 1) = 1;
      for (int y = 0; y < h; ++y) bg(0, y) = bg(w - 1, y) = 1;
    }
    SeedAssignment seeds;
    for (std::size_t i = 0; i < fg.size(); ++i) {
      if (fg[i])
        seeds.foreground.push_back(i);
      else if (bg[i])
        seeds.background.push_back(i);
    }
    if (seeds.background.empty()) return {std::move(fg), std::nullopt};

    const auto sol = solve_walker(build_lattice(image, params_.beta), seeds, params_.tol, params_.max_iter);
    BinaryPlane out(w, h);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sol.probabilities[i] >= params_.threshold;
    return {std::move(out), std::nullopt};
  }

  const RandomWalkParams& params() const noexcept { return params_; }

 private:
  RandomWalkParams params_;
};

}  // namespace plrefine
