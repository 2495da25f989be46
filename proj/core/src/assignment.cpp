#include "mapkit/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mapkit {

std::vector<int> Assignment::prediction_to_gt(std::size_t n_pred) const {
  std::vector<int> out(n_pred, -1);
  for (const auto& [p, g] : pairs) out.at(p) = static_cast<int>(g);
  return out;
}

namespace {

struct SubSolution {
  std::vector<std::size_t> col_of;  // per local row, a local column
  std::vector<double> u;            // row duals
  std::vector<double> v;            // column duals
  double cost = 0.0;
};

// Square assignment over the given row/column index lists (shortest augmenting
// paths with potentials, O(n^3)).
SubSolution solve_square(const std::vector<double>& c, std::size_t stride, const std::vector<std::size_t>& rows,
                         const std::vector<std::size_t>& cols) {
  const std::size_t n = rows.size();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  auto cost = [&](std::size_t i, std::size_t j) { return c[rows[i - 1] * stride + cols[j - 1]]; };
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  SubSolution s;
  s.col_of.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) s.col_of[p[j] - 1] = j - 1;
  s.u.assign(u.begin() + 1, u.end());
  // The potentials above satisfy c - u - v >= 0 with v stored negated relative to the usual form.
  s.v.assign(v.begin() + 1, v.end());
  for (std::size_t i = 0; i < n; ++i) s.cost += c[rows[i] * stride + cols[s.col_of[i]]];
  return s;
}

}  // namespace

Assignment hungarian(const CostMatrix& cost) {
  Assignment out;
  if (cost.rows == 0 || cost.cols == 0) return out;
  for (const double x : cost.data) {
    if (!std::isfinite(x)) throw std::invalid_argument("hungarian: cost matrix has non-finite entries");
  }
  // Pad to square; dummy entries cost 0 and carry indices >= the real size, so
  // preferring smaller column indices also prefers real columns.
  const std::size_t n = std::max(cost.rows, cost.cols);
  std::vector<double> c(n * n, 0.0);
  double scale = 0.0;
  for (std::size_t r = 0; r < cost.rows; ++r) {
    for (std::size_t col = 0; col < cost.cols; ++col) {
      c[r * n + col] = cost(r, col);
      scale = std::max(scale, std::abs(cost(r, col)));
    }
  }
  const double tol = 1e-12 * (1.0 + scale * static_cast<double>(n));

  std::vector<std::size_t> rows(n), cols(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = cols[i] = i;
  SubSolution sol = solve_square(c, n, rows, cols);
  double remaining = sol.cost;

  // Fix rows in order, each to the smallest column that still admits an optimum.
  std::vector<std::size_t> chosen(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Local row 0 of the current subproblem is global row i.
    const std::size_t current_local = sol.col_of[0];
    const std::size_t current = cols[current_local];
    std::size_t pick_local = current_local;
    for (std::size_t jl = 0; jl < cols.size(); ++jl) {
      const std::size_t j = cols[jl];
      if (j >= current) continue;
      const double reduced = c[i * n + j] - sol.u[0] - sol.v[jl];
      if (reduced > tol) continue;
      std::vector<std::size_t> sub_rows(rows.begin() + 1, rows.end());
      std::vector<std::size_t> sub_cols;
      for (std::size_t k = 0; k < cols.size(); ++k) {
        if (k != jl) sub_cols.push_back(cols[k]);
      }
      SubSolution sub = sub_rows.empty() ? SubSolution{} : solve_square(c, n, sub_rows, sub_cols);
      if (c[i * n + j] + sub.cost <= remaining + tol) {
        if (pick_local == current_local || j < cols[pick_local]) pick_local = jl;
        // Candidates are scanned in index order, so the first success is the smallest.
        chosen[i] = j;
        remaining = sub.cost;
        rows = std::move(sub_rows);
        cols = std::move(sub_cols);
        sol = std::move(sub);
        break;
      }
    }
    if (pick_local == current_local) {
      chosen[i] = current;
      remaining -= c[i * n + current];
      // Drop row 0 and the chosen column; the restricted solution stays optimal.
      SubSolution next;
      std::vector<std::size_t> next_cols;
      for (std::size_t k = 0; k < cols.size(); ++k) {
        if (k == current_local) continue;
        next_cols.push_back(cols[k]);
        next.v.push_back(sol.v[k]);
      }
      for (std::size_t r = 1; r < rows.size(); ++r) {
        const std::size_t old_local = sol.col_of[r];
        next.col_of.push_back(old_local > current_local ? old_local - 1 : old_local);
        next.u.push_back(sol.u[r]);
      }
      rows.erase(rows.begin());
      cols = std::move(next_cols);
      sol = std::move(next);
    }
  }

  for (std::size_t r = 0; r < cost.rows; ++r) {
    if (chosen[r] < cost.cols) {
      out.pairs.emplace_back(r, chosen[r]);
      out.total_cost += cost(r, chosen[r]);
    }
  }
  return out;
}

void CostWeights::validate() const {
  for (const double x : {cls, pt, iou, topo, aux}) {
    if (x < 0.0 || !std::isfinite(x)) throw std::invalid_argument("CostWeights: weights must be finite and >= 0");
  }
  if (cls + pt + iou + topo + aux <= 0.0) throw std::invalid_argument("CostWeights: at least one weight must be positive");
}

double p2p_iou(std::span<const Point2> a, std::span<const Point2> b, double w) {
  if (a.size() != b.size()) throw std::invalid_argument("p2p_iou: chains have different point counts");
  if (a.empty()) throw std::invalid_argument("p2p_iou: empty chains");
  if (!(w > 0.0)) throw std::invalid_argument("p2p_iou: half-width must be positive");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = distance(a[i], b[i]);
    total += std::max(0.0, 2.0 * w - d) / (2.0 * w + d);
  }
  return total / static_cast<double>(a.size());
}

double p2p_iou_loss(std::span<const Point2> a, std::span<const Point2> b, double w) { return 1.0 - p2p_iou(a, b, w); }

Tensor p2p_iou_loss(const Tensor& pred, std::span<const double> target, Point2 scale, double w) {
  if (!(w > 0.0)) throw std::invalid_argument("p2p_iou_loss: half-width must be positive");
  if (target.size() != pred.numel()) throw std::invalid_argument("p2p_iou_loss: mismatched point counts");
  const std::size_t rows = pred.rows();
  const std::size_t cols = pred.cols();
  if (rows == 0 || cols == 0 || cols % 2 != 0) throw std::invalid_argument("p2p_iou_loss: expected [R, 2P] input");
  const std::size_t points = cols / 2;
  const auto a = pred.values();
  std::vector<double> t(target.begin(), target.end());
  std::vector<double> grad_local(pred.numel(), 0.0);
  double total = 0.0;
  const double inv = 1.0 / static_cast<double>(rows * points);
  for (std::size_t i = 0; i < rows * points; ++i) {
    const double dx = (a[2 * i] - t[2 * i]) * scale.x;
    const double dy = (a[2 * i + 1] - t[2 * i + 1]) * scale.y;
    const double d = std::hypot(dx, dy);
    const double iou = std::max(0.0, 2.0 * w - d) / (2.0 * w + d);
    total += 1.0 - iou;
    if (d > 0.0 && d < 2.0 * w) {
      const double diou_dd = -4.0 * w / ((2.0 * w + d) * (2.0 * w + d));
      grad_local[2 * i] = -inv * diou_dd * (dx / d) * scale.x;
      grad_local[2 * i + 1] = -inv * diou_dd * (dy / d) * scale.y;
    }
  }
  return make_result("p2p_iou_loss", {1}, {total * inv}, {pred}, [pred, grad_local](std::span<const double> g) {
    if (!pred.requires_grad()) return;
    auto gp = pred.node()->grad_buffer();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[0] * grad_local[i];
  });
}

double geometry_l1(const InstanceGeometry& a, const InstanceGeometry& b, Point2 scale) {
  if (a.chains.size() != b.chains.size()) throw std::invalid_argument("geometry_l1: chain counts differ");
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < a.chains.size(); ++c) {
    if (a.chains[c].size() != b.chains[c].size()) throw std::invalid_argument("geometry_l1: point counts differ");
    for (std::size_t i = 0; i < a.chains[c].size(); ++i) {
      total += std::abs(a.chains[c][i].x - b.chains[c][i].x) / scale.x;
      total += std::abs(a.chains[c][i].y - b.chains[c][i].y) / scale.y;
      n += 2;
    }
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

double geometry_p2p(const InstanceGeometry& a, const InstanceGeometry& b, double w) {
  if (a.chains.size() != b.chains.size() || a.chains.empty()) throw std::invalid_argument("geometry_p2p: chain counts differ");
  double total = 0.0;
  for (std::size_t c = 0; c < a.chains.size(); ++c) total += p2p_iou(a.chains[c], b.chains[c], w);
  return total / static_cast<double>(a.chains.size());
}

std::vector<Point2> align_ring(std::span<const Point2> pred, std::span<const Point2> gt) {
  const std::size_t n = gt.size();
  if (pred.size() != n) throw std::invalid_argument("align_ring: point counts differ");
  std::vector<Point2> best(gt.begin(), gt.end());
  double best_cost = std::numeric_limits<double>::infinity();
  for (int orientation = 0; orientation < 2; ++orientation) {
    for (std::size_t shift = 0; shift < n; ++shift) {
      double c = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = orientation == 0 ? (shift + i) % n : (shift + n - i) % n;
        c += std::abs(pred[i].x - gt[k].x) + std::abs(pred[i].y - gt[k].y);
      }
      if (c < best_cost) {
        best_cost = c;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t k = orientation == 0 ? (shift + i) % n : (shift + n - i) % n;
          best[i] = gt[k];
        }
      }
    }
  }
  return best;
}

InstanceGeometry align_to(const InstanceGeometry& pred, const InstanceGeometry& gt) {
  if (!gt.closed) return gt;
  InstanceGeometry out = gt;
  for (std::size_t c = 0; c < gt.chains.size(); ++c) out.chains[c] = align_ring(pred.chains.at(c), gt.chains[c]);
  return out;
}

std::vector<double> softmax_values(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double mx = *std::max_element(out.begin(), out.end());
  double total = 0.0;
  for (auto& v : out) {
    v = std::exp(v - mx);
    total += v;
  }
  for (auto& v : out) v /= total;
  return out;
}

double match_cost(std::span<const double> class_logits, const InstanceGeometry& pred, int gt_class,
                  const InstanceGeometry& gt, const CostWeights& weights, Point2 scale, double w) {
  const auto probs = softmax_values(class_logits);
  const double p = probs.at(static_cast<std::size_t>(gt_class));
  const InstanceGeometry aligned = align_to(pred, gt);
  return weights.cls * (1.0 - p) + weights.pt * geometry_l1(pred, aligned, scale) +
         weights.iou * (1.0 - geometry_p2p(pred, aligned, w));
}

}  // namespace mapkit
