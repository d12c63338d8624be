#include "levelseg/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace levelseg::metrics {

namespace {

void require_same(const Mask& a, const Mask& b, const char* op) {
  if (a.shape != b.shape)
    throw ShapeError(std::string(op) + ": mask shapes " + a.shape.str() + " and " +
                     b.shape.str() + " do not match");
}

int64_t count_on(const Mask& m) {
  int64_t n = 0;
  for (uint8_t v : m.data) n += v ? 1 : 0;
  return n;
}

}  // namespace

double dice(const Mask& a, const Mask& b) {
  require_same(a, b, "dice");
  int64_t inter = 0, na = 0, nb = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const bool x = a.data[i] != 0, y = b.data[i] != 0;
    inter += (x && y) ? 1 : 0;
    na += x ? 1 : 0;
    nb += y ? 1 : 0;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

double iou(const Mask& a, const Mask& b) {
  require_same(a, b, "iou");
  int64_t inter = 0, uni = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const bool x = a.data[i] != 0, y = b.data[i] != 0;
    inter += (x && y) ? 1 : 0;
    uni += (x || y) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

ad::Tensor<int> connected_components(const Mask& mask, int connectivity, int* count) {
  if (connectivity != 4 && connectivity != 8)
    throw ConfigError("connected_components: connectivity must be 4 or 8");
  const int h = mask.shape.height(), w = mask.shape.width();
  ad::Tensor<int> labels(mask.shape);
  int next = 0;
  std::vector<int64_t> stack;
  for (int64_t s = 0; s < mask.numel(); ++s) {
    if (!mask.data[s] || labels.data[s]) continue;
    ++next;
    labels.data[s] = next;
    stack.push_back(s);
    while (!stack.empty()) {
      const int64_t p = stack.back();
      stack.pop_back();
      const int i = static_cast<int>(p / w), j = static_cast<int>(p % w);
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          if (di == 0 && dj == 0) continue;
          if (connectivity == 4 && di != 0 && dj != 0) continue;
          const int ni = i + di, nj = j + dj;
          if (ni < 0 || ni >= h || nj < 0 || nj >= w) continue;
          const int64_t q = static_cast<int64_t>(ni) * w + nj;
          if (mask.data[q] && !labels.data[q]) {
            labels.data[q] = next;
            stack.push_back(q);
          }
        }
    }
  }
  if (count) *count = next;
  return labels;
}

double wcov(const Mask& gt, const Mask& pred) {
  require_same(gt, pred, "wcov");
  int ng = 0, np = 0;
  ad::Tensor<int> lg = connected_components(gt, 8, &ng);
  ad::Tensor<int> lp = connected_components(pred, 8, &np);
  if (ng == 0) return 1.0;

  std::vector<int64_t> garea(ng, 0), parea(np, 0);
  std::vector<std::vector<int64_t>> inter(ng, std::vector<int64_t>(np, 0));
  for (int64_t i = 0; i < gt.numel(); ++i) {
    const int a = lg.data[i], b = lp.data[i];
    if (a) ++garea[a - 1];
    if (b) ++parea[b - 1];
    if (a && b) ++inter[a - 1][b - 1];
  }
  int64_t total = 0;
  for (int64_t v : garea) total += v;

  double cov = 0.0;
  for (int a = 0; a < ng; ++a) {
    double best = 0.0;
    for (int b = 0; b < np; ++b) {
      const int64_t in = inter[a][b];
      if (in == 0) continue;
      const double v = static_cast<double>(in) /
                       static_cast<double>(garea[a] + parea[b] - in);
      best = std::max(best, v);
    }
    cov += (static_cast<double>(garea[a]) / static_cast<double>(total)) * best;
  }
  return cov;
}

namespace {

std::vector<std::pair<int, int>> boundary_pixels(const Mask& m) {
  const int h = m.shape.height(), w = m.shape.width();
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      if (!m.at(i, j)) continue;
      const bool edge = i == 0 || i == h - 1 || j == 0 || j == w - 1;
      if (edge || !m.at(i - 1, j) || !m.at(i + 1, j) || !m.at(i, j - 1) ||
          !m.at(i, j + 1)) {
        out.emplace_back(i, j);
      }
    }
  return out;
}

int64_t matched_within(const std::vector<std::pair<int, int>>& from,
                       const std::vector<std::pair<int, int>>& to, double tol) {
  const double tol2 = tol * tol;
  int64_t matched = 0;
  for (const auto& [i, j] : from) {
    for (const auto& [a, b] : to) {
      const double di = i - a, dj = j - b;
      if (di * di + dj * dj <= tol2) {
        ++matched;
        break;
      }
    }
  }
  return matched;
}

}  // namespace

double boundf(const Mask& gt, const Mask& pred, double tolerance) {
  require_same(gt, pred, "boundf");
  const auto bg = boundary_pixels(gt);
  const auto bp = boundary_pixels(pred);
  if (bg.empty() && bp.empty()) return 1.0;
  if (bg.empty() || bp.empty()) return 0.0;
  const double precision =
      static_cast<double>(matched_within(bp, bg, tolerance)) / static_cast<double>(bp.size());
  const double recall =
      static_cast<double>(matched_within(bg, bp, tolerance)) / static_cast<double>(bg.size());
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double rmse(const Mask& gt, const Mask& pred) {
  require_same(gt, pred, "rmse");
  int64_t diff = 0;
  for (int64_t i = 0; i < gt.numel(); ++i)
    diff += (gt.data[i] != 0) != (pred.data[i] != 0) ? 1 : 0;
  return std::sqrt(static_cast<double>(diff) / static_cast<double>(gt.numel()));
}

void MetricsReport::add(const std::string& id, const Mask& gt, const Mask& pred) {
  ImageMetrics m;
  m.id = id;
  m.dice = dice(gt, pred);
  m.iou = iou(gt, pred);
  m.wcov = wcov(gt, pred);
  m.boundf = boundf(gt, pred, boundf_tolerance);
  m.rmse = rmse(gt, pred);
  connected_components(gt, 8, &m.gt_instances);
  connected_components(pred, 8, &m.pred_instances);
  rows.push_back(std::move(m));
}

void MetricsReport::finalize() {
  mean_dice = miou = mean_wcov = mean_boundf = mean_rmse = 0.0;
  if (rows.empty()) return;
  for (const auto& r : rows) {
    mean_dice += r.dice;
    miou += r.iou;
    mean_wcov += r.wcov;
    mean_boundf += r.boundf;
    mean_rmse += r.rmse;
  }
  const double n = static_cast<double>(rows.size());
  mean_dice /= n;
  miou /= n;
  mean_wcov /= n;
  mean_boundf /= n;
  mean_rmse /= n;
}

void MetricsReport::write_csv(std::ostream& os) const {
  os << "id,dice,iou,wcov,boundf,rmse,gt_instances,pred_instances\n";
  os << std::setprecision(17);
  for (const auto& r : rows)
    os << r.id << ',' << r.dice << ',' << r.iou << ',' << r.wcov << ',' << r.boundf << ','
       << r.rmse << ',' << r.gt_instances << ',' << r.pred_instances << '\n';
}

std::string MetricsReport::aggregate_json() const {
  nlohmann::ordered_json j;
  j["images"] = rows.size();
  j["mean_dice"] = mean_dice;
  j["miou"] = miou;
  j["mean_wcov"] = mean_wcov;
  j["mean_boundf"] = mean_boundf;
  j["mean_rmse"] = mean_rmse;
  j["boundf_tolerance"] = boundf_tolerance;
  return j.dump(2);
}

}  // namespace levelseg::metrics
