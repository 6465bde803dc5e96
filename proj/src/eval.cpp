#include "mf2sf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mf2sf {

namespace {

double cross(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

std::vector<Eigen::Vector2d> corners(const BoundingBox& box) {
  const auto c = box.bev_corners();
  return {c.begin(), c.end()};
}

}  // namespace

double polygon_area(const std::vector<Eigen::Vector2d>& poly) {
  double area = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) area += cross(poly[i], poly[(i + 1) % poly.size()]);
  return 0.5 * std::abs(area);
}

double convex_intersection_area(const std::vector<Eigen::Vector2d>& subject,
                                const std::vector<Eigen::Vector2d>& clip) {
  // Orientation of the clip polygon decides which side of each edge is inside.
  double signed_area = 0.0;
  for (std::size_t i = 0; i < clip.size(); ++i) signed_area += cross(clip[i], clip[(i + 1) % clip.size()]);
  const double orientation = signed_area >= 0.0 ? 1.0 : -1.0;

  std::vector<Eigen::Vector2d> output = subject;
  for (std::size_t e = 0; e < clip.size() && !output.empty(); ++e) {
    const Eigen::Vector2d& a = clip[e];
    const Eigen::Vector2d& b = clip[(e + 1) % clip.size()];
    auto side = [&](const Eigen::Vector2d& p) { return orientation * cross(b - a, p - a); };
    std::vector<Eigen::Vector2d> input = std::move(output);
    output.clear();
    for (std::size_t i = 0; i < input.size(); ++i) {
      const Eigen::Vector2d& cur = input[i];
      const Eigen::Vector2d& prev = input[(i + input.size() - 1) % input.size()];
      const double s_cur = side(cur);
      const double s_prev = side(prev);
      if (s_cur >= 0.0) {
        if (s_prev < 0.0) output.push_back(prev + (cur - prev) * (s_prev / (s_prev - s_cur)));
        output.push_back(cur);
      } else if (s_prev >= 0.0) {
        output.push_back(prev + (cur - prev) * (s_prev / (s_prev - s_cur)));
      }
    }
  }
  return output.size() < 3 ? 0.0 : polygon_area(output);
}

namespace {

// Clipping a box against itself (or a box it contains) lands within roundoff
// of the smaller area; snap so identical boxes give exactly 1.
double snap_containment(double inter, double smaller) {
  return inter >= smaller * (1.0 - 1e-12) ? smaller : inter;
}

}  // namespace

double bev_iou(const BoundingBox& a, const BoundingBox& b) {
  const double area_a = a.width() * a.length();
  const double area_b = b.width() * b.length();
  if (!(area_a > 0.0) || !(area_b > 0.0)) return 0.0;
  const double inter = snap_containment(convex_intersection_area(corners(a), corners(b)), std::min(area_a, area_b));
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

double iou_3d(const BoundingBox& a, const BoundingBox& b) {
  const double vol_a = a.size.prod();
  const double vol_b = b.size.prod();
  if (!(vol_a > 0.0) || !(vol_b > 0.0)) return 0.0;
  const double z_lo = std::max(a.center.z() - 0.5 * a.height(), b.center.z() - 0.5 * b.height());
  const double z_hi = std::min(a.center.z() + 0.5 * a.height(), b.center.z() + 0.5 * b.height());
  if (z_hi <= z_lo) return 0.0;
  const double inter =
      snap_containment(convex_intersection_area(corners(a), corners(b)) * (z_hi - z_lo), std::min(vol_a, vol_b));
  const double uni = vol_a + vol_b - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

EvalConfig EvalConfig::for_class(ObjectClass cls) {
  EvalConfig cfg;
  cfg.iou_threshold = cls == ObjectClass::kVehicle ? 0.7 : 0.5;
  return cfg;
}

void EvalConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw std::invalid_argument("iou threshold must be in (0, 1]");
  if (!std::is_sorted(bin_edges.begin(), bin_edges.end())) throw std::invalid_argument("distance bins must be ordered");
}

double all_point_ap(std::vector<std::pair<double, bool>> scored_hits, int num_gt) {
  if (num_gt <= 0) return 0.0;
  std::stable_sort(scored_hits.begin(), scored_hits.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  const std::size_t n = scored_hits.size();
  std::vector<double> precision(n), recall(n);
  int tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (scored_hits[i].second) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  // Precision envelope, right to left.
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

namespace {

double bev_range(const BoundingBox& b) { return b.center.head<2>().norm(); }

bool in_bin(const EvalConfig& cfg, std::size_t bin, double range) {
  if (bin == 0) return true;
  return range >= cfg.bin_edges[bin - 1] && range < cfg.bin_edges[bin];
}

struct BinMatches {
  std::vector<std::pair<double, bool>> hits;
  int num_gt = 0;
  int num_pred = 0;
};

BinMatches match_bin(const std::vector<FrameDetections>& frames, const EvalConfig& cfg, IouKind kind, std::size_t bin) {
  BinMatches result;
  auto iou = [kind](const BoundingBox& a, const BoundingBox& b) { return kind == IouKind::kBev ? bev_iou(a, b) : iou_3d(a, b); };
  for (const auto& frame : frames) {
    // Ground truth outside the bin or with too few points only masks matches.
    std::vector<bool> counted(frame.ground_truth.size());
    for (std::size_t g = 0; g < frame.ground_truth.size(); ++g) {
      const auto& gt = frame.ground_truth[g];
      counted[g] = gt.num_points > cfg.min_points && in_bin(cfg, bin, bev_range(gt.box));
      if (counted[g]) ++result.num_gt;
    }
    std::vector<std::size_t> order(frame.predictions.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return frame.predictions[a].score > frame.predictions[b].score;
    });
    std::vector<bool> taken(frame.ground_truth.size(), false);
    for (std::size_t idx : order) {
      const auto& pred = frame.predictions[idx];
      if (!in_bin(cfg, bin, bev_range(pred.box))) continue;
      int best = -1;
      double best_iou = cfg.iou_threshold;
      bool hits_ignored = false;
      for (std::size_t g = 0; g < frame.ground_truth.size(); ++g) {
        const double v = iou(pred.box, frame.ground_truth[g].box);
        if (v < cfg.iou_threshold) continue;
        if (!counted[g]) {
          hits_ignored = true;
        } else if (!taken[g] && v >= best_iou) {
          best = static_cast<int>(g);
          best_iou = v;
        }
      }
      if (best >= 0) {
        taken[static_cast<std::size_t>(best)] = true;
        result.hits.emplace_back(pred.score, true);
        ++result.num_pred;
      } else if (!hits_ignored) {
        result.hits.emplace_back(pred.score, false);
        ++result.num_pred;
      }
    }
  }
  return result;
}

}  // namespace

std::optional<double> average_precision(const std::vector<FrameDetections>& frames, const EvalConfig& cfg,
                                        IouKind kind, std::size_t bin) {
  cfg.validate();
  if (bin >= kNumBins) throw std::out_of_range("distance bin out of range");
  const BinMatches m = match_bin(frames, cfg, kind, bin);
  if (m.num_gt == 0) return std::nullopt;
  return all_point_ap(m.hits, m.num_gt);
}

EvalReport evaluate(const std::vector<FrameDetections>& frames, const EvalConfig& cfg) {
  cfg.validate();
  EvalReport report;
  for (std::size_t bin = 0; bin < kNumBins; ++bin) {
    const BinMatches bev = match_bin(frames, cfg, IouKind::kBev, bin);
    const BinMatches d3 = match_bin(frames, cfg, IouKind::k3d, bin);
    report.gt_count[bin] = bev.num_gt;
    report.pred_count[bin] = bev.num_pred;
    if (bev.num_gt > 0) {
      report.bev[bin] = all_point_ap(bev.hits, bev.num_gt);
      report.iou3d[bin] = all_point_ap(d3.hits, d3.num_gt);
    }
  }
  return report;
}

namespace {

constexpr const char* kCsvHeader =
    "Method,BEV Overall,BEV 0-30m,BEV 30-50m,BEV 50m-Inf,3D Overall,3D 0-30m,3D 30-50m,3D 50m-Inf";

std::string format_cell(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * *v);
  return buf;
}

}  // namespace

std::string report_csv(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::ostringstream os;
  os << kCsvHeader << '\n';
  for (const auto& [name, r] : rows) {
    if (name.find(',') != std::string::npos) throw std::invalid_argument("method name may not contain ','");
    os << name;
    for (const auto& v : r.bev) os << ',' << format_cell(v);
    for (const auto& v : r.iou3d) os << ',' << format_cell(v);
    os << '\n';
  }
  return os.str();
}

void write_report_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << report_csv(rows);
}

std::vector<std::pair<std::string, EvalReport>> read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw std::runtime_error(path.string() + ": unexpected CSV header");
  std::vector<std::pair<std::string, EvalReport>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 1 + 2 * kNumBins) throw std::runtime_error(path.string() + ": malformed row: " + line);
    EvalReport r;
    for (std::size_t i = 0; i < kNumBins; ++i) {
      if (cells[1 + i] != "-") r.bev[i] = std::stod(cells[1 + i]) / 100.0;
      if (cells[1 + kNumBins + i] != "-") r.iou3d[i] = std::stod(cells[1 + kNumBins + i]) / 100.0;
    }
    rows.emplace_back(cells[0], r);
  }
  return rows;
}

}  // namespace mf2sf
