#include "mf2sf/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace mf2sf {

namespace {

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string overall_ap_svg(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  constexpr int kBar = 60, kGap = 30, kLeft = 50, kTop = 30, kPlot = 240;
  const int width = kLeft + static_cast<int>(rows.size()) * (kBar + kGap) + kGap;
  const int height = kTop + kPlot + 60;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  os << "<text x=\"" << kLeft << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">Overall 3D AP (%)</text>\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + kPlot << "\" x2=\"" << width - 10 << "\" y2=\"" << kTop + kPlot
     << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& [name, r] = rows[i];
    const double ap = r.iou3d[0].value_or(0.0);
    const int h = static_cast<int>(std::lround(std::clamp(ap, 0.0, 1.0) * kPlot));
    const int x = kLeft + kGap + static_cast<int>(i) * (kBar + kGap);
    char value[16];
    std::snprintf(value, sizeof(value), r.iou3d[0] ? "%.2f" : "-", 100.0 * ap);
    os << "<rect x=\"" << x << "\" y=\"" << kTop + kPlot - h << "\" width=\"" << kBar << "\" height=\"" << h
       << "\" fill=\"#4a7ab5\"/>\n";
    os << "<text x=\"" << x + kBar / 2 << "\" y=\"" << kTop + kPlot - h - 4
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << value << "</text>\n";
    os << "<text x=\"" << x + kBar / 2 << "\" y=\"" << kTop + kPlot + 16
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << escape_xml(name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<std::pair<std::string, EvalReport>> combine_reports(const std::vector<std::filesystem::path>& csv_files,
                                                                const std::filesystem::path& out_dir) {
  std::vector<std::pair<std::string, EvalReport>> rows;
  for (const auto& f : csv_files) {
    for (auto& row : read_report_csv(f)) rows.push_back(std::move(row));
  }
  std::filesystem::create_directories(out_dir);
  write_report_csv(out_dir / "results.csv", rows);
  std::ofstream svg(out_dir / "overall_ap.svg", std::ios::trunc);
  if (!svg) throw std::runtime_error("cannot write " + (out_dir / "overall_ap.svg").string());
  svg << overall_ap_svg(rows);
  return rows;
}

std::string predictions_to_json(const std::vector<FrameDetections>& frames,
                                const std::vector<std::pair<std::size_t, std::size_t>>& frame_ids) {
  if (frames.size() != frame_ids.size()) throw std::invalid_argument("one frame id per frame required");
  nlohmann::json doc = nlohmann::json::array();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& p : frames[i].predictions) {
      const auto& b = p.box;
      boxes.push_back({{"center", {b.center.x(), b.center.y(), b.center.z()}},
                       {"size", {b.size.x(), b.size.y(), b.size.z()}},
                       {"heading", b.heading},
                       {"class", to_string(b.class_id)},
                       {"score", p.score}});
    }
    doc.push_back({{"sequence", frame_ids[i].first}, {"frame", frame_ids[i].second}, {"boxes", std::move(boxes)}});
  }
  return doc.dump(1) + "\n";
}

std::vector<std::vector<ScoredBox>> predictions_from_json(const std::string& text,
                                                          const std::vector<std::pair<std::size_t, std::size_t>>& expected_ids) {
  std::vector<std::vector<ScoredBox>> out;
  try {
    const auto doc = nlohmann::json::parse(text);
    if (!doc.is_array() || doc.size() != expected_ids.size()) {
      throw std::runtime_error("prediction dump has " + std::to_string(doc.size()) + " frames, dataset has " +
                               std::to_string(expected_ids.size()));
    }
    for (std::size_t i = 0; i < doc.size(); ++i) {
      const auto& f = doc[i];
      const std::pair<std::size_t, std::size_t> id{f.at("sequence").get<std::size_t>(), f.at("frame").get<std::size_t>()};
      if (id != expected_ids[i]) throw std::runtime_error("prediction dump frame " + std::to_string(i) + " is out of order");
      std::vector<ScoredBox> boxes;
      for (const auto& j : f.at("boxes")) {
        ScoredBox sb;
        const auto c = j.at("center").get<std::vector<double>>();
        const auto sz = j.at("size").get<std::vector<double>>();
        if (c.size() != 3 || sz.size() != 3) throw std::runtime_error("box center and size need 3 values");
        sb.box.center = Vec3(c[0], c[1], c[2]);
        sb.box.size = Vec3(sz[0], sz[1], sz[2]);
        sb.box.heading = j.at("heading").get<double>();
        sb.box.class_id = object_class_from_string(j.at("class").get<std::string>());
        sb.score = j.at("score").get<double>();
        boxes.push_back(sb);
      }
      out.push_back(std::move(boxes));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed prediction dump: ") + e.what());
  }
  return out;
}

}  // namespace mf2sf
