#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "plrefine/errors.hpp"
#include "plrefine/grid.hpp"
#include "plrefine/maps.hpp"

namespace plrefine {

/// Dice similarity 2|a∩b| / (|a|+|b|); empty when both planes are empty.
inline std::optional<double> dice(const BinaryPlane& a, const BinaryPlane& b) {
  if (!a.same_shape(b)) throw DimensionMismatch("dice on planes of different size");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return std::nullopt;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

/// How a class that is empty in both prediction and ground truth enters the per-image mean.
enum class AbsentPolicy { exclude, score_one };

inline const char* to_string(AbsentPolicy p) { return p == AbsentPolicy::exclude ? "exclude" : "score_one"; }

inline AbsentPolicy parse_absent_policy(const std::string& s) {
  if (s == "exclude") return AbsentPolicy::exclude;
  if (s == "score_one") return AbsentPolicy::score_one;
  throw ConfigError("unknown absent policy '" + s + "'");
}

struct DiceCell {
  std::optional<double> dice;  // empty when both planes are empty
  bool gt_present = false;
  bool pred_present = false;
  bool counted = false;  // contributes to the image mean
};

struct DiceReport {
  std::vector<std::string> image_ids;
  std::vector<std::vector<DiceCell>> cells;         // [image][class]
  std::vector<std::optional<double>> per_image_mean;  // empty when no class of the image counted
  double mean = 0;
  double std = 0;  // population standard deviation over per-image means
  std::size_t images_counted = 0;
  AbsentPolicy absent_policy = AbsentPolicy::exclude;
  std::string config_fingerprint;
};

/// Per-image mean Dice over the applicable classes, then mean and population std across images.
inline DiceReport evaluate(const std::vector<MaskSet>& predictions, const std::vector<MaskSet>& truths,
                           AbsentPolicy policy = AbsentPolicy::exclude, std::vector<std::string> image_ids = {}) {
  if (predictions.size() != truths.size()) throw DimensionMismatch("prediction and ground-truth lists differ in length");
  if (predictions.empty()) throw EmptyDataset("nothing to evaluate");
  if (image_ids.empty())
    for (std::size_t i = 0; i < predictions.size(); ++i) image_ids.push_back(std::to_string(i));
  if (image_ids.size() != predictions.size()) throw DimensionMismatch("image id count differs from image count");

  DiceReport report;
  report.absent_policy = policy;
  report.image_ids = std::move(image_ids);
  std::vector<double> means;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& pred = predictions[i];
    const auto& gt = truths[i];
    if (!pred.same_shape(gt))
      throw DimensionMismatch("prediction and ground truth differ in shape for image " + report.image_ids[i]);
    std::vector<DiceCell> row;
    double sum = 0;
    int counted = 0;
    for (int c = 0; c < gt.num_classes(); ++c) {
      DiceCell cell;
      cell.dice = dice(pred.plane(c), gt.plane(c));
      cell.gt_present = !is_empty(gt.plane(c));
      cell.pred_present = !is_empty(pred.plane(c));
      if (cell.dice) {
        cell.counted = true;
        sum += *cell.dice;
      } else if (policy == AbsentPolicy::score_one) {
        cell.counted = true;
        sum += 1.0;
      }
      counted += cell.counted;
      row.push_back(cell);
    }
    report.cells.push_back(std::move(row));
    if (counted > 0) {
      report.per_image_mean.push_back(sum / counted);
      means.push_back(sum / counted);
    } else {
      report.per_image_mean.push_back(std::nullopt);
    }
  }
  if (means.empty()) throw EmptyDataset("no image has an applicable class");
  report.images_counted = means.size();
  double total = 0;
  for (double m : means) total += m;
  report.mean = total / static_cast<double>(means.size());
  double var = 0;
  for (double m : means) var += (m - report.mean) * (m - report.mean);
  report.std = std::sqrt(var / static_cast<double>(means.size()));
  return report;
}

inline nlohmann::json to_json(const DiceReport& r) {
  nlohmann::json images = nlohmann::json::array();
  for (std::size_t i = 0; i < r.image_ids.size(); ++i) {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& cell : r.cells[i])
      classes.push_back({{"dice", cell.dice ? nlohmann::json(*cell.dice) : nlohmann::json()},
                         {"gt_present", cell.gt_present},
                         {"pred_present", cell.pred_present},
                         {"counted", cell.counted}});
    images.push_back({{"id", r.image_ids[i]},
                      {"mean", r.per_image_mean[i] ? nlohmann::json(*r.per_image_mean[i]) : nlohmann::json()},
                      {"classes", std::move(classes)}});
  }
  return {{"mean", r.mean},
          {"std", r.std},
          {"images_counted", r.images_counted},
          {"absent_policy", to_string(r.absent_policy)},
          {"config_fingerprint", r.config_fingerprint},
          {"images", std::move(images)}};
}

/// One row per (image, class) cell.
inline std::string to_csv(const DiceReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "image,class,dice,gt_present,pred_present,counted\n";
  for (std::size_t i = 0; i < r.image_ids.size(); ++i)
    for (std::size_t c = 0; c < r.cells[i].size(); ++c) {
      const auto& cell = r.cells[i][c];
      out << r.image_ids[i] << ',' << c << ',';
      if (cell.dice) out << *cell.dice;
      out << ',' << cell.gt_present << ',' << cell.pred_present << ',' << cell.counted << '\n';
    }
  return out.str();
}

}  // namespace plrefine
