#include "pyramnet/metrics.hpp"

#include "pyramnet/errors.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace pyramnet {

namespace {

double ratio_or_one(double num, double den) { return den > 0.0 ? num / den : 1.0; }

void check_label(int value, int classes, const char* what, std::size_t index) {
  if (value < 0 || value >= classes) {
    throw DataError(std::string(what) + " " + std::to_string(value) + " at index " +
                    std::to_string(index) + " outside [0, " + std::to_string(classes) + ")");
  }
}

// Mean IoU of one shape over `parts`; a part absent from both labels and
// predictions counts as 1.
double shape_iou(std::span<const int> pred, std::span<const int> labels, const std::vector<int>& parts) {
  if (parts.empty()) return 1.0;
  double total = 0.0;
  for (int part : parts) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred[i] == part, l = labels[i] == part;
      inter += p && l;
      uni += p || l;
    }
    total += ratio_or_one(static_cast<double>(inter), static_cast<double>(uni));
  }
  return total / static_cast<double>(parts.size());
}

}  // namespace

std::string MetricReport::to_text() const {
  std::ostringstream out;
  std::size_t width = 5;
  for (const auto& c : classes) width = std::max(width, c.name.size());
  char line[256];
  std::snprintf(line, sizeof line, "%-*s  %8s  %8s  %8s\n", static_cast<int>(width), "class", "recall", "iou",
                "support");
  out << line;
  for (const auto& c : classes) {
    std::snprintf(line, sizeof line, "%-*s  %8.4f  %8.4f  %8lld\n", static_cast<int>(width), c.name.c_str(),
                  c.recall, c.iou, static_cast<long long>(c.support));
    out << line;
  }
  std::snprintf(line, sizeof line, "task %s  overall %.4f  avg-class %.4f  mIoU %.4f", to_string(task).c_str(),
                overall_accuracy, avg_class_accuracy, miou);
  out << line;
  if (epoch >= 0) out << "  epoch " << epoch;
  if (seconds > 0.0) out << "  " << seconds << " s";
  out << '\n';
  return out.str();
}

MetricReport compute_metrics(const MetricInputs& in) {
  if (in.pred.empty() || in.labels.empty()) throw DataError("metrics: empty prediction or label list");
  if (in.pred.size() != in.labels.size()) {
    throw DimensionError("metrics: " + std::to_string(in.pred.size()) + " predictions for " +
                         std::to_string(in.labels.size()) + " labels");
  }
  if (in.num_classes < 1) throw ConfigError("metrics: need at least one class");
  const auto classes = static_cast<std::size_t>(in.num_classes);
  if (!in.class_names.empty() && in.class_names.size() != classes) {
    throw DimensionError("metrics: " + std::to_string(in.class_names.size()) + " class names for " +
                         std::to_string(classes) + " classes");
  }

  std::vector<std::size_t> tp(classes, 0), support(classes, 0), predicted(classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < in.pred.size(); ++i) {
    check_label(in.labels[i], in.num_classes, "label", i);
    check_label(in.pred[i], in.num_classes, "prediction", i);
    const auto l = static_cast<std::size_t>(in.labels[i]), p = static_cast<std::size_t>(in.pred[i]);
    ++support[l];
    ++predicted[p];
    if (l == p) {
      ++tp[l];
      ++correct;
    }
  }

  MetricReport report;
  report.task = in.task;
  report.overall_accuracy = static_cast<double>(correct) / static_cast<double>(in.pred.size());
  double recall_sum = 0.0, iou_sum = 0.0;
  std::size_t with_support = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    ClassMetrics row;
    row.name = in.class_names.empty() ? "class" + std::to_string(c) : in.class_names[c];
    row.support = static_cast<Index>(support[c]);
    row.recall = ratio_or_one(static_cast<double>(tp[c]), static_cast<double>(support[c]));
    row.iou = ratio_or_one(static_cast<double>(tp[c]), static_cast<double>(support[c] + predicted[c] - tp[c]));
    if (support[c] > 0) {
      recall_sum += row.recall;
      ++with_support;
    }
    iou_sum += row.iou;
    report.classes.push_back(std::move(row));
  }
  report.avg_class_accuracy = recall_sum / static_cast<double>(with_support);
  report.miou = iou_sum / static_cast<double>(classes);

  if (in.task == Task::kPartSeg) {
    const Index n = in.points_per_shape;
    if (n < 1 || static_cast<Index>(in.pred.size()) % n != 0) {
      throw DimensionError("metrics: " + std::to_string(in.pred.size()) +
                           " point labels do not split into shapes of " + std::to_string(n));
    }
    const std::size_t shapes = in.pred.size() / static_cast<std::size_t>(n);
    std::vector<int> all_parts(classes);
    for (std::size_t c = 0; c < classes; ++c) all_parts[c] = static_cast<int>(c);
    if (!in.categories.empty() && in.shape_categories.size() != shapes) {
      throw DimensionError("metrics: " + std::to_string(in.shape_categories.size()) + " shape categories for " +
                           std::to_string(shapes) + " shapes");
    }
    double total = 0.0;
    for (std::size_t s = 0; s < shapes; ++s) {
      const auto offset = s * static_cast<std::size_t>(n);
      const auto* parts = &all_parts;
      if (!in.categories.empty()) {
        const int cat = in.shape_categories[s];
        if (cat < 0 || cat >= static_cast<int>(in.categories.size())) {
          throw DataError("metrics: shape " + std::to_string(s) + " has unknown category " + std::to_string(cat));
        }
        parts = &in.categories[static_cast<std::size_t>(cat)].parts;
      }
      total += shape_iou(in.pred.subspan(offset, static_cast<std::size_t>(n)),
                         in.labels.subspan(offset, static_cast<std::size_t>(n)), *parts);
    }
    report.miou = total / static_cast<double>(shapes);
  }
  return report;
}

}  // namespace pyramnet
