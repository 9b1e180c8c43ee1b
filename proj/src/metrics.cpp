#include "pfedlvm/metrics.hpp"

#include <cmath>
#include <locale>
#include <ostream>

#include "pfedlvm/csv.hpp"

namespace pfedlvm {

ConfusionAccumulator::ConfusionAccumulator(std::size_t classes) : classes_(classes) {
  if (classes == 0) throw ConfigError("ConfusionAccumulator: class count must be positive");
}

namespace {

std::size_t class_at(const Tensor& mask, std::size_t i, std::size_t classes, const char* which) {
  const double raw = mask[i];
  if (!(raw >= 0.0) || raw >= static_cast<double>(classes) || raw != std::floor(raw)) {
    throw ConfigError(std::string("accumulate: ") + which + " class " + format_double(raw) + " at pixel " +
                      std::to_string(i) + " outside [0," + std::to_string(classes) + ")");
  }
  return static_cast<std::size_t>(raw);
}

}  // namespace

void ConfusionAccumulator::accumulate(const Tensor& pred_mask, const Tensor& gt_mask) {
  require_same_shape(pred_mask, gt_mask, "accumulate");
  std::vector<ClassCounts> image(classes_);
  for (std::size_t i = 0; i < gt_mask.numel(); ++i) {
    const std::size_t p = class_at(pred_mask, i, classes_, "predicted");
    const std::size_t g = class_at(gt_mask, i, classes_, "ground-truth");
    if (p == g) {
      ++image[g].tp;
    } else {
      ++image[p].fp;
      ++image[g].fn;
    }
  }
  counts_.push_back(std::move(image));
}

void ConfusionAccumulator::accumulate_batch(const Tensor& pred_masks, const Tensor& gt_masks) {
  require_same_shape(pred_masks, gt_masks, "accumulate_batch");
  if (pred_masks.rank() != 3) throw ConfigError("accumulate_batch: expected [B,H,W] masks");
  for (std::size_t n = 0; n < pred_masks.dim(0); ++n) {
    accumulate(slice_batch(pred_masks, n, n + 1), slice_batch(gt_masks, n, n + 1));
  }
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
  if (other.classes_ != classes_) throw ConfigError("merge: class count mismatch");
  counts_.insert(counts_.end(), other.counts_.begin(), other.counts_.end());
}

MetricSummary summarize(const ConfusionAccumulator& acc) {
  if (acc.images() == 0) throw ConfigError("summarize: no images accumulated");
  auto ratio = [](std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  MetricSummary s;
  s.per_class.resize(acc.classes());
  for (std::size_t c = 0; c < acc.classes(); ++c) {
    auto& m = s.per_class[c];
    double iou = 0.0, pre = 0.0, rec = 0.0;
    for (std::size_t n = 0; n < acc.images(); ++n) {
      const auto& k = acc.counts(n, c);
      if (k.tp + k.fp + k.fn == 0) continue;
      ++m.images_counted;
      iou += ratio(k.tp, k.tp + k.fp + k.fn);
      pre += ratio(k.tp, k.tp + k.fp);
      rec += ratio(k.tp, k.tp + k.fn);
    }
    if (m.images_counted == 0) continue;
    const auto count = static_cast<double>(m.images_counted);
    m.iou = iou / count;
    m.precision = pre / count;
    m.recall = rec / count;
    m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    ++s.classes_counted;
    s.mean_iou += m.iou;
    s.mean_precision += m.precision;
    s.mean_recall += m.recall;
    s.mean_f1 += m.f1;
  }
  if (s.classes_counted > 0) {
    const auto count = static_cast<double>(s.classes_counted);
    s.mean_iou /= count;
    s.mean_precision /= count;
    s.mean_recall /= count;
    s.mean_f1 /= count;
  }
  return s;
}

void write_metric_csv(std::ostream& out, const MetricSummary& summary) {
  out.imbue(std::locale::classic());
  out << "class,IoU,F1,Precision,Recall\n";
  for (std::size_t c = 0; c < summary.per_class.size(); ++c) {
    const auto& m = summary.per_class[c];
    out << c;
    if (m.images_counted == 0) {
      out << ",nan,nan,nan,nan\n";
    } else {
      out << ',' << format_double(m.iou) << ',' << format_double(m.f1) << ',' << format_double(m.precision) << ','
          << format_double(m.recall) << '\n';
    }
  }
  out << "MEAN," << format_double(summary.mean_iou) << ',' << format_double(summary.mean_f1) << ','
      << format_double(summary.mean_precision) << ',' << format_double(summary.mean_recall) << '\n';
}

}  // namespace pfedlvm
