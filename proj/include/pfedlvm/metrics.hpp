#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pfedlvm/tensor.hpp"

namespace pfedlvm {

struct ClassCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

/// Per-image, per-class confusion counts.
class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(std::size_t classes);

  /// Adds one image. Masks are [H,W] tensors of class indices.
  void accumulate(const Tensor& pred_mask, const Tensor& gt_mask);

  /// Adds every image of [B,H,W] mask batches.
  void accumulate_batch(const Tensor& pred_masks, const Tensor& gt_masks);

  /// Appends the other accumulator's images.
  void merge(const ConfusionAccumulator& other);

  std::size_t classes() const { return classes_; }
  std::size_t images() const { return counts_.size(); }
  const ClassCounts& counts(std::size_t image, std::size_t cls) const { return counts_.at(image).at(cls); }

 private:
  std::size_t classes_;
  std::vector<std::vector<ClassCounts>> counts_;
};

struct ClassMetrics {
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t images_counted = 0;  // images where the class appears in prediction or ground truth
};

struct MetricSummary {
  std::vector<ClassMetrics> per_class;
  double mean_iou = 0.0;
  double mean_precision = 0.0;
  double mean_recall = 0.0;
  double mean_f1 = 0.0;
  std::size_t classes_counted = 0;
};

/// Per-class IoU, precision and recall are averaged over images, then over
/// classes; F1_c = 2 Pre_c Rec_c / (Pre_c + Rec_c) from the averaged values.
///
/// An (image, class) cell with TP+FP+FN == 0 is skipped. Inside a counted
/// cell a ratio with a zero denominator is 0. Classes never counted are left
/// out of the class means, and F1_c is 0 when Pre_c + Rec_c == 0.
MetricSummary summarize(const ConfusionAccumulator& acc);

/// Header "class,IoU,F1,Precision,Recall"; one row per class (nan when the
/// class was never counted), then a MEAN row.
void write_metric_csv(std::ostream& out, const MetricSummary& summary);

}  // namespace pfedlvm
