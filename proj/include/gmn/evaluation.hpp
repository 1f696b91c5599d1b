#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gmn/counting.hpp"
#include "gmn/image.hpp"

namespace gmn {

/// Minimum-cost assignment of rows to columns for an n x m cost matrix
/// with n <= m (Kuhn-Munkres with potentials). Returns the column of each
/// row.
std::vector<int> hungarian_assignment(const std::vector<std::vector<double>>& cost);

struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (prediction index, ground-truth index)
  int tp = 0;
  int fp = 0;
  int fn = 0;
  double total_distance = 0.0;
};

/// Maximum number of prediction/ground-truth pairs within distance R; among
/// those, minimum total Euclidean distance. Throws InvalidArgument for R <= 0.
MatchResult match_detections(const std::vector<Point>& predictions,
                             const std::vector<Point>& ground_truth, double tolerance);

struct ImageRecord {
  std::string id;
  double predicted_count = 0.0;
  double true_count = 0.0;
  int tp = 0, fp = 0, fn = 0;
};

struct EvalReport {
  double mae = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<ImageRecord> images;
  double threshold = 0.0;
  double tolerance = 0.0;
  int exemplar_count = 1;
};

void to_json(nlohmann::json& j, const EvalReport& r);

double f1_score(double precision, double recall);

/// Micro-averaged P/R/F1 over summed TP/FP/FN and MAE over
/// |predicted - true| per image. `counts` holds (predicted, true) per image.
EvalReport compute_metrics(const std::vector<MatchResult>& matches,
                           const std::vector<std::pair<double, double>>& counts);

struct SweepRow {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double mae = 0.0;
};

/// Highest F1; ties go to higher recall, then to the smaller threshold.
double select_threshold(const std::vector<SweepRow>& rows);

/// A map with its ground-truth dots, for sweeps over a validation set.
struct ValidationItem {
  DensityMap map;
  std::vector<Point> ground_truth;
};

std::vector<SweepRow> threshold_sweep(const std::vector<ValidationItem>& items,
                                      const std::vector<double>& thresholds, double tolerance,
                                      double min_distance);
double select_threshold(const std::vector<ValidationItem>& items, const std::vector<double>& thresholds,
                        double tolerance, double min_distance);

/// Sweep table as CSV with header "T,P,R,F1,MAE".
std::string sweep_to_csv(const std::vector<SweepRow>& rows);

struct EvalImage {
  Image image;
  std::vector<Point> ground_truth;
};

struct ExemplarSource {
  Image image;
  BBox box;
};

struct MultiExemplarReport {
  EvalReport pooled;                    // all (image, exemplar) runs together
  std::vector<double> mae_per_exemplar; // one entry per exemplar slot
  double mae_mean = 0.0;
  double mae_std = 0.0;                 // population std across slots
  double mae_range = 0.0;               // max - min across slots
  int k = 0;
};

/// Counts every test image with k distinct exemplars drawn from `pool`
/// (seeded), and reports MAE per exemplar slot plus the pooled report.
/// Throws InvalidArgument when the pool has fewer than k exemplars.
MultiExemplarReport multi_exemplar_eval(GmnNetworkImpl& net, const std::vector<EvalImage>& test_set,
                                        const std::vector<ExemplarSource>& pool, int k,
                                        const CountOptions& options, double tolerance,
                                        std::uint64_t seed);

}  // namespace gmn
