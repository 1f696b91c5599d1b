#include "gmn/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gmn/errors.hpp"

namespace gmn {

std::vector<int> hungarian_assignment(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  if (n == 0) return {};
  const int m = static_cast<int>(cost[0].size());
  if (n > m) throw InvalidArgument("hungarian_assignment needs rows <= columns");
  for (const auto& row : cost) {
    if (static_cast<int>(row.size()) != m) throw InvalidArgument("ragged cost matrix");
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based potentials formulation; column 0 is a virtual source.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> owner(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    owner[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = owner[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const int j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (owner[j] != 0) assignment[owner[j] - 1] = j - 1;
  }
  return assignment;
}

MatchResult match_detections(const std::vector<Point>& predictions,
                             const std::vector<Point>& ground_truth, double tolerance) {
  if (!(tolerance > 0)) throw InvalidArgument("tolerance R must be positive");
  MatchResult result;
  const int np = static_cast<int>(predictions.size());
  const int ng = static_cast<int>(ground_truth.size());
  if (np > 0 && ng > 0) {
    // Infeasible pairs cost more than any set of feasible ones, so the
    // optimum maximises cardinality first, then minimises distance.
    const double sentinel = tolerance * (std::min(np, ng) + 1) + 1.0;
    const bool transpose = np > ng;
    const int rows = transpose ? ng : np, cols = transpose ? np : ng;
    std::vector<std::vector<double>> cost(rows, std::vector<double>(cols));
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const Point& p = predictions[transpose ? c : r];
        const Point& g = ground_truth[transpose ? r : c];
        const double d = std::hypot(p.x - g.x, p.y - g.y);
        cost[r][c] = d <= tolerance ? d : sentinel;
      }
    }
    const auto assignment = hungarian_assignment(cost);
    for (int r = 0; r < rows; ++r) {
      const int c = assignment[r];
      if (c < 0 || cost[r][c] > tolerance) continue;
      const int pi = transpose ? c : r, gi = transpose ? r : c;
      result.pairs.emplace_back(pi, gi);
      result.total_distance += cost[r][c];
    }
    std::sort(result.pairs.begin(), result.pairs.end());
  }
  result.tp = static_cast<int>(result.pairs.size());
  result.fp = np - result.tp;
  result.fn = ng - result.tp;
  return result;
}

double f1_score(double precision, double recall) {
  return precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

EvalReport compute_metrics(const std::vector<MatchResult>& matches,
                           const std::vector<std::pair<double, double>>& counts) {
  if (counts.empty()) throw InvalidArgument("compute_metrics needs at least one image");
  if (!matches.empty() && matches.size() != counts.size()) {
    throw InvalidArgument("match results and counts cover different image sets");
  }
  EvalReport report;
  long tp = 0, fp = 0, fn = 0;
  double abs_error = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    ImageRecord rec;
    rec.id = std::to_string(i);
    rec.predicted_count = counts[i].first;
    rec.true_count = counts[i].second;
    if (!matches.empty()) {
      rec.tp = matches[i].tp;
      rec.fp = matches[i].fp;
      rec.fn = matches[i].fn;
    }
    tp += rec.tp;
    fp += rec.fp;
    fn += rec.fn;
    abs_error += std::abs(rec.predicted_count - rec.true_count);
    report.images.push_back(rec);
  }
  report.mae = abs_error / static_cast<double>(counts.size());
  report.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  report.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  report.f1 = f1_score(report.precision, report.recall);
  return report;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"mae", r.mae},
       {"precision", r.precision},
       {"recall", r.recall},
       {"f1", r.f1},
       {"threshold", r.threshold},
       {"tolerance", r.tolerance},
       {"exemplar_count", r.exemplar_count},
       {"images", nlohmann::json::array()}};
  for (const auto& im : r.images) {
    j["images"].push_back({{"id", im.id},
                           {"predicted_count", im.predicted_count},
                           {"true_count", im.true_count},
                           {"tp", im.tp},
                           {"fp", im.fp},
                           {"fn", im.fn}});
  }
}

double select_threshold(const std::vector<SweepRow>& rows) {
  if (rows.empty()) throw InvalidArgument("no candidate thresholds");
  const SweepRow* best = &rows.front();
  for (const SweepRow& r : rows) {
    const bool better = r.f1 > best->f1 ||
                        (r.f1 == best->f1 && (r.recall > best->recall ||
                                              (r.recall == best->recall && r.threshold < best->threshold)));
    if (better) best = &r;
  }
  return best->threshold;
}

std::vector<SweepRow> threshold_sweep(const std::vector<ValidationItem>& items,
                                      const std::vector<double>& thresholds, double tolerance,
                                      double min_distance) {
  if (items.empty()) throw InvalidArgument("threshold sweep needs validation items");
  std::vector<SweepRow> rows;
  for (double t : thresholds) {
    std::vector<MatchResult> matches;
    std::vector<std::pair<double, double>> counts;
    for (const auto& item : items) {
      const auto set = detect_local_maxima(item.map, t, min_distance);
      std::vector<Point> preds;
      for (const auto& d : set.detections) preds.push_back({d.x, d.y});
      matches.push_back(match_detections(preds, item.ground_truth, tolerance));
      counts.emplace_back(static_cast<double>(preds.size()), static_cast<double>(item.ground_truth.size()));
    }
    const EvalReport r = compute_metrics(matches, counts);
    rows.push_back({t, r.precision, r.recall, r.f1, r.mae});
  }
  return rows;
}

double select_threshold(const std::vector<ValidationItem>& items, const std::vector<double>& thresholds,
                        double tolerance, double min_distance) {
  if (thresholds.empty()) throw InvalidArgument("no candidate thresholds");
  return select_threshold(threshold_sweep(items, thresholds, tolerance, min_distance));
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out.precision(8);
  out << "T,P,R,F1,MAE\n";
  for (const auto& r : rows) {
    out << r.threshold << ',' << r.precision << ',' << r.recall << ',' << r.f1 << ',' << r.mae << '\n';
  }
  return out.str();
}

MultiExemplarReport multi_exemplar_eval(GmnNetworkImpl& net, const std::vector<EvalImage>& test_set,
                                        const std::vector<ExemplarSource>& pool, int k,
                                        const CountOptions& options, double tolerance,
                                        std::uint64_t seed) {
  if (k <= 0) throw InvalidArgument("k must be positive");
  if (static_cast<int>(pool.size()) < k) {
    throw InvalidArgument("exemplar pool has " + std::to_string(pool.size()) + " entries, need " +
                          std::to_string(k));
  }
  if (test_set.empty()) throw InvalidArgument("empty test set");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(pool.size());

  std::vector<MatchResult> matches;
  std::vector<std::pair<double, double>> counts;
  std::vector<double> slot_error(k, 0.0);
  for (const EvalImage& item : test_set) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int slot = 0; slot < k; ++slot) {
      const ExemplarSource& ex = pool[order[slot]];
      const CountResult r = count(net, item.image, ex.image, ex.box, options);
      std::vector<Point> preds;
      for (const auto& d : r.detections) preds.push_back({d.x, d.y});
      matches.push_back(match_detections(preds, item.ground_truth, tolerance));
      const double truth = static_cast<double>(item.ground_truth.size());
      counts.emplace_back(r.count, truth);
      slot_error[slot] += std::abs(r.count - truth);
    }
  }

  MultiExemplarReport report;
  report.k = k;
  report.pooled = compute_metrics(matches, counts);
  report.pooled.threshold = options.threshold;
  report.pooled.tolerance = tolerance;
  report.pooled.exemplar_count = k;
  for (double e : slot_error) report.mae_per_exemplar.push_back(e / test_set.size());
  const auto& m = report.mae_per_exemplar;
  report.mae_mean = std::accumulate(m.begin(), m.end(), 0.0) / k;
  double var = 0.0;
  for (double e : m) var += (e - report.mae_mean) * (e - report.mae_mean);
  report.mae_std = std::sqrt(var / k);
  const auto [lo, hi] = std::minmax_element(m.begin(), m.end());
  report.mae_range = *hi - *lo;
  return report;
}

}  // namespace gmn
