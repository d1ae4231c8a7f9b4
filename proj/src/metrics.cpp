#include "clspool/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clspool/errors.hpp"

namespace clspool {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* metric) {
  if (a != b) {
    throw MetricError(std::string(metric) + ": length mismatch (" + std::to_string(a) + " vs " + std::to_string(b) +
                      ")");
  }
  if (a == 0) throw MetricError(std::string(metric) + ": empty input");
}

struct Confusion {
  double tp = 0, tn = 0, fp = 0, fn = 0;
};

Confusion confusion(std::span<const int> preds, std::span<const int> labels, const char* metric) {
  check_lengths(preds.size(), labels.size(), metric);
  Confusion c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if ((labels[i] != 0 && labels[i] != 1) || (preds[i] != 0 && preds[i] != 1)) {
      throw MetricError(std::string(metric) + ": binary labels expected");
    }
    const bool p = preds[i] == 1, y = labels[i] == 1;
    if (p && y) c.tp += 1;
    else if (!p && !y) c.tn += 1;
    else if (p) c.fp += 1;
    else c.fn += 1;
  }
  return c;
}

}  // namespace

double accuracy(std::span<const int> preds, std::span<const int> labels) {
  check_lengths(preds.size(), labels.size(), "accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double f1_binary(std::span<const int> preds, std::span<const int> labels) {
  const Confusion c = confusion(preds, labels, "f1");
  const double precision = c.tp + c.fp > 0 ? c.tp / (c.tp + c.fp) : 0.0;
  const double recall = c.tp + c.fn > 0 ? c.tp / (c.tp + c.fn) : 0.0;
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double matthews_corr(std::span<const int> preds, std::span<const int> labels) {
  const Confusion c = confusion(preds, labels, "mcc");
  const double denom = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn);
  if (denom == 0.0) return 0.0;
  return (c.tp * c.tn - c.fp * c.fn) / std::sqrt(denom);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    // positions i..j (0-based) share ranks i+1..j+1
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t m = i; m <= j; ++m) ranks[order[m]] = avg;
    i = j + 1;
  }
  return ranks;
}

Correlation spearman_rho(std::span<const double> x, std::span<const double> y) {
  check_lengths(x.size(), y.size(), "spearman");
  if (x.size() < 2) throw MetricError("spearman: at least two observations required");
  const std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return {0.0, true};
  return {sxy / std::sqrt(sxx * syy), false};
}

SeedAggregate aggregate_seeds(std::span<const double> values) {
  if (values.size() < 2) throw MetricError("aggregate_seeds needs at least two values");
  SeedAggregate agg;
  agg.values.assign(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  agg.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0;
  for (double v : values) ss += (v - agg.mean) * (v - agg.mean);
  agg.std = std::sqrt(ss / n);
  // keep the mean inside [min, max] despite rounding
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  agg.mean = std::clamp(agg.mean, *lo, *hi);
  return agg;
}

}  // namespace clspool
