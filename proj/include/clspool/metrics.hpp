#pragma once

#include <span>
#include <string>
#include <vector>

namespace clspool {

struct EvalResult {
  std::string metric;
  double value = 0.0;
  std::size_t n_examples = 0;
};

double accuracy(std::span<const int> preds, std::span<const int> labels);

// Positive class is 1; 0 when precision + recall is 0.
double f1_binary(std::span<const int> preds, std::span<const int> labels);

// 0 when any marginal of the confusion matrix is empty.
double matthews_corr(std::span<const int> preds, std::span<const int> labels);

struct Correlation {
  double value = 0.0;
  bool undefined = false;  // a rank vector had zero variance; value is then 0
};

// Pearson correlation of average ranks.
Correlation spearman_rho(std::span<const double> x, std::span<const double> y);

// Fractional ranks starting at 1; tied entries share their average rank.
std::vector<double> average_ranks(std::span<const double> values);

struct SeedAggregate {
  std::vector<double> values;
  double mean = 0.0;
  double std = 0.0;  // population (divide by n)
};

// Requires at least two values.
SeedAggregate aggregate_seeds(std::span<const double> values);

}  // namespace clspool
