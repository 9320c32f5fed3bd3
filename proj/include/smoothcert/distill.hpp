#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "smoothcert/mcbounds.hpp"
#include "smoothcert/net.hpp"
#include "smoothcert/rng.hpp"

namespace smoothcert {

enum class QueryMode { kLogits, kLabelOnly };

struct BudgetError : std::runtime_error {
  long long spent;
  BudgetError(const std::string& msg, long long spent_queries)
      : std::runtime_error(msg + " (queries spent: " + std::to_string(spent_queries) + ")"),
        spent(spent_queries) {}
};

// Query-counted wrapper around a classifier. A query that would exceed the
// remaining budget throws before consuming anything, so spent + remaining
// always equals the initial budget. Label-only mode never exposes logits.
class BlackBoxHandle {
 public:
  BlackBoxHandle(Classifier model, long long budget, QueryMode mode = QueryMode::kLogits)
      : model_(std::move(model)), budget_(budget), mode_(mode) {
    if (budget_ < 0) throw std::invalid_argument("BlackBoxHandle: budget must be >= 0");
  }

  std::vector<std::vector<double>> query_logits(const std::vector<std::vector<double>>& batch) {
    if (mode_ != QueryMode::kLogits) {
      throw std::logic_error("BlackBoxHandle: logits are not available in label-only mode");
    }
    charge(batch.size());
    std::vector<std::vector<double>> out;
    out.reserve(batch.size());
    for (const auto& x : batch) out.push_back(model_(x));
    return out;
  }

  std::vector<int> query_labels(const std::vector<std::vector<double>>& batch) {
    charge(batch.size());
    std::vector<int> out;
    out.reserve(batch.size());
    for (const auto& x : batch) out.push_back(argmax_lowest(model_(x)));
    return out;
  }

  long long spent() const { return spent_; }
  long long remaining() const { return budget_ - spent_; }
  QueryMode mode() const { return mode_; }

 private:
  void charge(std::size_t k) {
    if (spent_ + static_cast<long long>(k) > budget_) {
      throw BudgetError("BlackBoxHandle: query budget exhausted", spent_);
    }
    spent_ += static_cast<long long>(k);
  }

  Classifier model_;
  long long budget_;
  long long spent_ = 0;
  QueryMode mode_;
};

struct DistillReport {
  double agreement = std::numeric_limits<double>::quiet_NaN();
  double student_accuracy = std::numeric_limits<double>::quiet_NaN();
  double teacher_accuracy = std::numeric_limits<double>::quiet_NaN();
  double accuracy_ratio = std::numeric_limits<double>::quiet_NaN();
  long long queries_spent = 0;
  std::vector<double> loss_history;
  bool truncated = false;
};

// Fraction of inputs on which two classifiers pick the same class.
inline double agreement(const Classifier& a, const Classifier& b,
                        const std::vector<std::vector<double>>& inputs) {
  if (inputs.empty()) throw std::invalid_argument("agreement: empty input set");
  long long same = 0;
  for (const auto& x : inputs) {
    if (argmax_lowest(a(x)) == argmax_lowest(b(x))) ++same;
  }
  return static_cast<double>(same) / static_cast<double>(inputs.size());
}

// 100 * student accuracy / teacher accuracy on a labeled set.
inline double accuracy_ratio(const Classifier& student, const Classifier& teacher,
                             const std::vector<std::vector<double>>& xs,
                             const std::vector<int>& labels) {
  if (xs.empty() || xs.size() != labels.size()) {
    throw std::invalid_argument("accuracy_ratio: empty or mismatched dataset");
  }
  long long s_hits = 0, t_hits = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (argmax_lowest(student(xs[i])) == labels[i]) ++s_hits;
    if (argmax_lowest(teacher(xs[i])) == labels[i]) ++t_hits;
  }
  if (t_hits == 0) throw std::invalid_argument("accuracy_ratio: teacher accuracy is zero");
  return 100.0 * static_cast<double>(s_hits) / static_cast<double>(t_hits);
}

struct DistillResult {
  DenseNetwork student;
  DistillReport report;
};

// Trains a student on teacher responses for up to `budget` transfer inputs.
// Teacher outputs are cached once, so epochs cost no extra queries. In
// logits mode the student minimizes the summed absolute logit gap; in
// label-only mode it falls back to cross-entropy on the queried labels. The
// last tenth of the cached inputs is held out for the agreement estimate.
// An exhausted handle mid-caching truncates the transfer set (flagged) as
// long as at least one full batch was cached; otherwise the budget error
// propagates.
inline DistillResult distill(BlackBoxHandle& handle,
                             const std::vector<std::vector<double>>& transfer_inputs,
                             const std::vector<int>& student_layers, long long budget,
                             const TrainConfig& cfg, Rng& rng,
                             const DenseNetwork* student_init = nullptr) {
  cfg.validate();
  if (budget < 1) throw std::invalid_argument("distill: budget must be >= 1");
  if (transfer_inputs.empty()) throw std::invalid_argument("distill: empty transfer set");

  long long spent_before = handle.spent();
  long long want = std::min<long long>(budget, static_cast<long long>(transfer_inputs.size()));
  if (want < cfg.batch_size) {
    throw BudgetError("distill: budget smaller than one batch", handle.spent());
  }

  // Cache teacher responses, one batch of queries at a time.
  std::vector<std::vector<double>> cached_inputs;
  std::vector<std::vector<double>> cached_logits;
  std::vector<int> cached_labels;
  bool truncated = false;
  for (long long start = 0; start < want; start += cfg.batch_size) {
    long long stop = std::min(want, start + cfg.batch_size);
    std::vector<std::vector<double>> chunk(transfer_inputs.begin() + start,
                                           transfer_inputs.begin() + stop);
    try {
      if (handle.mode() == QueryMode::kLogits) {
        std::vector<std::vector<double>> l = handle.query_logits(chunk);
        for (long long i = 0; i < stop - start; ++i) {
          cached_inputs.push_back(chunk[i]);
          cached_logits.push_back(std::move(l[i]));
        }
      } else {
        std::vector<int> l = handle.query_labels(chunk);
        for (long long i = 0; i < stop - start; ++i) {
          cached_inputs.push_back(chunk[i]);
          cached_labels.push_back(l[i]);
        }
      }
    } catch (const BudgetError&) {
      truncated = true;
      break;
    }
  }
  if (static_cast<long long>(cached_inputs.size()) < cfg.batch_size) {
    throw BudgetError("distill: too few cached queries for one batch", handle.spent());
  }

  // Hold out the tail for agreement; train on the rest.
  std::size_t holdout = cached_inputs.size() / 10;
  if (holdout == 0) holdout = 1;
  std::size_t train_n = cached_inputs.size() - holdout;
  if (train_n == 0) {
    train_n = cached_inputs.size();
    holdout = 0;
  }

  LossKind loss = handle.mode() == QueryMode::kLogits ? LossKind::kL1Logit : LossKind::kCrossEntropy;
  Batch data;
  data.inputs.assign(cached_inputs.begin(), cached_inputs.begin() + train_n);
  if (loss == LossKind::kL1Logit) {
    data.logit_targets.assign(cached_logits.begin(), cached_logits.begin() + train_n);
  } else {
    data.labels.assign(cached_labels.begin(), cached_labels.begin() + train_n);
  }

  TrainConfig local = cfg;
  local.loss = loss;
  DenseNetwork student = student_init != nullptr
                             ? *student_init
                             : DenseNetwork::init(student_layers, Activation::kRelu, draw_seed(rng));
  TrainResult tr = train(student, data, local);

  DistillResult out{std::move(tr.net), {}};
  out.report.loss_history = std::move(tr.loss_history);
  out.report.queries_spent = handle.spent() - spent_before;
  out.report.truncated = truncated;

  // Agreement against the cached teacher answers on the held-out tail (the
  // full cache when there is no tail), costing no further queries.
  std::size_t agree_begin = holdout > 0 ? train_n : 0;
  long long same = 0;
  long long total = 0;
  for (std::size_t i = agree_begin; i < cached_inputs.size(); ++i) {
    int teacher_pick = loss == LossKind::kL1Logit ? argmax_lowest(cached_logits[i]) : cached_labels[i];
    if (argmax_lowest(out.student.forward(cached_inputs[i])) == teacher_pick) ++same;
    ++total;
  }
  out.report.agreement = static_cast<double>(same) / static_cast<double>(total);
  return out;
}

// Fills the accuracy fields of a report from a labeled evaluation set.
inline void fill_accuracy(DistillReport& report, const Classifier& student,
                          const Classifier& teacher, const std::vector<std::vector<double>>& xs,
                          const std::vector<int>& labels) {
  if (xs.empty() || xs.size() != labels.size()) {
    throw std::invalid_argument("fill_accuracy: empty or mismatched dataset");
  }
  long long s_hits = 0, t_hits = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (argmax_lowest(student(xs[i])) == labels[i]) ++s_hits;
    if (argmax_lowest(teacher(xs[i])) == labels[i]) ++t_hits;
  }
  double n = static_cast<double>(xs.size());
  report.student_accuracy = s_hits / n;
  report.teacher_accuracy = t_hits / n;
  if (t_hits == 0) throw std::invalid_argument("fill_accuracy: teacher accuracy is zero");
  report.accuracy_ratio = 100.0 * static_cast<double>(s_hits) / static_cast<double>(t_hits);
}

}  // namespace smoothcert
