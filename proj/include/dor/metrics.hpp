#pragma once

// Impression-grouped ranking metrics. Each impression is scored on its own
// and the dataset value is the unweighted mean over impressions for which the
// metric is defined.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dor::eval {

// (#concordant + 0.5 #ties) / (#pos * #neg); nullopt unless both classes occur.
std::optional<double> auc(std::span<const double> scores, std::span<const int> labels);

// Labels reordered by descending score; equal scores ordered by ascending id.
std::vector<int> rank_labels(std::span<const double> scores, std::span<const int> labels,
                             std::span<const std::string> ids);

// Mean of 1/rank over clicked items; nullopt without a click.
std::optional<double> mrr(std::span<const int> ranked_labels);
// DCG@k / IDCG@k with binary gains; nullopt without a click.
std::optional<double> ndcg_at_k(std::span<const int> ranked_labels, int k);

struct ScoredImpression {
  std::string impression_id;
  std::vector<std::string> news_ids;
  std::vector<double> scores;
  std::vector<int> labels;
};

struct ImpressionMetrics {
  std::string impression_id;
  std::optional<double> auc, mrr, ndcg5, ndcg10;
};

// Dataset values are percentages (x100). Rounding to two decimals happens
// only when reports are written.
struct MetricReport {
  double auc = 0.0;
  double mrr = 0.0;
  double ndcg5 = 0.0;
  double ndcg10 = 0.0;
  std::size_t impressions = 0;
  std::size_t auc_excluded = 0;   // single-class impressions
  std::size_t rank_excluded = 0;  // impressions without a click
  std::vector<ImpressionMetrics> rows;

  bool operator==(const MetricReport& other) const;
};

MetricReport compute_report(std::span<const ScoredImpression> impressions);

// tag,auc,mrr,ndcg5,ndcg10,impressions,auc_excluded,rank_excluded
void write_report_header(std::ostream& out);
void write_report_row(std::ostream& out, const std::string& tag, const MetricReport& report);
// impression_id,auc,mrr,ndcg5,ndcg10 (percentages, empty when undefined)
void write_detail_csv(std::ostream& out, const MetricReport& report);

}  // namespace dor::eval
