#include "dor/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "dor/errors.hpp"

namespace dor::eval {

std::optional<double> auc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), "auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U with average ranks for ties.
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        positive_rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;
  const double np = static_cast<double>(positives);
  return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(negatives));
}

std::vector<int> rank_labels(std::span<const double> scores, std::span<const int> labels,
                             std::span<const std::string> ids) {
  require(scores.size() == labels.size() && scores.size() == ids.size(),
          "rank_labels: inputs differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  std::vector<int> ranked;
  ranked.reserve(order.size());
  for (const std::size_t i : order) ranked.push_back(labels[i]);
  return ranked;
}

std::optional<double> mrr(std::span<const int> ranked_labels) {
  double total = 0.0;
  std::size_t clicks = 0;
  for (std::size_t i = 0; i < ranked_labels.size(); ++i) {
    if (ranked_labels[i] != 1) continue;
    total += 1.0 / static_cast<double>(i + 1);
    ++clicks;
  }
  if (clicks == 0) return std::nullopt;
  return total / static_cast<double>(clicks);
}

std::optional<double> ndcg_at_k(std::span<const int> ranked_labels, int k) {
  require(k > 0, "ndcg cutoff must be positive");
  auto dcg = [k](std::span<const int> labels) {
    double total = 0.0;
    const std::size_t limit = std::min(labels.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < limit; ++i)
      total += static_cast<double>(labels[i]) / std::log2(static_cast<double>(i) + 2.0);
    return total;
  };
  std::vector<int> ideal(ranked_labels.begin(), ranked_labels.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double best = dcg(ideal);
  if (best == 0.0) return std::nullopt;
  return dcg(ranked_labels) / best;
}

bool MetricReport::operator==(const MetricReport& o) const {
  if (auc != o.auc || mrr != o.mrr || ndcg5 != o.ndcg5 || ndcg10 != o.ndcg10 ||
      impressions != o.impressions || auc_excluded != o.auc_excluded ||
      rank_excluded != o.rank_excluded || rows.size() != o.rows.size())
    return false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& a = rows[i];
    const auto& b = o.rows[i];
    if (a.impression_id != b.impression_id || a.auc != b.auc || a.mrr != b.mrr || a.ndcg5 != b.ndcg5 ||
        a.ndcg10 != b.ndcg10)
      return false;
  }
  return true;
}

MetricReport compute_report(std::span<const ScoredImpression> impressions) {
  MetricReport report;
  double auc_sum = 0.0, mrr_sum = 0.0, n5_sum = 0.0, n10_sum = 0.0;
  std::size_t auc_n = 0, rank_n = 0;
  for (const auto& imp : impressions) {
    ImpressionMetrics row;
    row.impression_id = imp.impression_id;
    row.auc = auc(imp.scores, imp.labels);
    const auto ranked = rank_labels(imp.scores, imp.labels, imp.news_ids);
    row.mrr = mrr(ranked);
    row.ndcg5 = ndcg_at_k(ranked, 5);
    row.ndcg10 = ndcg_at_k(ranked, 10);
    if (row.auc) {
      auc_sum += *row.auc;
      ++auc_n;
    } else {
      ++report.auc_excluded;
    }
    if (row.mrr) {
      mrr_sum += *row.mrr;
      n5_sum += *row.ndcg5;
      n10_sum += *row.ndcg10;
      ++rank_n;
    } else {
      ++report.rank_excluded;
    }
    report.rows.push_back(std::move(row));
  }
  report.impressions = impressions.size();
  if (auc_n > 0) report.auc = 100.0 * auc_sum / static_cast<double>(auc_n);
  if (rank_n > 0) {
    report.mrr = 100.0 * mrr_sum / static_cast<double>(rank_n);
    report.ndcg5 = 100.0 * n5_sum / static_cast<double>(rank_n);
    report.ndcg10 = 100.0 * n10_sum / static_cast<double>(rank_n);
  }
  return report;
}

namespace {

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string optional_percent(const std::optional<double>& v) { return v ? fixed2(100.0 * *v) : ""; }

}  // namespace

void write_report_header(std::ostream& out) {
  out << "tag,auc,mrr,ndcg5,ndcg10,impressions,auc_excluded,rank_excluded\n";
}

void write_report_row(std::ostream& out, const std::string& tag, const MetricReport& r) {
  out << tag << ',' << fixed2(r.auc) << ',' << fixed2(r.mrr) << ',' << fixed2(r.ndcg5) << ','
      << fixed2(r.ndcg10) << ',' << r.impressions << ',' << r.auc_excluded << ',' << r.rank_excluded << '\n';
}

void write_detail_csv(std::ostream& out, const MetricReport& report) {
  out << "impression_id,auc,mrr,ndcg5,ndcg10\n";
  for (const auto& row : report.rows) {
    out << row.impression_id << ',' << optional_percent(row.auc) << ',' << optional_percent(row.mrr) << ','
        << optional_percent(row.ndcg5) << ',' << optional_percent(row.ndcg10) << '\n';
  }
}

}  // namespace dor::eval
