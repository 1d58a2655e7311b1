#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "common/metric_oracle.hpp"
#include "doctest.h"
#include "dor/metrics.hpp"

using namespace dor::eval;
using namespace dor::testing;

namespace {

void check_close(const std::optional<double>& a, const std::optional<double>& b) {
  REQUIRE(a.has_value() == b.has_value());
  if (a) CHECK(std::abs(*a - *b) < 1e-9);
}

}  // namespace

TEST_CASE("auc hand examples") {
  CHECK(*auc(std::vector<double>{0.8, 0.2}, std::vector<int>{1, 0}) == 1.0);
  CHECK(*auc(std::vector<double>{0.2, 0.8}, std::vector<int>{1, 0}) == 0.0);
  CHECK(*auc(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}) == 0.5);
  CHECK_FALSE(auc(std::vector<double>{0.5, 0.1}, std::vector<int>{1, 1}).has_value());
  CHECK_FALSE(auc(std::vector<double>{0.5}, std::vector<int>{0}).has_value());
}

TEST_CASE("mrr hand examples") {
  CHECK(*mrr(std::vector<int>{0, 1, 0}) == 0.5);
  CHECK(*mrr(std::vector<int>{1, 0, 0, 1}) == 0.625);
  CHECK(*mrr(std::vector<int>{1}) == 1.0);
  CHECK_FALSE(mrr(std::vector<int>{0, 0}).has_value());
}

TEST_CASE("ndcg hand examples") {
  CHECK(*ndcg_at_k(std::vector<int>{1, 0, 0}, 5) == 1.0);
  CHECK(*ndcg_at_k(std::vector<int>{0, 1}, 5) == doctest::Approx(0.6309297536));
  CHECK(*ndcg_at_k(std::vector<int>{1, 1, 1}, 5) == 1.0);
  CHECK(*ndcg_at_k(std::vector<int>{0, 0, 0, 0, 0, 1}, 5) == 0.0);
  CHECK(*ndcg_at_k(std::vector<int>{0, 0, 0, 0, 0, 1}, 10) == doctest::Approx(1.0 / std::log2(7.0)));
  CHECK_FALSE(ndcg_at_k(std::vector<int>{0}, 5).has_value());
}

TEST_CASE("ranking breaks ties by ascending id") {
  const std::vector<double> s{0.3, 0.9, 0.3, 0.3};
  const std::vector<int> y{1, 0, 0, 1};
  const std::vector<std::string> ids{"N3", "N9", "N1", "N2"};
  // order: N9, N1, N2, N3
  CHECK(rank_labels(s, y, ids) == std::vector<int>{0, 0, 1, 1});
}

TEST_CASE("metrics agree with brute-force oracles") {
  std::mt19937_64 rng(2024);
  std::vector<ScoredImpression> all;
  for (int i = 0; i < 200; ++i) {
    const auto imp = random_impression(rng, i);
    const auto ranked = rank_labels(imp.scores, imp.labels, imp.news_ids);
    check_close(auc(imp.scores, imp.labels), oracle_auc(imp.scores, imp.labels));
    check_close(mrr(ranked), oracle_mrr(imp.scores, imp.labels, imp.news_ids));
    check_close(ndcg_at_k(ranked, 5), oracle_ndcg(imp.scores, imp.labels, imp.news_ids, 5));
    check_close(ndcg_at_k(ranked, 10), oracle_ndcg(imp.scores, imp.labels, imp.news_ids, 10));
    all.push_back(imp);
  }

  const auto report = compute_report(all);
  double auc_sum = 0.0, mrr_sum = 0.0;
  std::size_t auc_n = 0, rank_n = 0;
  for (const auto& imp : all) {
    if (auto a = oracle_auc(imp.scores, imp.labels)) {
      auc_sum += *a;
      ++auc_n;
    }
    if (auto m = oracle_mrr(imp.scores, imp.labels, imp.news_ids)) {
      mrr_sum += *m;
      ++rank_n;
    }
  }
  CHECK(report.impressions == 200);
  CHECK(report.auc_excluded == 200 - auc_n);
  CHECK(report.rank_excluded == 200 - rank_n);
  CHECK(std::abs(report.auc - 100.0 * auc_sum / auc_n) < 1e-9);
  CHECK(std::abs(report.mrr - 100.0 * mrr_sum / rank_n) < 1e-9);
  for (double v : {report.auc, report.mrr, report.ndcg5, report.ndcg10}) {
    CHECK(v >= 0.0);
    CHECK(v <= 100.0);
  }
}

TEST_CASE("metrics are invariant under increasing transforms") {
  std::mt19937_64 rng(7);
  std::vector<ScoredImpression> base, mapped, logistic;
  for (int i = 0; i < 50; ++i) {
    auto imp = random_impression(rng, i);
    base.push_back(imp);
    for (double& s : imp.scores) s = 3.0 * s * s * s + 5.0;
    mapped.push_back(imp);
    for (double& s : imp.scores) s = std::exp(s);
    logistic.push_back(imp);
  }
  const auto a = compute_report(base);
  CHECK(compute_report(mapped) == a);
  CHECK(compute_report(logistic) == a);
}

TEST_CASE("perfect and anti-perfect scorers") {
  std::vector<ScoredImpression> perfect, anti;
  for (int i = 0; i < 5; ++i) {
    ScoredImpression imp{"I" + std::to_string(i), {"N1", "N2", "N3", "N4"}, {}, {0, 1, 0, 0}};
    for (int l : imp.labels) imp.scores.push_back(l);
    perfect.push_back(imp);
    for (double& s : imp.scores) s = -s;
    anti.push_back(imp);
  }
  const auto p = compute_report(perfect);
  CHECK(p.auc == 100.0);
  CHECK(p.mrr == 100.0);
  CHECK(p.ndcg5 == 100.0);
  CHECK(p.ndcg10 == 100.0);
  CHECK(compute_report(anti).auc == 0.0);
}

TEST_CASE("report files") {
  ScoredImpression a{"I1", {"N1", "N2"}, {0.9, 0.1}, {1, 0}};
  ScoredImpression b{"I2", {"N1", "N2"}, {0.9, 0.1}, {0, 0}};
  const std::vector<ScoredImpression> imps{a, b};
  const auto report = compute_report(imps);
  std::ostringstream out;
  write_report_header(out);
  write_report_row(out, "run", report);
  CHECK(out.str() ==
        "tag,auc,mrr,ndcg5,ndcg10,impressions,auc_excluded,rank_excluded\n"
        "run,100.00,100.00,100.00,100.00,2,1,1\n");
  std::ostringstream detail;
  write_detail_csv(detail, report);
  CHECK(detail.str() == "impression_id,auc,mrr,ndcg5,ndcg10\nI1,100.00,100.00,100.00,100.00\nI2,,,,\n");
}
