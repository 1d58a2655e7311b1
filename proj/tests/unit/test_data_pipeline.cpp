#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "dor/data_pipeline.hpp"
#include "dor/errors.hpp"
#include "dor/news_encoder.hpp"

using namespace dor;
using namespace dor::data;

namespace {

const std::string kDir = DOR_FIXTURE_DIR;

std::vector<NewsArticle> news_from(const std::string& text, TextLimits limits = {}) {
  std::istringstream in(text);
  return parse_news(in, "test", limits);
}

std::vector<ImpressionRecord> behaviors_from(const std::string& text) {
  std::istringstream in(text);
  return parse_behaviors(in, "test");
}

FilteredData filter_fixture(FilterConfig cfg = {}) {
  return apply_filters(parse_behaviors_file(kDir + "/filter_behaviors.tsv"),
                       parse_news_file(kDir + "/filter_news.tsv"), cfg);
}

const NewsArticle& by_id(const std::vector<NewsArticle>& a, const std::string& id) {
  return *std::find_if(a.begin(), a.end(), [&](const NewsArticle& x) { return x.news_id == id; });
}

// n synthetic impressions, each from its own user, one candidate.
FilteredData synthetic(int n) {
  FilteredData d;
  d.articles = news_from("N1\tc\ts\ttitle\t\t\t[]\t[]\n");
  for (int i = 0; i < n; ++i)
    d.records.push_back({"I" + std::to_string(i), "U" + std::to_string(i), "t", {}, {{"N1", 1}}});
  return d;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "dor_data_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("tokenizer lowercases and strips punctuation") {
  CHECK(tokenize("The Market, RALLY!") == std::vector<std::string>{"the", "market", "rally"});
  CHECK(tokenize("  a\tb  & c ") == std::vector<std::string>{"a", "b", "c"});
  CHECK(tokenize("").empty());
  CHECK(tokenize("don't") == std::vector<std::string>{"dont"});
}

TEST_CASE("news fixture parsing") {
  std::ostringstream quiet;
  auto* old = std::cerr.rdbuf(quiet.rdbuf());
  const auto articles = parse_news_file(kDir + "/news_fixture.tsv");
  std::cerr.rdbuf(old);
  REQUIRE(articles.size() == 3);
  const auto& n100 = articles[0];
  CHECK(n100.title_entities == std::vector<std::string>{"Q1", "Q2"});
  CHECK(n100.title_tokens.size() == 20);
  CHECK(n100.title_tokens[0] == "the");
  CHECK(n100.title_tokens[5] == std::string(news::kPadToken));
  CHECK(n100.category == "finance");

  const auto& n101 = articles[1];
  CHECK(n101.abstract_tokens.size() == 50);
  CHECK(std::all_of(n101.abstract_tokens.begin(), n101.abstract_tokens.end(),
                    [](const std::string& t) { return t == news::kPadToken; }));

  const auto& n102 = articles[2];
  CHECK(n102.title_entities.empty());
  CHECK(n102.abstract_entities == std::vector<std::string>{"Q3"});
  CHECK(n102.entity_mentions() == std::vector<std::string>{"Q3"});
}

TEST_CASE("malformed entity JSON logs a warning") {
  std::ostringstream captured;
  auto* old = std::cerr.rdbuf(captured.rdbuf());
  const auto a = news_from("N1\tc\ts\tt\ta\tu\t{broken\t[]\n");
  std::cerr.rdbuf(old);
  CHECK(a[0].title_entities.empty());
  CHECK(captured.str().find("warning") != std::string::npos);
  CHECK(captured.str().find("test:1") != std::string::npos);
}

TEST_CASE("titles are truncated to the first 20 words") {
  const auto a = parse_news_file(kDir + "/filter_news.tsv");
  const auto& n1 = by_id(a, "N1");
  REQUIRE(n1.title_tokens.size() == 20);
  CHECK(n1.title_tokens.front() == "w01");
  CHECK(n1.title_tokens.back() == "w20");
  const auto& n2 = by_id(a, "N2");
  CHECK(n2.abstract_tokens.size() == 50);
  CHECK(n2.abstract_tokens.back() == "rise");
  for (const auto& x : a) {
    CHECK(x.title_tokens.size() == 20);
    CHECK(x.abstract_tokens.size() == 50);
  }
  const auto short_limits = news_from("N1\tc\ts\ta b c d\te f g\t\t[]\t[]\n", {2, 1});
  CHECK(short_limits[0].title_tokens == std::vector<std::string>{"a", "b"});
  CHECK(short_limits[0].abstract_tokens == std::vector<std::string>{"e"});
}

TEST_CASE("entity mentions keep the first occurrence") {
  const auto a = news_from(
      "N1\tc\ts\tt\ta\tu\t[{\"WikidataId\": \"Q2\"}, {\"WikidataId\": \"Q1\"}]\t[{\"WikidataId\": \"Q2\"}, "
      "{\"WikidataId\": \"Q7\"}]\n");
  CHECK(a[0].entity_mentions() == std::vector<std::string>{"Q2", "Q1", "Q7"});
}

TEST_CASE("news column errors carry the line number") {
  try {
    news_from("N1\tc\ts\tt\ta\tu\t[]\t[]\nN2\tonly\tthree\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(parse_news_file("/no/such/news.tsv"), DataError);
}

TEST_CASE("behaviour fixture parsing") {
  const auto r = parse_behaviors_file(kDir + "/behaviors_fixture.tsv");
  REQUIRE(r.size() == 2);
  CHECK(r[0].user_id == "U1");
  CHECK(r[0].history == std::vector<std::string>{"N101", "N102"});
  REQUIRE(r[0].candidates.size() == 3);
  CHECK(std::count_if(r[0].candidates.begin(), r[0].candidates.end(), [](auto& c) { return c.label == 1; }) == 1);
  CHECK(r[1].history.empty());
  CHECK(r[1].candidates[0] == Candidate{"N55689", 1});
  CHECK(r[1].candidates[1] == Candidate{"N35729", 0});
}

TEST_CASE("behaviour parse errors") {
  CHECK_THROWS_AS(behaviors_from("1\tU1\tt\t\tN1-2\n"), ParseError);
  CHECK_THROWS_AS(behaviors_from("1\tU1\tt\t\tN1\n"), ParseError);
  CHECK_THROWS_AS(behaviors_from("1\tU1\tt\tN1-1\n"), ParseError);
  try {
    behaviors_from("1\tU1\tt\t\tN1-1\n2\tU2\tt\t\tN1-x\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("filter fixture counts") {
  const auto f = filter_fixture();
  CHECK(f.records.size() == 10);
  CHECK(f.articles.size() == 53);
  std::set<std::string> ids;
  for (const auto& a : f.articles) ids.insert(a.news_id);
  for (const char* gone : {"N4", "N5", "N6"}) CHECK_FALSE(ids.contains(gone));
  for (const char* kept : {"N1", "N2", "N3"}) CHECK(ids.contains(kept));
  std::set<std::string> users;
  for (const auto& r : f.records) {
    users.insert(r.user_id);
    CHECK(r.candidates.size() == 3);
    for (const auto& h : r.history) CHECK(ids.contains(h));
    for (const auto& c : r.candidates) CHECK(ids.contains(c.news_id));
  }
  CHECK(users.size() == 10);
  CHECK_FALSE(users.contains("U11"));  // 49 distinct history items
  CHECK_FALSE(users.contains("U13"));
}

TEST_CASE("filter thresholds and boundaries") {
  const auto records = parse_behaviors_file(kDir + "/filter_behaviors.tsv");
  const auto articles = parse_news_file(kDir + "/filter_news.tsv");
  const auto identity = apply_filters(records, articles, {0, 0});
  CHECK(identity.records == records);
  CHECK(identity.articles == articles);

  // reader counts N1..N5 = 12, 11, 10, 9, 1
  const auto news_only = apply_filters(records, articles, {10, 0});
  std::set<std::string> ids;
  for (const auto& a : news_only.articles) ids.insert(a.news_id);
  CHECK(ids.count("N1") + ids.count("N2") + ids.count("N3") + ids.count("N4") + ids.count("N5") == 3);

  // history 50 vs 49 at threshold 50
  std::vector<ImpressionRecord> two;
  std::vector<std::string> h50, h49;
  for (int i = 0; i < 50; ++i) h50.push_back("F" + std::to_string(i));
  h49.assign(h50.begin(), h50.end() - 1);
  two.push_back({"1", "A", "t", h50, {{"F0", 1}}});
  two.push_back({"2", "B", "t", h49, {{"F0", 1}}});
  std::string tsv;
  for (const auto& id : h50) tsv += id + "\tc\ts\tt\t\t\t[]\t[]\n";
  const auto kept = apply_filters(two, news_from(tsv), {0, 50});
  REQUIRE(kept.records.size() == 1);
  CHECK(kept.records[0].user_id == "A");

  CHECK_THROWS_AS(apply_filters(records, articles, {1000, 0}), DataError);
  CHECK_THROWS_AS(apply_filters(records, articles, {-1, 0}), ConfigError);
}

TEST_CASE("filters are idempotent on the fixture and per stage") {
  const auto once = filter_fixture();
  const auto twice = apply_filters(once.records, once.articles, {});
  CHECK(twice.records == once.records);
  CHECK(twice.articles == once.articles);

  // each stage on its own is a fixed point
  const auto records = parse_behaviors_file(kDir + "/filter_behaviors.tsv");
  const auto articles = parse_news_file(kDir + "/filter_news.tsv");
  for (FilterConfig cfg : {FilterConfig{10, 0}, FilterConfig{3, 0}, FilterConfig{0, 50}, FilterConfig{0, 10}}) {
    const auto a = apply_filters(records, articles, cfg);
    const auto b = apply_filters(a.records, a.articles, cfg);
    CHECK(b.records == a.records);
    CHECK(b.articles == a.articles);
  }
}

TEST_CASE("split sizes and determinism") {
  const auto ten = split_dataset(synthetic(10), 0.8, 1);
  CHECK(ten.train.size() == 8);
  CHECK(ten.test.size() == 2);
  const auto eleven = split_dataset(synthetic(11), 0.8, 1);
  CHECK(eleven.train.size() == 8);
  CHECK(eleven.test.size() == 3);

  const auto again = split_dataset(synthetic(10), 0.8, 1);
  CHECK(again.train == ten.train);
  CHECK(again.test == ten.test);
  std::set<std::string> seen;
  for (const auto& r : ten.train) seen.insert(r.impression_id);
  for (const auto& r : ten.test) CHECK(seen.insert(r.impression_id).second);
  CHECK(seen.size() == 10);

  bool differs = false;
  for (std::uint64_t s = 2; s < 10 && !differs; ++s) differs = split_dataset(synthetic(10), 0.8, s).test != ten.test;
  CHECK(differs);

  CHECK_THROWS_AS(split_dataset(synthetic(4), 0.8, 1), DataError);
  CHECK_THROWS_AS(split_dataset(synthetic(10), 1.0, 1), ConfigError);
}

TEST_CASE("split statistics on the filter fixture") {
  const auto s = split_dataset(filter_fixture(), 0.8, 1);
  CHECK(s.stats.users == 10);
  CHECK(s.stats.behaviours == 10);
  CHECK(s.stats.news == 53);
  CHECK(s.stats.words == 76);
  CHECK(s.stats.entities == 3);
  CHECK(s.stats.train == 8);
  CHECK(s.stats.test == 2);
  CHECK(s.entities == std::vector<std::string>{"Q1", "Q2", "Q3"});
  CHECK(std::find(s.words.begin(), s.words.end(), std::string(news::kPadToken)) == s.words.end());
}

TEST_CASE("parse, serialise, parse round-trips") {
  const auto articles = parse_news_file(kDir + "/filter_news.tsv");
  const auto records = parse_behaviors_file(kDir + "/filter_behaviors.tsv");
  std::stringstream news_buf, beh_buf;
  write_news(news_buf, articles);
  write_behaviors(beh_buf, records);
  CHECK(parse_news(news_buf) == articles);
  CHECK(parse_behaviors(beh_buf) == records);

  std::ostringstream quiet;
  auto* old = std::cerr.rdbuf(quiet.rdbuf());
  const auto fixture = parse_news_file(kDir + "/news_fixture.tsv");
  std::cerr.rdbuf(old);
  std::stringstream again;
  write_news(again, fixture);
  CHECK(parse_news(again) == fixture);
}

TEST_CASE("dataset cache round-trip and version check") {
  const auto split = split_dataset(filter_fixture(), 0.8, 3);
  const auto path = temp_path("cache.txt");
  save_cache(path, split);
  CHECK(load_cache(path) == split);

  std::ifstream in(path);
  std::stringstream body;
  body << in.rdbuf();
  std::string text = body.str();
  REQUIRE(text.rfind("DORCACHE 1\n", 0) == 0);
  const auto bumped = temp_path("cache_v2.txt");
  std::ofstream(bumped) << "DORCACHE 2\n" << text.substr(11);
  CHECK_THROWS_AS(load_cache(bumped), DataError);
  const auto junk = temp_path("junk.txt");
  std::ofstream(junk) << "hello\n";
  CHECK_THROWS_AS(load_cache(junk), DataError);
  const auto cut = temp_path("cut.txt");
  std::ofstream(cut) << text.substr(0, text.size() / 2);
  CHECK_THROWS_AS(load_cache(cut), DataError);
  CHECK_THROWS_AS(load_cache(temp_path("missing.txt")), DataError);
}
