#pragma once

// MIND-format ingestion: news and behaviour TSV parsing, reader/history
// filters, seeded 80:20 impression split and the processed-dataset cache.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace dor::data {

struct TextLimits {
  int title_len = 20;
  int abstract_len = 50;
};

struct NewsArticle {
  std::string news_id;
  std::string category;
  std::string subcategory;
  std::vector<std::string> title_tokens;     // exactly title_len, padded with news::kPadToken
  std::vector<std::string> abstract_tokens;  // exactly abstract_len
  std::vector<std::string> title_entities;   // Wikidata ids in order of appearance
  std::vector<std::string> abstract_entities;

  // Title then abstract mentions, first occurrence kept.
  std::vector<std::string> entity_mentions() const;
  bool operator==(const NewsArticle&) const = default;
};

struct Candidate {
  std::string news_id;
  int label = 0;

  bool operator==(const Candidate&) const = default;
};

struct ImpressionRecord {
  std::string impression_id;
  std::string user_id;
  std::string time;
  std::vector<std::string> history;  // clicked news ids, oldest first
  std::vector<Candidate> candidates;

  bool operator==(const ImpressionRecord&) const = default;
};

// Lowercase, drop ASCII punctuation, split on whitespace.
std::vector<std::string> tokenize(std::string_view text);

// Columns: news_id, category, subcategory, title, abstract, url,
// title_entities (JSON), abstract_entities (JSON). Malformed entity JSON
// degrades to an empty list with a warning on stderr.
std::vector<NewsArticle> parse_news(std::istream& in, const std::string& source = "<stream>",
                                    TextLimits limits = {});
std::vector<NewsArticle> parse_news_file(const std::filesystem::path& path, TextLimits limits = {});

// Columns: impression_id, user_id, time, history, impressions.
std::vector<ImpressionRecord> parse_behaviors(std::istream& in, const std::string& source = "<stream>");
std::vector<ImpressionRecord> parse_behaviors_file(const std::filesystem::path& path);

void write_news(std::ostream& out, const std::vector<NewsArticle>& articles);
void write_behaviors(std::ostream& out, const std::vector<ImpressionRecord>& records);

struct FilterConfig {
  int min_readers = 10;
  int min_history = 50;
};

struct FilteredData {
  std::vector<NewsArticle> articles;
  std::vector<ImpressionRecord> records;
};

// News with fewer than min_readers distinct clicking readers (history
// membership or a label-1 candidate) are removed everywhere, then users whose
// distinct history is shorter than min_history are dropped. One pass.
// Throws DataError when no impression survives.
FilteredData apply_filters(const std::vector<ImpressionRecord>& records,
                           const std::vector<NewsArticle>& articles, FilterConfig config = {});

struct DatasetStatistics {
  std::size_t users = 0;
  std::size_t behaviours = 0;
  std::size_t words = 0;
  std::size_t entities = 0;
  std::size_t news = 0;
  std::size_t train = 0;
  std::size_t test = 0;
  int max_title_words = 0;
  int max_abstract_words = 0;

  bool operator==(const DatasetStatistics&) const = default;
};

struct DatasetSplit {
  std::vector<NewsArticle> articles;
  std::vector<ImpressionRecord> train;
  std::vector<ImpressionRecord> test;
  std::vector<std::string> words;     // distinct tokens, first-seen order
  std::vector<std::string> entities;  // distinct mentions, first-seen order
  DatasetStatistics stats;

  bool operator==(const DatasetSplit&) const = default;
};

// Seeded shuffle, then the first floor(ratio * n) records train.
// Throws DataError for fewer than 5 records.
DatasetSplit split_dataset(const FilteredData& data, double ratio, std::uint64_t seed, TextLimits limits = {});

// Cache file: the line "DORCACHE <version>" followed by a JSON document.
inline constexpr int kCacheVersion = 1;
void save_cache(const std::filesystem::path& path, const DatasetSplit& split);
DatasetSplit load_cache(const std::filesystem::path& path);

}  // namespace dor::data
