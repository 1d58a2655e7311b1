#include "dor/data_pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "dor/errors.hpp"
#include "dor/news_encoder.hpp"
#include "dor/random.hpp"
#include "json.hpp"

namespace dor::data {

using nlohmann::json;

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  while (true) {
    const auto tab = line.find('\t');
    fields.push_back(line.substr(0, tab));
    if (tab == std::string_view::npos) break;
    line.remove_prefix(tab + 1);
  }
  return fields;
}

std::vector<std::string> split_spaces(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string item;
  while (in >> item) out.push_back(item);
  return out;
}

std::vector<std::string> fixed_length(std::vector<std::string> tokens, int length) {
  tokens.resize(static_cast<std::size_t>(length), std::string(news::kPadToken));
  return tokens;
}

std::vector<std::string> parse_entities(std::string_view field, const std::string& source,
                                        std::size_t line_no) {
  std::vector<std::string> out;
  if (field.empty()) return out;
  try {
    const json doc = json::parse(field);
    if (!doc.is_array()) throw std::runtime_error("entity field is not a JSON list");
    for (const auto& item : doc) {
      if (!item.is_object() || !item.contains("WikidataId") || !item["WikidataId"].is_string())
        throw std::runtime_error("entity entry without a WikidataId string");
      out.push_back(item["WikidataId"].get<std::string>());
    }
  } catch (const std::exception& e) {
    std::cerr << "warning: " << source << ":" << line_no << ": malformed entity list ignored ("
              << e.what() << ")\n";
    out.clear();
  }
  return out;
}

std::string join_real(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (t == news::kPadToken) continue;
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::string entities_json(const std::vector<std::string>& ids) {
  json arr = json::array();
  for (const auto& id : ids) arr.push_back(json{{"WikidataId", id}});
  return arr.dump();
}

std::ifstream open_input(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw DataError(std::string("cannot open ") + what + " file " + path.string());
  return in;
}

}  // namespace

std::vector<std::string> NewsArticle::entity_mentions() const {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto* list : {&title_entities, &abstract_entities})
    for (const auto& e : *list)
      if (seen.insert(e).second) out.push_back(e);
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::ispunct(c)) continue;
    cleaned.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
  }
  return split_spaces(cleaned);
}

std::vector<NewsArticle> parse_news(std::istream& in, const std::string& source, TextLimits limits) {
  if (limits.title_len <= 0 || limits.abstract_len <= 0) throw ConfigError("text limits must be positive");
  std::vector<NewsArticle> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 8)
      throw ParseError(source, line_no, "expected 8 columns, got " + std::to_string(f.size()));
    if (f[0].empty()) throw ParseError(source, line_no, "empty news id");
    NewsArticle a;
    a.news_id = std::string(f[0]);
    a.category = std::string(f[1]);
    a.subcategory = std::string(f[2]);
    auto title = tokenize(f[3]);
    auto abstract = tokenize(f[4]);
    if (title.size() > static_cast<std::size_t>(limits.title_len)) title.resize(static_cast<std::size_t>(limits.title_len));
    if (abstract.size() > static_cast<std::size_t>(limits.abstract_len))
      abstract.resize(static_cast<std::size_t>(limits.abstract_len));
    a.title_tokens = fixed_length(std::move(title), limits.title_len);
    a.abstract_tokens = fixed_length(std::move(abstract), limits.abstract_len);
    a.title_entities = parse_entities(f[6], source, line_no);
    a.abstract_entities = parse_entities(f[7], source, line_no);
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<NewsArticle> parse_news_file(const std::filesystem::path& path, TextLimits limits) {
  auto in = open_input(path, "news");
  return parse_news(in, path.string(), limits);
}

std::vector<ImpressionRecord> parse_behaviors(std::istream& in, const std::string& source) {
  std::vector<ImpressionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 5)
      throw ParseError(source, line_no, "expected 5 columns, got " + std::to_string(f.size()));
    ImpressionRecord r;
    r.impression_id = std::string(f[0]);
    r.user_id = std::string(f[1]);
    r.time = std::string(f[2]);
    if (r.user_id.empty()) throw ParseError(source, line_no, "empty user id");
    r.history = split_spaces(f[3]);
    for (const auto& token : split_spaces(f[4])) {
      const auto dash = token.rfind('-');
      if (dash == std::string::npos || dash == 0)
        throw ParseError(source, line_no, "impression token '" + token + "' has no label suffix");
      const std::string label = token.substr(dash + 1);
      if (label != "0" && label != "1")
        throw ParseError(source, line_no, "label '" + label + "' in '" + token + "' is not 0 or 1");
      r.candidates.push_back({token.substr(0, dash), label == "1" ? 1 : 0});
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ImpressionRecord> parse_behaviors_file(const std::filesystem::path& path) {
  auto in = open_input(path, "behaviors");
  return parse_behaviors(in, path.string());
}

void write_news(std::ostream& out, const std::vector<NewsArticle>& articles) {
  for (const auto& a : articles) {
    out << a.news_id << '\t' << a.category << '\t' << a.subcategory << '\t' << join_real(a.title_tokens)
        << '\t' << join_real(a.abstract_tokens) << '\t' << "" << '\t' << entities_json(a.title_entities)
        << '\t' << entities_json(a.abstract_entities) << '\n';
  }
}

void write_behaviors(std::ostream& out, const std::vector<ImpressionRecord>& records) {
  for (const auto& r : records) {
    out << r.impression_id << '\t' << r.user_id << '\t' << r.time << '\t';
    for (std::size_t i = 0; i < r.history.size(); ++i) out << (i ? " " : "") << r.history[i];
    out << '\t';
    for (std::size_t i = 0; i < r.candidates.size(); ++i)
      out << (i ? " " : "") << r.candidates[i].news_id << '-' << r.candidates[i].label;
    out << '\n';
  }
}

FilteredData apply_filters(const std::vector<ImpressionRecord>& records,
                           const std::vector<NewsArticle>& articles, FilterConfig config) {
  if (config.min_readers < 0 || config.min_history < 0) throw ConfigError("filter thresholds must be >= 0");
  std::unordered_map<std::string, std::unordered_set<std::string>> readers;
  for (const auto& r : records) {
    for (const auto& h : r.history) readers[h].insert(r.user_id);
    for (const auto& c : r.candidates)
      if (c.label == 1) readers[c.news_id].insert(r.user_id);
  }
  FilteredData out;
  std::unordered_set<std::string> kept_news;
  for (const auto& a : articles) {
    auto it = readers.find(a.news_id);
    const std::size_t count = it == readers.end() ? 0 : it->second.size();
    if (count >= static_cast<std::size_t>(config.min_readers)) {
      kept_news.insert(a.news_id);
      out.articles.push_back(a);
    }
  }

  std::vector<ImpressionRecord> news_filtered;
  std::unordered_map<std::string, std::unordered_set<std::string>> user_history;
  for (const auto& r : records) {
    ImpressionRecord f = r;
    std::erase_if(f.history, [&](const std::string& id) { return !kept_news.contains(id); });
    std::erase_if(f.candidates, [&](const Candidate& c) { return !kept_news.contains(c.news_id); });
    auto& hist = user_history[f.user_id];
    hist.insert(f.history.begin(), f.history.end());
    if (!f.candidates.empty()) news_filtered.push_back(std::move(f));
  }
  for (auto& r : news_filtered) {
    if (user_history[r.user_id].size() >= static_cast<std::size_t>(config.min_history))
      out.records.push_back(std::move(r));
  }
  if (out.records.empty()) throw DataError("filters removed every impression");
  return out;
}

DatasetSplit split_dataset(const FilteredData& data, double ratio, std::uint64_t seed, TextLimits limits) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");
  if (data.records.size() < 5)
    throw DataError("need at least 5 impressions to split, got " + std::to_string(data.records.size()));
  std::vector<std::size_t> order(data.records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x73706c6974));
  shuffle(std::span<std::size_t>(order), rng);
  const auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(order.size())));

  DatasetSplit split;
  split.articles = data.articles;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_train ? split.train : split.test).push_back(data.records[order[i]]);

  std::unordered_set<std::string> seen_words, seen_entities;
  for (const auto& a : split.articles) {
    for (const auto* list : {&a.title_tokens, &a.abstract_tokens})
      for (const auto& t : *list)
        if (t != news::kPadToken && seen_words.insert(t).second) split.words.push_back(t);
    for (const auto& e : a.entity_mentions())
      if (seen_entities.insert(e).second) split.entities.push_back(e);
  }
  std::unordered_set<std::string> users;
  for (const auto& r : data.records) users.insert(r.user_id);
  split.stats.users = users.size();
  split.stats.behaviours = data.records.size();
  split.stats.words = split.words.size();
  split.stats.entities = split.entities.size();
  split.stats.news = split.articles.size();
  split.stats.train = split.train.size();
  split.stats.test = split.test.size();
  split.stats.max_title_words = limits.title_len;
  split.stats.max_abstract_words = limits.abstract_len;
  return split;
}

namespace {

json to_json(const NewsArticle& a) {
  return json{{"id", a.news_id},
              {"category", a.category},
              {"subcategory", a.subcategory},
              {"title", a.title_tokens},
              {"abstract", a.abstract_tokens},
              {"title_entities", a.title_entities},
              {"abstract_entities", a.abstract_entities}};
}

NewsArticle article_from_json(const json& j) {
  NewsArticle a;
  j.at("id").get_to(a.news_id);
  j.at("category").get_to(a.category);
  j.at("subcategory").get_to(a.subcategory);
  j.at("title").get_to(a.title_tokens);
  j.at("abstract").get_to(a.abstract_tokens);
  j.at("title_entities").get_to(a.title_entities);
  j.at("abstract_entities").get_to(a.abstract_entities);
  return a;
}

json to_json(const ImpressionRecord& r) {
  json cands = json::array();
  for (const auto& c : r.candidates) cands.push_back(json::array({c.news_id, c.label}));
  return json{{"id", r.impression_id}, {"user", r.user_id}, {"time", r.time}, {"history", r.history},
              {"candidates", cands}};
}

ImpressionRecord record_from_json(const json& j) {
  ImpressionRecord r;
  j.at("id").get_to(r.impression_id);
  j.at("user").get_to(r.user_id);
  j.at("time").get_to(r.time);
  j.at("history").get_to(r.history);
  for (const auto& c : j.at("candidates")) r.candidates.push_back({c.at(0).get<std::string>(), c.at(1).get<int>()});
  return r;
}

}  // namespace

void save_cache(const std::filesystem::path& path, const DatasetSplit& split) {
  json doc;
  json arts = json::array(), train = json::array(), test = json::array();
  for (const auto& a : split.articles) arts.push_back(to_json(a));
  for (const auto& r : split.train) train.push_back(to_json(r));
  for (const auto& r : split.test) test.push_back(to_json(r));
  doc["articles"] = std::move(arts);
  doc["train"] = std::move(train);
  doc["test"] = std::move(test);
  doc["words"] = split.words;
  doc["entities"] = split.entities;
  const auto& s = split.stats;
  doc["stats"] = json{{"users", s.users},       {"behaviours", s.behaviours},
                      {"words", s.words},       {"entities", s.entities},
                      {"news", s.news},         {"train", s.train},
                      {"test", s.test},         {"max_title_words", s.max_title_words},
                      {"max_abstract_words", s.max_abstract_words}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset cache " + path.string());
  out << "DORCACHE " << kCacheVersion << '\n' << doc.dump() << '\n';
}

DatasetSplit load_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset cache " + path.string());
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "DORCACHE") throw DataError(path.string() + " is not a dataset cache");
  if (version != kCacheVersion)
    throw DataError("dataset cache version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCacheVersion) + ")");
  json doc;
  try {
    in >> doc;
    DatasetSplit split;
    for (const auto& a : doc.at("articles")) split.articles.push_back(article_from_json(a));
    for (const auto& r : doc.at("train")) split.train.push_back(record_from_json(r));
    for (const auto& r : doc.at("test")) split.test.push_back(record_from_json(r));
    doc.at("words").get_to(split.words);
    doc.at("entities").get_to(split.entities);
    const auto& s = doc.at("stats");
    auto& st = split.stats;
    s.at("users").get_to(st.users);
    s.at("behaviours").get_to(st.behaviours);
    s.at("words").get_to(st.words);
    s.at("entities").get_to(st.entities);
    s.at("news").get_to(st.news);
    s.at("train").get_to(st.train);
    s.at("test").get_to(st.test);
    s.at("max_title_words").get_to(st.max_title_words);
    s.at("max_abstract_words").get_to(st.max_abstract_words);
    return split;
  } catch (const json::exception& e) {
    throw DataError("corrupt dataset cache " + path.string() + ": " + e.what());
  }
}

}  // namespace dor::data
