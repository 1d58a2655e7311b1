#include "dor/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dor/data_pipeline.hpp"
#include "dor/errors.hpp"
#include "dor/kg_store.hpp"
#include "dor/kge.hpp"
#include "dor/metrics.hpp"
#include "dor/plot.hpp"

namespace dor::cli {

using nlohmann::json;
namespace fs = std::filesystem;

// ------------------------------------------------------------ RunConfig

fs::path RunConfig::cache_path() const {
  return cache.empty() ? fs::path(output_dir) / "dataset.cache" : fs::path(cache);
}

fs::path RunConfig::checkpoint_path() const {
  return checkpoint.empty() ? fs::path(output_dir) / "model.ckpt" : fs::path(checkpoint);
}

fs::path RunConfig::kge_table_path(kge::ModelKind kind) const {
  return kge_table.empty() ? fs::path(output_dir) / ("kge_" + kge::to_string(kind) + ".bin") : fs::path(kge_table);
}

void RunConfig::validate() const {
  train.validate();
  if (min_readers < 0 || min_history < 0) throw ConfigError("filter thresholds must be non-negative");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("split_ratio must lie strictly between 0 and 1");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  for (const auto& [tag, path] : word_vectors) {
    const auto& tags = train::word_model_tags();
    if (std::find(tags.begin(), tags.end(), tag) == tags.end())
      throw ConfigError("word_vectors has an entry for unknown word model '" + tag + "'");
  }
  for (const auto& tag : ablate_word_models) {
    const auto& tags = train::word_model_tags();
    if (std::find(tags.begin(), tags.end(), tag) == tags.end())
      throw ConfigError("ablate_word_models contains unknown word model '" + tag + "'");
  }
  for (const auto& m : ablate_kge_models) kge::parse_model_kind(m);
  if (ablate_do.empty() || ablate_word_models.empty() || ablate_kge_models.empty())
    throw ConfigError("every ablation axis needs at least one value");
  if (sweep != "epochs" && sweep != "neighbors" && sweep != "both")
    throw ConfigError("sweep must be epochs, neighbors or both");
  for (const int e : sweep_epochs)
    if (e < 0) throw ConfigError("sweep_epochs values must be non-negative");
  for (const int n : sweep_neighbors)
    if (n <= 0) throw ConfigError("sweep_neighbors values must be positive");
  if (plot_kind != "bar" && plot_kind != "line") throw ConfigError("plot_kind must be bar or line");
}

json to_json(const RunConfig& c) {
  json doc = train::to_json(c.train);
  doc["news"] = c.news;
  doc["behaviors"] = c.behaviors;
  doc["triples"] = c.triples;
  doc["word_vectors"] = c.word_vectors;
  doc["output_dir"] = c.output_dir;
  doc["cache"] = c.cache;
  doc["checkpoint"] = c.checkpoint;
  doc["kge_table"] = c.kge_table;
  doc["report"] = c.report;
  doc["min_readers"] = c.min_readers;
  doc["min_history"] = c.min_history;
  doc["split_ratio"] = c.split_ratio;
  doc["ablate_do"] = c.ablate_do;
  doc["ablate_word_models"] = c.ablate_word_models;
  doc["ablate_kge_models"] = c.ablate_kge_models;
  doc["sweep"] = c.sweep;
  doc["sweep_epochs"] = c.sweep_epochs;
  doc["sweep_neighbors"] = c.sweep_neighbors;
  doc["plot_kind"] = c.plot_kind;
  doc["plot_x"] = c.plot_x;
  return doc;
}

namespace {

std::string expect_string(const json& v) {
  if (!v.is_string()) throw ConfigError("expected a string");
  return v.get<std::string>();
}

int expect_int(const json& v) {
  if (!v.is_number_integer()) throw ConfigError("expected an integer");
  return v.get<int>();
}

template <typename T, typename Fn>
std::vector<T> expect_list(const json& v, Fn item) {
  if (!v.is_array()) throw ConfigError("expected a JSON list");
  std::vector<T> out;
  for (const auto& x : v) out.push_back(item(x));
  return out;
}

using Setter = std::function<void(RunConfig&, const json&)>;

const std::map<std::string, Setter>& run_setters() {
  static const std::map<std::string, Setter> table{
      {"news", [](RunConfig& c, const json& v) { c.news = expect_string(v); }},
      {"behaviors", [](RunConfig& c, const json& v) { c.behaviors = expect_string(v); }},
      {"triples", [](RunConfig& c, const json& v) { c.triples = expect_string(v); }},
      {"word_vectors",
       [](RunConfig& c, const json& v) {
         // A bare path applies to the configured word model.
         if (v.is_string()) {
           c.word_vectors[c.train.word_model] = v.get<std::string>();
           return;
         }
         if (!v.is_object()) throw ConfigError("expected a path or an object of word model -> path");
         c.word_vectors.clear();
         for (const auto& [tag, path] : v.items()) c.word_vectors[tag] = expect_string(path);
       }},
      {"output_dir", [](RunConfig& c, const json& v) { c.output_dir = expect_string(v); }},
      {"cache", [](RunConfig& c, const json& v) { c.cache = expect_string(v); }},
      {"checkpoint", [](RunConfig& c, const json& v) { c.checkpoint = expect_string(v); }},
      {"kge_table", [](RunConfig& c, const json& v) { c.kge_table = expect_string(v); }},
      {"report", [](RunConfig& c, const json& v) { c.report = expect_string(v); }},
      {"min_readers", [](RunConfig& c, const json& v) { c.min_readers = expect_int(v); }},
      {"min_history", [](RunConfig& c, const json& v) { c.min_history = expect_int(v); }},
      {"split_ratio",
       [](RunConfig& c, const json& v) {
         if (!v.is_number()) throw ConfigError("expected a number");
         c.split_ratio = v.get<double>();
       }},
      {"ablate_do",
       [](RunConfig& c, const json& v) {
         c.ablate_do = expect_list<bool>(v, [](const json& x) {
           if (!x.is_boolean()) throw ConfigError("expected true or false");
           return x.get<bool>();
         });
       }},
      {"ablate_word_models",
       [](RunConfig& c, const json& v) { c.ablate_word_models = expect_list<std::string>(v, expect_string); }},
      {"ablate_kge_models",
       [](RunConfig& c, const json& v) { c.ablate_kge_models = expect_list<std::string>(v, expect_string); }},
      {"sweep", [](RunConfig& c, const json& v) { c.sweep = expect_string(v); }},
      {"sweep_epochs", [](RunConfig& c, const json& v) { c.sweep_epochs = expect_list<int>(v, expect_int); }},
      {"sweep_neighbors", [](RunConfig& c, const json& v) { c.sweep_neighbors = expect_list<int>(v, expect_int); }},
      {"plot_kind", [](RunConfig& c, const json& v) { c.plot_kind = expect_string(v); }},
      {"plot_x", [](RunConfig& c, const json& v) { c.plot_x = expect_string(v); }},
  };
  return table;
}

}  // namespace

void merge(RunConfig& config, const json& doc) {
  if (!doc.is_object()) throw ConfigError("configuration must be a JSON object");
  const auto train_keys = train::to_json(config.train);
  json train_part = json::object();
  // word_model first so a bare word_vectors path binds to the final tag.
  if (doc.contains("word_model")) train_part["word_model"] = doc["word_model"];
  for (const auto& [key, value] : doc.items())
    if (train_keys.contains(key)) train_part[key] = value;
  train::merge_config(config.train, train_part);
  const auto& table = run_setters();
  for (const auto& [key, value] : doc.items()) {
    if (train_keys.contains(key)) continue;
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown configuration key '" + key + "'");
    try {
      it->second(config, value);
    } catch (const ConfigError& e) {
      throw ConfigError("configuration key '" + key + "': " + e.what());
    } catch (const json::exception& e) {
      throw ConfigError("configuration key '" + key + "': " + e.what());
    }
  }
}

RunConfig from_json(const json& doc) {
  RunConfig c;
  merge(c, doc);
  return c;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  const json defaults = to_json(RunConfig{});
  for (const auto& [key, value] : defaults.items()) keys.push_back(key);
  return keys;
}

json parse_value(const std::string& key, const std::string& text) {
  const json defaults = to_json(RunConfig{});
  if (!defaults.contains(key)) throw ConfigError("unknown configuration key '" + key + "'");
  const json& kind = defaults[key];
  if (kind.is_string()) return text;
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    if (key == "word_vectors") return text;
    // Comma separated shorthand for string lists, e.g. TransE,TransR.
    if (kind.is_array() && !kind.empty() && kind.front().is_string()) {
      json list = json::array();
      std::istringstream in(text);
      std::string item;
      while (std::getline(in, item, ',')) list.push_back(item);
      return list;
    }
    throw ConfigError("value '" + text + "' for '" + key + "' is not valid JSON");
  }
}

// ------------------------------------------------------------- commands

namespace {

std::string flag_name(const std::string& key) {
  std::string out = key;
  std::replace(out.begin(), out.end(), '_', '-');
  return out;
}

std::string env_name(const std::string& key) {
  std::string out = kEnvPrefix;
  for (const char c : key) out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

// Runs `write(tmp)` and renames the result into place, so a failure never
// leaves a partial file behind.
void write_atomically(const fs::path& path, const std::function<void(const fs::path&)>& write) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  try {
    write(tmp);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
  fs::rename(tmp, path);
}

void write_text(const fs::path& path, const std::string& text) {
  write_atomically(path, [&](const fs::path& tmp) {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("failed writing " + path.string());
  });
}

void require_files(const std::vector<std::pair<std::string, std::string>>& needed) {
  std::string missing;
  for (const auto& [key, path] : needed) {
    if (path.empty())
      missing += "\n  " + key + ": not set";
    else if (!fs::exists(path))
      missing += "\n  " + key + ": " + path + " does not exist";
  }
  if (!missing.empty()) throw ConfigError("missing input paths:" + missing);
}

std::string csv_safe(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

struct Inputs {
  data::DatasetSplit split;
  kg::KnowledgeGraph graph;
};

Inputs load_inputs(const RunConfig& c) {
  require_files({{"cache", c.cache_path().string()}, {"triples", c.triples}});
  return {data::load_cache(c.cache_path()), kg::load_triples(c.triples)};
}

// Pretrained tables when a file for this model exists, otherwise trained here.
kge::EmbeddingTable tables_for(const RunConfig& c, const kg::KnowledgeGraph& graph, kge::ModelKind kind,
                               std::ostream& out) {
  const fs::path path = c.kge_table_path(kind);
  if (fs::exists(path)) {
    auto table = kge::load_table(path);
    if (table.kind != kind)
      throw ConfigError("KGE table " + path.string() + " holds " + kge::to_string(table.kind) + ", expected " +
                        kge::to_string(kind));
    if (table.entities.rows() != graph.entity_count())
      throw DataError("KGE table " + path.string() + " does not match the knowledge graph");
    return table;
  }
  out << "training " << kge::to_string(kind) << " embeddings in-run (" << path.string() << " not found)\n";
  kge::KgeConfig kc;
  kc.kind = kind;
  kc.entity_dim = c.train.kge_dim;
  kc.relation_dim = c.train.kge_dim;
  kc.epochs = c.train.kge_epochs;
  kc.seed = c.train.seed;
  return kge::train_kge(graph, kc).table;
}

std::optional<news::WordVectors> vectors_for(const RunConfig& c, const std::string& tag) {
  auto it = c.word_vectors.find(tag);
  if (it == c.word_vectors.end() || it->second.empty()) return std::nullopt;
  return news::load_word_vectors(it->second);
}

void print_stats(std::ostream& out, const data::DatasetStatistics& s) {
  char buf[96];
  auto row = [&](const char* name, std::size_t v) {
    std::snprintf(buf, sizeof buf, "%-12s %10zu\n", name, v);
    out << buf;
  };
  row("users", s.users);
  row("behaviours", s.behaviours);
  row("words", s.words);
  row("entities", s.entities);
  row("news", s.news);
  row("train", s.train);
  row("test", s.test);
  row("title_len", static_cast<std::size_t>(s.max_title_words));
  row("abstract_len", static_cast<std::size_t>(s.max_abstract_words));
}

int cmd_preprocess(const RunConfig& c, std::ostream& out) {
  require_files({{"news", c.news}, {"behaviors", c.behaviors}});
  const data::TextLimits limits{c.train.title_len, c.train.abstract_len};
  const auto articles = data::parse_news_file(c.news, limits);
  const auto records = data::parse_behaviors_file(c.behaviors);
  const auto filtered = data::apply_filters(records, articles, {c.min_readers, c.min_history});
  const auto split = data::split_dataset(filtered, c.split_ratio, c.train.seed, limits);
  write_atomically(c.cache_path(), [&](const fs::path& tmp) { data::save_cache(tmp, split); });
  print_stats(out, split.stats);
  out << "cache " << c.cache_path().string() << '\n';
  return kOk;
}

int cmd_build_kg(const RunConfig& c, std::ostream& out) {
  require_files({{"triples", c.triples}});
  const auto graph = kg::load_triples(c.triples);
  const fs::path dir(c.output_dir);
  std::ostringstream triples, entities, relations;
  kg::write_triples(triples, graph);
  kg::write_entity_vocabulary(entities, graph);
  kg::write_relation_vocabulary(relations, graph);
  write_text(dir / "kg_triples.tsv", triples.str());
  write_text(dir / "kg_entities.tsv", entities.str());
  write_text(dir / "kg_relations.tsv", relations.str());
  out << "entities " << graph.entity_count() << " (PAD included)\n"
      << "relations " << graph.relation_count() << " (PAD included)\n"
      << "triples " << graph.triple_count() << '\n';
  return kOk;
}

int cmd_train_kge(const RunConfig& c, std::ostream& out) {
  require_files({{"triples", c.triples}});
  const auto graph = kg::load_triples(c.triples);
  kge::KgeConfig kc;
  kc.kind = c.train.embedding_model;
  kc.entity_dim = c.train.kge_dim;
  kc.relation_dim = c.train.kge_dim;
  kc.epochs = c.train.kge_epochs;
  kc.seed = c.train.seed;
  const auto result = kge::train_kge(graph, kc);
  const fs::path path = c.kge_table_path(kc.kind);
  write_atomically(path, [&](const fs::path& tmp) { kge::save_table(tmp, result.table); });
  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e)
    out << "kge epoch " << e + 1 << " loss " << result.epoch_losses[e] << '\n';
  out << "table " << path.string() << '\n';
  return kOk;
}

json log_json(const train::TrainingLog& log) {
  json epochs = json::array();
  for (const auto& e : log.epochs)
    epochs.push_back({{"epoch", e.epoch}, {"pretraining", e.pretraining}, {"mean_loss", e.mean_loss},
                      {"steps", e.steps}});
  return {{"initial_loss", log.initial_loss}, {"final_loss", log.final_loss}, {"steps", log.steps},
          {"epochs", epochs}};
}

train::TrainResult train_model(const RunConfig& c, const train::TrainConfig& tc, const Inputs& in,
                               std::ostream& out, std::ostream* progress) {
  const auto tables = tables_for(c, in.graph, tc.embedding_model, out);
  const auto vectors = vectors_for(c, tc.word_model);
  return train::train(in.split, tc, in.graph, &tables, vectors ? &*vectors : nullptr, progress);
}

int cmd_train(const RunConfig& c, std::ostream& out) {
  const Inputs in = load_inputs(c);
  auto result = train_model(c, c.train, in, out, &out);
  write_atomically(c.checkpoint_path(), [&](const fs::path& tmp) { result.model.save(tmp); });
  const json run_log = {{"command", "train"}, {"config", to_json(c)}, {"training", log_json(result.log)}};
  write_text(fs::path(c.output_dir) / "train_log.json", run_log.dump(2) + "\n");
  out << "checkpoint " << c.checkpoint_path().string() << '\n';
  return kOk;
}

void write_reports(const fs::path& dir, const std::string& stem, const std::string& tag,
                   const eval::MetricReport& report) {
  std::ostringstream summary, detail;
  eval::write_report_header(summary);
  eval::write_report_row(summary, tag, report);
  eval::write_detail_csv(detail, report);
  write_text(dir / (stem + ".csv"), summary.str());
  write_text(dir / (stem + "_detail.csv"), detail.str());
}

int cmd_evaluate(const RunConfig& c, std::ostream& out) {
  require_files({{"cache", c.cache_path().string()}, {"checkpoint", c.checkpoint_path().string()}});
  const auto split = data::load_cache(c.cache_path());
  auto model = train::DorModel::load(c.checkpoint_path());
  const auto report = train::evaluate(model, split);
  write_reports(c.output_dir, "metrics", "eval", report);
  eval::write_report_header(out);
  eval::write_report_row(out, "eval", report);
  return kOk;
}

// Shared by ablate and sweep: one metric row per cell, failures recorded.
struct GridRow {
  std::vector<std::string> keys;
  std::string status = "ok";
  eval::MetricReport report;
};

std::string grid_csv(const std::vector<std::string>& key_names, const std::vector<GridRow>& rows) {
  std::ostringstream s;
  for (const auto& k : key_names) s << k << ',';
  s << "status,auc,mrr,ndcg5,ndcg10\n";
  for (const auto& r : rows) {
    for (const auto& k : r.keys) s << csv_safe(k) << ',';
    s << csv_safe(r.status);
    char buf[128];
    if (r.status == "ok")
      std::snprintf(buf, sizeof buf, ",%.2f,%.2f,%.2f,%.2f", r.report.auc, r.report.mrr, r.report.ndcg5,
                    r.report.ndcg10);
    else
      std::snprintf(buf, sizeof buf, ",,,,");
    s << buf << '\n';
  }
  return s.str();
}

GridRow run_cell(const RunConfig& c, const train::TrainConfig& tc, const Inputs& in, std::vector<std::string> keys,
                 std::ostream& out) {
  GridRow row;
  row.keys = std::move(keys);
  try {
    auto result = train_model(c, tc, in, out, nullptr);
    row.report = train::evaluate(result.model, in.split);
  } catch (const std::exception& e) {
    row.status = std::string("failed: ") + e.what();
  }
  out << row.keys.front() << ": " << row.status;
  if (row.status == "ok") out << " auc " << std::to_string(row.report.auc);
  out << '\n';
  return row;
}

std::string ok_rows_only(const std::vector<GridRow>& rows, const std::vector<std::string>& key_names) {
  std::vector<GridRow> ok;
  for (const auto& r : rows)
    if (r.status == "ok") ok.push_back(r);
  return grid_csv(key_names, ok);
}

int cmd_ablate(const RunConfig& c, std::ostream& out) {
  const Inputs in = load_inputs(c);
  std::vector<GridRow> rows;
  for (const bool use_do : c.ablate_do) {
    for (const auto& word : c.ablate_word_models) {
      for (const auto& model : c.ablate_kge_models) {
        train::TrainConfig tc = c.train;
        tc.use_do = use_do;
        tc.word_model = word;
        tc.embedding_model = kge::parse_model_kind(model);
        const std::string tag = std::string(use_do ? "DO" : "nonDO") + "/" + word + "/" + kge::to_string(tc.embedding_model);
        rows.push_back(run_cell(c, tc, in, {tag, use_do ? "true" : "false", word, kge::to_string(tc.embedding_model)},
                                out));
      }
    }
  }
  const std::vector<std::string> keys{"tag", "use_do", "word_model", "embedding_model"};
  const fs::path dir(c.output_dir);
  write_text(dir / "ablation.csv", grid_csv(keys, rows));
  const bool any_ok = std::any_of(rows.begin(), rows.end(), [](const GridRow& r) { return r.status == "ok"; });
  if (any_ok) {
    std::istringstream csv(ok_rows_only(rows, keys));
    const auto table = plot::parse_csv(csv);
    write_text(dir / "ablation.svg", plot::bar_chart(table, "tag", {"auc", "mrr", "ndcg5", "ndcg10"}, "Ablation"));
  }
  const bool all_ok = std::all_of(rows.begin(), rows.end(), [](const GridRow& r) { return r.status == "ok"; });
  return all_ok ? kOk : kRuntimeError;
}

int cmd_sweep(const RunConfig& c, std::ostream& out) {
  const Inputs in = load_inputs(c);
  const fs::path dir(c.output_dir);
  bool all_ok = true;
  auto sweep = [&](const std::string& name, std::vector<int> values, auto apply) {
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    std::vector<GridRow> rows;
    for (const int v : values) {
      train::TrainConfig tc = c.train;
      apply(tc, v);
      rows.push_back(run_cell(c, tc, in, {std::to_string(v)}, out));
      all_ok = all_ok && rows.back().status == "ok";
    }
    write_text(dir / ("sweep_" + name + ".csv"), grid_csv({name}, rows));
    const std::string ok = ok_rows_only(rows, {name});
    if (std::count(ok.begin(), ok.end(), '\n') > 1) {
      std::istringstream csv(ok);
      write_text(dir / ("sweep_" + name + ".svg"),
                 plot::line_chart(plot::parse_csv(csv), name, {"auc", "mrr", "ndcg5", "ndcg10"}, "Sweep over " + name));
    }
  };
  if (c.sweep != "neighbors")
    sweep("epochs", c.sweep_epochs, [](train::TrainConfig& tc, int v) { tc.epochs = v; });
  if (c.sweep != "epochs")
    sweep("neighbors", c.sweep_neighbors, [](train::TrainConfig& tc, int v) { tc.neighbor_size = v; });
  return all_ok ? kOk : kRuntimeError;
}

int cmd_plot(const RunConfig& c, std::ostream& out) {
  require_files({{"report", c.report}});
  const auto table = plot::load_csv(c.report);
  const std::string x = c.plot_x.empty() ? table.header.front() : c.plot_x;
  std::vector<std::string> metrics;
  for (const char* m : {"auc", "mrr", "ndcg5", "ndcg10"})
    if (std::find(table.header.begin(), table.header.end(), m) != table.header.end()) metrics.emplace_back(m);
  if (metrics.empty()) throw DataError("report " + c.report + " has no metric columns");
  const fs::path svg = fs::path(c.report).replace_extension(".svg");
  const std::string title = fs::path(c.report).stem().string();
  write_text(svg, c.plot_kind == "bar" ? plot::bar_chart(table, x, metrics, title)
                                       : plot::line_chart(table, x, metrics, title));
  out << "chart " << svg.string() << '\n';
  return kOk;
}

struct Command {
  const char* name;
  const char* help;
  int (*fn)(const RunConfig&, std::ostream&);
};

const Command kCommands[] = {
    {"preprocess", "Parse, filter and split the news/behaviour files into a dataset cache", cmd_preprocess},
    {"build-kg", "Load the triples and write the deduplicated graph and its vocabularies", cmd_build_kg},
    {"train-kge", "Train translational embeddings (embedding_model) and save the table", cmd_train_kge},
    {"train", "Train the recommender on the cached dataset and write a checkpoint", cmd_train},
    {"evaluate", "Score the test split with a checkpoint and write metric CSVs", cmd_evaluate},
    {"ablate", "Run the DO x word model x KGE model grid", cmd_ablate},
    {"sweep", "Run the epoch and neighbour-size sweeps with line charts", cmd_sweep},
    {"plot", "Render a bar or line chart from a metric CSV", cmd_plot},
};

RunConfig resolve(const std::string& config_file, const std::map<std::string, std::string>& flags) {
  RunConfig c;
  if (!config_file.empty()) {
    std::ifstream in(config_file);
    if (!in) throw ConfigError("cannot open config file " + config_file);
    json doc;
    try {
      in >> doc;
    } catch (const json::exception& e) {
      throw ConfigError("config file " + config_file + " is not valid JSON: " + e.what());
    }
    merge(c, doc);
  }
  json env = json::object();
  for (const auto& key : config_keys())
    if (const char* v = std::getenv(env_name(key).c_str())) env[key] = parse_value(key, v);
  merge(c, env);
  json overrides = json::object();
  for (const auto& [key, v] : flags) overrides[key] = parse_value(key, v);
  merge(c, overrides);
  c.validate();
  return c;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Knowledge-aware news recommendation toolkit"};
  app.name("dor");
  app.require_subcommand(1);
  app.footer(std::string("Every option may also be set in the --config JSON file (same key with underscores) or ") +
             "through the environment as " + kEnvPrefix + "<KEY>, e.g. DOR_BATCH_SIZE=64. Precedence: flag > environment > "
             "config file > default.\nExit codes: 0 success, 2 configuration error, 3 data error, 4 runtime failure.");

  std::string config_file;
  std::map<std::string, std::string> storage;
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  const json defaults = to_json(RunConfig{});
  for (const Command& cmd : kCommands) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", config_file, "JSON run configuration");
    for (const auto& [key, value] : defaults.items()) {
      sub->add_option("--" + flag_name(key), storage[key],
                      "(" + env_name(key) + ") default: " + value.dump());
    }
    subs.emplace_back(sub, &cmd);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    for (const auto& [sub, cmd] : subs) {
      if (!sub->parsed()) continue;
      std::map<std::string, std::string> flags;
      for (const auto& [key, value] : defaults.items())
        if (sub->get_option("--" + flag_name(key))->count() > 0) flags[key] = storage[key];
      const RunConfig config = resolve(config_file, flags);
      return cmd->fn(config, out);
    }
    return kConfigError;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}

}  // namespace dor::cli
