#pragma once

// Planted-preference toy corpus: every user reads one topic, topic words
// share a vector centroid and every article mentions entities from its
// topic's cluster of the knowledge graph. Written in the same file formats
// as the real inputs so the whole pipeline can run on it.

#include <cstdint>
#include <filesystem>
#include <string>

namespace dor::synth {

struct SyntheticConfig {
  int topics = 4;
  int news = 100;
  int users = 50;
  int entities = 60;  // split evenly across topics
  int word_dim = 16;
  int history = 8;             // clicks per user
  int impressions_per_user = 2;
  int positives = 2;           // per impression, from the user's topic
  int negatives = 4;           // per impression, from other topics
  std::uint64_t seed = 7;
};

struct SyntheticCorpus {
  std::string news_tsv;
  std::string behaviors_tsv;
  std::string triples_tsv;
  std::string word_vectors;  // "token v1 .. vn" lines
};

// Throws ConfigError for sizes that cannot hold the planted structure.
SyntheticCorpus generate(const SyntheticConfig& config);

// news.tsv, behaviors.tsv, triples.tsv and vectors.txt inside `dir`.
void write_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir);

}  // namespace dor::synth
