#include "dor/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "dor/errors.hpp"
#include "dor/random.hpp"

namespace dor::synth {

namespace {

constexpr int kTopicWords = 10;
constexpr int kGenericWords = 20;

double gaussian(Rng& rng) {
  // Box-Muller on our own uniform stream keeps the output library independent.
  const double u1 = uniform_real(rng, 0.0, 1.0);
  const double u2 = uniform_real(rng, 0.0, 1.0);
  return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::string topic_word(int t, int i) { return "t" + std::to_string(t) + "w" + std::to_string(i); }
std::string generic_word(int i) { return "common" + std::to_string(i); }
std::string entity_name(int i) { return "Q" + std::to_string(1000 + i); }
std::string news_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "N%03d", i + 1);
  return buf;
}

std::string words(Rng& rng, int t, int topical, int generic) {
  std::string out;
  for (int i = 0; i < topical + generic; ++i) {
    if (!out.empty()) out += ' ';
    out += i < topical ? topic_word(t, static_cast<int>(uniform_index(rng, kTopicWords)))
                       : generic_word(static_cast<int>(uniform_index(rng, kGenericWords)));
  }
  return out;
}

// Draws `count` distinct items from `pool` without replacement.
std::vector<int> draw(Rng& rng, std::vector<int> pool, int count) {
  shuffle(std::span(pool), rng);
  pool.resize(static_cast<std::size_t>(count));
  return pool;
}

}  // namespace

SyntheticCorpus generate(const SyntheticConfig& c) {
  if (c.topics < 2 || c.news < c.topics || c.users < 1 || c.entities < 2 * c.topics || c.word_dim < 1)
    throw ConfigError("synthetic corpus sizes are too small");
  const int per_topic = c.news / c.topics;
  if (c.history + c.impressions_per_user * c.positives > per_topic)
    throw ConfigError("not enough news per topic for the requested history and positives");
  if (c.negatives > c.news - per_topic) throw ConfigError("not enough off-topic news for the requested negatives");
  const int entities_per_topic = c.entities / c.topics;

  Rng rng(mix_seed(c.seed, 0x73796e7468ULL));
  SyntheticCorpus out;

  // Knowledge graph: a ring plus one chord inside every topic cluster.
  {
    std::ostringstream kg;
    for (int t = 0; t < c.topics; ++t) {
      const int base = t * entities_per_topic;
      for (int i = 0; i < entities_per_topic; ++i) {
        const int a = base + i;
        const int b = base + (i + 1) % entities_per_topic;
        kg << entity_name(a) << "\tP" << (t % 4) + 1 << '\t' << entity_name(b) << '\n';
        const int chord = base + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(entities_per_topic)));
        if (chord != a && chord != b) kg << entity_name(a) << "\tP5\t" << entity_name(chord) << '\n';
      }
    }
    out.triples_tsv = kg.str();
  }

  // News: topic t owns articles [t*per_topic, (t+1)*per_topic).
  std::vector<int> topic_of(static_cast<std::size_t>(c.news));
  {
    std::ostringstream news;
    for (int n = 0; n < c.news; ++n) {
      const int t = std::min(n / per_topic, c.topics - 1);
      topic_of[static_cast<std::size_t>(n)] = t;
      const int e1 = t * entities_per_topic + static_cast<int>(uniform_index(rng, entities_per_topic));
      const int e2 = t * entities_per_topic + static_cast<int>(uniform_index(rng, entities_per_topic));
      news << news_name(n) << "\ttopic" << t << "\tsub" << t << '\t' << words(rng, t, 4, 2) << '\t'
           << words(rng, t, 6, 4) << "\t\t[{\"WikidataId\": \"" << entity_name(e1) << "\"}]\t[{\"WikidataId\": \""
           << entity_name(e2) << "\"}]\n";
    }
    out.news_tsv = news.str();
  }

  // Behaviours: user u prefers topic u % topics.
  {
    std::ostringstream beh;
    int impression = 0;
    for (int u = 0; u < c.users; ++u) {
      const int t = u % c.topics;
      std::vector<int> own, other;
      for (int n = 0; n < c.news; ++n) (topic_of[static_cast<std::size_t>(n)] == t ? own : other).push_back(n);
      const auto picked = draw(rng, own, c.history + c.impressions_per_user * c.positives);
      std::string history;
      for (int h = 0; h < c.history; ++h) history += (h ? " " : "") + news_name(picked[static_cast<std::size_t>(h)]);
      for (int i = 0; i < c.impressions_per_user; ++i) {
        std::vector<std::pair<int, int>> cands;
        for (int p = 0; p < c.positives; ++p)
          cands.emplace_back(picked[static_cast<std::size_t>(c.history + i * c.positives + p)], 1);
        for (const int n : draw(rng, other, c.negatives)) cands.emplace_back(n, 0);
        shuffle(std::span(cands), rng);
        beh << "I" << ++impression << "\tU" << u + 1 << "\t11/11/2019 9:05:58 AM\t" << history << '\t';
        for (std::size_t k = 0; k < cands.size(); ++k)
          beh << (k ? " " : "") << news_name(cands[k].first) << '-' << cands[k].second;
        beh << '\n';
      }
    }
    out.behaviors_tsv = beh.str();
  }

  // Word vectors: topic words scatter around a shared centroid.
  {
    std::ostringstream vec;
    vec.precision(6);
    vec << std::fixed;
    auto row = [&](const std::string& token, const std::vector<double>& centre, double noise) {
      vec << token;
      for (int d = 0; d < c.word_dim; ++d) vec << ' ' << centre[static_cast<std::size_t>(d)] + noise * gaussian(rng);
      vec << '\n';
    };
    const std::vector<double> zero(static_cast<std::size_t>(c.word_dim), 0.0);
    for (int t = 0; t < c.topics; ++t) {
      std::vector<double> centre(static_cast<std::size_t>(c.word_dim));
      for (auto& x : centre) x = gaussian(rng);
      for (int i = 0; i < kTopicWords; ++i) row(topic_word(t, i), centre, 0.3);
    }
    for (int i = 0; i < kGenericWords; ++i) row(generic_word(i), zero, 1.0);
    out.word_vectors = vec.str();
  }
  return out;
}

void write_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto put = [&](const char* name, const std::string& text) {
    std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + (dir / name).string());
    f << text;
  };
  put("news.tsv", corpus.news_tsv);
  put("behaviors.tsv", corpus.behaviors_tsv);
  put("triples.tsv", corpus.triples_tsv);
  put("vectors.txt", corpus.word_vectors);
}

}  // namespace dor::synth
