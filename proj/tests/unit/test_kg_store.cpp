#include <set>
#include <sstream>

#include "doctest.h"
#include "dor/errors.hpp"
#include "dor/kg_store.hpp"

using namespace dor;
using namespace dor::kg;

namespace {

const std::string kMiniKg = std::string(DOR_FIXTURE_DIR) + "/mini_kg.tsv";

KnowledgeGraph from_text(const std::string& text) {
  std::istringstream in(text);
  return parse_triples(in);
}

EntityId dense(const KnowledgeGraph& g, const char* name) { return *g.entities().find(name); }

}  // namespace

TEST_CASE("duplicate lines collapse into one triple") {
  const auto g = from_text("Q1\tP1\tQ2\nQ1\tP1\tQ2\n");
  CHECK(g.triple_count() == 1);
  CHECK(g.entity_count() == 3);
  CHECK(g.relation_count() == 2);
}

TEST_CASE("three distinct triples over four entities") {
  const auto g = from_text("A\tr\tB\nB\tr\tC\nC\ts\tD\n");
  CHECK(g.entity_count() == 5);
  CHECK(g.triple_count() == 3);
}

TEST_CASE("mini_kg fixture counts include the PAD rows") {
  const auto g = load_triples(kMiniKg);
  CHECK(g.entity_count() == 13);
  CHECK(g.relation_count() == 5);
  CHECK(g.triple_count() == 12);
  // Ids are dense in first-seen order after PAD.
  CHECK(g.entities().name(0) == kPadName);
  CHECK(dense(g, "Q1") == 1);
  CHECK(dense(g, "Q2") == 2);
  CHECK(g.relations().name(0) == kPadName);
}

TEST_CASE("malformed lines report their line number") {
  try {
    from_text("Q1\tP1\tQ2\n# comment\nQ1\tP1\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(from_text("Q1\t\tQ2\n"), ParseError);
  CHECK_THROWS_AS(from_text(""), DataError);
  CHECK_THROWS_AS(from_text("# only a comment\n\n"), DataError);
  CHECK_THROWS_AS(load_triples("/nonexistent/triples.tsv"), DataError);
}

TEST_CASE("adjacency is bidirectional, sorted and backed by stored triples") {
  const auto g = load_triples(kMiniKg);
  for (EntityId e = 1; e < g.entity_count(); ++e) {
    const auto adj = g.neighbors(e);
    CHECK(std::is_sorted(adj.begin(), adj.end()));
    for (const Edge& edge : adj)
      CHECK((g.contains({e, edge.relation, edge.neighbor}) || g.contains({edge.neighbor, edge.relation, e})));
  }
  std::size_t total = 0;
  for (EntityId e = 1; e < g.entity_count(); ++e) total += g.degree(e);
  CHECK(total == 2 * g.triple_count());
  CHECK(g.degree(dense(g, "Q1")) == 4);
}

TEST_CASE("link_entities preserves order and maps unknown ids to PAD") {
  const auto g = load_triples(kMiniKg);
  CHECK(link_entities(std::vector<std::string>{}, g).empty());
  CHECK(link_entities(std::vector<std::string>{"Q_unknown"}, g) == std::vector<EntityId>{0});
  CHECK(link_entities(std::vector<std::string>{"Q2", "Q1"}, g) == std::vector<EntityId>{2, 1});
  CHECK(link_entities(std::vector<std::string>{std::string(kPadName)}, g) == std::vector<EntityId>{0});
}

TEST_CASE("ego network padding arithmetic") {
  const auto g = from_text("C\tr\tA\nC\tr\tB\nD\ts\tC\n");
  const EntityId c = dense(g, "C");
  const auto ego = sample_ego_network(c, g, 5, 1);
  CHECK(ego.real_hop1() == 3);
  CHECK(ego.hop1.size() == 5);
  CHECK(std::count(ego.hop1_padded.begin(), ego.hop1_padded.end(), true) == 2);
  for (std::size_t i = 0; i < ego.hop1.size(); ++i) {
    if (ego.hop1_padded[i]) {
      CHECK(ego.hop1[i] == Edge{kPadEntity, kPadRelation});
      CHECK(std::all_of(ego.hop2_padded[i].begin(), ego.hop2_padded[i].end(), [](bool p) { return p; }));
    }
    CHECK(ego.hop2[i].size() == 5);
  }

  const auto empty = sample_ego_network(kPadEntity, g, 3, 1);
  CHECK(empty.real_hop1() == 0);
  CHECK(std::all_of(empty.hop1_padded.begin(), empty.hop1_padded.end(), [](bool p) { return p; }));

  CHECK_THROWS_AS(sample_ego_network(c, g, 0, 1), ConfigError);
  CHECK_THROWS_AS(sample_ego_network(c, g, -2, 1), ConfigError);
}

TEST_CASE("golden ego sample: Q1, neighbor size 2, seed 7") {
  const auto g = load_triples(kMiniKg);
  const auto ego = sample_ego_network(dense(g, "Q1"), g, 2, 7);
  // Frozen from one run of the seeded sampler.
  const std::vector<Edge> hop1{{4, 3}, {10, 3}};  // (Q4, P3), (Q10, P3)
  CHECK(ego.hop1 == hop1);
  CHECK(ego.hop1_padded == std::vector<bool>{false, false});
}

TEST_CASE("ego sampling properties over every fixture entity") {
  const auto g = load_triples(kMiniKg);
  for (const int size : {1, 2, 3, 5}) {
    for (EntityId e = 1; e < g.entity_count(); ++e) {
      const auto ego = sample_ego_network(e, g, size, 11);
      CHECK(ego == sample_ego_network(e, g, size, 11));
      CHECK(ego.real_hop1() == std::min<std::size_t>(g.degree(e), static_cast<std::size_t>(size)));
      std::set<Edge> distinct;
      for (std::size_t i = 0; i < ego.hop1.size(); ++i) {
        if (ego.hop1_padded[i]) continue;
        const Edge edge = ego.hop1[i];
        distinct.insert(edge);
        CHECK((g.contains({e, edge.relation, edge.neighbor}) || g.contains({edge.neighbor, edge.relation, e})));
        // The hop-2 list under a node is that node's own hop-1 sample.
        const auto own = sample_ego_network(edge.neighbor, g, size, 11);
        CHECK(ego.hop2[i] == own.hop1);
      }
      CHECK(distinct.size() == ego.real_hop1());
    }
  }
}

TEST_CASE("re-serialising yields the deduplicated triple set") {
  const auto g = load_triples(kMiniKg);
  std::ostringstream out;
  write_triples(out, g);
  const auto again = from_text(out.str());
  auto names = [](const KnowledgeGraph& graph) {
    std::set<std::tuple<std::string, std::string, std::string>> s;
    for (const Triple& t : graph.triples())
      s.emplace(graph.entities().name(t.head), graph.relations().name(t.relation), graph.entities().name(t.tail));
    return s;
  };
  CHECK(names(again) == names(g));
  CHECK(again.triple_count() == 12);
}

TEST_CASE("vocabulary export lists external and dense ids") {
  const auto g = from_text("A\tr\tB\n");
  std::ostringstream out;
  write_entity_vocabulary(out, g);
  CHECK(out.str() == "<PAD>\t0\nA\t1\nB\t2\n");
  std::ostringstream rel;
  write_relation_vocabulary(rel, g);
  CHECK(rel.str() == "<PAD>\t0\nr\t1\n");
}
