#pragma once

// News-domain knowledge graph: dense entity/relation vocabularies, the
// deduplicated triple set, bidirectional adjacency and seeded 2-hop
// ego-network sampling.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dor::kg {

using EntityId = std::int32_t;
using RelationId = std::int32_t;

inline constexpr EntityId kPadEntity = 0;
inline constexpr RelationId kPadRelation = 0;
inline constexpr std::string_view kPadName = "<PAD>";

struct Triple {
  EntityId head = kPadEntity;
  RelationId relation = kPadRelation;
  EntityId tail = kPadEntity;

  auto operator<=>(const Triple&) const = default;
};

// One adjacency entry: the entity across the edge and the edge's relation.
struct Edge {
  EntityId neighbor = kPadEntity;
  RelationId relation = kPadRelation;

  auto operator<=>(const Edge&) const = default;
};

// String <-> dense id map. Id 0 is always the reserved PAD entry.
class Vocabulary {
 public:
  Vocabulary();

  std::int32_t add(std::string_view name);
  std::optional<std::int32_t> find(std::string_view name) const;
  const std::string& name(std::int32_t id) const;
  std::int32_t size() const { return static_cast<std::int32_t>(names_.size()); }
  std::span<const std::string> names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;

  // Adds a fact by external ids; returns false if it was already present.
  bool add(std::string_view head, std::string_view relation, std::string_view tail);
  // Sorts adjacency lists. Must be called once after the last add().
  void finalize();

  std::int32_t entity_count() const { return entities_.size(); }
  std::int32_t relation_count() const { return relations_.size(); }
  std::size_t triple_count() const { return triples_.size(); }

  std::span<const Triple> triples() const { return triples_; }
  std::span<const Edge> neighbors(EntityId e) const;
  std::size_t degree(EntityId e) const { return neighbors(e).size(); }
  bool contains(const Triple& t) const;

  const Vocabulary& entities() const { return entities_; }
  const Vocabulary& relations() const { return relations_; }

 private:
  struct TripleHash {
    std::size_t operator()(const Triple& t) const noexcept;
  };

  Vocabulary entities_;
  Vocabulary relations_;
  std::vector<Triple> triples_;
  std::unordered_map<Triple, std::size_t, TripleHash> index_;
  std::vector<std::vector<Edge>> adjacency_;
};

// Reads `head<TAB>relation<TAB>tail` lines. Blank lines and lines starting
// with '#' are skipped. Throws ParseError on a wrong field count and
// DataError when no triple was read.
KnowledgeGraph parse_triples(std::istream& in, const std::string& source = "<stream>");
KnowledgeGraph load_triples(const std::filesystem::path& path);

void write_triples(std::ostream& out, const KnowledgeGraph& graph);
// `external_id<TAB>dense_id` per line, PAD included.
void write_entity_vocabulary(std::ostream& out, const KnowledgeGraph& graph);
void write_relation_vocabulary(std::ostream& out, const KnowledgeGraph& graph);

// Unknown external ids map to kPadEntity; order is preserved.
std::vector<EntityId> link_entities(std::span<const std::string> external_ids,
                                    const KnowledgeGraph& graph);

// Center entity plus up to neighbor_size sampled neighbours per hop. Every
// list has exactly neighbor_size slots; padded slots hold (PAD, PAD) and are
// flagged in the matching *_padded vector.
struct EgoNetwork {
  EntityId center = kPadEntity;
  int neighbor_size = 0;
  std::vector<Edge> hop1;
  std::vector<bool> hop1_padded;
  std::vector<std::vector<Edge>> hop2;  // one list per hop-1 slot
  std::vector<std::vector<bool>> hop2_padded;

  std::size_t real_hop1() const;

  bool operator==(const EgoNetwork&) const = default;
};

// The real (unpadded) part of one hop: min(degree, neighbor_size) adjacency
// entries of `entity` drawn uniformly without replacement and sorted. The
// draw depends only on (seed, entity), so the hop-2 list under a hop-1 node
// equals that node's own hop-1 sample.
std::vector<Edge> sample_neighbors(const KnowledgeGraph& graph, EntityId entity, int neighbor_size,
                                   std::uint64_t seed);

EgoNetwork sample_ego_network(EntityId center, const KnowledgeGraph& graph, int neighbor_size,
                              std::uint64_t seed);

}  // namespace dor::kg
