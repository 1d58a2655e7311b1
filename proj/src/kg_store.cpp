#include "dor/kg_store.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "dor/errors.hpp"
#include "dor/random.hpp"

namespace dor::kg {

Vocabulary::Vocabulary() { add(kPadName); }

std::int32_t Vocabulary::add(std::string_view name) {
  std::string key(name);
  if (auto it = ids_.find(key); it != ids_.end()) return it->second;
  const auto id = static_cast<std::int32_t>(names_.size());
  names_.push_back(key);
  ids_.emplace(std::move(key), id);
  return id;
}

std::optional<std::int32_t> Vocabulary::find(std::string_view name) const {
  if (auto it = ids_.find(std::string(name)); it != ids_.end()) return it->second;
  return std::nullopt;
}

const std::string& Vocabulary::name(std::int32_t id) const {
  require(id >= 0 && id < size(), "vocabulary id " + std::to_string(id) + " out of range");
  return names_[static_cast<std::size_t>(id)];
}

std::size_t KnowledgeGraph::TripleHash::operator()(const Triple& t) const noexcept {
  return static_cast<std::size_t>(
      mix_seed(static_cast<std::uint64_t>(t.head), static_cast<std::uint64_t>(t.relation),
               static_cast<std::uint64_t>(t.tail)));
}

bool KnowledgeGraph::add(std::string_view head, std::string_view relation, std::string_view tail) {
  const Triple t{entities_.add(head), relations_.add(relation), entities_.add(tail)};
  if (index_.contains(t)) return false;
  index_.emplace(t, triples_.size());
  triples_.push_back(t);
  adjacency_.resize(static_cast<std::size_t>(entities_.size()));
  adjacency_[static_cast<std::size_t>(t.head)].push_back({t.tail, t.relation});
  if (t.head != t.tail) adjacency_[static_cast<std::size_t>(t.tail)].push_back({t.head, t.relation});
  return true;
}

void KnowledgeGraph::finalize() {
  adjacency_.resize(static_cast<std::size_t>(entities_.size()));
  for (auto& list : adjacency_) std::sort(list.begin(), list.end());
}

std::span<const Edge> KnowledgeGraph::neighbors(EntityId e) const {
  require(e >= 0 && e < entity_count(), "entity id " + std::to_string(e) + " out of range");
  if (static_cast<std::size_t>(e) >= adjacency_.size()) return {};
  return adjacency_[static_cast<std::size_t>(e)];
}

bool KnowledgeGraph::contains(const Triple& t) const { return index_.contains(t); }

KnowledgeGraph parse_triples(std::istream& in, const std::string& source) {
  KnowledgeGraph graph;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      const auto tab = rest.find('\t');
      fields.push_back(rest.substr(0, tab));
      if (tab == std::string_view::npos) break;
      rest.remove_prefix(tab + 1);
    }
    if (fields.size() != 3) {
      throw ParseError(source, line_no,
                       "expected 3 tab-separated fields, got " + std::to_string(fields.size()));
    }
    for (const auto& f : fields) {
      if (f.empty()) throw ParseError(source, line_no, "empty field");
    }
    graph.add(fields[0], fields[1], fields[2]);
  }
  if (graph.triple_count() == 0) throw DataError(source + ": no triples found");
  graph.finalize();
  return graph;
}

KnowledgeGraph load_triples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open triples file " + path.string());
  return parse_triples(in, path.string());
}

void write_triples(std::ostream& out, const KnowledgeGraph& graph) {
  const auto& ents = graph.entities();
  const auto& rels = graph.relations();
  for (const Triple& t : graph.triples()) {
    out << ents.name(t.head) << '\t' << rels.name(t.relation) << '\t' << ents.name(t.tail) << '\n';
  }
}

void write_entity_vocabulary(std::ostream& out, const KnowledgeGraph& graph) {
  const auto names = graph.entities().names();
  for (std::size_t i = 0; i < names.size(); ++i) out << names[i] << '\t' << i << '\n';
}

void write_relation_vocabulary(std::ostream& out, const KnowledgeGraph& graph) {
  const auto names = graph.relations().names();
  for (std::size_t i = 0; i < names.size(); ++i) out << names[i] << '\t' << i << '\n';
}

std::vector<EntityId> link_entities(std::span<const std::string> external_ids,
                                    const KnowledgeGraph& graph) {
  std::vector<EntityId> out;
  out.reserve(external_ids.size());
  for (const auto& ext : external_ids) {
    const auto id = graph.entities().find(ext);
    // The PAD name itself is not a linkable entity.
    out.push_back(id && *id != kPadEntity ? *id : kPadEntity);
  }
  return out;
}

std::size_t EgoNetwork::real_hop1() const {
  return static_cast<std::size_t>(std::count(hop1_padded.begin(), hop1_padded.end(), false));
}

std::vector<Edge> sample_neighbors(const KnowledgeGraph& graph, EntityId entity, int neighbor_size,
                                   std::uint64_t seed) {
  if (neighbor_size <= 0) {
    throw ConfigError("neighbor_size must be positive, got " + std::to_string(neighbor_size));
  }
  if (entity == kPadEntity) return {};
  const auto adj = graph.neighbors(entity);
  const std::size_t take = std::min(adj.size(), static_cast<std::size_t>(neighbor_size));
  std::vector<std::size_t> order(adj.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(entity)));
  for (std::size_t i = 0; i < take; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_index(rng, adj.size() - i));
    std::swap(order[i], order[j]);
  }
  std::vector<Edge> chosen;
  chosen.reserve(take);
  for (std::size_t i = 0; i < take; ++i) chosen.push_back(adj[order[i]]);
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

namespace {

void fill_slots(std::vector<Edge> real, int size, std::vector<Edge>& edges, std::vector<bool>& padded) {
  edges.assign(static_cast<std::size_t>(size), Edge{});
  padded.assign(static_cast<std::size_t>(size), true);
  for (std::size_t i = 0; i < real.size(); ++i) {
    edges[i] = real[i];
    padded[i] = false;
  }
}

}  // namespace

EgoNetwork sample_ego_network(EntityId center, const KnowledgeGraph& graph, int neighbor_size,
                              std::uint64_t seed) {
  if (neighbor_size <= 0) {
    throw ConfigError("neighbor_size must be positive, got " + std::to_string(neighbor_size));
  }
  require(center >= 0 && center < graph.entity_count(),
          "center entity " + std::to_string(center) + " out of range");
  EgoNetwork ego;
  ego.center = center;
  ego.neighbor_size = neighbor_size;
  fill_slots(sample_neighbors(graph, center, neighbor_size, seed), neighbor_size, ego.hop1,
             ego.hop1_padded);
  ego.hop2.resize(static_cast<std::size_t>(neighbor_size));
  ego.hop2_padded.resize(static_cast<std::size_t>(neighbor_size));
  for (std::size_t i = 0; i < ego.hop1.size(); ++i) {
    const EntityId node = ego.hop1_padded[i] ? kPadEntity : ego.hop1[i].neighbor;
    fill_slots(sample_neighbors(graph, node, neighbor_size, seed), neighbor_size, ego.hop2[i],
               ego.hop2_padded[i]);
  }
  return ego;
}

}  // namespace dor::kg
