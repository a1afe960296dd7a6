#pragma once

// Article knowledge graphs: construction from extracted concepts, canonical
// JSON form, structural validation, node featurization (hashed text +
// node-type one-hot + random-walk positional encodings) and corpus-level
// frequency statistics.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "graphlay/concepts.hpp"
#include "graphlay/corpus.hpp"
#include "graphlay/error.hpp"
#include "graphlay/matrix.hpp"
#include "graphlay/text.hpp"

namespace graphlay {

enum class NodeType : int { document = 0, section, metadata, concept_, semtype };

inline constexpr std::size_t kNodeTypeCount = 5;

inline constexpr auto kNodeTypeNames = std::to_array<std::string_view>(
    {"Document", "Section", "Metadata", "Concept", "SemType"});

inline std::string_view node_type_name(NodeType t) {
  return kNodeTypeNames[static_cast<std::size_t>(t)];
}

inline NodeType parse_node_type(std::string_view s) {
  for (std::size_t i = 0; i < kNodeTypeNames.size(); ++i)
    if (kNodeTypeNames[i] == s) return static_cast<NodeType>(i);
  throw Error(ErrorKind::parse, "unknown node type \"" + std::string(s) + "\"");
}

struct Node {
  std::string id;
  NodeType type = NodeType::document;

  auto operator<=>(const Node& o) const {
    if (auto c = type <=> o.type; c != 0) return c;
    return id <=> o.id;
  }
  bool operator==(const Node&) const = default;
};

struct Edge {
  std::string src;
  std::string relation;
  std::string dst;

  auto operator<=>(const Edge&) const = default;
};

/// Nodes sorted by (type, id), edges sorted lexicographically and unique.
struct ArticleGraph {
  std::vector<Node> nodes;
  std::vector<Edge> edges;

  std::size_t count(NodeType t) const {
    return static_cast<std::size_t>(std::count_if(
        nodes.begin(), nodes.end(), [&](const Node& n) { return n.type == t; }));
  }

  const Node* find(std::string_view id) const {
    for (const auto& n : nodes)
      if (n.id == id) return &n;
    return nullptr;
  }

  void canonicalize() {
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  }

  bool operator==(const ArticleGraph&) const = default;
};

// ------------------------------------------------------------- labels

inline std::string abstract_label(const std::string& article_id) {
  return article_id + "_Abs";
}
inline std::string section_label(const std::string& article_id, int index) {
  return index == kAbstractIndex ? abstract_label(article_id)
                                 : article_id + "_Sec" + std::to_string(index);
}

// ------------------------------------------------------------- build

inline ArticleGraph build_graph(const Article& article,
                                const SectionConceptMap& section_concepts,
                                const Lexicon& lexicon) {
  ArticleGraph g;
  const std::string& aid = article.id;
  auto add_node = [&](std::string id, NodeType t) {
    g.nodes.push_back({std::move(id), t});
  };
  auto add_edge = [&](const std::string& s, std::string_view r,
                      const std::string& d) {
    g.edges.push_back({s, std::string(r), d});
  };

  add_node(aid, NodeType::document);
  add_node(aid + "_Title", NodeType::metadata);
  add_edge(aid, "has_title", aid + "_Title");
  add_node(aid + "_Date", NodeType::metadata);
  add_edge(aid, "was_published_in", aid + "_Date");
  for (std::size_t k = 0; k < article.keywords.size(); ++k) {
    const std::string kw = aid + "_Kw" + std::to_string(k);
    add_node(kw, NodeType::metadata);
    add_edge(aid, "has_keyword", kw);
  }

  std::set<std::string> semtypes_present;
  auto add_section = [&](int index) {
    const std::string label = section_label(aid, index);
    add_node(label, NodeType::section);
    add_edge(aid, "contains", label);
    add_node(label + "_Title", NodeType::metadata);
    add_edge(label, "has_title", label + "_Title");
    auto it = section_concepts.find(index);
    if (it == section_concepts.end()) return;
    for (const auto& cid : it->second) {
      auto c = lexicon.concepts.find(cid);
      if (c == lexicon.concepts.end())
        throw Error(ErrorKind::unresolved_reference,
                    "dangling concept id " + cid + " in article " + aid);
      if (c->second.semtypes.empty())
        throw Error(ErrorKind::missing_field,
                    "concept " + cid + " has no semantic types");
      add_node(cid, NodeType::concept_);
      add_edge(label, "contains", cid);
      for (const auto& tid : c->second.semtypes) {
        lexicon.semtype_at(tid);
        add_node(tid, NodeType::semtype);
        add_edge(cid, "is_a", tid);
        semtypes_present.insert(tid);
      }
    }
  };
  add_section(kAbstractIndex);
  for (std::size_t i = 0; i < article.sections.size(); ++i)
    add_section(static_cast<int>(i));

  for (const auto& r : lexicon.relations) {
    if (!is_semantic_relation(r.relation))
      throw Error(ErrorKind::unknown_relation,
                  "unknown relation name \"" + r.relation + "\"");
    if (semtypes_present.count(r.from) && semtypes_present.count(r.to))
      add_edge(r.from, r.relation, r.to);
  }
  g.canonicalize();
  return g;
}

// ------------------------------------------------------------- validation

/// Returns every violated structural invariant; empty means valid.
inline std::vector<std::string> validate_graph(const ArticleGraph& g) {
  std::vector<std::string> problems;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (!index.emplace(g.nodes[i].id, i).second)
      problems.push_back("duplicate node id " + g.nodes[i].id);
  }
  if (g.count(NodeType::document) != 1) {
    problems.push_back("expected exactly one Document node");
    return problems;
  }
  const std::string& doc = std::find_if(g.nodes.begin(), g.nodes.end(), [](auto& n) {
                             return n.type == NodeType::document;
                           })->id;

  std::vector<std::vector<std::size_t>> adj(g.nodes.size());
  std::vector<bool> concept_has_type(g.nodes.size(), false);
  for (const auto& e : g.edges) {
    auto s = index.find(e.src);
    auto d = index.find(e.dst);
    if (s == index.end() || d == index.end()) {
      problems.push_back("edge endpoint missing: " + e.src + " " + e.relation +
                         " " + e.dst);
      continue;
    }
    if (!is_known_relation(e.relation))
      problems.push_back("unknown relation " + e.relation);
    adj[s->second].push_back(d->second);
    adj[d->second].push_back(s->second);
    if (e.relation == "is_a" && g.nodes[s->second].type == NodeType::concept_ &&
        g.nodes[d->second].type == NodeType::semtype)
      concept_has_type[s->second] = true;
  }

  std::vector<bool> seen(g.nodes.size(), false);
  std::queue<std::size_t> q;
  q.push(index.at(doc));
  seen[index.at(doc)] = true;
  while (!q.empty()) {
    auto u = q.front();
    q.pop();
    for (auto v : adj[u])
      if (!seen[v]) {
        seen[v] = true;
        q.push(v);
      }
  }
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (!seen[i]) problems.push_back("unreachable node " + g.nodes[i].id);
    if (g.nodes[i].type == NodeType::concept_ && !concept_has_type[i])
      problems.push_back("concept without is_a SemType edge: " + g.nodes[i].id);
  }

  bool has_abstract = false;
  std::set<int> body;
  for (const auto& n : g.nodes) {
    if (n.type != NodeType::section) continue;
    if (n.id == doc + "_Abs") {
      has_abstract = true;
      continue;
    }
    const std::string prefix = doc + "_Sec";
    const std::string_view rest = std::string_view(n.id).substr(
        std::min(prefix.size(), n.id.size()));
    const bool digits =
        !rest.empty() && std::all_of(rest.begin(), rest.end(), [](char c) {
          return c >= '0' && c <= '9';
        });
    if (n.id.rfind(prefix, 0) != 0 || !digits ||
        (rest.size() > 1 && rest[0] == '0')) {
      problems.push_back("section label violates scheme: " + n.id);
      continue;
    }
    body.insert(std::stoi(std::string(rest)));
  }
  if (!has_abstract) problems.push_back("missing abstract section node");
  int expect = 0;
  for (int i : body)
    if (i != expect++) {
      problems.push_back("section indices are not contiguous from 0");
      break;
    }
  return problems;
}

// ------------------------------------------------------------- file format

inline std::string serialize_graph(const ArticleGraph& graph) {
  ArticleGraph g = graph;
  g.canonicalize();
  json j;
  j["nodes"] = json::array();
  for (const auto& n : g.nodes)
    j["nodes"].push_back({{"id", n.id}, {"type", node_type_name(n.type)}});
  j["edges"] = json::array();
  for (const auto& e : g.edges)
    j["edges"].push_back({e.src, e.relation, e.dst});
  return j.dump(1) + "\n";
}

inline ArticleGraph parse_graph(std::string_view bytes) {
  json j;
  try {
    j = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::parse, std::string("malformed graph: ") + e.what());
  }
  if (!j.is_object() || !j.contains("nodes") || !j.contains("edges") ||
      !j["nodes"].is_array() || !j["edges"].is_array())
    throw Error(ErrorKind::parse, "graph must have \"nodes\" and \"edges\" arrays");
  ArticleGraph g;
  for (const auto& n : j["nodes"]) {
    if (!n.is_object() || !n.contains("id") || !n.contains("type") ||
        !n["id"].is_string() || !n["type"].is_string())
      throw Error(ErrorKind::parse, "malformed graph node");
    g.nodes.push_back(
        {n["id"].get<std::string>(), parse_node_type(n["type"].get<std::string>())});
  }
  for (const auto& e : j["edges"]) {
    if (!e.is_array() || e.size() != 3 || !e[0].is_string() ||
        !e[1].is_string() || !e[2].is_string())
      throw Error(ErrorKind::parse, "malformed graph edge");
    g.edges.push_back(
        {e[0].get<std::string>(), e[1].get<std::string>(), e[2].get<std::string>()});
  }
  g.canonicalize();
  return g;
}

// ------------------------------------------------------------- GAT view

/// Undirected simple view of a graph: symmetrized, without self-loops or
/// duplicate neighbours.
struct AdjacencyList {
  std::vector<std::string> ids;
  std::vector<NodeType> types;
  std::vector<std::vector<std::size_t>> neighbors;

  std::size_t size() const { return ids.size(); }
};

inline AdjacencyList make_adjacency(const ArticleGraph& g,
                                    const std::set<std::string>& exclude = {}) {
  AdjacencyList out;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& n : g.nodes) {
    if (exclude.count(n.id)) continue;
    index[n.id] = out.ids.size();
    out.ids.push_back(n.id);
    out.types.push_back(n.type);
  }
  std::vector<std::set<std::size_t>> nb(out.ids.size());
  for (const auto& e : g.edges) {
    auto s = index.find(e.src);
    auto d = index.find(e.dst);
    if (s == index.end() || d == index.end() || s->second == d->second) continue;
    nb[s->second].insert(d->second);
    nb[d->second].insert(s->second);
  }
  for (auto& s : nb) out.neighbors.emplace_back(s.begin(), s.end());
  return out;
}

/// Title metadata nodes (targets of has_title) are dropped from the graph the
/// GAT sees; their text lives in the owning Document/Section features.
inline AdjacencyList gat_input_graph(const ArticleGraph& g) {
  std::set<std::string> titles;
  for (const auto& e : g.edges)
    if (e.relation == "has_title") titles.insert(e.dst);
  return make_adjacency(g, titles);
}

/// Random-walk positional encoding. Column k-1 holds diag((A D^-1)^k) for
/// k = 1..K over the undirected simple adjacency. Isolated nodes get zeros.
inline Matrix rwpe(const AdjacencyList& adj, std::size_t K) {
  if (K < 1) throw Error(ErrorKind::invalid_argument, "RWPE length must be >= 1");
  const std::size_t n = adj.size();
  // rw(i, j) = A(i, j) / deg(j)
  Matrix rw(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto deg = adj.neighbors[j].size();
    if (deg == 0) continue;
    for (auto i : adj.neighbors[j]) rw(i, j) = 1.0 / static_cast<double>(deg);
  }
  Matrix out(n, K);
  Matrix power = rw;
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < n; ++i) out(i, k) = power(i, i);
    if (k + 1 == K) break;
    Matrix next(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t m = 0; m < n; ++m) {
        const double a = power(i, m);
        if (a == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) next(i, j) += a * rw(m, j);
      }
    power = std::move(next);
  }
  return out;
}

inline Matrix rwpe(const ArticleGraph& g, std::size_t K) {
  return rwpe(make_adjacency(g), K);
}

// ------------------------------------------------------------- features

/// Signed feature hashing of lowercased tokens (FNV-1a 64), L2-normalized.
/// Text without tokens yields the zero vector.
inline std::vector<double> hashed_text_embedding(std::string_view text,
                                                 std::size_t dim) {
  std::vector<double> v(dim, 0.0);
  for (const auto& w : words(text)) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : w) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    const double sign = ((h >> 32) & 1U) != 0U ? -1.0 : 1.0;
    v[h % dim] += sign;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

struct NodeFeatureMatrix {
  std::vector<std::string> node_ids;
  std::size_t d_text = 0;
  std::size_t rwpe_k = 0;
  Matrix values;  // node_ids.size() x (d_text + 5 + rwpe_k)

  std::size_t width() const { return d_text + kNodeTypeCount + rwpe_k; }
};

/// Text each GAT-input node is initialised from: definitions for concepts and
/// semantic types, titles for the document and its sections, own content for
/// date/keyword metadata.
inline std::string node_source_text(const std::string& id, NodeType type,
                                    const Article& article,
                                    const Lexicon& lexicon) {
  const std::string& aid = article.id;
  switch (type) {
    case NodeType::document:
      return article.title;
    case NodeType::section: {
      if (id == aid + "_Abs") return article.abstract.title;
      const auto idx = std::stoul(id.substr(aid.size() + 4));
      return article.sections.at(idx).title;
    }
    case NodeType::metadata: {
      if (id == aid + "_Date") return article.pub_date;
      if (id == aid + "_Title") return article.title;
      const std::string kw = aid + "_Kw";
      if (id.rfind(kw, 0) == 0)
        return article.keywords.at(std::stoul(id.substr(kw.size())));
      return {};
    }
    case NodeType::concept_:
      return lexicon.concept_at(id).definition;
    case NodeType::semtype:
      return lexicon.semtype_at(id).definition;
  }
  return {};
}

inline NodeFeatureMatrix init_node_features(const ArticleGraph& graph,
                                            const Article& article,
                                            const Lexicon& lexicon,
                                            std::size_t d_text, std::size_t K) {
  if (d_text < 8)
    throw Error(ErrorKind::shape_mismatch, "d_text must be at least 8");
  const AdjacencyList adj = gat_input_graph(graph);
  const Matrix pe = rwpe(adj, K);
  NodeFeatureMatrix f;
  f.node_ids = adj.ids;
  f.d_text = d_text;
  f.rwpe_k = K;
  f.values = Matrix(adj.size(), f.width());
  for (std::size_t i = 0; i < adj.size(); ++i) {
    const auto text =
        hashed_text_embedding(node_source_text(adj.ids[i], adj.types[i], article,
                                               lexicon),
                              d_text);
    double* row = f.values.row(i);
    std::copy(text.begin(), text.end(), row);
    row[d_text + static_cast<std::size_t>(adj.types[i])] = 1.0;
    for (std::size_t k = 0; k < K; ++k) row[d_text + kNodeTypeCount + k] = pe(i, k);
  }
  return f;
}

// ------------------------------------------------------------- statistics

struct GraphStats {
  std::size_t graph_count = 0;
  std::map<std::string, double> node_type_means;
  std::map<std::string, double> relation_means;
  std::map<std::string, double> semtype_means;  // keyed by SemType node id

  std::string to_markdown() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "Graphs: " << graph_count << "\n\n";
    os << "| Node type | Average Count |\n|---|---|\n";
    for (auto name : kNodeTypeNames)
      os << "| " << name << " | " << node_type_means.at(std::string(name))
         << " |\n";
    os << "\n| Relation type | Average Count |\n|---|---|\n";
    for (const auto& [rel, v] : relation_means)
      os << "| " << rel << " | " << v << " |\n";
    os << "\n| Semantic type | Average Count |\n|---|---|\n";
    for (const auto& [t, v] : semtype_means) os << "| " << t << " | " << v << " |\n";
    return os.str();
  }

  json to_json() const {
    return {{"graphs", graph_count},
            {"node_types", node_type_means},
            {"relations", relation_means},
            {"semtypes", semtype_means}};
  }
};

inline GraphStats graph_stats(const std::vector<ArticleGraph>& graphs) {
  if (graphs.empty())
    throw Error(ErrorKind::invalid_argument, "graph_stats needs at least one graph");
  GraphStats s;
  s.graph_count = graphs.size();
  for (auto name : kNodeTypeNames) s.node_type_means[std::string(name)] = 0.0;
  for (const auto& g : graphs) {
    for (const auto& n : g.nodes) {
      s.node_type_means[std::string(node_type_name(n.type))] += 1.0;
      if (n.type == NodeType::semtype) s.semtype_means[n.id] += 1.0;
    }
    for (const auto& e : g.edges) s.relation_means[e.relation] += 1.0;
  }
  const double n = static_cast<double>(graphs.size());
  for (auto* m : {&s.node_type_means, &s.relation_means, &s.semtype_means})
    for (auto& [k, v] : *m) v /= n;
  return s;
}

}  // namespace graphlay
