#include "gdda/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

using json = nlohmann::json;

namespace gdda {

void GraphInstance::validate(int num_classes, int num_domains) const {
  auto fail = [this](const std::string& why) {
    throw IoError("instance " + instance_id + ": " + why);
  };
  int n = num_nodes();
  if (adjacency.cols() != n) fail("adjacency is not square");
  if (node_features.rows() != n)
    fail("node_features row count does not match adjacency dimension");
  for (int i = 0; i < n; ++i) {
    if (adjacency(i, i) != 0) fail("adjacency has a nonzero diagonal");
    for (int j = 0; j < n; ++j) {
      if (adjacency(i, j) != adjacency(j, i)) fail("adjacency is asymmetric");
      if (adjacency(i, j) != 0 && adjacency(i, j) != 1)
        fail("adjacency entries must be 0/1");
    }
  }
  if (!node_features.allFinite()) fail("node_features contain non-finite values");
  if (label < 0 || label >= num_classes) fail("label out of range");
  if (domain < 0 || domain >= num_domains) fail("domain out of range");
}

bool GraphInstance::operator==(const GraphInstance& other) const {
  return instance_id == other.instance_id && label == other.label &&
         domain == other.domain && adjacency == other.adjacency &&
         node_features.rows() == other.node_features.rows() &&
         node_features.cols() == other.node_features.cols() &&
         node_features == other.node_features;
}

namespace {
int max_id(const std::vector<int>& a, const std::vector<int>& b) {
  int m = -1;
  for (int v : a) m = std::max(m, v);
  for (int v : b) m = std::max(m, v);
  return m;
}
}  // namespace

int BenchmarkSpec::num_classes() const {
  return max_id(known_classes, unknown_classes) + 1;
}

int BenchmarkSpec::num_domains() const {
  return max_id(train_domains, test_domains) + 1;
}

int BenchmarkSpec::d_in() const {
  return style_vectors.empty() ? 0
                               : static_cast<int>(style_vectors[0].size());
}

void BenchmarkSpec::validate() const {
  if (known_classes.empty()) throw ConfigError("benchmark: no known classes");
  if (train_domains.empty()) throw ConfigError("benchmark: no train domains");
  std::set<int> known(known_classes.begin(), known_classes.end());
  for (int c : unknown_classes)
    if (known.count(c) > 0)
      throw ConfigError("benchmark: class " + std::to_string(c) +
                        " is both known and unknown");
  std::set<int> tr(train_domains.begin(), train_domains.end());
  for (int d : test_domains)
    if (tr.count(d) > 0)
      throw ConfigError("benchmark: domain " + std::to_string(d) +
                        " is both train and test");
  for (int c : known_classes)
    if (c < 0) throw ConfigError("benchmark: negative class id");
  for (int c : unknown_classes)
    if (c < 0) throw ConfigError("benchmark: negative class id");
  for (int d : train_domains)
    if (d < 0) throw ConfigError("benchmark: negative domain id");
  for (int d : test_domains)
    if (d < 0) throw ConfigError("benchmark: negative domain id");
  if (graphs_per_cell < 1)
    throw ConfigError("benchmark: graphs_per_cell must be >= 1");
  if (nodes_min > nodes_max)
    throw ConfigError("benchmark: nodes_min > nodes_max");
  if (nodes_min < 3)
    throw ConfigError("benchmark: nodes_min must be >= 3 for the motif set");
  if (noise_scale < 0.0) throw ConfigError("benchmark: negative noise_scale");
  if (static_cast<int>(style_vectors.size()) != num_domains())
    throw ConfigError("benchmark: need one style vector per domain id (" +
                      std::to_string(num_domains()) + ")");
  int d = d_in();
  for (const auto& v : style_vectors)
    if (static_cast<int>(v.size()) != d)
      throw ConfigError("benchmark: style vectors must share one length");
  if (d < num_classes())
    throw ConfigError("benchmark: d_in " + std::to_string(d) +
                      " is smaller than the class signature length " +
                      std::to_string(num_classes()));
}

bool DatasetSplit::operator==(const DatasetSplit& other) const {
  return d_in == other.d_in && num_classes == other.num_classes &&
         num_domains == other.num_domains && train == other.train &&
         test_ind == other.test_ind && test_ood == other.test_ood;
}

Eigen::VectorXd class_signature(int label, int num_classes, int d_in) {
  if (d_in < num_classes)
    throw ConfigError("class_signature: d_in smaller than num_classes");
  Eigen::VectorXd sig = Eigen::VectorXd::Zero(d_in);
  sig(label) = kSignatureScale;
  return sig;
}

Eigen::MatrixXi motif_adjacency(int label, int n) {
  if (n < 3) throw UsageError("motif_adjacency: need at least 3 nodes");
  Eigen::MatrixXi a = Eigen::MatrixXi::Zero(n, n);
  auto connect = [&a](int u, int v) {
    a(u, v) = 1;
    a(v, u) = 1;
  };
  auto cycle = [&] {
    for (int i = 0; i < n; ++i) connect(i, (i + 1) % n);
  };
  switch (label) {
    case 0:
      cycle();
      break;
    case 1:
      for (int i = 0; i + 1 < n; ++i) connect(i, i + 1);
      break;
    case 2:
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) connect(i, j);
      break;
    case 3:
      for (int i = 1; i < n; ++i) connect(0, i);
      break;
    default: {
      // cycle plus `label` chords, enumerated by increasing gap then anchor
      cycle();
      int chords = label;
      for (int gap = 2; gap <= n / 2 && chords > 0; ++gap) {
        for (int u = 0; u < n && chords > 0; ++u) {
          int v = (u + gap) % n;
          if (a(u, v) == 0) {
            connect(u, v);
            --chords;
          }
        }
      }
      break;
    }
  }
  return a;
}

namespace {

GraphInstance make_instance(const BenchmarkSpec& spec, const std::string& id,
                            int label, int domain, uint64_t instance_seed) {
  Rng rng = make_rng(instance_seed);
  int n = rand_int(rng, spec.nodes_min, spec.nodes_max);
  GraphInstance g;
  g.instance_id = id;
  g.label = label;
  g.domain = domain;
  g.adjacency = motif_adjacency(label, n);
  Eigen::VectorXd base = class_signature(label, spec.num_classes(), spec.d_in()) +
                         spec.style_vectors[domain];
  g.node_features = base.transpose().replicate(n, 1);
  if (spec.noise_scale > 0.0)
    g.node_features += spec.noise_scale * randn_matrix(rng, n, spec.d_in());
  return g;
}

}  // namespace

DatasetSplit generate_benchmark(const BenchmarkSpec& spec) {
  spec.validate();
  DatasetSplit split;
  split.d_in = spec.d_in();
  split.num_classes = spec.num_classes();
  split.num_domains = spec.num_domains();

  uint64_t index = 0;
  auto fill = [&](std::vector<GraphInstance>& out, const char* tag,
                  const std::vector<int>& classes,
                  const std::vector<int>& domains) {
    for (int label : classes)
      for (int domain : domains)
        for (int i = 0; i < spec.graphs_per_cell; ++i) {
          std::ostringstream id;
          id << tag << "-c" << label << "-d" << domain << "-" << i;
          out.push_back(make_instance(spec, id.str(), label, domain,
                                      mix_seed(spec.seed, index)));
          ++index;
        }
  };
  fill(split.train, "train", spec.known_classes, spec.train_domains);
  fill(split.test_ind, "ind", spec.known_classes, spec.test_domains);
  fill(split.test_ood, "ood", spec.unknown_classes, spec.test_domains);
  return split;
}

namespace {

json instance_to_json(const GraphInstance& g, const std::string& split_name) {
  json row;
  row["instance_id"] = g.instance_id;
  row["split"] = split_name;
  row["label"] = g.label;
  row["domain"] = g.domain;
  row["num_nodes"] = g.num_nodes();
  json feats = json::array();
  for (Eigen::Index r = 0; r < g.node_features.rows(); ++r) {
    json fr = json::array();
    for (Eigen::Index c = 0; c < g.node_features.cols(); ++c)
      fr.push_back(g.node_features(r, c));
    feats.push_back(std::move(fr));
  }
  row["node_features"] = std::move(feats);
  json edges = json::array();
  for (int u = 0; u < g.num_nodes(); ++u)
    for (int v = u + 1; v < g.num_nodes(); ++v)
      if (g.adjacency(u, v) != 0) edges.push_back(json::array({u, v}));
  row["edges"] = std::move(edges);
  return row;
}

GraphInstance instance_from_json(const json& row, int d_in) {
  GraphInstance g;
  g.instance_id = row.at("instance_id").get<std::string>();
  g.label = row.at("label").get<int>();
  g.domain = row.at("domain").get<int>();
  int n = row.at("num_nodes").get<int>();
  auto fail = [&g](const std::string& why) {
    throw IoError("instance " + g.instance_id + ": " + why);
  };
  if (n < 0) fail("negative num_nodes");
  const json& feats = row.at("node_features");
  if (static_cast<int>(feats.size()) != n)
    fail("node_features row count does not match num_nodes");
  g.node_features.resize(n, d_in);
  for (int r = 0; r < n; ++r) {
    const json& fr = feats.at(r);
    if (static_cast<int>(fr.size()) != d_in)
      fail("node feature row has wrong width");
    for (int c = 0; c < d_in; ++c) g.node_features(r, c) = fr.at(c).get<double>();
  }
  g.adjacency = Eigen::MatrixXi::Zero(n, n);
  for (const json& e : row.at("edges")) {
    if (e.size() != 2) fail("edge is not a [u,v] pair");
    int u = e.at(0).get<int>();
    int v = e.at(1).get<int>();
    if (u < 0 || v < 0 || u >= n || v >= n) fail("edge endpoint out of range");
    if (u >= v) fail("edge is not in u<v order");
    if (g.adjacency(u, v) != 0) fail("duplicate edge");
    g.adjacency(u, v) = 1;
    g.adjacency(v, u) = 1;
  }
  return g;
}

}  // namespace

void save_dataset(const DatasetSplit& split, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset: " + path.string());
  json header;
  header["schema"] = "gdda-graphs/1";
  header["d_in"] = split.d_in;
  header["num_classes"] = split.num_classes;
  header["num_domains"] = split.num_domains;
  out << header.dump() << "\n";
  auto dump_all = [&out](const std::vector<GraphInstance>& list,
                         const char* name) {
    for (const GraphInstance& g : list)
      out << instance_to_json(g, name).dump() << "\n";
  };
  dump_all(split.train, "train");
  dump_all(split.test_ind, "test_ind");
  dump_all(split.test_ood, "test_ood");
  if (!out) throw IoError("short write to " + path.string());
}

DatasetSplit load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("missing dataset: " + path.string());
  DatasetSplit split;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::parse_error& e) {
      throw IoError("dataset " + path.string() + " line " +
                    std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (!have_header) {
        if (row.value("schema", "") != "gdda-graphs/1")
          throw IoError("missing or unexpected schema header");
        split.d_in = row.at("d_in").get<int>();
        split.num_classes = row.at("num_classes").get<int>();
        split.num_domains = row.at("num_domains").get<int>();
        have_header = true;
        continue;
      }
      GraphInstance g = instance_from_json(row, split.d_in);
      g.validate(split.num_classes, split.num_domains);
      std::string where = row.at("split").get<std::string>();
      if (where == "train")
        split.train.push_back(std::move(g));
      else if (where == "test_ind")
        split.test_ind.push_back(std::move(g));
      else if (where == "test_ood")
        split.test_ood.push_back(std::move(g));
      else
        throw IoError("unknown split tag: " + where);
    } catch (const json::exception& e) {
      throw IoError("dataset " + path.string() + " line " +
                    std::to_string(line_no) + ": " + e.what());
    }
  }
  return split;
}

}  // namespace gdda
