#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace sjlgm {

struct LongitudinalRecord {
  std::string subject;
  int region = 0;
  double time = 0.0;
  double y = 0.0;
  Eigen::VectorXd x;  // length p1
};

struct SurvivalRecord {
  std::string subject;
  int region = 0;
  double time = 0.0;
  int event = 0;  // 1 = observed, 0 = right-censored
  Eigen::VectorXd x;  // length p2
};

struct AdjacencyGraph {
  int K = 0;
  std::vector<std::pair<int, int>> edges;  // i < j, unique

  std::vector<int> neighbor_counts() const {
    std::vector<int> n(K, 0);
    for (auto [a, b] : edges) {
      ++n[a];
      ++n[b];
    }
    return n;
  }

  std::vector<std::vector<int>> neighbor_lists() const {
    std::vector<std::vector<int>> nb(K);
    for (auto [a, b] : edges) {
      nb[a].push_back(b);
      nb[b].push_back(a);
    }
    return nb;
  }

  void add_edge(int a, int b) {
    if (a == b) throw std::invalid_argument("graph: self-loop at region " + std::to_string(a));
    if (a > b) std::swap(a, b);
    edges.emplace_back(a, b);
  }

  void finalize() {
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    for (auto [a, b] : edges)
      if (a < 0 || b >= K)
        throw std::invalid_argument("graph: edge endpoint out of range");
  }

  /// 10x10-style rook lattice used as the default simulation geography.
  static AdjacencyGraph lattice(int rows, int cols) {
    AdjacencyGraph g;
    g.K = rows * cols;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        const int k = r * cols + c;
        if (c + 1 < cols) g.add_edge(k, k + 1);
        if (r + 1 < rows) g.add_edge(k, k + cols);
      }
    g.finalize();
    return g;
  }
};

struct DatasetSummary {
  int n_subjects = 0;
  int n_regions = 0;
  int n_longitudinal = 0;
  int n_events = 0;
  double censoring_rate = 0.0;
  double mean_replications = 0.0;
  double subjects_per_region_mean = 0.0;
  double subjects_per_region_sd = 0.0;
};

struct JointDataset {
  std::vector<LongitudinalRecord> longitudinal;
  std::vector<SurvivalRecord> survival;  // exactly one per subject
  AdjacencyGraph graph;

  // Derived, filled by index().
  std::map<std::string, int> subject_index;        // subject id -> dense index
  std::vector<std::string> subject_ids;            // dense index -> id
  std::vector<int> subject_region;                 // dense index -> region
  std::vector<std::vector<int>> subject_long_rows; // dense index -> longitudinal rows

  int n_subjects() const { return static_cast<int>(survival.size()); }
  int p1() const { return longitudinal.empty() ? 0 : static_cast<int>(longitudinal.front().x.size()); }
  int p2() const { return survival.empty() ? 0 : static_cast<int>(survival.front().x.size()); }

  /// Builds the dense subject index in survival-file order.
  void index() {
    subject_index.clear();
    subject_ids.clear();
    subject_region.clear();
    for (const auto& s : survival) {
      if (subject_index.count(s.subject))
        throw std::invalid_argument("duplicate survival record for subject " + s.subject);
      subject_index[s.subject] = static_cast<int>(subject_ids.size());
      subject_ids.push_back(s.subject);
      subject_region.push_back(s.region);
    }
    subject_long_rows.assign(subject_ids.size(), {});
    for (size_t r = 0; r < longitudinal.size(); ++r) {
      auto it = subject_index.find(longitudinal[r].subject);
      if (it == subject_index.end())
        throw std::invalid_argument("longitudinal subject " + longitudinal[r].subject +
                                    " has no survival record");
      subject_long_rows[it->second].push_back(static_cast<int>(r));
    }
  }

  /// Cross-file invariants. `strict_times` rejects longitudinal times at or
  /// past the survival time; otherwise times strictly past T are rejected
  /// and ties are kept with a warning count.
  void validate(bool strict_times, int* tie_warnings = nullptr) const {
    if (survival.empty()) throw std::invalid_argument("dataset has no survival records");
    for (const auto& s : survival) {
      if (s.event != 0 && s.event != 1)
        throw std::invalid_argument("subject " + s.subject + ": event must be 0 or 1");
      if (!(s.time > 0)) throw std::invalid_argument("subject " + s.subject + ": survival time must be positive");
      if (s.region < 0 || s.region >= graph.K)
        throw std::invalid_argument("subject " + s.subject + ": region out of range");
      if (static_cast<int>(s.x.size()) != p2())
        throw std::invalid_argument("subject " + s.subject + ": survival covariate length mismatch");
    }
    for (size_t i = 0; i < subject_long_rows.size(); ++i)
      if (subject_long_rows[i].empty())
        throw std::invalid_argument("subject " + subject_ids[i] + " has no longitudinal measurements");
    for (const auto& r : longitudinal) {
      if (r.region < 0 || r.region >= graph.K)
        throw std::invalid_argument("longitudinal subject " + r.subject + ": region out of range");
      if (static_cast<int>(r.x.size()) != p1())
        throw std::invalid_argument("longitudinal subject " + r.subject + ": covariate length mismatch");
      if (r.time < 0) throw std::invalid_argument("longitudinal subject " + r.subject + ": negative time");
      const auto it = subject_index.find(r.subject);
      const double T = survival[it->second].time;
      if (r.time > T || (strict_times && r.time >= T)) {
        std::ostringstream os;
        os << "longitudinal time " << r.time << " for subject " << r.subject
           << " is not before its survival time " << T;
        throw std::invalid_argument(os.str());
      }
      if (r.time == T && tie_warnings) ++*tie_warnings;
    }
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, const std::string& file, int lineno) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument(file + ":" + std::to_string(lineno) + ": cannot parse number '" + s + "'");
  }
}

}  // namespace detail

/// Longitudinal CSV: subject,region,time,y,<x1 columns...>
inline std::vector<LongitudinalRecord> load_longitudinal_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument(path + ": empty file");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 4 || header[0] != "subject")
    throw std::invalid_argument(path + ":1: expected header subject,region,time,y,...");
  const int p1 = static_cast<int>(header.size()) - 4;
  std::vector<LongitudinalRecord> recs;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (static_cast<int>(f.size()) != p1 + 4)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": wrong field count");
    LongitudinalRecord r;
    r.subject = f[0];
    r.region = static_cast<int>(detail::parse_double(f[1], path, lineno));
    r.time = detail::parse_double(f[2], path, lineno);
    r.y = detail::parse_double(f[3], path, lineno);
    r.x.resize(p1);
    for (int j = 0; j < p1; ++j) r.x[j] = detail::parse_double(f[4 + j], path, lineno);
    recs.push_back(std::move(r));
  }
  return recs;
}

/// Survival CSV: subject,region,time,event,<x2 columns...>
inline std::vector<SurvivalRecord> load_survival_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument(path + ": empty file");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 4 || header[0] != "subject")
    throw std::invalid_argument(path + ":1: expected header subject,region,time,event,...");
  const int p2 = static_cast<int>(header.size()) - 4;
  std::vector<SurvivalRecord> recs;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (static_cast<int>(f.size()) != p2 + 4)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": wrong field count");
    SurvivalRecord r;
    r.subject = f[0];
    r.region = static_cast<int>(detail::parse_double(f[1], path, lineno));
    r.time = detail::parse_double(f[2], path, lineno);
    r.event = static_cast<int>(detail::parse_double(f[3], path, lineno));
    r.x.resize(p2);
    for (int j = 0; j < p2; ++j) r.x[j] = detail::parse_double(f[4 + j], path, lineno);
    recs.push_back(std::move(r));
  }
  return recs;
}

/// Graph file: first line K, then either neighbor-list lines "k: j1 j2 ..."
/// or edge-list lines "k j". The two styles are auto-detected.
inline AdjacencyGraph load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  AdjacencyGraph g;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (g.K == 0) {
      g.K = static_cast<int>(detail::parse_double(line, path, lineno));
      if (g.K <= 0) throw std::invalid_argument(path + ": K must be positive");
      continue;
    }
    const auto colon = line.find(':');
    std::istringstream is(colon == std::string::npos ? line
                                                     : line.substr(0, colon) + " " + line.substr(colon + 1));
    int k;
    if (!(is >> k)) throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": bad graph line");
    int j;
    bool any = false;
    while (is >> j) {
      any = true;
      if (k < 0 || k >= g.K || j < 0 || j >= g.K)
        throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": region index out of range");
      g.add_edge(k, j);
    }
    if (!any && colon == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": bad graph line");
  }
  if (g.K == 0) throw std::invalid_argument(path + ": empty graph file");
  g.finalize();
  return g;
}

inline JointDataset load_dataset(const std::string& longitudinal_path,
                                 const std::string& survival_path,
                                 const std::string& graph_path,
                                 bool strict_times = false,
                                 int* tie_warnings = nullptr) {
  JointDataset d;
  d.longitudinal = load_longitudinal_csv(longitudinal_path);
  d.survival = load_survival_csv(survival_path);
  d.graph = load_graph(graph_path);
  d.index();
  d.validate(strict_times, tie_warnings);
  return d;
}

inline DatasetSummary summarize_dataset(const JointDataset& d) {
  DatasetSummary s;
  s.n_subjects = d.n_subjects();
  s.n_regions = d.graph.K;
  s.n_longitudinal = static_cast<int>(d.longitudinal.size());
  for (const auto& r : d.survival) s.n_events += r.event;
  s.censoring_rate = 1.0 - static_cast<double>(s.n_events) / s.n_subjects;
  s.mean_replications = static_cast<double>(s.n_longitudinal) / s.n_subjects;
  std::vector<int> per_region(d.graph.K, 0);
  for (int r : d.subject_region) ++per_region[r];
  double mean = 0;
  for (int c : per_region) mean += c;
  mean /= d.graph.K;
  double ss = 0;
  for (int c : per_region) ss += (c - mean) * (c - mean);
  s.subjects_per_region_mean = mean;
  s.subjects_per_region_sd = d.graph.K > 1 ? std::sqrt(ss / (d.graph.K - 1)) : 0.0;
  return s;
}

inline void write_dataset(const JointDataset& d, const std::string& longitudinal_path,
                          const std::string& survival_path, const std::string& graph_path) {
  const auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  {
    std::ofstream out(longitudinal_path);
    out << "subject,region,time,y";
    for (int j = 0; j < (d.longitudinal.empty() ? 0 : d.p1()); ++j) out << ",x" << j + 1;
    out << "\n";
    for (const auto& r : d.longitudinal) {
      out << r.subject << "," << r.region << "," << fmt(r.time) << "," << fmt(r.y);
      for (int j = 0; j < r.x.size(); ++j) out << "," << fmt(r.x[j]);
      out << "\n";
    }
  }
  {
    std::ofstream out(survival_path);
    out << "subject,region,time,event";
    for (int j = 0; j < d.p2(); ++j) out << ",x" << j + 1;
    out << "\n";
    for (const auto& r : d.survival) {
      out << r.subject << "," << r.region << "," << fmt(r.time) << "," << r.event;
      for (int j = 0; j < r.x.size(); ++j) out << "," << fmt(r.x[j]);
      out << "\n";
    }
  }
  {
    std::ofstream out(graph_path);
    out << d.graph.K << "\n";
    for (auto [a, b] : d.graph.edges) out << a << " " << b << "\n";
  }
}

}  // namespace sjlgm
