#pragma once

#include <cstdio>
#include <fstream>
#include <string>

#include <json.hpp>

#include "sjlgm/simulation.hpp"

namespace sjlgm {

using nlohmann::json;

/// All numeric text output carries 17 significant digits so that a rerun can
/// be compared bitwise.
inline std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace detail {

inline json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Eigen::VectorXd vec_from_json(const json& a) {
  Eigen::VectorXd v(a.size());
  for (size_t i = 0; i < a.size(); ++i) v[static_cast<int>(i)] = a[i].get<double>();
  return v;
}

inline json mat_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (int i = 0; i < m.rows(); ++i) a.push_back(vec_json(m.row(i).transpose()));
  return a;
}

inline Eigen::MatrixXd mat_from_json(const json& a) {
  const int r = static_cast<int>(a.size());
  const int c = r > 0 ? static_cast<int>(a[0].size()) : 0;
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i) m.row(i) = vec_from_json(a[i]).transpose();
  return m;
}

inline json summary_json(const CoordinateSummary& s) {
  return {{"name", s.name}, {"mean", s.mean},  {"sd", s.sd},
          {"q025", s.q025}, {"q50", s.q50},    {"q975", s.q975}};
}

inline CoordinateSummary summary_from_json(const json& j) {
  CoordinateSummary s;
  s.name = j.at("name").get<std::string>();
  s.mean = j.at("mean");
  s.sd = j.at("sd");
  s.q025 = j.at("q025");
  s.q50 = j.at("q50");
  s.q975 = j.at("q975");
  return s;
}

}  // namespace detail

inline json model_spec_to_json(const ModelSpec& m) {
  json j{{"name", m.name},
         {"p1", m.p1},
         {"p2", m.p2},
         {"random", m.re == RandomStructure::None
                        ? "none"
                        : (m.re == RandomStructure::Intercept ? "intercept" : "intercept_slope")},
         {"link_b0", m.link_b0},
         {"link_b1", m.link_b1},
         {"spatial", m.spatial},
         {"zeta", m.zeta},
         {"estimate_zeta", m.estimate_zeta},
         {"longitudinal", m.include_longitudinal},
         {"survival", m.include_survival}};
  if (m.spline) {
    j["spline"] = {{"degree", m.spline->degree},
                   {"interior_knots", m.spline->interior_knots},
                   {"lo", m.spline->lo},
                   {"hi", m.spline->hi}};
  }
  return j;
}

inline ModelSpec model_spec_from_json(const json& j) {
  ModelSpec m;
  m.name = j.at("name").get<std::string>();
  m.p1 = j.at("p1");
  m.p2 = j.at("p2");
  const std::string re = j.at("random").get<std::string>();
  m.re = re == "none" ? RandomStructure::None
                      : (re == "intercept" ? RandomStructure::Intercept
                                           : RandomStructure::InterceptSlope);
  m.link_b0 = j.at("link_b0");
  m.link_b1 = j.at("link_b1");
  m.spatial = j.at("spatial");
  m.zeta = j.at("zeta");
  m.estimate_zeta = j.at("estimate_zeta");
  m.include_longitudinal = j.at("longitudinal");
  m.include_survival = j.at("survival");
  if (j.contains("spline")) {
    SplineConfig s;
    s.degree = j["spline"].at("degree");
    s.interior_knots = j["spline"].at("interior_knots").get<std::vector<double>>();
    s.lo = j["spline"].at("lo");
    s.hi = j["spline"].at("hi");
    m.spline = s;
  }
  return m;
}

/// The serialized fit holds everything except the per-grid-point conditional
/// vectors, which are cheap to recompute; see rehydrate_conditionals().
inline json fit_result_to_json(const FitResult& f, const ModelSpec& spec) {
  json j;
  j["model"] = model_spec_to_json(spec);
  j["hyper_names"] = f.hyper_names;
  j["grid"] = {{"points", detail::mat_json(f.grid.points)},
               {"log_post", detail::vec_json(f.grid.log_post)},
               {"weights", detail::vec_json(f.grid.weights)},
               {"theta_star", detail::vec_json(f.grid.theta_star)},
               {"hessian", detail::mat_json(f.grid.hessian)}};
  j["latent"] = json::array();
  for (const auto& s : f.latent) j["latent"].push_back(detail::summary_json(s));
  if (f.mean_level) j["mean_level"] = detail::summary_json(*f.mean_level);
  j["hyper"] = json::array();
  for (const auto& h : f.hyper) {
    json e{{"name", h.name}, {"natural", detail::summary_json(h.natural)}};
    if (h.has_reciprocal) e["reciprocal"] = detail::summary_json(h.reciprocal);
    j["hyper"].push_back(e);
  }
  j["density_coords"] = f.density_coords;
  j["latent_density"] = json::array();
  for (const auto& d : f.latent_density)
    j["latent_density"].push_back({{"x", d.x}, {"density", d.density}});
  if (std::isfinite(f.dic)) {
    j["dic"] = f.dic;
    j["pd"] = f.pd;
  }
  if (std::isfinite(f.waic)) {
    j["waic"] = f.waic;
    j["pwaic"] = f.pwaic;
  }
  j["newton_iterations_total"] = f.newton_iterations_total;
  return j;
}

inline FitResult fit_result_from_json(const json& j, ModelSpec* spec_out = nullptr) {
  if (spec_out) *spec_out = model_spec_from_json(j.at("model"));
  FitResult f;
  f.model_name = j.at("model").at("name").get<std::string>();
  f.hyper_names = j.at("hyper_names").get<std::vector<std::string>>();
  f.grid.points = detail::mat_from_json(j.at("grid").at("points"));
  f.grid.log_post = detail::vec_from_json(j.at("grid").at("log_post"));
  f.grid.weights = detail::vec_from_json(j.at("grid").at("weights"));
  f.grid.theta_star = detail::vec_from_json(j.at("grid").at("theta_star"));
  f.grid.hessian = detail::mat_from_json(j.at("grid").at("hessian"));
  for (const auto& s : j.at("latent")) f.latent.push_back(detail::summary_from_json(s));
  if (j.contains("mean_level")) f.mean_level = detail::summary_from_json(j["mean_level"]);
  for (const auto& e : j.at("hyper")) {
    HyperSummary h;
    h.name = e.at("name").get<std::string>();
    h.natural = detail::summary_from_json(e.at("natural"));
    if (e.contains("reciprocal")) {
      h.has_reciprocal = true;
      h.reciprocal = detail::summary_from_json(e["reciprocal"]);
    }
    f.hyper.push_back(h);
  }
  f.density_coords = j.at("density_coords").get<std::vector<int>>();
  for (const auto& d : j.at("latent_density")) {
    MarginalDensity m;
    m.x = d.at("x").get<std::vector<double>>();
    m.density = d.at("density").get<std::vector<double>>();
    f.latent_density.push_back(std::move(m));
  }
  if (j.contains("dic")) {
    f.dic = j["dic"];
    f.pd = j["pd"];
  }
  if (j.contains("waic")) {
    f.waic = j["waic"];
    f.pwaic = j["pwaic"];
  }
  f.wall_seconds = j.value("wall_seconds", 0.0);
  f.newton_iterations_total = j.value("newton_iterations_total", 0);
  return f;
}

/// Recomputes the per-grid-point conditional means and sds dropped from the
/// JSON form; required before running draw-based post-processing on a fit
/// loaded from disk.
inline void rehydrate_conditionals(InlaEngine& engine, FitResult& fit) {
  if (!fit.cond_mean.empty()) return;
  for (int r = 0; r < fit.grid.size(); ++r) {
    const HyperParameters h =
        hyper_from_vector(engine.spec(), fit.grid.points.row(r).transpose());
    const auto ga = engine.gaussian_approximation(h);
    fit.cond_mean.push_back(ga.mode);
    fit.cond_sd.push_back(ga.marginal_sd);
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_fit_json(const std::string& path, const FitResult& fit,
                           const ModelSpec& spec) {
  write_text_file(path, fit_result_to_json(fit, spec).dump(2) + "\n");
}

inline FitResult load_fit_json(const std::string& path, ModelSpec* spec_out = nullptr) {
  return fit_result_from_json(json::parse(read_text_file(path)), spec_out);
}

/// coordinate,mean,sd,q025,q50,q975 for every latent coordinate and both
/// scales of every hyperparameter.
inline void write_summary_csv(const std::string& path, const FitResult& fit) {
  std::string s = "coordinate,mean,sd,q025,q50,q975\n";
  auto row = [&](const CoordinateSummary& c, const std::string& name) {
    s += name + "," + fmt17(c.mean) + "," + fmt17(c.sd) + "," + fmt17(c.q025) + "," +
         fmt17(c.q50) + "," + fmt17(c.q975) + "\n";
  };
  if (fit.mean_level) row(*fit.mean_level, "beta0");
  for (const auto& c : fit.latent) row(c, c.name);
  for (const auto& h : fit.hyper) {
    row(h.natural, h.name);
    if (h.has_reciprocal) row(h.reciprocal, h.reciprocal.name);
  }
  write_text_file(path, s);
}

/// Long format: coordinate,abscissa,density.
inline void write_marginals_csv(const std::string& path, const FitResult& fit) {
  std::string s = "coordinate,abscissa,density\n";
  for (size_t i = 0; i < fit.latent_density.size(); ++i) {
    const std::string& name = fit.latent[fit.density_coords[i]].name;
    const auto& d = fit.latent_density[i];
    for (size_t k = 0; k < d.x.size(); ++k)
      s += name + "," + fmt17(d.x[k]) + "," + fmt17(d.density[k]) + "\n";
  }
  write_text_file(path, s);
}

inline void write_compare_csv(const std::string& path,
                              const std::vector<std::pair<std::string, FitResult>>& fits) {
  std::string s = "model,dic,pd,waic,pwaic\n";
  for (const auto& [name, f] : fits)
    s += name + "," + fmt17(f.dic) + "," + fmt17(f.pd) + "," + fmt17(f.waic) + "," +
         fmt17(f.pwaic) + "\n";
  write_text_file(path, s);
}

inline void write_scores_csv(const std::string& path, const StudyResult& study) {
  std::string s = "model,parameter,truth,estimate,se,rbias,rmse\n";
  for (const auto& m : study.models)
    for (const auto& p : m.scores)
      s += m.model + "," + p.name + "," + fmt17(p.truth) + "," + fmt17(p.est) + "," +
           fmt17(p.se) + "," + fmt17(p.rbias) + "," + fmt17(p.rmse) + "\n";
  write_text_file(path, s);
}

// Timing lives in timing.csv; keeping it out of this table makes the file
// reproducible bit-for-bit across reruns and thread counts.
inline void write_study_criteria_csv(const std::string& path, const StudyResult& study) {
  std::string s = "model,mean_dic,mean_pd,mean_waic,mean_pwaic,failures\n";
  for (const auto& m : study.models)
    s += m.model + "," + fmt17(m.mean_dic) + "," + fmt17(m.mean_pd) + "," +
         fmt17(m.mean_waic) + "," + fmt17(m.mean_pwaic) + "," +
         std::to_string(m.failures) + "\n";
  write_text_file(path, s);
}

/// Everything needed to reproduce a run: the full argv, seed, and thread
/// count. Outputs are deterministic given the manifest.
inline void write_manifest(const std::string& path, int argc, char** argv,
                           std::uint64_t seed, int threads) {
  json j;
  j["command"] = json::array();
  for (int i = 0; i < argc; ++i) j["command"].push_back(std::string(argv[i]));
  j["seed"] = seed;
  j["threads"] = threads;
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace sjlgm
