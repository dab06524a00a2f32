// Command line front end: fit / simulate / compare / diagnose / validate.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "sjlgm/io.hpp"

namespace fs = std::filesystem;
using namespace sjlgm;

namespace {

struct DataArgs {
  std::string long_path, surv_path, graph_path;
  bool strict = false;
};

struct ModelArgs {
  std::string model = "custom";
  std::string model_file;
  std::string random = "intercept-slope";
  bool link_b0 = false, link_b1 = false;
  std::string spatial = "none";
  std::string zeta = "0.95";
  int spline_degree = 3;
  int spline_nknots = 5;
  std::vector<double> spline_knots;
  bool no_spline = false;
};

void add_data_flags(CLI::App* cmd, DataArgs& d, bool need_graph = false) {
  cmd->add_option("--long", d.long_path, "longitudinal CSV (subject,region,time,y,covariates...)")
      ->required();
  cmd->add_option("--surv", d.surv_path, "survival CSV (subject,region,time,event,covariates...)")
      ->required();
  auto* g = cmd->add_option("--graph", d.graph_path,
                            "adjacency file (K then neighbor or edge list)");
  if (need_graph) g->required();
  cmd->add_flag("--validate-strict", d.strict, "reject measurement times at or past the event time");
}

void add_model_flags(CLI::App* cmd, ModelArgs& m) {
  cmd->add_option("--model", m.model,
                  "preset row (N,i..xi for the candidate table, I..IV for the study) or 'custom'");
  cmd->add_option("--model-file", m.model_file, "key=value model config (overrides other model flags)");
  cmd->add_option("--random", m.random, "random effects: none|intercept|intercept-slope");
  cmd->add_flag("--link-b0", m.link_b0, "share the random intercept with the log hazard");
  cmd->add_flag("--link-b1", m.link_b1, "share the random slope with the log hazard");
  cmd->add_option("--spatial", m.spatial, "spatial effect: none|besag-proper");
  cmd->add_option("--zeta", m.zeta, "spatial mixing ratio in (0,1), or 'estimate'");
  cmd->add_option("--spline-degree", m.spline_degree, "B-spline degree for the time curve");
  cmd->add_option("--spline-nknots", m.spline_nknots,
                  "number of interior knots, placed at time quantiles");
  cmd->add_option("--spline-knots", m.spline_knots, "explicit interior knot positions");
  cmd->add_flag("--no-spline", m.no_spline, "linear-in-covariates mean with an explicit intercept");
}

JointDataset load_data(const DataArgs& d) {
  JointDataset data;
  data.longitudinal = load_longitudinal_csv(d.long_path);
  data.survival = load_survival_csv(d.surv_path);
  if (!d.graph_path.empty()) {
    data.graph = load_graph(d.graph_path);
  } else {
    int kmax = 0;
    for (const auto& s : data.survival) kmax = std::max(kmax, s.region + 1);
    data.graph.K = kmax;
    data.graph.finalize();
  }
  data.index();
  int ties = 0;
  data.validate(d.strict, &ties);
  if (ties > 0)
    std::cerr << "warning: " << ties << " measurement time(s) tie the event time\n";
  return data;
}

void apply_model_file(const std::string& path, ModelArgs& m) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read model file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    if (key == "model") m.model = val;
    else if (key == "random") m.random = val;
    else if (key == "link_b0") m.link_b0 = (val == "true" || val == "1");
    else if (key == "link_b1") m.link_b1 = (val == "true" || val == "1");
    else if (key == "spatial") m.spatial = val;
    else if (key == "zeta") m.zeta = val;
    else if (key == "spline_degree") m.spline_degree = std::stoi(val);
    else if (key == "spline_nknots") m.spline_nknots = std::stoi(val);
    else if (key == "no_spline") m.no_spline = (val == "true" || val == "1");
    else if (key == "spline_knots") {
      m.spline_knots.clear();
      std::stringstream ss(val);
      std::string tok;
      while (std::getline(ss, tok, ',')) m.spline_knots.push_back(std::stod(tok));
    } else {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
}

std::optional<SplineConfig> make_spline(const ModelArgs& m, const JointDataset& data) {
  if (m.no_spline) return std::nullopt;
  SplineConfig s;
  s.degree = m.spline_degree;
  std::vector<double> times;
  for (const auto& r : data.longitudinal) times.push_back(r.time);
  const auto [lo, hi] = std::minmax_element(times.begin(), times.end());
  s.lo = *lo;
  s.hi = *hi;
  s.interior_knots =
      m.spline_knots.empty() ? default_knots(times, m.spline_nknots) : m.spline_knots;
  s.validate();
  return s;
}

ModelSpec build_model(ModelArgs m, const JointDataset& data) {
  if (!m.model_file.empty()) apply_model_file(m.model_file, m);
  const int p1 = data.longitudinal.empty() ? 0 : static_cast<int>(data.longitudinal[0].x.size());
  const int p2 = data.survival.empty() ? 0 : static_cast<int>(data.survival[0].x.size());
  const auto spline = make_spline(m, data);
  ModelSpec spec;
  if (m.model == "I" || m.model == "II" || m.model == "III" || m.model == "IV") {
    spec = ModelSpec::study_preset(m.model, p1, p2, spline);
  } else if (m.model != "custom") {
    spec = ModelSpec::table1_preset(m.model, p1, p2, spline);
  } else {
    spec.p1 = p1;
    spec.p2 = p2;
    spec.spline = spline;
    if (m.random == "none") spec.re = RandomStructure::None;
    else if (m.random == "intercept") spec.re = RandomStructure::Intercept;
    else if (m.random == "intercept-slope") spec.re = RandomStructure::InterceptSlope;
    else throw std::runtime_error("--random must be none|intercept|intercept-slope");
    spec.link_b0 = m.link_b0;
    spec.link_b1 = m.link_b1;
    if (m.spatial == "besag-proper") spec.spatial = true;
    else if (m.spatial != "none") throw std::runtime_error("--spatial must be none|besag-proper");
  }
  if (m.zeta == "estimate") {
    spec.estimate_zeta = true;
  } else {
    spec.zeta = std::stod(m.zeta);
  }
  if (spec.spatial && data.graph.edges.empty())
    throw std::runtime_error("model '" + spec.name +
                             "' has a spatial effect but no adjacency was given; pass --graph");
  spec.validate();
  return spec;
}

FitOptions make_fit_options(const std::string& strategy, const std::string& correction,
                            bool profile) {
  FitOptions opt;
  if (strategy == "eb") opt.strategy = GridStrategy::EB;
  else if (strategy == "grid") opt.strategy = GridStrategy::Grid;
  else if (strategy == "ccd") opt.strategy = GridStrategy::CCD;
  else if (strategy != "auto") throw std::runtime_error("--strategy must be auto|eb|grid|ccd");
  if (correction == "simplified_laplace") opt.correction = MarginalCorrection::SimplifiedLaplace;
  else if (correction != "gaussian")
    throw std::runtime_error("--correction must be gaussian|simplified_laplace");
  opt.profile_hyper_marginals = profile;
  return opt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint longitudinal + spatial survival models via nested Laplace approximations"};
  app.require_subcommand(1);

  std::uint64_t seed = 12345;
  int threads = static_cast<int>(std::thread::hardware_concurrency());
  app.add_option("--seed", seed, "random seed")->envname("SJLGM_SEED");
  app.add_option("--threads", threads, "parallelism cap")->envname("SJLGM_THREADS");

  // fit
  auto* cfit = app.add_subcommand("fit", "fit one model and write JSON + CSV summaries");
  DataArgs fit_data;
  ModelArgs fit_model;
  std::string fit_strategy = "auto", fit_correction = "gaussian", fit_out = "out";
  bool fit_profile = false;
  int fit_samples = 0;
  add_data_flags(cfit, fit_data);
  add_model_flags(cfit, fit_model);
  cfit->add_option("--strategy", fit_strategy, "hyper grid: auto|eb|grid|ccd")
      ->envname("SJLGM_STRATEGY");
  cfit->add_option("--correction", fit_correction, "latent marginals: gaussian|simplified_laplace");
  cfit->add_flag("--profile-hyper", fit_profile, "profile-based hyperparameter marginals");
  cfit->add_option("--criteria-samples", fit_samples, "also compute DIC/WAIC with this many draws");
  cfit->add_option("--out", fit_out, "output directory")->envname("SJLGM_OUT");

  // simulate
  auto* csim = app.add_subcommand("simulate", "run a simulation study");
  int sim_scenario = 1, sim_nk = -1, sim_M = 100, sim_samples = 1000;
  int sim_rows = -1, sim_cols = -1;
  double sim_censor = -1;
  std::string sim_models = "I,II,III,IV", sim_out = "study", sim_strategy = "eb";
  bool sim_keep = false;
  csim->add_option("--scenario", sim_scenario, "1 or 2")->required();
  csim->add_option("--nk", sim_nk, "subjects per region");
  csim->add_option("--M", sim_M, "number of replications");
  csim->add_option("--rows", sim_rows, "lattice rows");
  csim->add_option("--cols", sim_cols, "lattice columns");
  csim->add_option("--censor", sim_censor, "target censoring fraction");
  csim->add_option("--models", sim_models, "comma list from I,II,III,IV");
  csim->add_option("--strategy", sim_strategy, "hyper grid: auto|eb|grid|ccd");
  csim->add_option("--criteria-samples", sim_samples, "draws for DIC/WAIC per fit");
  csim->add_flag("--keep-data", sim_keep, "retain each replication's dataset");
  csim->add_option("--out", sim_out, "output directory")->envname("SJLGM_OUT");

  // compare
  auto* ccmp = app.add_subcommand("compare", "fit several models and tabulate DIC/WAIC");
  DataArgs cmp_data;
  ModelArgs cmp_model;
  std::string cmp_models = "N,i,ii,iii,iv,v,vi,vii,viii,ix,x,xi";
  std::string cmp_out = "compare.csv", cmp_strategy = "eb";
  int cmp_samples = 1000;
  add_data_flags(ccmp, cmp_data);
  add_model_flags(ccmp, cmp_model);
  ccmp->add_option("--models", cmp_models, "comma list of preset rows");
  ccmp->add_option("--strategy", cmp_strategy, "hyper grid: auto|eb|grid|ccd");
  ccmp->add_option("--criteria-samples", cmp_samples, "draws for DIC/WAIC per fit");
  ccmp->add_option("--out", cmp_out, "output CSV path")->envname("SJLGM_OUT");

  // diagnose
  auto* cdia = app.add_subcommand("diagnose", "residuals, survival curves, predictions");
  DataArgs dia_data;
  std::string dia_fit, dia_out = "diag";
  std::vector<std::string> dia_subjects;
  int dia_samples = 500;
  cdia->add_option("--fit", dia_fit, "result.json from a previous fit")->required();
  add_data_flags(cdia, dia_data);
  cdia->add_option("--subjects", dia_subjects, "subject ids for predictive curves");
  cdia->add_option("--samples", dia_samples, "posterior draws for residuals/predictions");
  cdia->add_option("--out-dir", dia_out, "output directory")->envname("SJLGM_OUT");

  // validate
  auto* cval = app.add_subcommand("validate", "check a dataset and print its summary");
  DataArgs val_data;
  add_data_flags(cval, val_data);

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();
  CLI11_PARSE(app, argc, argv);

  try {
    if (*cfit) {
      JointDataset data = load_data(fit_data);
      ModelSpec spec = build_model(fit_model, data);
      InlaEngine engine(spec, data);
      FitResult fit = sjlgm::fit(engine, data,
                                 make_fit_options(fit_strategy, fit_correction, fit_profile));
      if (fit_samples > 0) {
        const DicResult d = compute_dic(engine, fit, fit_samples, seed);
        const WaicResult w = compute_waic(engine, fit, fit_samples, seed + 1);
        fit.dic = d.dic;
        fit.pd = d.pd;
        fit.waic = w.waic;
        fit.pwaic = w.pwaic;
      }
      fs::create_directories(fit_out);
      write_fit_json(fit_out + "/result.json", fit, spec);
      write_summary_csv(fit_out + "/summary.csv", fit);
      write_marginals_csv(fit_out + "/marginals.csv", fit);
      write_manifest(fit_out + "/manifest.json", argc, argv, seed, threads);
      std::cout << "fit: model " << spec.name << ", " << fit.grid.size()
                << " hyper grid point(s), " << fmt17(fit.wall_seconds) << " s; wrote "
                << fit_out << "/result.json\n";
    } else if (*csim) {
      ScenarioConfig cfg = ScenarioConfig::scenario(sim_scenario);
      cfg.seed = seed;
      if (sim_nk > 0) cfg.subjects_per_region = sim_nk;
      if (sim_rows > 0) cfg.lattice_rows = sim_rows;
      if (sim_cols > 0) cfg.lattice_cols = sim_cols;
      if (sim_censor >= 0) cfg.censor_rate = sim_censor;
      StudyOptions opt;
      opt.replications = sim_M;
      opt.threads = threads;
      opt.criteria_samples = sim_samples;
      opt.fit = make_fit_options(sim_strategy, "gaussian", false);
      std::vector<std::string> models;
      std::stringstream ss(sim_models);
      std::string tok;
      while (std::getline(ss, tok, ',')) models.push_back(tok);
      StudyResult study = run_study(cfg, models, opt);
      fs::create_directories(sim_out);
      write_scores_csv(sim_out + "/scores.csv", study);
      write_study_criteria_csv(sim_out + "/criteria.csv", study);
      {
        std::string s = "model,replication,seconds,ok,error\n";
        for (const auto& m : study.models)
          for (size_t r = 0; r < m.reps.size(); ++r)
            s += m.model + "," + std::to_string(r) + "," + fmt17(m.reps[r].seconds) + "," +
                 (m.reps[r].ok ? "1" : "0") + "," + m.reps[r].error + "\n";
        write_text_file(sim_out + "/timing.csv", s);
      }
      if (sim_keep) {
        for (int rep = 0; rep < sim_M; ++rep) {
          const SimulatedReplication sim = generate_replication(cfg, rep);
          const std::string dir = sim_out + "/rep" + std::to_string(rep);
          fs::create_directories(dir);
          write_dataset(sim.data, dir + "/longitudinal.csv", dir + "/survival.csv",
                        dir + "/graph.txt");
        }
      }
      write_manifest(sim_out + "/manifest.json", argc, argv, seed, threads);
      std::cout << "simulate: scenario " << sim_scenario << ", M=" << sim_M
                << ", mean censoring " << fmt17(study.mean_censoring) << "; wrote " << sim_out
                << "/scores.csv\n";
    } else if (*ccmp) {
      JointDataset data = load_data(cmp_data);
      std::vector<std::pair<std::string, FitResult>> fits;
      std::stringstream ss(cmp_models);
      std::string tok;
      const FitOptions opt = make_fit_options(cmp_strategy, "gaussian", false);
      while (std::getline(ss, tok, ',')) {
        ModelArgs m = cmp_model;
        m.model = tok;
        ModelSpec spec = build_model(m, data);
        InlaEngine engine(spec, data);
        FitResult fit = sjlgm::fit(engine, data, opt);
        const DicResult d = compute_dic(engine, fit, cmp_samples, seed);
        const WaicResult w = compute_waic(engine, fit, cmp_samples, seed + 1);
        fit.dic = d.dic;
        fit.pd = d.pd;
        fit.waic = w.waic;
        fit.pwaic = w.pwaic;
        std::cout << "compare: " << tok << " dic " << fmt17(fit.dic) << " waic "
                  << fmt17(fit.waic) << "\n";
        fits.emplace_back(tok, std::move(fit));
      }
      if (const auto dir = fs::path(cmp_out).parent_path(); !dir.empty())
        fs::create_directories(dir);
      write_compare_csv(cmp_out, fits);
      std::cout << "compare: wrote " << cmp_out << "\n";
    } else if (*cdia) {
      JointDataset data = load_data(dia_data);
      ModelSpec spec;
      FitResult fit = load_fit_json(dia_fit, &spec);
      InlaEngine engine(spec, data);
      rehydrate_conditionals(engine, fit);
      fs::create_directories(dia_out);
      if (spec.include_longitudinal) {
        const auto res = standardized_marginal_residuals(engine, fit);
        std::string s = "subject,region,time,residual\n";
        for (const auto& r : res)
          s += r.subject + "," + std::to_string(r.region) + "," + fmt17(r.time) + "," +
               fmt17(r.residual) + "\n";
        write_text_file(dia_out + "/residuals_long.csv", s);
      }
      if (spec.include_survival) {
        std::vector<double> t;
        std::vector<int> ev;
        for (const auto& s : data.survival) {
          t.push_back(s.time);
          ev.push_back(s.event);
        }
        const KaplanMeierCurve km = kaplan_meier(t, ev);
        std::string s = "time,survival,at_risk,events\n";
        for (size_t i = 0; i < km.time.size(); ++i)
          s += fmt17(km.time[i]) + "," + fmt17(km.survival[i]) + "," +
               std::to_string(km.at_risk[i]) + "," + std::to_string(km.events[i]) + "\n";
        write_text_file(dia_out + "/km.csv", s);

        const CoxSnellResult cs = cox_snell_residuals(engine, fit, dia_samples, seed);
        s = "subject,residual,event\n";
        for (size_t i = 0; i < cs.residual.size(); ++i)
          s += data.subject_ids[i] + "," + fmt17(cs.residual[i]) + "," +
               std::to_string(cs.event[i]) + "\n";
        write_text_file(dia_out + "/coxsnell.csv", s);
        std::cout << "diagnose: Cox-Snell sup-distance to Exp(1) " << fmt17(cs.sup_distance)
                  << "\n";
      }
      if (spec.spatial) {
        const auto rr = region_risk(engine, fit);
        std::string s = "region,n_subjects,mean_log_risk,spatial_relative_risk\n";
        for (const auto& r : rr)
          s += std::to_string(r.region) + "," + std::to_string(r.n_subjects) + "," +
               fmt17(r.mean_log_risk) + "," + fmt17(r.spatial_relative_risk) + "\n";
        write_text_file(dia_out + "/region_risk.csv", s);
      }
      for (const auto& id : dia_subjects) {
        std::vector<double> grid;
        for (int i = 0; i <= 50; ++i) grid.push_back(i / 50.0);
        const SubjectPrediction p = predict_subject(engine, fit, id, grid, dia_samples, seed);
        std::string s = "time,traj_mean,traj_lo,traj_hi,surv_mean,surv_lo,surv_hi\n";
        for (size_t i = 0; i < grid.size(); ++i) {
          s += fmt17(p.grid[i]) + "," + fmt17(p.trajectory_mean[i]) + "," +
               fmt17(p.trajectory_lo[i]) + "," + fmt17(p.trajectory_hi[i]);
          if (!p.survival_mean.empty())
            s += "," + fmt17(p.survival_mean[i]) + "," + fmt17(p.survival_lo[i]) + "," +
                 fmt17(p.survival_hi[i]);
          s += "\n";
        }
        write_text_file(dia_out + "/predict_" + id + ".csv", s);
      }
      write_manifest(dia_out + "/manifest.json", argc, argv, seed, threads);
      std::cout << "diagnose: wrote " << dia_out << "/\n";
    } else if (*cval) {
      const JointDataset data = load_data(val_data);
      const DatasetSummary s = summarize_dataset(data);
      std::cout << "subjects " << s.n_subjects << "\nregions " << s.n_regions
                << "\nlongitudinal_records " << s.n_longitudinal << "\nevents " << s.n_events
                << "\ncensoring_rate " << fmt17(s.censoring_rate) << "\nmean_replications "
                << fmt17(s.mean_replications) << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << app.get_subcommands().front()->get_name() << ": error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
