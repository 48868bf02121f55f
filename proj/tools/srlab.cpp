// Command-line front end: every pipeline stage is exposed as its own
// subcommand, plus the end-to-end `falsify`. Subcommands read an optional
// JSON config file (--config); explicit flags override file values; unknown
// config keys are rejected by name. Every JSON record embeds the tool
// version, the fully resolved configuration, and an FNV-1a hash of it, so
// identical inputs produce byte-identical outputs.
//
// Exit codes: 0 success (for `falsify`: violation certified), 1 `falsify`
// completed without certifying a violation, 2 configuration error,
// 3 numerical-stage failure (the failing stage is named on stderr).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "CLI11.hpp"
#include "json.hpp"

#include "srlab/counterexample.hpp"
#include "srlab/errors.hpp"
#include "srlab/flag.hpp"
#include "srlab/geodesy.hpp"
#include "srlab/hamiltonian.hpp"
#include "srlab/sampling.hpp"
#include "srlab/structures.hpp"
#include "srlab/version.hpp"

namespace {

using nlohmann::json;
using namespace srlab;

json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json mat_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::VectorXd parse_vec(const std::string& text, const std::string& what) {
  std::vector<double> vals;
  size_t pos = 0;
  while (pos <= text.size()) {
    const size_t comma = text.find(',', pos);
    std::string tok = comma == std::string::npos ? text.substr(pos) : text.substr(pos, comma - pos);
    const auto first = tok.find_first_not_of(" \t");
    const auto last = tok.find_last_not_of(" \t");
    tok = first == std::string::npos ? std::string() : tok.substr(first, last - first + 1);
    try {
      size_t used = 0;
      const double d = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      vals.push_back(d);
    } catch (const std::exception&) {
      throw ConfigError("'" + what + "' expects comma-separated numbers, got '" + tok + "'");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(vals.size()));
  for (size_t i = 0; i < vals.size(); ++i) v(static_cast<Eigen::Index>(i)) = vals[i];
  return v;
}

// Merges the config file with command-line flags (flags win), records the
// resolved value of every known key, and rejects unknown file keys by name.
struct Resolver {
  json file = json::object();
  json resolved = json::object();
  std::vector<std::string> known;

  void load(const std::string& path) {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    try {
      in >> file;
    } catch (const std::exception& e) {
      throw ConfigError("config parse failure: " + std::string(e.what()));
    }
    if (!file.is_object()) throw ConfigError("config root must be a JSON object");
  }

  template <typename T>
  T pick(const CLI::Option* opt, const std::string& key, const T& cli_value, T fallback) {
    known.push_back(key);
    T v = std::move(fallback);
    if (file.contains(key)) {
      try {
        v = file.at(key).get<T>();
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
      }
    }
    if (opt != nullptr && opt->count() > 0) v = cli_value;
    resolved[key] = v;
    return v;
  }

  // Same resolution, but the value names an output destination: it is kept
  // out of the resolved config so reports stay byte-identical across runs
  // that differ only in where they are written.
  template <typename T>
  T pick_local(const CLI::Option* opt, const std::string& key, const T& cli_value, T fallback) {
    known.push_back(key);
    T v = std::move(fallback);
    if (file.contains(key)) {
      try {
        v = file.at(key).get<T>();
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
      }
    }
    if (opt != nullptr && opt->count() > 0) v = cli_value;
    return v;
  }

  Eigen::VectorXd pick_vec(const CLI::Option* opt, const std::string& key,
                           const std::string& cli_value, Eigen::VectorXd fallback) {
    known.push_back(key);
    Eigen::VectorXd v = std::move(fallback);
    if (file.contains(key)) {
      std::vector<double> vals;
      try {
        vals = file.at(key).get<std::vector<double>>();
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' must be an array of numbers");
      }
      v.resize(static_cast<Eigen::Index>(vals.size()));
      for (size_t i = 0; i < vals.size(); ++i) v(static_cast<Eigen::Index>(i)) = vals[i];
    }
    if (opt != nullptr && opt->count() > 0) v = parse_vec(cli_value, key);
    resolved[key] = vec_json(v);
    return v;
  }

  void finish() const {
    for (auto it = file.begin(); it != file.end(); ++it)
      if (std::find(known.begin(), known.end(), it.key()) == known.end())
        throw ConfigError("unknown key '" + it.key() + "' in config");
  }
};

// Builtin name, or a path to a frame-spec JSON document.
StructurePtr resolve_structure(const std::string& name) {
  if (name.empty()) throw ConfigError("a structure is required (--structure or config)");
  if (name.find('/') != std::string::npos ||
      (name.size() > 5 && name.compare(name.size() - 5, 5, ".json") == 0))
    return load_structure_file(name);
  return load_structure(name);
}

json record_envelope(const char* cmd, const Resolver& r) {
  json j;
  j["tool"] = json{{"name", "srlab"}, {"version", version()}};
  j["command"] = cmd;
  j["config"] = r.resolved;
  const json probe{{"command", cmd}, {"config", r.resolved}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "0x%016llx",
                static_cast<unsigned long long>(fnv1a(probe.dump())));
  j["config_hash"] = buf;
  return j;
}

void emit(const json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream os(out);
  if (!os) throw ConfigError("cannot open output file '" + out + "'");
  os << j.dump(2) << "\n";
}

void write_cloud_csv(const std::string& path, const std::vector<Eigen::VectorXd>& cloud, int n) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open output file '" + path + "'");
  for (int i = 1; i <= n; ++i) os << (i > 1 ? "," : "") << "x" << i;
  os << "\n";
  os.precision(17);
  for (const auto& pt : cloud) {
    for (int i = 0; i < n; ++i) os << (i > 0 ? "," : "") << pt(i);
    os << "\n";
  }
}

void require_positive(const std::string& name, double v) {
  if (!(v > 0.0)) throw ConfigError("'" + name + "' must be positive");
}

json fit_json(const ContractionFit& f) {
  json j;
  j["scale"] = f.scale;
  j["exponent"] = f.exponent;
  j["residual"] = f.residual;
  j["window"] = json::array({f.t_min, f.t_max});
  j["grid"] = f.grid;
  j["jacobians"] = f.jacobians;
  return j;
}

// ---------------------------------------------------------------------------
// exp: integrate one normal geodesic, dump the trajectory CSV
// ---------------------------------------------------------------------------

struct ExpOpts {
  std::string config, structure, point, covector, out;
  double t0 = 0.0, t1 = 1.0, step = 1e-3;
  int points = 101;
  CLI::Option *structure_o = nullptr, *point_o = nullptr, *covector_o = nullptr, *out_o = nullptr,
              *t0_o = nullptr, *t1_o = nullptr, *step_o = nullptr, *points_o = nullptr;
};

void run_exp(const ExpOpts& o) {
  Resolver r;
  r.load(o.config);
  const std::string sname = r.pick<std::string>(o.structure_o, "structure", o.structure, "");
  StructurePtr s = resolve_structure(sname);
  const int n = s->dim();
  const Eigen::VectorXd x = r.pick_vec(o.point_o, "point", o.point, Eigen::VectorXd::Zero(n));
  const Eigen::VectorXd p = r.pick_vec(o.covector_o, "covector", o.covector, Eigen::VectorXd());
  const double t0 = r.pick(o.t0_o, "t0", o.t0, 0.0);
  const double t1 = r.pick(o.t1_o, "t1", o.t1, 1.0);
  const int count = r.pick(o.points_o, "points", o.points, 101);
  const double step = r.pick(o.step_o, "step", o.step, 1e-3);
  const std::string out = r.pick_local<std::string>(o.out_o, "out", o.out, "");
  r.finish();

  if (x.size() != n) throw ConfigError("'point' must have " + std::to_string(n) + " components");
  if (p.size() != n) throw ConfigError("'covector' must have " + std::to_string(n) + " components");
  require_positive("step", step);

  IntegratorConfig icfg;
  icfg.step_size = step;
  const auto traj = sample_trajectory(*s, x, p, t0, t1, count, icfg);
  if (out.empty()) {
    write_trajectory_csv(std::cout, traj);
    return;
  }
  std::ofstream os(out);
  if (!os) throw ConfigError("cannot open output file '" + out + "'");
  write_trajectory_csv(os, traj);
  json rec = record_envelope("exp", r);
  rec["structure"] = s->name();
  rec["rows"] = traj.size();
  rec["csv"] = out;
  std::cout << rec.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// growth: flag growth vector and geodesic dimension on a time grid
// ---------------------------------------------------------------------------

struct GrowthOpts {
  std::string config, structure, point, covector, out;
  double t0 = 0.0, t1 = 1.0, step = 1e-3, spacing = 1e-3;
  int grid = 33, scan = 64, imax = 6, stencil_points = 5;
  CLI::Option *structure_o = nullptr, *point_o = nullptr, *covector_o = nullptr, *out_o = nullptr,
              *t0_o = nullptr, *t1_o = nullptr, *step_o = nullptr, *spacing_o = nullptr,
              *grid_o = nullptr, *scan_o = nullptr, *imax_o = nullptr, *stencil_o = nullptr;
};

void run_growth(const GrowthOpts& o) {
  Resolver r;
  r.load(o.config);
  const std::string sname = r.pick<std::string>(o.structure_o, "structure", o.structure, "");
  StructurePtr s = resolve_structure(sname);
  const int n = s->dim();
  const Eigen::VectorXd x = r.pick_vec(o.point_o, "point", o.point, Eigen::VectorXd::Zero(n));
  Eigen::VectorXd cov = r.pick_vec(o.covector_o, "covector", o.covector, Eigen::VectorXd());
  const double t0 = r.pick(o.t0_o, "t0", o.t0, 0.0);
  const double t1 = r.pick(o.t1_o, "t1", o.t1, 1.0);
  const int grid = r.pick(o.grid_o, "grid", o.grid, 33);
  const int scan = r.pick(o.scan_o, "scan", o.scan, 64);
  const int imax = r.pick(o.imax_o, "imax", o.imax, 6);
  const int stencil_points = r.pick(o.stencil_o, "stencil_points", o.stencil_points, 5);
  const double spacing = r.pick(o.spacing_o, "spacing", o.spacing, 1e-3);
  const double step = r.pick(o.step_o, "step", o.step, 1e-3);
  const std::string out = r.pick_local<std::string>(o.out_o, "out", o.out, "");
  r.finish();

  if (x.size() != n) throw ConfigError("'point' must have " + std::to_string(n) + " components");
  if (cov.size() != 0 && cov.size() != n)
    throw ConfigError("'covector' must have " + std::to_string(n) + " components");
  if (grid < 1) throw ConfigError("'grid' must be at least 1");
  if (!(t1 > t0)) throw ConfigError("'t1' must exceed 't0'");
  require_positive("spacing", spacing);
  require_positive("step", step);

  GrowthConfig gcfg;
  gcfg.imax = imax;
  gcfg.stencil.points = stencil_points;
  gcfg.stencil.spacing = spacing;
  gcfg.integrator.step_size = step;
  const int pts = detail::effective_stencil_points(gcfg.stencil, gcfg.imax);
  const double delta = ((pts - 1) / 2 + 2) * gcfg.stencil.spacing;

  // Without an explicit covector, scan for the smallest geodesic dimension.
  if (cov.size() == 0) {
    const auto covs = default_covector_samples(n, scan);
    int best = std::numeric_limits<int>::max();
    int failures = 0;
    for (const auto& c : covs) {
      try {
        GeodesicSegment probe = make_segment(s, x, c, -delta, delta, gcfg.integrator, 3);
        GrowthData g = growth_vector(*s, probe, 0.0, gcfg);
        if (g.ample && g.geodesic_dimension < best) {
          best = g.geodesic_dimension;
          cov = c;
        }
      } catch (const Error&) {
        ++failures;
      }
    }
    if (cov.size() == 0)
      throw NoAmpleFound("no ample covector among " + std::to_string(covs.size()) + " samples (" +
                         std::to_string(failures) + " failed outright)");
  }

  GeodesicSegment seg =
      make_segment(s, x, cov, t0 - delta, t1 + delta, gcfg.integrator, std::max(33, 3 * grid));
  json records = json::array();
  bool all_ample = true;
  int uniform_dim = -2;
  for (int i = 0; i < grid; ++i) {
    const double s0 = grid == 1 ? t0 : t0 + (t1 - t0) * static_cast<double>(i) / (grid - 1);
    GrowthData g = growth_vector(*s, seg, s0, gcfg);
    all_ample = all_ample && g.ample;
    if (uniform_dim == -2)
      uniform_dim = g.geodesic_dimension;
    else if (uniform_dim != g.geodesic_dimension)
      uniform_dim = -1;
    records.push_back(json{{"time", s0},
                           {"growth_vector", g.growth},
                           {"ample", g.ample},
                           {"geodesic_dimension", g.geodesic_dimension}});
  }

  json rec = record_envelope("growth", r);
  rec["structure"] = s->name();
  rec["test_only"] = s->test_only();  // N >= n+2 only binds strictly sub-Riemannian frames
  rec["covector"] = vec_json(cov);
  rec["records"] = records;
  rec["all_ample"] = all_ample;
  rec["geodesic_dimension"] = uniform_dim;  // -1 when the grid disagrees
  emit(rec, out);
}

// ---------------------------------------------------------------------------
// fit: power-law contraction rate of the midpoint Jacobian
// ---------------------------------------------------------------------------

struct FitOpts {
  std::string config, structure, point, covector, out;
  double lo = 1e-3, hi = 1e-1, bracket = 0.1, residual_limit = 1e-2, step = 1e-3;
  int points = 14;
  CLI::Option *structure_o = nullptr, *point_o = nullptr, *covector_o = nullptr, *out_o = nullptr,
              *lo_o = nullptr, *hi_o = nullptr, *bracket_o = nullptr, *residual_o = nullptr,
              *step_o = nullptr, *points_o = nullptr;
};

void run_fit(const FitOpts& o) {
  Resolver r;
  r.load(o.config);
  const std::string sname = r.pick<std::string>(o.structure_o, "structure", o.structure, "");
  StructurePtr s = resolve_structure(sname);
  const int n = s->dim();
  const Eigen::VectorXd x = r.pick_vec(o.point_o, "point", o.point, Eigen::VectorXd::Zero(n));
  const Eigen::VectorXd p = r.pick_vec(o.covector_o, "covector", o.covector, Eigen::VectorXd());
  const double lo = r.pick(o.lo_o, "lo", o.lo, 1e-3);
  const double hi = r.pick(o.hi_o, "hi", o.hi, 1e-1);
  const int points = r.pick(o.points_o, "points", o.points, 14);
  const double bracket = r.pick(o.bracket_o, "bracket", o.bracket, 0.1);
  const double residual_limit = r.pick(o.residual_o, "residual_limit", o.residual_limit, 1e-2);
  const double step = r.pick(o.step_o, "step", o.step, 1e-3);
  const std::string out = r.pick_local<std::string>(o.out_o, "out", o.out, "");
  r.finish();

  if (x.size() != n) throw ConfigError("'point' must have " + std::to_string(n) + " components");
  if (p.size() != n) throw ConfigError("'covector' must have " + std::to_string(n) + " components");
  if (!(lo > 0.0 && hi < 1.0 && lo < hi))
    throw ConfigError("fit window needs 0 < lo < hi < 1");
  if (points < 8) throw ConfigError("'points' must be at least 8");
  require_positive("step", step);

  std::vector<double> grid(static_cast<size_t>(points));
  for (int i = 0; i < points; ++i)
    grid[static_cast<size_t>(i)] =
        lo * std::pow(hi / lo, static_cast<double>(i) / (points - 1));
  FitConfig fcfg;
  fcfg.bracket = bracket;
  fcfg.residual_limit = residual_limit;
  fcfg.integrator.step_size = step;
  const ContractionFit fit = contraction_fit(*s, x, p, grid, fcfg);

  json rec = record_envelope("fit", r);
  rec["structure"] = s->name();
  rec["fit"] = fit_json(fit);
  emit(rec, out);
}

// ---------------------------------------------------------------------------
// findr: ratio with unit inverse-geodesic Jacobian
// ---------------------------------------------------------------------------

struct FindrOpts {
  std::string config, structure, point, covector, out;
  double tol = 1e-6, edge = 1e-3, step = 1e-3;
  int max_iter = 80;
  CLI::Option *structure_o = nullptr, *point_o = nullptr, *covector_o = nullptr, *out_o = nullptr,
              *tol_o = nullptr, *edge_o = nullptr, *step_o = nullptr, *iter_o = nullptr;
};

void run_findr(const FindrOpts& o) {
  Resolver r;
  r.load(o.config);
  const std::string sname = r.pick<std::string>(o.structure_o, "structure", o.structure, "");
  StructurePtr s = resolve_structure(sname);
  const int n = s->dim();
  const Eigen::VectorXd x = r.pick_vec(o.point_o, "point", o.point, Eigen::VectorXd::Zero(n));
  const Eigen::VectorXd p = r.pick_vec(o.covector_o, "covector", o.covector, Eigen::VectorXd());
  UnitRatioConfig ucfg;
  ucfg.tol = r.pick(o.tol_o, "tol", o.tol, 1e-6);
  ucfg.edge = r.pick(o.edge_o, "edge", o.edge, 1e-3);
  ucfg.max_iter = r.pick(o.iter_o, "max_iter", o.max_iter, 80);
  ucfg.integrator.step_size = r.pick(o.step_o, "step", o.step, 1e-3);
  const std::string out = r.pick_local<std::string>(o.out_o, "out", o.out, "");
  r.finish();

  if (x.size() != n) throw ConfigError("'point' must have " + std::to_string(n) + " components");
  if (p.size() != n) throw ConfigError("'covector' must have " + std::to_string(n) + " components");
  require_positive("tol", ucfg.tol);
  require_positive("step", ucfg.integrator.step_size);

  const UnitRatio ur = find_unit_ratio(*s, x, p, ucfg);
  json rec = record_envelope("findr", r);
  rec["structure"] = s->name();
  rec["ratio"] = ur.r;
  rec["swapped"] = ur.swapped;
  rec["jacobian"] = ur.jac;
  rec["a"] = vec_json(ur.a);
  rec["b"] = vec_json(ur.b);
  rec["p_ab"] = vec_json(ur.p_ab);
  emit(rec, out);
}

// ---------------------------------------------------------------------------
// midpoint / invgeo: chart points and Jacobians of the two maps
// ---------------------------------------------------------------------------

struct PointMapOpts {
  std::string config, structure, point, covector, out;
  double t = 0.5, step = 1e-3;
  CLI::Option *structure_o = nullptr, *point_o = nullptr, *covector_o = nullptr, *out_o = nullptr,
              *t_o = nullptr, *step_o = nullptr;
};

void run_midpoint(const PointMapOpts& o) {
  Resolver r;
  r.load(o.config);
  const std::string sname = r.pick<std::string>(o.structure_o, "structure", o.structure, "");
  StructurePtr s = resolve_structure(sname);
  const int n = s->dim();
  const Eigen::VectorXd x = r.pick_vec(o.point_o, "point", o.point, Eigen::VectorXd::Zero(n));
  const Eigen::VectorXd p = r.pick_vec(o.covector_o, "covector", o.covector, Eigen::VectorXd());
  const double t = r.pick(o.t_o, "t", o.t, 0.5);
  const double step = r.pick(o.step_o, "step", o.step, 1e-3);
  const std::string out = r.pick_local<std::string>(o.out_o, "out", o.out, "");
  r.finish();

  if (x.size() != n) throw ConfigError("'point' must have " + std::to_string(n) + " components");
  if (p.size() != n) throw ConfigError("'covector' must have " + std::to_string(n) + " components");
  if (!(t > 0.0 && t <= 1.0)) throw ConfigError("'t' must lie in (0, 1]");
  require_positive("step", step);

  IntegratorConfig icfg;
  icfg.step_size = step;
  json rec = record_envelope("midpoint", r);
  rec["structure"] = s->name();
  rec["t"] = t;
  rec["midpoint"] = vec_json(midpoint(*s, x, p, t, icfg));
  rec["endpoint"] = vec_json(exp_map(*s, x, p, 1.0, icfg));
  rec["jacobian"] = midpoint_jacobian(*s, x, p, t, icfg);
  emit(rec, out);
}

void run_invgeo(const PointMapOpts& o) {
  Resolver r;
  r.load(o.config);
  const std::string sname = r.pick<std::string>(o.structure_o, "structure", o.structure, "");
  StructurePtr s = resolve_structure(sname);
  const int n = s->dim();
  const Eigen::VectorXd m = r.pick_vec(o.point_o, "point", o.point, Eigen::VectorXd::Zero(n));
  const Eigen::VectorXd q = r.pick_vec(o.covector_o, "covector", o.covector, Eigen::VectorXd());
  const double t = r.pick(o.t_o, "t", o.t, 0.5);
  const double step = r.pick(o.step_o, "step", o.step, 1e-3);
  const std::string out = r.pick_local<std::string>(o.out_o, "out", o.out, "");
  r.finish();

  if (m.size() != n) throw ConfigError("'point' must have " + std::to_string(n) + " components");
  if (q.size() != n) throw ConfigError("'covector' must have " + std::to_string(n) + " components");
  if (!(t > 0.0 && t < 1.0)) throw ConfigError("'t' must lie in (0, 1)");
  require_positive("step", step);

  IntegratorConfig icfg;
  icfg.step_size = step;
  json rec = record_envelope("invgeo", r);
  rec["structure"] = s->name();
  rec["t"] = t;
  rec["point"] = vec_json(inverse_geodesic(*s, m, q, t, icfg));
  rec["jacobian"] = inverse_geodesic_jacobian(*s, m, q, t, icfg);
  emit(rec, out);
}

// ---------------------------------------------------------------------------
// tau: interpolation coefficient
// ---------------------------------------------------------------------------

struct TauOpts {
  std::string config, out;
  double curvature = 0.0, dimension = 2.0, t = 0.5, theta = 0.0;
  CLI::Option *curvature_o = nullptr, *dimension_o = nullptr, *t_o = nullptr, *theta_o = nullptr,
              *out_o = nullptr;
};

void run_tau(const TauOpts& o) {
  Resolver r;
  r.load(o.config);
  const double K = r.pick(o.curvature_o, "curvature", o.curvature, 0.0);
  const double N = r.pick(o.dimension_o, "dimension", o.dimension, 2.0);
  const double t = r.pick(o.t_o, "t", o.t, 0.5);
  const double theta = r.pick(o.theta_o, "theta", o.theta, 0.0);
  const std::string out = r.pick_local<std::string>(o.out_o, "out", o.out, "");
  r.finish();

  json rec = record_envelope("tau", r);
  rec["curvature"] = K;
  rec["dimension"] = N;
  rec["t"] = t;
  rec["theta"] = theta;
  rec["value"] = tau(K, N, t, theta);
  emit(rec, out);
}

// ---------------------------------------------------------------------------
// falsify: end-to-end interpolation-inequality violation search
// ---------------------------------------------------------------------------

struct FalsifyOpts {
  std::string config, structure, point, out, clouds;
  double epsilon = 0.1, radius = 1.0, step = 2e-3, midset_step = 1e-2;
  int covector_samples = 64, fit_points = 14, max_shrinks = 4, max_halvings = 10;
  int set_samples = 1024, midset_doublings = 3, threads = 0;
  double fit_lo = 1e-3, fit_hi = 0.6;
  long scout_samples = 2000, midset_samples = 100000;
  std::uint64_t seed = 20260815;
  bool timings = false;
  CLI::Option *structure_o = nullptr, *point_o = nullptr, *out_o = nullptr, *clouds_o = nullptr,
              *epsilon_o = nullptr, *radius_o = nullptr, *step_o = nullptr, *mstep_o = nullptr,
              *covs_o = nullptr, *fitp_o = nullptr, *shrinks_o = nullptr, *halvings_o = nullptr,
              *sets_o = nullptr, *mdoubles_o = nullptr, *threads_o = nullptr, *fitlo_o = nullptr,
              *fithi_o = nullptr, *scout_o = nullptr, *msamples_o = nullptr, *seed_o = nullptr,
              *timings_o = nullptr;
};

int run_falsify(const FalsifyOpts& o) {
  Resolver r;
  r.load(o.config);
  const std::string sname = r.pick<std::string>(o.structure_o, "structure", o.structure, "");

  PipelineConfig pc;
  pc.epsilon = r.pick(o.epsilon_o, "epsilon", o.epsilon, pc.epsilon);
  pc.radius = r.pick(o.radius_o, "radius", o.radius, pc.radius);
  pc.covector_samples = r.pick(o.covs_o, "covector_samples", o.covector_samples, pc.covector_samples);
  pc.fit_points = r.pick(o.fitp_o, "fit_points", o.fit_points, pc.fit_points);
  pc.fit_lo = r.pick(o.fitlo_o, "fit_lo", o.fit_lo, pc.fit_lo);
  pc.fit_hi = r.pick(o.fithi_o, "fit_hi", o.fit_hi, pc.fit_hi);
  pc.max_shrinks = r.pick(o.shrinks_o, "max_shrinks", o.max_shrinks, pc.max_shrinks);
  pc.max_halvings = r.pick(o.halvings_o, "max_halvings", o.max_halvings, pc.max_halvings);
  pc.scout_samples = r.pick(o.scout_o, "scout_samples", o.scout_samples, pc.scout_samples);
  pc.set_samples = r.pick(o.sets_o, "set_samples", o.set_samples, pc.set_samples);
  pc.seed = r.pick(o.seed_o, "seed", o.seed, pc.seed);
  pc.flow.step_size = r.pick(o.step_o, "step", o.step, pc.flow.step_size);
  pc.midset.samples = r.pick(o.msamples_o, "midset_samples", o.midset_samples, pc.midset.samples);
  pc.midset.max_doublings =
      r.pick(o.mdoubles_o, "midset_doublings", o.midset_doublings, pc.midset.max_doublings);
  pc.midset.integrator.step_size =
      r.pick(o.mstep_o, "midset_step", o.midset_step, pc.midset.integrator.step_size);
  pc.midset.threads = r.pick(o.threads_o, "threads", o.threads, pc.midset.threads);
  pc.curvature_grid =
      r.pick<std::vector<double>>(nullptr, "curvature_grid", {}, pc.curvature_grid);
  pc.dimension_grid =
      r.pick<std::vector<double>>(nullptr, "dimension_grid", {}, pc.dimension_grid);
  const bool timings = r.pick(o.timings_o, "timings", o.timings, false);
  const std::string out = r.pick_local<std::string>(o.out_o, "out", o.out, "");
  const std::string clouds = r.pick_local<std::string>(o.clouds_o, "clouds", o.clouds, "");

  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();
  StructurePtr s = resolve_structure(sname);
  const int n = s->dim();
  const Eigen::VectorXd x = r.pick_vec(o.point_o, "point", o.point, Eigen::VectorXd::Zero(n));
  r.finish();
  if (x.size() != n) throw ConfigError("'point' must have " + std::to_string(n) + " components");
  require_positive("step", pc.flow.step_size);
  require_positive("midset_step", pc.midset.integrator.step_size);

  const auto t_loaded = clock::now();
  const CounterexampleReport rep = run_pipeline(s, x, pc);
  const auto t_done = clock::now();

  json j = record_envelope("falsify", r);
  j["structure"] = rep.structure;
  j["test_only"] = s->test_only();  // calibration frames carry no certification claim
  j["dim"] = rep.dim;
  j["seed"] = rep.seed;
  j["centre"] = vec_json(rep.x);
  j["growth_vector"] = rep.growth;
  j["geodesic_dimension"] = rep.geodesic_dim;
  j["segment"] = json{{"a", vec_json(rep.a)},
                      {"b", vec_json(rep.b)},
                      {"m", vec_json(rep.m)},
                      {"p_ab", vec_json(rep.p_ab)},
                      {"qbar", vec_json(rep.qbar)},
                      {"length", rep.segment_length},
                      {"shrinks", rep.shrinks},
                      {"swapped", rep.swapped},
                      {"ratio", rep.r}};
  j["fit_forward"] = fit_json(rep.fit_forward);
  j["fit_reverse"] = fit_json(rep.fit_reverse);
  j["epsilon"] = rep.epsilon;
  j["epsilon_split"] = json::array({rep.eps1, rep.eps2});
  j["radius"] = rep.radius;
  j["rho"] = rep.rho;
  j["halvings"] = rep.halvings;
  j["sets"] = json{{"vol_a", rep.sets.vol_a},
                   {"vol_b", rep.sets.vol_b},
                   {"jac_mean", rep.sets.jac_mean},
                   {"jac_min", rep.sets.jac_min},
                   {"jac_max", rep.sets.jac_max},
                   {"diameter", rep.sets.diameter},
                   {"shape", mat_json(rep.sets.shape)},
                   {"cloud_count", rep.sets.b_cloud.size()}};
  j["midset"] = json{{"vol_upper", rep.midset.vol_upper},
                     {"vol_envelope", rep.midset.vol_envelope},
                     {"vol_voxel", rep.midset.vol_voxel},
                     {"vol_lower", rep.midset.vol_lower},
                     {"voxel_converged", rep.midset.voxel_converged},
                     {"envelope_slack", rep.midset.envelope_slack},
                     {"sigma", vec_json(rep.midset.sigma)},
                     {"slack_axes", vec_json(rep.midset.slack_axes)},
                     {"voxel_size", rep.midset.voxel_size},
                     {"det_d2", rep.midset.det_d2},
                     {"samples_used", rep.midset.samples_used},
                     {"accepted", rep.midset.accepted},
                     {"unknowns", rep.midset.unknowns},
                     {"rounds", rep.midset.rounds},
                     {"cloud_count", rep.midset.cloud.size()}};
  j["density"] = json::array({rep.density_lo, rep.density_hi});
  j["volumes"] = json{{"mu_a", json::array({rep.mu_a_low, rep.mu_a_high})},
                      {"mu_b", json::array({rep.mu_b_low, rep.mu_b_high})},
                      {"mu_mid_high", rep.mu_mid_high}};
  j["ratio_mid"] = rep.ratio_mid;
  j["ratio_sets"] = json::array({rep.ratio_sets_low, rep.ratio_sets_high});
  j["ratio_test_passed"] = rep.ratio_test_passed;
  j["diameter"] = rep.diameter;
  j["theta"] = rep.theta;
  json margins = json::array();
  for (const auto& m : rep.margins)
    margins.push_back(
        json{{"curvature", m.curvature}, {"dimension", m.dimension}, {"value", m.value}});
  j["margins"] = margins;
  j["violated"] = rep.violated;
  if (timings) {
    const auto secs = [](auto d) { return std::chrono::duration<double>(d).count(); };
    j["timings"] = json{{"load_seconds", secs(t_loaded - t_start)},
                        {"pipeline_seconds", secs(t_done - t_loaded)}};
  }
  emit(j, out);

  if (!clouds.empty()) {
    write_cloud_csv(clouds + ".midpoints.csv", rep.midset.cloud, n);
    write_cloud_csv(clouds + ".set_a.csv", rep.sets.a_cloud, n);
    write_cloud_csv(clouds + ".set_b.csv", rep.sets.b_cloud, n);
  }
  return (rep.ratio_test_passed && rep.violated) ? 0 : 1;
}

void add_common(CLI::App* cmd, std::string& config) {
  cmd->add_option("--config", config, "JSON config file; explicit flags override its values");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"subRiemannian geometry lab: geodesics, growth vectors, volume contraction, "
               "and interpolation-inequality falsification"};
  app.set_version_flag("--version", std::string(version()));
  app.require_subcommand(1);
  app.footer("Exit codes: 0 success (falsify: violation certified), 1 falsify found no violation,\n"
             "2 configuration error, 3 numerical-stage failure (stage named on stderr).");

  int exit_code = 0;

  auto eo = std::make_shared<ExpOpts>();
  {
    CLI::App* c = app.add_subcommand("exp", "integrate a normal geodesic; dump t,x,p,H as CSV");
    add_common(c, eo->config);
    eo->structure_o = c->add_option("--structure", eo->structure, "builtin name or frame-spec JSON path");
    eo->point_o = c->add_option("--point", eo->point, "base point, comma-separated (default: origin)");
    eo->covector_o = c->add_option("--covector", eo->covector, "initial covector, comma-separated");
    eo->t0_o = c->add_option("--t0", eo->t0, "start time (default 0)");
    eo->t1_o = c->add_option("--t1", eo->t1, "end time (default 1)");
    eo->points_o = c->add_option("--points", eo->points, "number of sample rows (default 101)");
    eo->step_o = c->add_option("--step", eo->step, "integrator step bound (default 1e-3)");
    eo->out_o = c->add_option("--out", eo->out, "CSV path (default: stdout)");
    c->callback([eo] { run_exp(*eo); });
  }

  auto go = std::make_shared<GrowthOpts>();
  {
    CLI::App* c = app.add_subcommand(
        "growth", "growth vector, ampleness, and geodesic dimension on a time grid");
    add_common(c, go->config);
    go->structure_o = c->add_option("--structure", go->structure, "builtin name or frame-spec JSON path");
    go->point_o = c->add_option("--point", go->point, "base point (default: origin)");
    go->covector_o = c->add_option("--covector", go->covector,
                                   "covector; omitted: scan for the smallest geodesic dimension");
    go->t0_o = c->add_option("--t0", go->t0, "grid start (default 0)");
    go->t1_o = c->add_option("--t1", go->t1, "grid end (default 1)");
    go->grid_o = c->add_option("--grid", go->grid, "grid point count (default 33)");
    go->scan_o = c->add_option("--scan", go->scan, "covector scan size when none is given (default 64)");
    go->imax_o = c->add_option("--imax", go->imax, "highest flag order probed (default 6)");
    go->stencil_o = c->add_option("--stencil-points", go->stencil_points,
                                  "finite-difference stencil points (default 5)");
    go->spacing_o = c->add_option("--spacing", go->spacing, "stencil spacing (default 1e-3)");
    go->step_o = c->add_option("--step", go->step, "integrator step bound (default 1e-3)");
    go->out_o = c->add_option("--out", go->out, "record path (default: stdout)");
    c->callback([go] { run_growth(*go); });
  }

  auto fo = std::make_shared<FitOpts>();
  {
    CLI::App* c = app.add_subcommand("fit", "log-log power-law fit of the midpoint Jacobian");
    add_common(c, fo->config);
    fo->structure_o = c->add_option("--structure", fo->structure, "builtin name or frame-spec JSON path");
    fo->point_o = c->add_option("--point", fo->point, "base point (default: origin)");
    fo->covector_o = c->add_option("--covector", fo->covector, "unit-time covector of the segment");
    fo->lo_o = c->add_option("--lo", fo->lo, "smallest ratio on the log grid (default 1e-3)");
    fo->hi_o = c->add_option("--hi", fo->hi, "largest ratio on the log grid (default 1e-1)");
    fo->points_o = c->add_option("--points", fo->points, "grid size, at least 8 (default 14)");
    fo->bracket_o = c->add_option("--bracket", fo->bracket, "validity band around the law (default 0.1)");
    fo->residual_o = c->add_option("--residual-limit", fo->residual_limit,
                                   "RMS log-residual limit (default 1e-2)");
    fo->step_o = c->add_option("--step", fo->step, "integrator step bound (default 1e-3)");
    fo->out_o = c->add_option("--out", fo->out, "record path (default: stdout)");
    c->callback([fo] { run_fit(*fo); });
  }

  auto ro = std::make_shared<FindrOpts>();
  {
    CLI::App* c = app.add_subcommand("findr", "ratio with unit inverse-geodesic Jacobian");
    add_common(c, ro->config);
    ro->structure_o = c->add_option("--structure", ro->structure, "builtin name or frame-spec JSON path");
    ro->point_o = c->add_option("--point", ro->point, "segment start (default: origin)");
    ro->covector_o = c->add_option("--covector", ro->covector, "unit-time covector of the segment");
    ro->tol_o = c->add_option("--tol", ro->tol, "target for ||Jac I| - 1| (default 1e-6)");
    ro->edge_o = c->add_option("--edge", ro->edge, "bracket margin near 0 and 1 (default 1e-3)");
    ro->iter_o = c->add_option("--max-iter", ro->max_iter, "bisection budget (default 80)");
    ro->step_o = c->add_option("--step", ro->step, "integrator step bound (default 1e-3)");
    ro->out_o = c->add_option("--out", ro->out, "record path (default: stdout)");
    c->callback([ro] { run_findr(*ro); });
  }

  auto mo = std::make_shared<PointMapOpts>();
  {
    CLI::App* c = app.add_subcommand("midpoint", "ratio-t midpoint and its Jacobian");
    add_common(c, mo->config);
    mo->structure_o = c->add_option("--structure", mo->structure, "builtin name or frame-spec JSON path");
    mo->point_o = c->add_option("--point", mo->point, "segment start (default: origin)");
    mo->covector_o = c->add_option("--covector", mo->covector, "unit-time covector of the segment");
    mo->t_o = c->add_option("--t", mo->t, "interpolation ratio in (0, 1] (default 0.5)");
    mo->step_o = c->add_option("--step", mo->step, "integrator step bound (default 1e-3)");
    mo->out_o = c->add_option("--out", mo->out, "record path (default: stdout)");
    c->callback([mo] { run_midpoint(*mo); });
  }

  auto io = std::make_shared<PointMapOpts>();
  {
    CLI::App* c = app.add_subcommand("invgeo", "inverse-geodesic image and its Jacobian");
    add_common(c, io->config);
    io->structure_o = c->add_option("--structure", io->structure, "builtin name or frame-spec JSON path");
    io->point_o = c->add_option("--point", io->point, "midpoint m (default: origin)");
    io->covector_o = c->add_option("--covector", io->covector, "covector of the unit-time geodesic m -> y");
    io->t_o = c->add_option("--t", io->t, "interpolation ratio in (0, 1) (default 0.5)");
    io->step_o = c->add_option("--step", io->step, "integrator step bound (default 1e-3)");
    io->out_o = c->add_option("--out", io->out, "record path (default: stdout)");
    c->callback([io] { run_invgeo(*io); });
  }

  auto to = std::make_shared<TauOpts>();
  {
    CLI::App* c = app.add_subcommand("tau", "interpolation coefficient tau^{K,N}_t(theta)");
    add_common(c, to->config);
    to->curvature_o = c->add_option("--curvature", to->curvature, "curvature bound K <= 0 (default 0)");
    to->dimension_o = c->add_option("--dimension", to->dimension, "dimension parameter N >= 1 (default 2)");
    to->t_o = c->add_option("--t", to->t, "interpolation ratio in [0, 1] (default 0.5)");
    to->theta_o = c->add_option("--theta", to->theta, "distance bound (default 0)");
    to->out_o = c->add_option("--out", to->out, "record path (default: stdout)");
    c->callback([to] { run_tau(*to); });
  }

  auto co = std::make_shared<FalsifyOpts>();
  {
    CLI::App* c = app.add_subcommand(
        "falsify", "end-to-end interpolation-inequality violation search around a point");
    add_common(c, co->config);
    co->structure_o = c->add_option("--structure", co->structure, "builtin name or frame-spec JSON path");
    co->point_o = c->add_option("--point", co->point, "search centre (default: origin)");
    co->epsilon_o = c->add_option("--epsilon", co->epsilon, "total ratio-test slack in (0, 1) (default 0.1)");
    co->radius_o = c->add_option("--radius", co->radius, "working chart ball around the centre (default 1)");
    co->covs_o = c->add_option("--covector-samples", co->covector_samples,
                               "covector scan size (default 64)");
    co->fitp_o = c->add_option("--fit-points", co->fit_points, "contraction-fit grid size (default 14)");
    co->fitlo_o = c->add_option("--fit-lo", co->fit_lo, "contraction-fit smallest ratio (default 1e-3)");
    co->fithi_o = c->add_option("--fit-hi", co->fit_hi, "contraction-fit largest ratio (default 0.6)");
    co->shrinks_o = c->add_option("--max-shrinks", co->max_shrinks,
                                  "segment halvings until the fits certify (default 4)");
    co->halvings_o = c->add_option("--max-halvings", co->max_halvings,
                                   "ball-radius halvings until the ratio tests pass (default 10)");
    co->scout_o = c->add_option("--scout-samples", co->scout_samples,
                                "screening pairs per radius; 0 disables screening (default 2000)");
    co->sets_o = c->add_option("--set-samples", co->set_samples,
                               "samples for the set volume bracket (default 1024)");
    co->msamples_o = c->add_option("--midset-samples", co->midset_samples,
                                   "midpoint pairs per round (default 100000)");
    co->mdoubles_o = c->add_option("--midset-doublings", co->midset_doublings,
                                   "extra midset rounds allowed (default 3)");
    co->mstep_o = c->add_option("--midset-step", co->midset_step,
                                "midset integrator step bound (default 1e-2)");
    co->step_o = c->add_option("--step", co->step, "pipeline integrator step bound (default 2e-3)");
    co->threads_o = c->add_option("--threads", co->threads,
                                  "midset workers; 0 picks the hardware count (default 0)");
    co->seed_o = c->add_option("--seed", co->seed, "sampler seed (default 20260815)");
    co->timings_o = c->add_flag("--timings", co->timings,
                                "embed wall-clock timings (breaks byte-identical reruns)");
    co->out_o = c->add_option("--out", co->out, "report path (default: stdout)");
    co->clouds_o = c->add_option("--clouds", co->clouds,
                                 "prefix for <prefix>.midpoints/.set_a/.set_b CSV dumps");
    c->callback([co, &exit_code] { exit_code = run_falsify(*co); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return exit_code;
}
