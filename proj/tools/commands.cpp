#include "commands.hpp"

#include <difficp/io.hpp>
#include <difficp/metrics.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ostream>
#include <thread>

namespace difficp::cli {

namespace fs = std::filesystem;
using io::json;

namespace {

constexpr const char* kVersion = "0.1.0";

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw io::IoError("cannot create output directory " + dir.string());
}

json paths_to_json(const std::vector<fs::path>& paths) {
  json j = json::array();
  for (const auto& p : paths) j.push_back(p.string());
  return j;
}

json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from_json(const json& j, const char* what) {
  if (!j.is_array()) throw io::IoError(std::string(what) + ": expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw io::IoError(std::string(what) + ": expected an array of numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

const json& require(const json& j, const char* key, const fs::path& file) {
  if (!j.is_object() || !j.contains(key))
    throw io::IoError(file.string() + ": missing field \"" + key + "\"");
  return j.at(key);
}

json config_to_json(const RegistrationConfig& c) {
  return json{{"tau", c.kernel.tau},
              {"d", c.kernel.dim},
              {"lambda", c.lambda},
              {"steps", c.steps},
              {"use_logdet", c.use_logdet},
              {"optimize_sigma", c.optimize.sigma},
              {"optimize_means", c.optimize.means},
              {"optimize_weights", c.optimize.weights},
              {"max_outer", c.max_outer},
              {"ftol", c.ftol},
              {"em_inner_loops", c.em_inner_loops},
              {"optim_max_iters", c.optim.max_iters},
              {"optim_grad_tol", c.optim.grad_tol},
              {"optim_memory", c.optim.memory},
              {"init_seed", c.init_seed}};
}

void write_manifest(const fs::path& out, const std::string& command, json config,
                    const std::vector<fs::path>& inputs, const std::vector<std::string>& outputs,
                    std::uint64_t seed, Clock::time_point start, json final_objective,
                    const std::string& status) {
  json outs = json::array();
  for (const auto& o : outputs) outs.push_back((out / o).string());
  const json manifest{{"command", command},
                      {"version", kVersion},
                      {"config", std::move(config)},
                      {"inputs", paths_to_json(inputs)},
                      {"outputs", std::move(outs)},
                      {"seed", seed},
                      {"wall_time_seconds", seconds_since(start)},
                      {"final_objective", std::move(final_objective)},
                      {"status", status}};
  io::write_json_atomic(out / "manifest.json", manifest);
}

PointSet read_points(const fs::path& file) {
  try {
    return io::point_set_from_json(io::read_json(file));
  } catch (const io::IoError& e) {
    throw io::IoError(file.string() + ": " + e.what());
  }
}

GmmModel read_gmm(const fs::path& file) {
  try {
    return io::gmm_from_json(io::read_json(file));
  } catch (const io::IoError& e) {
    throw io::IoError(file.string() + ": " + e.what());
  }
}

// Per-set record shared by result.json and result_<k>.json.
json set_result_json(const PointSet& points, const MomentumField& momenta, const GeodesicPath& path,
                     const Responsibilities& gamma, const GmmModel& model,
                     const RegistrationConfig& config) {
  return json{{"use_logdet", config.use_logdet},
              {"lambda", config.lambda},
              {"tau", config.kernel.tau},
              {"steps", config.steps},
              {"points", io::point_set_to_json(points)},
              {"warped", io::point_set_to_json(path.endpoints())},
              {"logdet", vector_to_json(path.logdet)},
              {"momenta", io::matrix_to_json(momenta)},
              {"gamma", io::matrix_to_json(gamma.gamma)},
              {"model", io::gmm_to_json(model)},
              {"hamiltonian", path.hamiltonian_trace},
              {"hamiltonian_drift", path.relative_hamiltonian_drift()}};
}

// Regular lattice over the padded bounding box, pushed through the warp.
json deformation_grid(const GeodesicPath& path, const ShootingProblem& problem, const PointSet& points,
                      int size) {
  const int d = static_cast<int>(points.cols());
  BoundingBox box = bounding_box(points);
  const Vector pad = 0.1 * (box.upper - box.lower).cwiseMax(1e-3);
  box.lower -= pad;
  box.upper += pad;
  Eigen::Index count = 1;
  for (int k = 0; k < d; ++k) count *= size;
  PointSet nodes(count, d);
  for (Eigen::Index i = 0; i < count; ++i) {
    Eigen::Index rest = i;
    for (int k = d - 1; k >= 0; --k) {
      const Eigen::Index idx = rest % size;
      rest /= size;
      const double t = size == 1 ? 0.5 : static_cast<double>(idx) / (size - 1);
      nodes(i, k) = box.lower[k] + t * (box.upper[k] - box.lower[k]);
    }
  }
  const auto flow = flow_apply(path, problem, nodes);
  return json{{"shape", std::vector<int>(d, size)},
              {"lower", vector_to_json(box.lower)},
              {"upper", vector_to_json(box.upper)},
              {"nodes", io::matrix_to_json(nodes)},
              {"warped", io::matrix_to_json(flow.warped)},
              {"logdet", vector_to_json(flow.logdet)}};
}

std::uint64_t parse_seed(const std::string& text) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &used, 10);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty() || text[0] == '-')
    throw CLI::ValidationError("--seed", "expected a non-negative integer, got '" + text + "'");
  return v;
}

void add_registration_flags(CLI::App& app, RegistrationConfig& c, bool with_optimize_flags) {
  app.add_option("--tau", c.kernel.tau, "Gaussian kernel width")->capture_default_str();
  app.add_option("--lambda", c.lambda, "Warp regularization weight")->capture_default_str();
  app.add_option("--steps", c.steps, "Integration steps of the geodesic")->capture_default_str();
  app.add_option("--max-outer", c.max_outer, "Outer EM iterations")->capture_default_str();
  app.add_option("--ftol", c.ftol, "Relative objective change that ends the loop")->capture_default_str();
  app.add_flag("--no-logdet{false}", c.use_logdet, "Drop the log-Jacobian term (beta = 0)");
  app.add_option("--lbfgs-iters", c.optim.max_iters, "L-BFGS iterations per warp update")
      ->capture_default_str();
  if (with_optimize_flags) {
    app.add_flag("--optimize-sigma", c.optimize.sigma, "Re-estimate the mixture sigma");
    app.add_flag("--optimize-means", c.optimize.means, "Re-estimate the mixture means");
    app.add_flag("--optimize-weights", c.optimize.weights, "Re-estimate the mixture weights");
  }
}

}  // namespace

int default_threads() {
  int threads = static_cast<int>(std::thread::hardware_concurrency());
  if (threads < 1) threads = 1;
  if (const char* env = std::getenv("DIFFICP_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && cap >= 1) threads = std::min<long>(threads, cap);
  }
  return threads;
}

int cmd_synth(const SynthOptions& opts, std::ostream& log) {
  const auto start = Clock::now();
  opts.spec.validate();
  ensure_directory(opts.out);
  const SynthDataset ds = generate_dataset(opts.spec, opts.experiment);
  const json spec_json = io::synth_spec_to_json(opts.spec);
  const std::string experiment = opts.experiment == Experiment::SingleSet ? "fig1" : "fig2";

  std::vector<std::string> outputs{"gmm_true.json"};
  json truth = io::gmm_to_json(ds.truth);
  truth["synth"] = spec_json;
  io::write_json_atomic(opts.out / "gmm_true.json", truth);
  for (std::size_t k = 0; k < ds.sets.size(); ++k) {
    const auto& set = ds.sets[k];
    json points = io::point_set_to_json(set.points);
    points["synth"] = json{{"experiment", experiment}, {"set", k}, {"spec", spec_json}};
    const std::string set_name = "set_" + std::to_string(k) + ".json";
    const std::string warp_name = "warp_" + std::to_string(k) + ".json";
    io::write_json_atomic(opts.out / set_name, points);
    io::write_json_atomic(opts.out / warp_name, io::warp_to_json(set.warp, set.latent));
    outputs.push_back(set_name);
    outputs.push_back(warp_name);
  }
  json config = spec_json;
  config["experiment"] = experiment;
  write_manifest(opts.out, "synth", config, {}, outputs, opts.spec.seed, start, nullptr, "ok");
  log << "synth: wrote " << ds.sets.size() << " set(s) of " << opts.spec.n_points << " points to "
      << opts.out.string() << "\n";
  return kSuccess;
}

int cmd_register(const RegisterOptions& opts, std::ostream& log) {
  const auto start = Clock::now();
  const PointSet points = read_points(opts.points);
  GmmModel model = read_gmm(opts.gmm);
  if (opts.sigma) {
    model.sigma = *opts.sigma;
    model.validate();
  }
  if (opts.grid_size < 1) throw std::invalid_argument("--grid-size must be positive");
  RegistrationConfig config = opts.config;
  config.kernel.dim = static_cast<int>(points.cols());
  config.validate();
  ensure_directory(opts.out);

  const RegistrationResult r = register_to_gmm(points, model, config);
  const double sigma = r.model.sigma;
  const ShootingProblem problem(points, points, sigma, config.lambda, config.use_logdet, config.kernel,
                                config.steps);

  json result = set_result_json(points, r.momenta, r.path, r.gamma, r.model, config);
  result["status"] = to_string(r.status);
  result["outer_iterations"] = r.outer_iterations;
  json history = json::array();
  for (const auto& f : r.free_energy_history) history.push_back(io::free_energy_to_json(f));
  result["free_energy_history"] = std::move(history);
  result["residual_history"] = r.residual_history;

  io::write_json_atomic(opts.out / "result.json", result);
  io::write_json_atomic(opts.out / "path.json", io::path_to_json(r.path));
  io::write_json_atomic(opts.out / "grid.json", deformation_grid(r.path, problem, points, opts.grid_size));
  json manifest_config = config_to_json(config);
  if (opts.sigma) manifest_config["sigma"] = *opts.sigma;
  manifest_config["grid_size"] = opts.grid_size;
  const double final_f = r.free_energy_history.back().total;
  write_manifest(opts.out, "register", manifest_config, {opts.points, opts.gmm},
                 {"result.json", "path.json", "grid.json"}, 0, start, final_f, to_string(r.status));
  log << "register: " << to_string(r.status) << " after " << r.outer_iterations
      << " iterations, free energy " << final_f << "\n";
  return r.status == RegistrationStatus::Converged ? kSuccess : kNotConverged;
}

int cmd_atlas(const AtlasOptions& opts, std::ostream& log) {
  const auto start = Clock::now();
  if (opts.sets.size() < 2) throw std::invalid_argument("atlas needs at least two point-set files");
  std::vector<PointSet> sets;
  for (const auto& f : opts.sets) sets.push_back(read_points(f));
  RegistrationConfig config = opts.config;
  config.kernel.dim = static_cast<int>(sets.front().cols());
  config.validate();
  ensure_directory(opts.out);

  const AtlasResult r = build_atlas(sets, opts.components, config);
  std::vector<std::string> outputs{"atlas_gmm.json"};
  io::write_json_atomic(opts.out / "atlas_gmm.json", io::gmm_to_json(r.model));
  std::vector<PointSet> warped;
  for (std::size_t k = 0; k < sets.size(); ++k) {
    const auto& s = r.per_set[k];
    json result = set_result_json(sets[k], s.momenta, s.path, s.gamma, r.model, config);
    result["set"] = k;
    result["input"] = opts.sets[k].string();
    const std::string name = "result_" + std::to_string(k) + ".json";
    io::write_json_atomic(opts.out / name, result);
    outputs.push_back(name);
    warped.push_back(s.path.endpoints());
  }
  io::write_json_atomic(opts.out / "warped_all.json", io::point_set_to_json(pool(warped)));
  const json history{{"objective_history", r.objective_history},
                     {"initial_model", io::gmm_to_json(r.initial_model)},
                     {"status", to_string(r.status)},
                     {"outer_iterations", r.outer_iterations}};
  io::write_json_atomic(opts.out / "history.json", history);
  outputs.push_back("warped_all.json");
  outputs.push_back("history.json");

  json manifest_config = config_to_json(config);
  manifest_config["components"] = opts.components;
  write_manifest(opts.out, "atlas", manifest_config, opts.sets, outputs, config.init_seed, start,
                 r.objective_history.back(), to_string(r.status));
  log << "atlas: " << to_string(r.status) << " after " << r.outer_iterations << " iterations, objective "
      << r.objective_history.back() << "\n";
  return r.status == RegistrationStatus::Converged ? kSuccess : kNotConverged;
}

int cmd_eval(const EvalOptions& opts, std::ostream& log) {
  const auto start = Clock::now();
  if (opts.results.empty() && !opts.gmm) throw std::invalid_argument("eval needs --result files or --gmm");
  if (!opts.warps.empty() && opts.warps.size() != opts.results.size())
    throw std::invalid_argument("give one --warp per --result, in the same order");
  ensure_directory(opts.out);

  std::optional<GmmModel> override_model;
  if (opts.gmm) override_model = read_gmm(*opts.gmm);
  std::optional<GmmModel> truth;
  if (opts.truth_gmm) truth = read_gmm(*opts.truth_gmm);

  json report = json::object();
  json per_result = json::array();
  std::vector<PointSet> inputs, warped_sets;
  double nll_sum = 0.0, jac_sum = 0.0, recovery_sum = 0.0, identity_sum = 0.0;
  Eigen::Index total_points = 0;
  std::optional<GmmModel> recovered = override_model;

  for (std::size_t k = 0; k < opts.results.size(); ++k) {
    const fs::path& file = opts.results[k];
    const json j = io::read_json(file);
    PointSet points, warped;
    Vector logdet;
    GmmModel model;
    try {
      points = io::point_set_from_json(require(j, "points", file));
      warped = io::point_set_from_json(require(j, "warped", file));
      logdet = vector_from_json(require(j, "logdet", file), "logdet");
      model = override_model ? *override_model : io::gmm_from_json(require(j, "model", file));
    } catch (const io::IoError& e) {
      throw io::IoError(file.string() + ": " + e.what());
    }
    if (warped.rows() != points.rows() || logdet.size() != points.rows())
      throw io::IoError(file.string() + ": points, warped and logdet lengths differ");
    if (!recovered) recovered = model;

    const double nll = mean_negative_pullback_loglik(model, warped, logdet);
    const PointSet targets = barycentric_targets(e_step(model, warped), model);
    json entry{{"file", file.string()},
               {"points", points.rows()},
               {"mean_negative_pullback_loglik", nll},
               {"barycentric_residual", (warped - targets).rowwise().norm().mean()},
               {"input_cov_det", covariance_determinant(points)},
               {"warped_cov_det", covariance_determinant(warped)},
               {"mean_jacobian", logdet.array().exp().mean()}};
    if (j.contains("hamiltonian")) {
      const Vector h = vector_from_json(j["hamiltonian"], "hamiltonian");
      const double h0 = h.size() > 0 ? h[0] : 0.0;
      double drift = 0.0;
      for (Eigen::Index s = 0; s < h.size(); ++s) drift = std::max(drift, std::abs(h[s] - h0));
      entry["hamiltonian_drift"] = h0 != 0.0 ? drift / std::abs(h0) : drift;
    }
    if (!opts.warps.empty()) {
      const auto gt = io::warp_from_json(io::read_json(opts.warps[k]));
      if (gt.latent.rows() != points.rows() || gt.latent.cols() != points.cols())
        throw io::IoError(opts.warps[k].string() + ": latent samples do not match " + file.string());
      // psi undoes psi_g when psi(x_n) returns to the pre-warp sample.
      const double recovery = (warped - gt.latent).rowwise().norm().mean();
      const double identity = (points - gt.latent).rowwise().norm().mean();
      entry["recovery_error"] = recovery;
      entry["identity_recovery_error"] = identity;
      recovery_sum += recovery * points.rows();
      identity_sum += identity * points.rows();
    }
    nll_sum += nll * points.rows();
    jac_sum += logdet.array().exp().sum();
    total_points += points.rows();
    inputs.push_back(points);
    warped_sets.push_back(warped);
    per_result.push_back(std::move(entry));
  }

  if (total_points > 0) {
    const double in_det = covariance_determinant(pool(inputs));
    const double out_det = covariance_determinant(pool(warped_sets));
    report["mean_negative_pullback_loglik"] = nll_sum / total_points;
    report["shrinkage"] = json{{"input_cov_det", in_det},
                               {"warped_cov_det", out_det},
                               {"cov_det_ratio", out_det / in_det},
                               {"mean_jacobian", jac_sum / total_points},
                               {"shrunk", out_det < in_det}};
    if (!opts.warps.empty()) {
      report["recovery_error"] = recovery_sum / total_points;
      report["identity_recovery_error"] = identity_sum / total_points;
    }
  }
  if (truth && recovered) {
    if (truth->components() == recovered->components() && truth->dim() == recovered->dim())
      report["matched_centroid_error"] = matched_centroid_error(*recovered, *truth);
    else
      report["matched_centroid_error"] = nullptr;
    report["truth_sigma"] = truth->sigma;
  }
  report["results"] = std::move(per_result);

  io::write_json_atomic(opts.out / "report.json", report);
  std::vector<fs::path> inputs_used = opts.results;
  if (opts.gmm) inputs_used.push_back(*opts.gmm);
  if (opts.truth_gmm) inputs_used.push_back(*opts.truth_gmm);
  inputs_used.insert(inputs_used.end(), opts.warps.begin(), opts.warps.end());
  write_manifest(opts.out, "eval", json::object(), inputs_used, {"report.json"}, 0, start, nullptr, "ok");
  log << "eval: wrote " << (opts.out / "report.json").string() << "\n";
  return kSuccess;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diffeomorphic ICP: point-set registration and atlas building", "difficp"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  SynthOptions synth;
  std::string experiment = "fig1";
  std::string synth_seed = "0";
  double warp_strength = -1.0;
  auto* s = app.add_subcommand("synth", "Generate synthetic point sets from a warped mixture");
  s->add_option("--experiment", experiment, "fig1: one warped set; fig2: several sets")
      ->check(CLI::IsMember({"fig1", "fig2"}))
      ->capture_default_str();
  s->add_option("--seed", synth_seed, "Master seed")->capture_default_str();
  s->add_option("--sets", synth.spec.n_sets, "Number of sets for fig2")->capture_default_str();
  s->add_option("--n-points", synth.spec.n_points, "Points per set")->capture_default_str();
  s->add_option("--components", synth.spec.components, "Mixture components")->capture_default_str();
  s->add_option("--sigma", synth.spec.sigma, "Mixture standard deviation")->capture_default_str();
  s->add_option("--tau", synth.spec.kernel.tau, "Kernel width of the ground-truth warps")->capture_default_str();
  s->add_option("--steps", synth.spec.steps, "Integration steps of the ground-truth warps")
      ->capture_default_str();
  s->add_option("--displacement", synth.spec.displacement_factor,
                "Target mean displacement in units of tau")
      ->capture_default_str();
  s->add_option("--warp-strength", warp_strength, "Fixed momentum scale (skips calibration)");
  s->add_option("--out", synth.out, "Output directory")->capture_default_str();

  RegisterOptions reg;
  double reg_sigma = 0.0;
  auto* r = app.add_subcommand("register", "Register one point set to a mixture");
  r->add_option("--points", reg.points, "Point-set JSON")->required();
  r->add_option("--gmm", reg.gmm, "Mixture JSON")->required();
  r->add_option("--sigma", reg_sigma, "Replace the mixture sigma");
  add_registration_flags(*r, reg.config, true);
  r->add_option("--grid-size", reg.grid_size, "Lattice nodes per axis in grid.json")->capture_default_str();
  r->add_option("--out", reg.out, "Output directory")->capture_default_str();

  AtlasOptions atlas;
  std::string atlas_seed = "0";
  auto* a = app.add_subcommand("atlas", "Build a shared mixture for several point sets");
  a->add_option("sets", atlas.sets, "Point-set JSON files")->required();
  a->add_option("--components", atlas.components, "Mixture components")->capture_default_str();
  a->add_option("--seed", atlas_seed, "Seed of the k-means++ initialization")->capture_default_str();
  a->add_option("--em-loops", atlas.config.em_inner_loops, "E/M passes per outer iteration")
      ->capture_default_str();
  add_registration_flags(*a, atlas.config, false);
  a->add_option("--out", atlas.out, "Output directory")->capture_default_str();

  EvalOptions eval;
  std::string eval_gmm, eval_truth;
  auto* e = app.add_subcommand("eval", "Compute evaluation metrics for registration results");
  e->add_option("--result", eval.results, "result.json or result_<k>.json (repeatable)");
  e->add_option("--gmm", eval_gmm, "Mixture to evaluate against instead of the stored one");
  e->add_option("--truth-gmm", eval_truth, "Generating mixture");
  e->add_option("--warp", eval.warps, "Ground-truth warp_<k>.json, one per --result");
  e->add_option("--out", eval.out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kSuccess : kUsageOrIo;
  }

  try {
    if (*s) {
      synth.experiment = experiment == "fig1" ? Experiment::SingleSet : Experiment::MultiSet;
      synth.spec.seed = parse_seed(synth_seed);
      if (s->count("--warp-strength")) synth.spec.warp_strength = warp_strength;
      return cmd_synth(synth, out);
    }
    if (*r) {
      if (r->count("--sigma")) reg.sigma = reg_sigma;
      return cmd_register(reg, out);
    }
    if (*a) {
      atlas.config.init_seed = parse_seed(atlas_seed);
      atlas.config.threads = default_threads();
      return cmd_atlas(atlas, out);
    }
    if (!eval_gmm.empty()) eval.gmm = eval_gmm;
    if (!eval_truth.empty()) eval.truth_gmm = eval_truth;
    return cmd_eval(eval, out);
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    return kUsageOrIo;
  } catch (const RegistrationError& ex) {
    err << "error: " << ex.what() << "\n"
        << "  outer iteration: " << ex.iteration() << "\n";
    if (ex.set_index() >= 0) err << "  set: " << ex.set_index() << "\n";
    err << "  momenta norm: " << ex.momenta_norm() << "\n";
    return kBlowup;
  } catch (const IntegrationBlowup& ex) {
    err << "error: " << ex.what() << "\n";
    return kBlowup;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kUsageOrIo;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"difficp"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace difficp::cli
