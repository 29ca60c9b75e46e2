#include "difficp/io.hpp"

#include <fstream>
#include <string>

namespace difficp::io {

namespace {

const json& require(const json& j, const char* key, const char* what) {
  if (!j.is_object() || !j.contains(key))
    throw IoError(std::string(what) + ": missing field \"" + key + "\"");
  return j.at(key);
}

}  // namespace

json matrix_to_json(const Eigen::Ref<const Matrix>& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, const char* what) {
  if (!j.is_array()) throw IoError(std::string(what) + ": expected an array of rows");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows == 0 ? 0 : static_cast<Eigen::Index>(j.front().size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& row = j[i];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw IoError(std::string(what) + ": ragged row " + std::to_string(i));
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!row[c].is_number()) throw IoError(std::string(what) + ": non-numeric entry");
      m(i, c) = row[c].get<double>();
    }
  }
  return m;
}

json point_set_to_json(const PointSet& points) {
  return json{{"d", points.cols()}, {"points", matrix_to_json(points)}};
}

PointSet point_set_from_json(const json& j) {
  const json& d = require(j, "d", "point set");
  if (!d.is_number_integer() || d.get<int>() < 1) throw IoError("point set: \"d\" must be a positive integer");
  PointSet points = matrix_from_json(require(j, "points", "point set"), "point set");
  if (points.rows() > 0 && points.cols() != d.get<int>())
    throw IoError("point set: rows have " + std::to_string(points.cols()) + " coordinates but d = " +
                  std::to_string(d.get<int>()));
  if (points.rows() == 0) points.resize(0, d.get<int>());
  return points;
}

json gmm_to_json(const GmmModel& model) {
  json weights = json::array();
  for (Eigen::Index c = 0; c < model.weights.size(); ++c) weights.push_back(model.weights[c]);
  return json{{"sigma", model.sigma}, {"weights", weights}, {"means", matrix_to_json(model.means)}};
}

GmmModel gmm_from_json(const json& j) {
  GmmModel model;
  const json& sigma = require(j, "sigma", "gmm");
  if (!sigma.is_number()) throw IoError("gmm: \"sigma\" must be a number");
  model.sigma = sigma.get<double>();
  model.means = matrix_from_json(require(j, "means", "gmm"), "gmm means");
  const json& weights = require(j, "weights", "gmm");
  if (!weights.is_array()) throw IoError("gmm: \"weights\" must be an array");
  model.weights.resize(static_cast<Eigen::Index>(weights.size()));
  for (std::size_t c = 0; c < weights.size(); ++c) {
    if (!weights[c].is_number()) throw IoError("gmm: non-numeric weight");
    model.weights[static_cast<Eigen::Index>(c)] = weights[c].get<double>();
  }
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("gmm: ") + e.what());
  }
  return model;
}

json path_to_json(const GeodesicPath& path) {
  json q = json::array();
  for (const auto& state : path.q) q.push_back(matrix_to_json(state));
  json logdet = json::array();
  for (Eigen::Index i = 0; i < path.logdet.size(); ++i) logdet.push_back(path.logdet[i]);
  return json{{"times", path.times},
              {"q", std::move(q)},
              {"logdet", std::move(logdet)},
              {"hamiltonian", path.hamiltonian_trace}};
}

json free_energy_to_json(const FreeEnergyBreakdown& f) {
  return json{{"data", f.data_term},
              {"entropy", f.entropy_term},
              {"logdet", f.logdet_term},
              {"prior", f.prior_term},
              {"total", f.total}};
}

json synth_spec_to_json(const SynthSpec& spec) {
  json j{{"seed", spec.seed},
         {"n_points", spec.n_points},
         {"n_sets", spec.n_sets},
         {"components", spec.components},
         {"sigma", spec.sigma},
         {"displacement_factor", spec.displacement_factor},
         {"tau", spec.kernel.tau},
         {"d", spec.kernel.dim},
         {"control_points", spec.control_points},
         {"steps", spec.steps}};
  j["warp_strength"] = spec.warp_strength ? json(*spec.warp_strength) : json(nullptr);
  return j;
}

json warp_to_json(const RandomWarp& warp, const PointSet& latent) {
  return json{{"control_points", point_set_to_json(warp.control_points())},
              {"momenta", matrix_to_json(warp.momenta)},
              {"strength", warp.strength},
              {"tau", warp.problem.kernel().tau},
              {"steps", warp.problem.steps()},
              {"latent", point_set_to_json(latent)}};
}

StoredWarp warp_from_json(const json& j) {
  StoredWarp w;
  w.control_points = point_set_from_json(require(j, "control_points", "warp"));
  w.momenta = matrix_from_json(require(j, "momenta", "warp"), "warp momenta");
  if (w.momenta.rows() != w.control_points.rows() || w.momenta.cols() != w.control_points.cols())
    throw IoError("warp: momenta and control points differ in shape");
  w.kernel.tau = require(j, "tau", "warp").get<double>();
  w.kernel.dim = static_cast<int>(w.control_points.cols());
  w.steps = require(j, "steps", "warp").get<int>();
  w.latent = point_set_from_json(require(j, "latent", "warp"));
  return w;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("cannot parse " + path.string() + ": " + e.what());
  }
}

void write_json_atomic(const std::filesystem::path& path, const json& j) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << j.dump(1) << '\n';
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

}  // namespace difficp::io
