#pragma once

#include "difficp/geodesic.hpp"
#include "difficp/gmm.hpp"
#include "difficp/synth.hpp"
#include "difficp/types.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <stdexcept>

namespace difficp::io {

using json = nlohmann::json;

/// File or schema problem in one of the JSON interchange formats.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json matrix_to_json(const Eigen::Ref<const Matrix>& m);
Matrix matrix_from_json(const json& j, const char* what);

/// {"d": <int>, "points": [[x, y, ...], ...]}
json point_set_to_json(const PointSet& points);
PointSet point_set_from_json(const json& j);

/// {"sigma": s, "weights": [...], "means": [[...], ...]}
json gmm_to_json(const GmmModel& model);
GmmModel gmm_from_json(const json& j);

/// {"times": [...], "q": [[[...]]], "logdet": [...], "hamiltonian": [...]}
json path_to_json(const GeodesicPath& path);

json free_energy_to_json(const FreeEnergyBreakdown& f);
json synth_spec_to_json(const SynthSpec& spec);

/// Control points, momenta and integration settings of a ground-truth warp,
/// together with the unwarped samples it was applied to.
json warp_to_json(const RandomWarp& warp, const PointSet& latent);

struct StoredWarp {
  PointSet control_points;
  MomentumField momenta;
  KernelParams kernel;
  int steps = 10;
  PointSet latent;
};
StoredWarp warp_from_json(const json& j);

json read_json(const std::filesystem::path& path);

/// Writes through a temporary file in the same directory and renames it into place.
void write_json_atomic(const std::filesystem::path& path, const json& j);

}  // namespace difficp::io
