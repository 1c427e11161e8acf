#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sppfem/anisotropy.hpp"
#include "sppfem/mesh.hpp"
#include "sppfem/solver.hpp"
#include "sppfem/stabilizer.hpp"

namespace sppfem {

/// Parses the textual model grammar, which is also what description() prints:
///   isotropic
///   ellipsoidal G=g1,g2,g3 | G=[9 entries, row-major]
///   lr r=4
///   fourfold beta=0.25
///   bgn r=2 G=[...];[...]      (each G diagonal triple or 9 entries)
///   sum(w1*<spec> + w2*<spec>)
AnisotropyModel parse_model(const std::string& spec);

/// Everything a run needs. Keys in the config file (one "key = value" per
/// line, '#' comments, optional [section] headers prefixing "section."):
///
///   shape            cuboid | ellipsoid | obj
///   shape.size       a b c            (box side lengths / ellipsoid diameters)
///   shape.path       OBJ file         (shape = obj)
///   anisotropy       model spec, see parse_model
///   stabilizer       exact | plus:<c> | sup
///   stabilizer.tol   bisection tolerance for k0
///   h, tau, T        mesh size, time step (default 2/25 h^2), final time
///   output           run directory
///   snapshot_every   write mesh snapshots every N steps (final step always)
///   formats          comma list of obj, vtk
///   table_cache      stabilizer table cache directory (default <output>/tables)
///   newton.tol_x, newton.tol_mu, newton.max_iter, newton.jacobian (full | lazy)
///   linear_solver    auto | umfpack | sparselu
struct RunConfig {
  std::string shape = "ellipsoid";
  std::array<double, 3> size{2.0, 2.0, 1.0};
  std::string shape_path;
  std::string anisotropy = "isotropic";
  std::string stabilizer = "exact";
  double k0_tol = 1e-4;
  double h = 0.125;
  std::optional<double> tau;
  double T = 1.0;
  std::string output = "run";
  int snapshot_every = 10;
  std::vector<std::string> formats{"obj"};
  std::string table_cache;
  double tol_x = 1e-12;
  double tol_mu = 1e-12;
  int max_newton = 50;
  std::string jacobian = "lazy";
  std::string linear_solver = "auto";

  bool operator==(const RunConfig&) const = default;

  double resolved_tau() const { return tau ? *tau : 2.0 / 25.0 * h * h; }
  std::string resolved_table_cache() const { return table_cache.empty() ? output + "/tables" : table_cache; }
  /// Throws ErrorKind::Config naming the offending key.
  void validate() const;
};

/// Names of all recognised keys, in manifest order.
const std::vector<std::string>& config_keys();

/// Sets one key from its textual value; ErrorKind::Config on unknown key or bad value.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

/// validate = false defers RunConfig::validate, e.g. until overrides are applied.
RunConfig parse_config(std::istream& is, const std::string& source = "<config>", bool validate = true);
RunConfig load_config(const std::string& path, bool validate = true);

/// Resolved config echo (all keys, 17 significant digits) headed by a version line.
std::string to_manifest(const RunConfig& cfg);

SurfaceMesh build_shape(const RunConfig& cfg);
StepperConfig stepper_config(const RunConfig& cfg, StabilizerTable table);

/// Loads the table from the cache directory keyed by model hash, or builds and stores it.
StabilizerTable cached_table(const AnisotropyModel& model, Strategy strategy, double tol, const std::string& dir);

const char* version();

}  // namespace sppfem
