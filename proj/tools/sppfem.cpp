// sppfem command-line driver: evolve, k0, classify, distance, convergence.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "sppfem/config.hpp"
#include "sppfem/diagnostics.hpp"

namespace fs = std::filesystem;
using namespace sppfem;

namespace {

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config:
    case ErrorKind::Input:
    case ErrorKind::Domain:
    case ErrorKind::ModelValidation:
      return 2;
    case ErrorKind::NonConvergence:
    case ErrorKind::Solver:
      return 3;
    case ErrorKind::StructureViolation:
      return 4;
    case ErrorKind::Geometry:
    case ErrorKind::Topology:
      return 5;
    case ErrorKind::Internal:
      return 1;
  }
  return 1;
}

int report(const Error& e) {
  std::cerr << fmt::format("error[{}]: {}\n", to_string(e.kind()), e.what());
  return exit_code(e.kind());
}

std::string row_csv(const SeriesRow& r) {
  return fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{},{:.17g}\n", r.step, r.t, r.V, r.dV_rel, r.W,
                     r.W_rel, r.newton_iters, r.min_quality);
}

void write_snapshot(const RunConfig& cfg, const EvolutionState& s, const AnisotropyModel& model,
                    const std::string& stem) {
  for (const auto& f : cfg.formats) {
    if (f == "obj") write_obj(fmt::format("{}/{}.obj", cfg.output, stem), s.mesh);
    if (f == "vtk") write_vtk(fmt::format("{}/{}.vtk", cfg.output, stem), s.mesh, model, s.mu);
  }
}

int cmd_evolve(const std::string& path, const std::map<std::string, std::optional<std::string>>& overrides) {
  RunConfig cfg = load_config(path, false);
  for (const auto& [key, value] : overrides)
    if (value) set_config_value(cfg, key, *value);
  cfg.validate();

  fs::create_directories(cfg.output);
  {
    std::ofstream m(cfg.output + "/manifest.cfg");
    m << to_manifest(cfg);
  }
  AnisotropyModel model = parse_model(cfg.anisotropy);
  StabilizerTable table =
      cached_table(model, Strategy::parse(cfg.stabilizer), cfg.k0_tol, cfg.resolved_table_cache());
  table.save(cfg.output + "/stabilizer.txt");
  SurfaceMesh mesh = build_shape(cfg);
  StepperConfig sc = stepper_config(cfg, table);
  const int steps = step_count(cfg.T, sc.tau);
  std::cout << fmt::format("evolve: {} vertices, {} triangles, tau = {:.6g}, {} steps, k in [{:.6g}, {:.6g}]\n",
                           mesh.vertex_count(), mesh.triangle_count(), sc.tau, steps, table.min_value(),
                           table.max_value());

  std::ofstream series(cfg.output + "/series.csv");
  series << "step,t,V,dV_rel,W,W_rel,newton_iters,min_quality\n";
  std::optional<EvolutionState> last;
  EvolveHooks hooks;
  hooks.on_step = [&](const EvolutionState& s, const SeriesRow& row) {
    series << row_csv(row);
    series.flush();
    if (s.step % cfg.snapshot_every == 0 || s.step == steps) write_snapshot(cfg, s, model, fmt::format("mesh_{}", s.step));
    last = s;
  };
  try {
    Trajectory tr = evolve(mesh, model, sc, cfg.T, hooks);
    const SeriesRow& f = tr.series.back();
    double max_dv = 0;
    for (const auto& r : tr.series) max_dv = std::max(max_dv, std::abs(r.dV_rel));
    std::cout << fmt::format("done: t = {:.6g}, W/W0 = {:.17g}, max |dV/V0| = {:.3e}\n", f.t, f.W_rel, max_dv);
  } catch (const Error& e) {
    if (last) write_snapshot(cfg, *last, model, fmt::format("failed_{}", last->step));
    throw;
  }
  return 0;
}

int cmd_k0(const std::string& spec, const std::string& out, const std::string& strategy, double tol, bool witness) {
  AnisotropyModel model = parse_model(spec);
  std::vector<K0Result> details;
  StabilizerTable t = build_table(model, Strategy::parse(strategy), tol, &details);
  if (!out.empty()) t.save(out);
  std::cout << fmt::format("model: {}\nstrategy: {}\nk0 min: {:.17g}\nk0 max: {:.17g}\n", model.description(),
                           t.strategy().to_string(), t.min_value(), t.max_value());
  if (witness) {
    for (std::size_t i = 0; i < details.size(); ++i) {
      const K0Result& d = details[i];
      std::cout << fmt::format("node {}: k0 = {:.17g} u = ({:.6f}, {:.6f}, {:.6f}) v = ({:.6f}, {:.6f}, {:.6f}) slack = {:.3e}\n",
                               i, d.value, d.witness_u.x(), d.witness_u.y(), d.witness_u.z(), d.witness_v.x(),
                               d.witness_v.y(), d.witness_v.z(), d.slack);
    }
  }
  return 0;
}

int cmd_classify(const std::string& spec, int samples) {
  AnisotropyModel model = parse_model(spec);
  Classification c = classify(model, samples);
  std::cout << to_string(c.kind) << "\n";
  std::cout << fmt::format("lambda1 min: {:.17g}\nlambda1 max: {:.17g}\nlambda2 max: {:.17g}\n", c.lambda1_min,
                           c.lambda1_max, c.lambda2_max);
  if (c.kind == AnisotropyKind::Strong)
    std::cout << fmt::format("witness normal: ({:.17g}, {:.17g}, {:.17g})\nwitness tangent: ({:.17g}, {:.17g}, {:.17g})\n",
                             c.witness_normal.x(), c.witness_normal.y(), c.witness_normal.z(),
                             c.witness_tangent.x(), c.witness_tangent.y(), c.witness_tangent.z());
  return 0;
}

int cmd_distance(const std::string& a, const std::string& b, const DistanceOptions& opt) {
  SurfaceMesh A = read_obj(a), B = read_obj(b);
  DistanceResult r = manifold_distance(A, B, opt);
  std::cout << fmt::format("M = {:.17g}\nconverged = {}\nlevel = {}\ndirections = {}\n", r.value,
                           r.converged ? "yes" : "no", r.level, r.directions);
  return 0;
}

int cmd_convergence(int id, const std::string& out, SuiteOptions opt) {
  opt.log = [](const std::string& s) { std::cerr << s << "\n"; };
  ConvergenceReport rep = convergence_suite(id, opt);
  std::cout << rep.table();
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream csv(fmt::format("{}/convergence_case{}.csv", out, id));
    rep.write_csv(csv);
    std::ofstream txt(fmt::format("{}/convergence_case{}.txt", out, id));
    txt << rep.table();
  }
  return rep.failures.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anisotropic surface diffusion with a structure-preserving parametric FEM"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version());

  auto* evolve = app.add_subcommand("evolve", "Evolve a surface as described by a config file");
  evolve->set_help_flag("--help", "Print this help message and exit");  // frees --h for the mesh size
  std::string config_path;
  evolve->add_option("config", config_path, "Config file (key = value)")->required()->check(CLI::ExistingFile);
  std::map<std::string, std::optional<std::string>> overrides;
  for (const auto& key : config_keys()) overrides[key];
  for (auto& [key, value] : overrides) evolve->add_option("--" + key, value, "Override config key " + key);

  auto* k0 = app.add_subcommand("k0", "Compute the minimal stabilizing function table");
  std::string model_spec, k0_out, strategy = "exact";
  double k0_tol = 1e-4;
  bool witness = false;
  k0->add_option("--model", model_spec, "Anisotropy spec, e.g. \"fourfold beta=0.25\"")->required();
  k0->add_option("-o,--output", k0_out, "Table file to write");
  k0->add_option("--strategy", strategy, "exact | plus:<c> | sup")->capture_default_str();
  k0->add_option("--tol", k0_tol, "Bisection tolerance")->capture_default_str();
  k0->add_flag("--witness", witness, "Print the tightest (u, v) pair per node");

  auto* cls = app.add_subcommand("classify", "Classify an anisotropy as weak or strong");
  std::string cls_spec;
  int samples = 2000;
  cls->add_option("--model", cls_spec, "Anisotropy spec")->required();
  cls->add_option("--samples", samples, "Number of sphere samples")->capture_default_str();

  auto* dist = app.add_subcommand("distance", "Manifold distance between two closed OBJ meshes");
  std::string mesh_a, mesh_b;
  DistanceOptions dopt;
  dist->add_option("a", mesh_a, "First mesh")->required()->check(CLI::ExistingFile);
  dist->add_option("b", mesh_b, "Second mesh")->required()->check(CLI::ExistingFile);
  dist->add_option("--start-level", dopt.start_level)->capture_default_str();
  dist->add_option("--max-level", dopt.max_level)->capture_default_str();
  dist->add_option("--rel-tol", dopt.rel_tol)->capture_default_str();

  auto* conv = app.add_subcommand("convergence", "Run the convergence study for one case");
  int case_id = 0;
  std::string conv_out;
  SuiteOptions sopt;
  conv->add_option("--case", case_id, "Case id")->required()->check(CLI::Range(1, 6));
  conv->add_option("-o,--output", conv_out, "Directory for the report CSV and table");
  conv->add_option("--cache", sopt.cache_dir, "Cache directory for tables and reference runs");
  conv->add_option("--levels", sopt.levels, "h = 2^-level for the test runs")->capture_default_str();
  conv->add_option("--reference-level", sopt.reference_level)->capture_default_str();
  conv->add_option("--times", sopt.times, "Evaluation times")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*evolve) return cmd_evolve(config_path, overrides);
    if (*k0) return cmd_k0(model_spec, k0_out, strategy, k0_tol, witness);
    if (*cls) return cmd_classify(cls_spec, samples);
    if (*dist) return cmd_distance(mesh_a, mesh_b, dopt);
    if (*conv) return cmd_convergence(case_id, conv_out, sopt);
  } catch (const Error& e) {
    return report(e);
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
