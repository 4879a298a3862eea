#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "pnpula/conjugate.hpp"
#include "pnpula/detail/sha1.hpp"
#include "pnpula/metrics.hpp"
#include "pnpula/sampler.hpp"
#include "pnpula/synth.hpp"
#include "pnpula/tensor_io.hpp"

namespace pnpula {

enum class Task {
  deblur_gaussian,
  deblur_motion,
  inpaint,
  superresolve,
  denoise_only,
  calibrate_only,
};

inline const char* to_string(Task t) {
  switch (t) {
    case Task::deblur_gaussian: return "deblur-gaussian";
    case Task::deblur_motion: return "deblur-motion";
    case Task::inpaint: return "inpaint";
    case Task::superresolve: return "superresolve";
    case Task::denoise_only: return "denoise-only";
    case Task::calibrate_only: return "calibrate-only";
  }
  return "?";
}

inline Task task_from_string(const std::string& s) {
  for (Task t : {Task::deblur_gaussian, Task::deblur_motion, Task::inpaint,
                 Task::superresolve, Task::denoise_only, Task::calibrate_only})
    if (s == to_string(t)) return t;
  throw ConfigError("unknown task: " + s);
}

struct OperatorSpec {
  std::string kind = "blur-gaussian";  // calibrate-only picks the operator here
  std::string kernel_path;
  int kernel_size = 7;
  double kernel_bandwidth = 3.0;
  double mask_rate = 0.5;
  std::string mask_path;
  int sr_factor = 4;
  double sigma = 1.0 / 255.0;
};

struct DenoiserSpec {
  std::string backend = "analytic-gaussian";  // analytic-gaussian | ddpm-chain
  std::string score = "analytic-gaussian";    // analytic-gaussian | external
  std::string score_command;
  std::string score_exchange_dir = ".";
  double eta = 2.0;
  double lambda = 1.5 / 255.0;
  std::string t_star_rule = "explicit";  // explicit | cumulative-std
  int t_star = 3;
  bool equivariant = true;
  std::vector<std::string> group;  // empty -> full dihedral group
  double analytic_mu = 0.5;
  double analytic_tau2 = 0.04;
};

struct ScheduleSpec {
  int T = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;
};

struct SamplerSpec {
  long iterations = 100;
  double burn_in = 0.3;
  double gamma = 0.0;  // 0 -> derived from default_step_size
  std::string mode = "latent";
  std::string solver = "automatic";
  double cg_tol = 1e-8;
  int cg_max_iterations = 500;
};

struct CalibratorSpec {
  bool enabled = true;
  double rho0 = 0.1;
  double c0 = 0.0;
  double p = 0.85;
  double rho_min = 1e-6;
  double rho_max = 10.0;
  double tol_rho = 1e-3;
  double tol_x = 1e-4;
  std::string averaging = "tail-average";
};

struct IoSpec {
  std::string input;        // ground truth (deblur/inpaint/SR) or clean image (denoise)
  std::string measurement;  // optional pre-made y; skips internal degradation
  std::string synth;        // "kind:HxW[xC]" generates the input when no file given
  std::string output_dir = "out";
  std::string run_id = "run";
  int png_bits = 8;
};

struct ExperimentConfig {
  int schema_version = 1;
  Task task = Task::deblur_gaussian;
  uint64_t seed = 0;
  OperatorSpec op;
  DenoiserSpec denoiser;
  ScheduleSpec schedule;
  SamplerSpec sampler;
  CalibratorSpec calibrator;
  IoSpec io;
  bool degrade_only = false;  // the degrade subcommand stops after writing y
};

struct RunReport {
  std::string run_dir;
  Task task = Task::deblur_gaussian;
  uint64_t seed = 0;
  double psnr_mean_db = std::numeric_limits<double>::quiet_NaN();
  double ssim_mean = std::numeric_limits<double>::quiet_NaN();
  double psnr_measurement_db = std::numeric_limits<double>::quiet_NaN();
  double rho_hat = 0.0;
  bool calibrated = false;
  bool converged = false;
  long converged_at = -1;
  long iterations = 0;
  long retained = 0;
  double gamma = 0.0;
  uint64_t nfe_total = 0;
  double wall_clock_s = 0.0;
  std::vector<std::pair<std::string, std::string>> input_hashes;  // (path, sha1)
};

namespace detail {

// RNG stream ids per purpose, all derived from one run seed.
enum RngPurpose : uint64_t {
  kStreamArtifacts = 0,  // masks, kernels
  kStreamDegrade = 1,
  kStreamSampler = 2,
  kStreamSynth = 3,
};

inline std::string file_sha1(const std::string& path) {
  return git_blob_sha1(read_all(path));
}

inline ImageTensor load_or_synthesise_input(const ExperimentConfig& cfg,
                                            RunReport& report) {
  if (!cfg.io.input.empty()) {
    if (!std::filesystem::exists(cfg.io.input))
      throw FileError("input image not found: " + cfg.io.input);
    report.input_hashes.emplace_back(cfg.io.input, file_sha1(cfg.io.input));
    return read_image_any(cfg.io.input);
  }
  if (!cfg.io.synth.empty()) {
    // "kind:HxW" or "kind:HxWxC"
    const auto colon = cfg.io.synth.find(':');
    if (colon == std::string::npos)
      throw ConfigError("synth spec must look like kind:HxW[xC]");
    const TestImageKind kind =
        test_image_kind_from_string(cfg.io.synth.substr(0, colon));
    int h = 0, w = 0, c = 1;
    const std::string dims = cfg.io.synth.substr(colon + 1);
    if (std::sscanf(dims.c_str(), "%dx%dx%d", &h, &w, &c) < 2)
      throw ConfigError("cannot parse synth dims: " + dims);
    return generate_test_image(kind, c, h, w, cfg.seed + kStreamSynth);
  }
  throw ConfigError("either io.input or io.synth must be given");
}

inline Kernel2d task_kernel(const ExperimentConfig& cfg, RunReport& report) {
  if (!cfg.op.kernel_path.empty()) {
    if (!std::filesystem::exists(cfg.op.kernel_path))
      throw FileError("kernel file not found: " + cfg.op.kernel_path);
    report.input_hashes.emplace_back(cfg.op.kernel_path,
                                     file_sha1(cfg.op.kernel_path));
    const ImageTensor k = read_image_any(cfg.op.kernel_path);
    if (k.channels() != 1) throw ShapeError("kernel files must be single channel");
    Kernel2d out;
    out.height = k.height();
    out.width = k.width();
    out.weights.assign(k.begin(), k.end());
    out.normalise();
    return out;
  }
  return {};
}

inline std::string effective_operator_kind(const ExperimentConfig& cfg) {
  switch (cfg.task) {
    case Task::deblur_gaussian: return "blur-gaussian";
    case Task::deblur_motion: return "blur-motion";
    case Task::inpaint: return "mask";
    case Task::superresolve: return "downsample";
    case Task::calibrate_only: return cfg.op.kind;
    case Task::denoise_only: break;
  }
  throw ConfigError("task has no measurement operator");
}

inline LinearOperator build_operator(const ExperimentConfig& cfg, int height,
                                     int width, RunReport& report) {
  const std::string kind = effective_operator_kind(cfg);
  if (kind == "blur-gaussian")
    return LinearOperator::blur(
        gaussian_kernel(cfg.op.kernel_size, cfg.op.kernel_bandwidth), height, width);
  if (kind == "blur-motion") {
    Kernel2d k = task_kernel(cfg, report);
    if (k.weights.size() == 1)
      k = motion_blur_kernel(25, cfg.seed + kStreamArtifacts);
    return LinearOperator::blur(std::move(k), height, width);
  }
  if (kind == "mask") {
    if (!cfg.op.mask_path.empty()) {
      if (!std::filesystem::exists(cfg.op.mask_path))
        throw FileError("mask file not found: " + cfg.op.mask_path);
      report.input_hashes.emplace_back(cfg.op.mask_path,
                                       file_sha1(cfg.op.mask_path));
      ImageTensor m = read_image_any(cfg.op.mask_path);
      for (double& v : m) v = v >= 0.5 ? 1.0 : 0.0;
      return LinearOperator::mask(std::move(m));
    }
    RngStream rng(cfg.seed, kStreamArtifacts);
    return LinearOperator::mask(random_keep_map(height, width, cfg.op.mask_rate, rng));
  }
  if (kind == "downsample") {
    Kernel2d aa = gaussian_kernel(cfg.op.kernel_size, cfg.op.kernel_bandwidth);
    return LinearOperator::downsample(std::move(aa), cfg.op.sr_factor, height, width);
  }
  throw ConfigError("unknown operator kind: " + kind);
}

inline std::shared_ptr<const Denoiser> build_denoiser(const ExperimentConfig& cfg,
                                                      const Shape& shape) {
  const ImageTensor mu(shape.channels, shape.height, shape.width,
                       cfg.denoiser.analytic_mu);
  std::shared_ptr<const Denoiser> inner;
  if (cfg.denoiser.backend == "analytic-gaussian") {
    inner = std::make_shared<AnalyticGaussianDenoiser>(mu, cfg.denoiser.analytic_tau2,
                                                       cfg.denoiser.lambda);
  } else if (cfg.denoiser.backend == "ddpm-chain") {
    const NoiseSchedule schedule = build_schedule(
        cfg.schedule.T, cfg.schedule.beta_min, cfg.schedule.beta_max);
    std::shared_ptr<const ScoreBackend> score;
    if (cfg.denoiser.score == "analytic-gaussian") {
      score = std::make_shared<AnalyticGaussianScore>(mu, cfg.denoiser.analytic_tau2,
                                                      schedule);
    } else if (cfg.denoiser.score == "external") {
      if (cfg.denoiser.score_command.empty())
        throw ConfigError("external score backend needs denoiser.score_command");
      score = std::make_shared<ExternalScoreBackend>(cfg.denoiser.score_command,
                                                     cfg.denoiser.score_exchange_dir);
    } else {
      throw ConfigError("unknown score backend: " + cfg.denoiser.score);
    }
    TimestepRule rule;
    if (cfg.denoiser.t_star_rule == "explicit") {
      rule = {TimestepMode::explicit_t, cfg.denoiser.t_star};
    } else if (cfg.denoiser.t_star_rule == "cumulative-std") {
      rule = {TimestepMode::cumulative_std, 0};
    } else {
      throw ConfigError("unknown t_star rule: " + cfg.denoiser.t_star_rule);
    }
    inner = std::make_shared<DdpmChainDenoiser>(std::move(score), schedule,
                                                cfg.denoiser.eta, cfg.denoiser.lambda,
                                                rule);
  } else {
    throw ConfigError("unknown denoiser backend: " + cfg.denoiser.backend);
  }
  if (!cfg.denoiser.equivariant) return inner;
  std::vector<GroupElement> group;
  if (cfg.denoiser.group.empty()) {
    group = dihedral_group();
  } else {
    for (const std::string& name : cfg.denoiser.group)
      group.push_back(group_element_from_string(name));
  }
  return std::make_shared<EquivariantDenoiser>(std::move(inner), std::move(group));
}

inline SamplerConfig build_sampler_config(const ExperimentConfig& cfg, double gamma) {
  SamplerConfig sc;
  sc.gamma = gamma;
  sc.lambda = cfg.denoiser.lambda;
  sc.iterations = cfg.sampler.iterations;
  sc.burn_in_fraction = cfg.sampler.burn_in;
  if (cfg.sampler.mode == "latent")
    sc.mode = SamplerMode::latent;
  else if (cfg.sampler.mode == "ambient")
    sc.mode = SamplerMode::ambient;
  else
    throw ConfigError("unknown sampler mode: " + cfg.sampler.mode);
  if (cfg.sampler.solver == "automatic")
    sc.solver.method = SolveMethod::automatic;
  else if (cfg.sampler.solver == "spectral")
    sc.solver.method = SolveMethod::spectral;
  else if (cfg.sampler.solver == "diagonal")
    sc.solver.method = SolveMethod::diagonal;
  else if (cfg.sampler.solver == "conjugate-gradient")
    sc.solver.method = SolveMethod::conjugate_gradient;
  else
    throw ConfigError("unknown solver method: " + cfg.sampler.solver);
  sc.solver.cg_tol = cfg.sampler.cg_tol;
  sc.solver.cg_max_iterations = cfg.sampler.cg_max_iterations;
  return sc;
}

inline CalibratorConfig build_calibrator_config(const CalibratorSpec& spec) {
  CalibratorConfig cc;
  cc.rho0 = spec.rho0;
  cc.c0 = spec.c0;
  cc.p = spec.p;
  cc.rho_min = spec.rho_min;
  cc.rho_max = spec.rho_max;
  cc.tol_rho = spec.tol_rho;
  cc.tol_x = spec.tol_x;
  if (spec.averaging == "tail-average")
    cc.averaging = CalibratorConfig::Averaging::tail_average;
  else if (spec.averaging == "last-iterate")
    cc.averaging = CalibratorConfig::Averaging::last_iterate;
  else
    throw ConfigError("unknown averaging mode: " + spec.averaging);
  cc.validate();
  return cc;
}

inline void write_trace_csv(const std::string& path,
                            const std::vector<TraceRow>& trace) {
  std::string out = "k,rho,likelihood_drift,prior_drift,step_norm,psnr_db\n";
  char buf[256];
  for (const TraceRow& r : trace) {
    std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g,%.17g,", r.k, r.rho,
                  r.likelihood_drift_norm, r.prior_drift_norm, r.step_norm);
    out += buf;
    if (std::isnan(r.psnr_db)) {
      out += "\n";
    } else {
      std::snprintf(buf, sizeof(buf), "%.17g\n", r.psnr_db);
      out += buf;
    }
  }
  write_all(path, reinterpret_cast<const unsigned char*>(out.data()), out.size());
}

inline std::string toml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

inline std::string toml_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  std::string s = buf;
  // CLI11 parses these as floats either way, but keep them TOML-valid.
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

// The echo uses exactly the option names the CLI accepts, so feeding it back
// through --config reproduces the run (the seed is passed on the command
// line and echoed as a comment).
inline std::string config_echo_toml(const ExperimentConfig& cfg) {
  std::string t;
  t += "schema_version = " + std::to_string(cfg.schema_version) + "\n";
  t += "task = \"" + std::string(to_string(cfg.task)) + "\"\n";
  t += "# seed = " + std::to_string(cfg.seed) + " (pass --seed explicitly)\n\n";
  t += "[operator]\n";
  t += "kind = \"" + toml_escape(cfg.op.kind) + "\"\n";
  t += "kernel_path = \"" + toml_escape(cfg.op.kernel_path) + "\"\n";
  t += "kernel_size = " + std::to_string(cfg.op.kernel_size) + "\n";
  t += "kernel_bandwidth = " + toml_num(cfg.op.kernel_bandwidth) + "\n";
  t += "mask_rate = " + toml_num(cfg.op.mask_rate) + "\n";
  t += "mask_path = \"" + toml_escape(cfg.op.mask_path) + "\"\n";
  t += "sr_factor = " + std::to_string(cfg.op.sr_factor) + "\n";
  t += "sigma = " + toml_num(cfg.op.sigma) + "\n\n";
  t += "[denoiser]\n";
  t += "backend = \"" + toml_escape(cfg.denoiser.backend) + "\"\n";
  t += "score = \"" + toml_escape(cfg.denoiser.score) + "\"\n";
  t += "score_command = \"" + toml_escape(cfg.denoiser.score_command) + "\"\n";
  t += "score_exchange_dir = \"" + toml_escape(cfg.denoiser.score_exchange_dir) +
       "\"\n";
  t += "eta = " + toml_num(cfg.denoiser.eta) + "\n";
  t += "lambda = " + toml_num(cfg.denoiser.lambda) + "\n";
  t += "t_star_rule = \"" + toml_escape(cfg.denoiser.t_star_rule) + "\"\n";
  t += "t_star = " + std::to_string(cfg.denoiser.t_star) + "\n";
  t += std::string("equivariant = ") + (cfg.denoiser.equivariant ? "true" : "false") +
       "\n";
  if (!cfg.denoiser.group.empty()) {
    t += "group = [";
    for (size_t i = 0; i < cfg.denoiser.group.size(); ++i) {
      if (i) t += ", ";
      t += "\"" + toml_escape(cfg.denoiser.group[i]) + "\"";
    }
    t += "]\n";
  }
  t += "analytic_mu = " + toml_num(cfg.denoiser.analytic_mu) + "\n";
  t += "analytic_tau2 = " + toml_num(cfg.denoiser.analytic_tau2) + "\n\n";
  t += "[schedule]\n";
  t += "T = " + std::to_string(cfg.schedule.T) + "\n";
  t += "beta_min = " + toml_num(cfg.schedule.beta_min) + "\n";
  t += "beta_max = " + toml_num(cfg.schedule.beta_max) + "\n\n";
  t += "[sampler]\n";
  t += "iterations = " + std::to_string(cfg.sampler.iterations) + "\n";
  t += "burn_in = " + toml_num(cfg.sampler.burn_in) + "\n";
  t += "gamma = " + toml_num(cfg.sampler.gamma) + "\n";
  t += "mode = \"" + toml_escape(cfg.sampler.mode) + "\"\n";
  t += "solver = \"" + toml_escape(cfg.sampler.solver) + "\"\n";
  t += "cg_tol = " + toml_num(cfg.sampler.cg_tol) + "\n";
  t += "cg_max_iterations = " + std::to_string(cfg.sampler.cg_max_iterations) +
       "\n\n";
  t += "[calibrator]\n";
  t += std::string("enabled = ") + (cfg.calibrator.enabled ? "true" : "false") + "\n";
  t += "rho0 = " + toml_num(cfg.calibrator.rho0) + "\n";
  t += "c0 = " + toml_num(cfg.calibrator.c0) + "\n";
  t += "p = " + toml_num(cfg.calibrator.p) + "\n";
  t += "rho_min = " + toml_num(cfg.calibrator.rho_min) + "\n";
  t += "rho_max = " + toml_num(cfg.calibrator.rho_max) + "\n";
  t += "tol_rho = " + toml_num(cfg.calibrator.tol_rho) + "\n";
  t += "tol_x = " + toml_num(cfg.calibrator.tol_x) + "\n";
  t += "averaging = \"" + toml_escape(cfg.calibrator.averaging) + "\"\n\n";
  t += "[io]\n";
  t += "input = \"" + toml_escape(cfg.io.input) + "\"\n";
  t += "measurement = \"" + toml_escape(cfg.io.measurement) + "\"\n";
  t += "synth = \"" + toml_escape(cfg.io.synth) + "\"\n";
  t += "output_dir = \"" + toml_escape(cfg.io.output_dir) + "\"\n";
  t += "run_id = \"" + toml_escape(cfg.io.run_id) + "\"\n";
  t += "png_bits = " + std::to_string(cfg.io.png_bits) + "\n";
  return t;
}

inline nlohmann::json report_to_json(const RunReport& r) {
  nlohmann::json j;
  j["task"] = to_string(r.task);
  j["seed"] = r.seed;
  j["run_dir"] = r.run_dir;
  nlohmann::json metrics;
  if (!std::isnan(r.psnr_mean_db)) {
    metrics["psnr_mean_db"] = r.psnr_mean_db;
    metrics["psnr_mean_db_2dp"] = format_db(r.psnr_mean_db);
  }
  if (!std::isnan(r.ssim_mean)) metrics["ssim_mean"] = r.ssim_mean;
  if (!std::isnan(r.psnr_measurement_db)) {
    metrics["psnr_measurement_db"] = r.psnr_measurement_db;
    metrics["psnr_measurement_db_2dp"] = format_db(r.psnr_measurement_db);
  }
  j["metrics"] = metrics;
  j["rho_hat"] = r.rho_hat;
  j["calibrated"] = r.calibrated;
  j["converged"] = r.converged;
  j["converged_at"] = r.converged_at;
  j["iterations"] = r.iterations;
  j["retained"] = r.retained;
  j["gamma"] = r.gamma;
  j["nfe_total"] = r.nfe_total;
  j["wall_clock_s"] = r.wall_clock_s;
  nlohmann::json hashes = nlohmann::json::array();
  for (const auto& [path, sha] : r.input_hashes)
    hashes.push_back({{"path", path}, {"sha1", sha}});
  j["input_hashes"] = hashes;
  j["outputs"] = {{"mean_png", "mean.png"},   {"mean_lrt1", "mean.lrt1"},
                  {"std_png", "std.png"},     {"std_lrt1", "std.lrt1"},
                  {"trace_csv", "trace.csv"}, {"config_echo", "config.echo.toml"}};
  return j;
}

inline void write_text(const std::string& path, const std::string& text) {
  write_all(path, reinterpret_cast<const unsigned char*>(text.data()), text.size());
}

}  // namespace detail

// End-to-end run: build the operator, obtain y (load or degrade), run the
// chain (with SAPG when enabled), write every artifact under
// out/<run-id>/, and return the summary. Fully deterministic given the seed.
inline RunReport run_experiment(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  if (cfg.schema_version != 1)
    throw ConfigError("unsupported schema_version (expected 1)");
  if (cfg.io.png_bits != 8 && cfg.io.png_bits != 16)
    throw ConfigError("io.png_bits must be 8 or 16");

  RunReport report;
  report.task = cfg.task;
  report.seed = cfg.seed;
  const std::filesystem::path dir =
      std::filesystem::path(cfg.io.output_dir) / cfg.io.run_id;
  std::filesystem::create_directories(dir);
  report.run_dir = dir.string();
  const uint64_t nfe_before = nfe_total();

  // Input image: ground truth for the restoration tasks, the clean image for
  // denoise-only (the noisy realisation is then formed with variance lambda).
  ImageTensor truth = detail::load_or_synthesise_input(cfg, report);

  if (cfg.task == Task::denoise_only) {
    ImageTensor noisy;
    if (!cfg.io.measurement.empty()) {
      if (!std::filesystem::exists(cfg.io.measurement))
        throw FileError("measurement not found: " + cfg.io.measurement);
      report.input_hashes.emplace_back(cfg.io.measurement,
                                       detail::file_sha1(cfg.io.measurement));
      noisy = read_image_any(cfg.io.measurement);
    } else {
      RngStream rng(cfg.seed, detail::kStreamDegrade);
      noisy = truth;
      const double sd = std::sqrt(cfg.denoiser.lambda);
      for (double& v : noisy) v += sd * rng.normal();
      write_png((dir / "y.png").string(), noisy, cfg.io.png_bits);
      write_lrt1((dir / "y.lrt1").string(), noisy);
    }
    const auto denoiser = detail::build_denoiser(cfg, noisy.shape());
    RngStream rng(cfg.seed, detail::kStreamSampler);
    const ImageTensor restored = denoiser->denoise(noisy, rng);
    write_png((dir / "mean.png").string(), restored, cfg.io.png_bits);
    write_lrt1((dir / "mean.lrt1").string(), restored);
    detail::write_trace_csv((dir / "trace.csv").string(), {});
    report.psnr_mean_db = psnr(restored, truth);
    report.ssim_mean = ssim(restored, truth);
    report.psnr_measurement_db = psnr(noisy, truth);
    report.iterations = 0;
    report.nfe_total = nfe_total() - nfe_before;
    detail::write_text((dir / "config.echo.toml").string(),
                       detail::config_echo_toml(cfg));
    report.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    detail::write_text((dir / "report.json").string(),
                       detail::report_to_json(report).dump(2) + "\n");
    return report;
  }

  // Measurement operator and observation.
  const LinearOperator op =
      detail::build_operator(cfg, truth.height(), truth.width(), report);
  Observation obs = [&] {
    if (!cfg.io.measurement.empty()) {
      if (!std::filesystem::exists(cfg.io.measurement))
        throw FileError("measurement not found: " + cfg.io.measurement);
      report.input_hashes.emplace_back(cfg.io.measurement,
                                       detail::file_sha1(cfg.io.measurement));
      return Observation(op, read_image_any(cfg.io.measurement), cfg.op.sigma);
    }
    RngStream rng(cfg.seed, detail::kStreamDegrade);
    Observation o = degrade(op, truth, cfg.op.sigma, rng);
    write_png((dir / "y.png").string(), o.y, cfg.io.png_bits);
    write_lrt1((dir / "y.lrt1").string(), o.y);
    return o;
  }();
  if (obs.y.shape() == truth.shape())
    report.psnr_measurement_db = psnr(obs.y, truth);

  if (op.kind() == LinearOperator::Kind::blur ||
      op.kind() == LinearOperator::Kind::downsample) {
    ImageTensor k(1, op.kernel().height, op.kernel().width);
    std::copy(op.kernel().weights.begin(), op.kernel().weights.end(), k.begin());
    write_lrt1((dir / "kernel.lrt1").string(), k);
  } else {
    write_lrt1((dir / "mask.lrt1").string(), op.keep_map());
  }

  if (cfg.degrade_only) {
    detail::write_text((dir / "config.echo.toml").string(),
                       detail::config_echo_toml(cfg));
    report.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    detail::write_text((dir / "report.json").string(),
                       detail::report_to_json(report).dump(2) + "\n");
    return report;
  }

  // Denoiser, step size, sampler.
  const auto denoiser = detail::build_denoiser(cfg, truth.shape());
  const bool calibrate = cfg.calibrator.enabled || cfg.task == Task::calibrate_only;
  const double rho0 = cfg.calibrator.rho0;
  const double gamma =
      cfg.sampler.gamma > 0.0
          ? cfg.sampler.gamma
          : default_step_size(cfg.denoiser.lambda, operator_norm(op), cfg.op.sigma,
                              rho0);
  report.gamma = gamma;
  const SamplerConfig sampler_cfg = detail::build_sampler_config(cfg, gamma);
  const CalibratorConfig calibrator_cfg =
      detail::build_calibrator_config(cfg.calibrator);

  RunOptions opts;
  opts.ground_truth = &truth;
  if (calibrate) opts.calibrator = &calibrator_cfg;

  const ImageTensor z0 = adjoint(op, obs.y);
  const SamplerRun run = run_sampler(z0, obs, rho0, *denoiser, sampler_cfg,
                                     RngStream(cfg.seed, detail::kStreamSampler),
                                     opts);

  detail::write_trace_csv((dir / "trace.csv").string(), run.trace);
  detail::write_text((dir / "config.echo.toml").string(),
                     detail::config_echo_toml(cfg));
  if (run.diverged)
    throw DivergenceError("sampler diverged at iteration " +
                              std::to_string(run.diverged_at) + " (" +
                              run.divergence_message + "); trace written to " +
                              (dir / "trace.csv").string(),
                          run.diverged_at, 0.0);

  write_png((dir / "mean.png").string(), run.posterior_mean, cfg.io.png_bits);
  write_lrt1((dir / "mean.lrt1").string(), run.posterior_mean);
  if (!run.posterior_std.empty()) {
    write_png((dir / "std.png").string(), run.posterior_std, cfg.io.png_bits);
    write_lrt1((dir / "std.lrt1").string(), run.posterior_std);
  }

  report.psnr_mean_db = psnr(run.posterior_mean, truth);
  report.ssim_mean = ssim(run.posterior_mean, truth);
  report.rho_hat = run.rho_hat;
  report.calibrated = run.calibrated;
  report.converged = run.converged;
  report.converged_at = run.converged_at;
  report.iterations = cfg.sampler.iterations;
  report.retained = run.retained;
  report.nfe_total = nfe_total() - nfe_before;
  report.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  detail::write_text((dir / "report.json").string(),
                     detail::report_to_json(report).dump(2) + "\n");
  return report;
}

}  // namespace pnpula
