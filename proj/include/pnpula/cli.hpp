#pragma once

#include <CLI11.hpp>

#include <atomic>
#include <filesystem>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <thread>
#include <vector>

#include "pnpula/experiment.hpp"

namespace pnpula {

namespace detail {

struct CliState {
  ExperimentConfig cfg;
  std::string task_str = "deblur-gaussian";
};

// Option names double as the TOML schema: "--operator.sigma" binds to
// [operator] sigma. Unknown config keys are rejected. The seed is
// deliberately not a config key: stochastic subcommands demand an explicit
// --seed on the command line.
inline void attach_experiment_options(CLI::App* sub, CliState& st) {
  ExperimentConfig& cfg = st.cfg;
  sub->set_config("--config", "", "TOML run configuration")
      ->check(CLI::ExistingFile);
  sub->allow_config_extras(CLI::config_extras_mode::error);
  sub->add_option("--seed", cfg.seed, "RNG seed (required)")
      ->required()
      ->configurable(false);
  sub->add_option("--schema_version", cfg.schema_version, "config schema version");
  sub->add_option("--task", st.task_str, "restoration task")
      ->check(CLI::IsMember({"deblur-gaussian", "deblur-motion", "inpaint",
                             "superresolve", "denoise-only", "calibrate-only"}));

  sub->add_option("--operator.kind", cfg.op.kind,
                  "operator for calibrate-only runs")
      ->check(CLI::IsMember({"blur-gaussian", "blur-motion", "mask", "downsample"}));
  sub->add_option("--operator.kernel_path", cfg.op.kernel_path,
                  "kernel file (LRT1 or grayscale PNG)");
  sub->add_option("--operator.kernel_size", cfg.op.kernel_size);
  sub->add_option("--operator.kernel_bandwidth", cfg.op.kernel_bandwidth);
  sub->add_option("--operator.mask_rate", cfg.op.mask_rate);
  sub->add_option("--operator.mask_path", cfg.op.mask_path);
  sub->add_option("--operator.sr_factor", cfg.op.sr_factor);
  sub->add_option("--operator.sigma", cfg.op.sigma);

  sub->add_option("--denoiser.backend", cfg.denoiser.backend)
      ->check(CLI::IsMember({"analytic-gaussian", "ddpm-chain"}));
  sub->add_option("--denoiser.score", cfg.denoiser.score)
      ->check(CLI::IsMember({"analytic-gaussian", "external"}));
  sub->add_option("--denoiser.score_command", cfg.denoiser.score_command);
  sub->add_option("--denoiser.score_exchange_dir", cfg.denoiser.score_exchange_dir);
  sub->add_option("--denoiser.eta", cfg.denoiser.eta)
      ->check(CLI::Range(0.1, 5.0));
  sub->add_option("--denoiser.lambda", cfg.denoiser.lambda);
  sub->add_option("--denoiser.t_star_rule", cfg.denoiser.t_star_rule)
      ->check(CLI::IsMember({"explicit", "cumulative-std"}));
  sub->add_option("--denoiser.t_star", cfg.denoiser.t_star);
  sub->add_flag("--denoiser.equivariant,!--denoiser.no-equivariant",
                cfg.denoiser.equivariant);
  sub->add_option("--denoiser.group", cfg.denoiser.group,
                  "group elements (default: full dihedral group)");
  sub->add_option("--denoiser.analytic_mu", cfg.denoiser.analytic_mu);
  sub->add_option("--denoiser.analytic_tau2", cfg.denoiser.analytic_tau2);

  sub->add_option("--schedule.T", cfg.schedule.T);
  sub->add_option("--schedule.beta_min", cfg.schedule.beta_min);
  sub->add_option("--schedule.beta_max", cfg.schedule.beta_max);

  sub->add_option("--sampler.iterations", cfg.sampler.iterations);
  sub->add_option("--sampler.burn_in", cfg.sampler.burn_in);
  sub->add_option("--sampler.gamma", cfg.sampler.gamma);
  sub->add_option("--sampler.mode", cfg.sampler.mode)
      ->check(CLI::IsMember({"latent", "ambient"}));
  sub->add_option("--sampler.solver", cfg.sampler.solver)
      ->check(CLI::IsMember(
          {"automatic", "spectral", "diagonal", "conjugate-gradient"}));
  sub->add_option("--sampler.cg_tol", cfg.sampler.cg_tol);
  sub->add_option("--sampler.cg_max_iterations", cfg.sampler.cg_max_iterations);

  sub->add_flag("--calibrator.enabled,!--calibrator.disabled",
                cfg.calibrator.enabled);
  sub->add_option("--calibrator.rho0", cfg.calibrator.rho0);
  sub->add_option("--calibrator.c0", cfg.calibrator.c0);
  sub->add_option("--calibrator.p", cfg.calibrator.p);
  sub->add_option("--calibrator.rho_min", cfg.calibrator.rho_min);
  sub->add_option("--calibrator.rho_max", cfg.calibrator.rho_max);
  sub->add_option("--calibrator.tol_rho", cfg.calibrator.tol_rho);
  sub->add_option("--calibrator.tol_x", cfg.calibrator.tol_x);
  sub->add_option("--calibrator.averaging", cfg.calibrator.averaging)
      ->check(CLI::IsMember({"tail-average", "last-iterate"}));

  sub->add_option("--io.input", cfg.io.input);
  sub->add_option("--io.measurement", cfg.io.measurement);
  sub->add_option("--io.synth", cfg.io.synth,
                  "synthetic input, e.g. gaussian-field:64x64");
  sub->add_option("--io.output_dir", cfg.io.output_dir);
  sub->add_option("--io.run_id", cfg.io.run_id);
  sub->add_option("--io.png_bits", cfg.io.png_bits)->check(CLI::IsMember({8, 16}));
}

inline int run_experiment_command(CliState& st) {
  st.cfg.task = task_from_string(st.task_str);
  const RunReport report = run_experiment(st.cfg);
  std::cout << "run written to " << report.run_dir << "\n";
  if (!std::isnan(report.psnr_mean_db))
    std::cout << "psnr " << format_db(report.psnr_mean_db) << " dB, ssim "
              << report.ssim_mean << "\n";
  if (report.calibrated)
    std::cout << "rho_hat " << report.rho_hat
              << (report.converged
                      ? " (converged at k=" + std::to_string(report.converged_at) + ")"
                      : " (tolerance not reached)")
              << "\n";
  std::cout << "nfe " << report.nfe_total << ", wall " << report.wall_clock_s
            << " s\n";
  return 0;
}

inline std::vector<std::filesystem::path> listing(const std::string& path) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::directory_iterator(path)) {
      const std::string ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".png" || ext == ".lrt1"))
        files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else if (fs::exists(path)) {
    files.emplace_back(path);
  } else {
    throw FileError("no such file or directory: " + path);
  }
  return files;
}

// Batch metric evaluation; independent images are scored on a small worker
// pool and reported in input order.
inline int run_eval(const std::string& test, const std::string& reference,
                    const std::string& out_path, int jobs) {
  const auto test_files = listing(test);
  const auto ref_files = listing(reference);
  std::map<std::string, std::filesystem::path> ref_by_name;
  for (const auto& p : ref_files) ref_by_name[p.stem().string()] = p;

  struct Row {
    std::string name;
    MetricReport metrics;
  };
  std::vector<Row> rows(test_files.size());
  std::atomic<size_t> cursor{0};
  std::atomic<bool> failed{false};
  std::string failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (size_t i = cursor.fetch_add(1); i < test_files.size();
         i = cursor.fetch_add(1)) {
      try {
        const auto& tp = test_files[i];
        const auto it = ref_by_name.find(tp.stem().string());
        if (it == ref_by_name.end())
          throw FileError("no reference image for " + tp.filename().string());
        rows[i] = {tp.filename().string(),
                   evaluate(read_image_any(tp.string()),
                            read_image_any(it->second.string()))};
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(failure_mu);
        failed = true;
        if (failure.empty()) failure = e.what();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(test_files.size())));
  std::vector<std::thread> pool;
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failed) throw FileError(failure);

  nlohmann::json j;
  j["images"] = nlohmann::json::array();
  double psnr_acc = 0.0, ssim_acc = 0.0;
  for (const Row& r : rows) {
    j["images"].push_back({{"name", r.name},
                           {"psnr_db", r.metrics.psnr_db},
                           {"psnr_db_2dp", format_db(r.metrics.psnr_db)},
                           {"ssim", r.metrics.ssim_value}});
    psnr_acc += r.metrics.psnr_db;
    ssim_acc += r.metrics.ssim_value;
  }
  if (!rows.empty())
    j["average"] = {{"psnr_db", psnr_acc / rows.size()},
                    {"psnr_db_2dp", format_db(psnr_acc / rows.size())},
                    {"ssim", ssim_acc / rows.size()}};
  const std::string text = j.dump(2) + "\n";
  if (out_path.empty())
    std::cout << text;
  else
    detail::write_text(out_path, text);
  return 0;
}

inline int run_schedule_info(int T, double beta_min, double beta_max,
                             double lambda, const std::string& rule_str,
                             int t_star) {
  const NoiseSchedule s = build_schedule(T, beta_min, beta_max);
  nlohmann::json j;
  j["T"] = s.T;
  j["beta"] = s.beta_v;
  j["alpha"] = s.alpha_v;
  j["alpha_bar"] = s.alpha_bar_v;
  j["beta_tilde"] = s.beta_tilde_v;
  if (lambda > 0.0) {
    TimestepRule rule;
    if (rule_str == "explicit")
      rule = {TimestepMode::explicit_t, t_star};
    else
      rule = {TimestepMode::cumulative_std, 0};
    j["lambda"] = lambda;
    j["t_star"] = timestep_for_noise(s, lambda, rule);
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace detail

// Exit codes: 0 success, 2 configuration error, 3 divergence or solver
// failure, 4 missing file, 1 anything else.
inline int cli_main(std::vector<std::string> args) {
  CLI::App app{"latent-space plug-and-play Langevin image restoration"};
  app.require_subcommand(1);

  detail::CliState degrade_st, restore_st, calibrate_st, denoise_st;

  CLI::App* degrade_cmd =
      app.add_subcommand("degrade", "apply the forward model and write y");
  detail::attach_experiment_options(degrade_cmd, degrade_st);
  degrade_st.cfg.degrade_only = true;

  CLI::App* restore_cmd =
      app.add_subcommand("restore", "run the full restoration sampler");
  detail::attach_experiment_options(restore_cmd, restore_st);

  CLI::App* calibrate_cmd = app.add_subcommand(
      "calibrate", "run the sampler with SAPG calibration of rho");
  detail::attach_experiment_options(calibrate_cmd, calibrate_st);
  calibrate_st.task_str = "calibrate-only";

  CLI::App* denoise_cmd =
      app.add_subcommand("denoise", "apply the denoiser once to a noisy image");
  detail::attach_experiment_options(denoise_cmd, denoise_st);
  denoise_st.task_str = "denoise-only";

  std::string eval_test, eval_ref, eval_out;
  int eval_jobs = 1;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "PSNR/SSIM report for images or directories");
  eval_cmd->add_option("--test", eval_test)->required();
  eval_cmd->add_option("--reference", eval_ref)->required();
  eval_cmd->add_option("--out", eval_out, "write the JSON report here");
  eval_cmd->add_option("--jobs", eval_jobs)->check(CLI::Range(1, 64));

  int si_T = 1000, si_t_star = 3;
  double si_beta_min = 1e-4, si_beta_max = 0.02, si_lambda = 0.0;
  std::string si_rule = "explicit";
  CLI::App* sched_cmd =
      app.add_subcommand("schedule-info", "print the derived schedule as JSON");
  sched_cmd->add_option("--T", si_T);
  sched_cmd->add_option("--beta-min", si_beta_min);
  sched_cmd->add_option("--beta-max", si_beta_max);
  sched_cmd->add_option("--lambda", si_lambda);
  sched_cmd->add_option("--rule", si_rule)
      ->check(CLI::IsMember({"explicit", "cumulative-std"}));
  sched_cmd->add_option("--t-star", si_t_star);

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
    if (degrade_cmd->parsed()) return detail::run_experiment_command(degrade_st);
    if (restore_cmd->parsed()) return detail::run_experiment_command(restore_st);
    if (calibrate_cmd->parsed()) return detail::run_experiment_command(calibrate_st);
    if (denoise_cmd->parsed()) return detail::run_experiment_command(denoise_st);
    if (eval_cmd->parsed())
      return detail::run_eval(eval_test, eval_ref, eval_out, eval_jobs);
    if (sched_cmd->parsed())
      return detail::run_schedule_info(si_T, si_beta_min, si_beta_max, si_lambda,
                                       si_rule, si_t_star);
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const SolverError& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return 3;
  } catch (const FileError& e) {
    std::cerr << "missing file: " << e.what() << "\n";
    return 4;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const RangeError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

inline int cli_main(int argc, char** argv) {
  return cli_main(std::vector<std::string>(argv, argv + argc));
}

}  // namespace pnpula
