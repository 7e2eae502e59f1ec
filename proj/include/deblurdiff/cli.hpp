#pragma once

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "deblurdiff/gradsuite.hpp"
#include "deblurdiff/metrics.hpp"
#include "deblurdiff/training.hpp"

// Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime or
// I/O error, 3 verification failure.
namespace deblurdiff::cli {

namespace fs = std::filesystem;

enum Exit : int { kOk = 0, kUsage = 1, kRuntime = 2, kVerify = 3 };

struct Io {
  std::ostream& out;
  std::ostream& err;
};

inline void echo(const Io& io, const std::string& cmd, const nlohmann::json& j) {
  io.out << "effective " << cmd << " config: " << j.dump() << '\n';
}

inline std::string step_name(std::int64_t t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%04lld.pgm", static_cast<long long>(t));
  return buf;
}

inline std::string ckpt_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%06lld.bin", static_cast<long long>(step));
  return buf;
}

// ---------------------------------------------------------------------------

struct ShapesArgs {
  std::string out;
  std::size_t count = 64, size = 32;
  std::uint64_t seed = 0;
};

inline int cmd_shapes(const ShapesArgs& a, const Io& io) {
  echo(io, "shapes", {{"out", a.out}, {"count", a.count}, {"size", a.size}, {"seed", a.seed}});
  for (std::size_t i = 0; i < a.count; ++i) {
    Rng rng(derive_seed(a.seed, i));
    char name[32];
    std::snprintf(name, sizeof name, "scene_%05zu.pgm", i);
    image::write(fs::path(a.out) / name, blur::procedural_scene(rng, a.size, a.size));
  }
  io.out << "wrote " << a.count << " scenes to " << a.out << '\n';
  return kOk;
}

struct SynthArgs {
  std::string sharp_dir, out, kind = "uniform";
  std::size_t count = 0, crop = 0;
  int support = 7, max_len = 13;
  std::uint64_t seed = 0;
};

inline int cmd_synth(const SynthArgs& a, const Io& io) {
  blur::SynthSpec spec;
  spec.kind = blur::parse_blur_kind(a.kind);
  spec.support = a.support;
  spec.max_len = a.max_len;
  spec.seed = a.seed;
  spec.crop = a.crop;
  echo(io, "synth", {{"sharp_dir", a.sharp_dir}, {"out", a.out}, {"count", a.count}, {"kind", a.kind},
                     {"support", a.support}, {"max_len", a.max_len}, {"seed", a.seed}, {"crop", a.crop}});
  const auto m = blur::synth_dataset(a.sharp_dir, a.out, a.count, spec);
  io.out << "wrote " << m.pairs.size() << " pairs and manifest.json to " << a.out << '\n';
  return kOk;
}

struct TrainArgs {
  std::string data, out, config, resume, ablation, head_init, codec;
  std::optional<std::int64_t> steps, ckpt_every;
  std::optional<std::size_t> batch;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::int64_t log_every = 50;
};

inline TrainConfig resolve_train_config(const TrainArgs& a) {
  TrainConfig cfg = desk_profile();
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw IoError("cannot open config " + a.config);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValueError("cannot parse config " + a.config + ": " + e.what());
    }
    cfg = config_from_json(j, cfg);
  }
  if (!a.ablation.empty()) cfg.model.ablation = diffusion::parse_ablation(a.ablation);
  if (!a.head_init.empty()) {
    if (a.head_init != "zero" && a.head_init != "delta") throw ValueError("--head-init must be zero|delta");
    cfg.model.head_init = a.head_init == "zero" ? lkpn::HeadInit::zero : lkpn::HeadInit::delta;
  }
  if (!a.codec.empty()) cfg.codec = codec::parse_kind(a.codec);
  if (a.steps) cfg.steps = *a.steps;
  if (a.ckpt_every) cfg.ckpt_every = *a.ckpt_every;
  if (a.batch) cfg.batch = *a.batch;
  if (a.lr) cfg.lr = *a.lr;
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  return cfg;
}

inline int cmd_train(const TrainArgs& a, const Io& io) {
  training::TrainState<float> st;
  if (!a.resume.empty()) {
    // Only the run length may change on resume; anything else would break
    // the guarantee that a resumed run matches an uninterrupted one.
    if (!a.config.empty() || !a.ablation.empty() || !a.head_init.empty() || !a.codec.empty() || a.batch || a.lr ||
        a.seed)
      throw ValueError("--resume accepts only --steps and --ckpt-every overrides");
    st = training::checkpoint_load<float>(a.resume);
    if (a.steps) st.config.steps = *a.steps;
    if (a.ckpt_every) st.config.ckpt_every = *a.ckpt_every;
  } else {
    st = training::init_state<float>(resolve_train_config(a));
  }
  const nlohmann::json cj = to_json(st.config);
  echo(io, "train", {{"data", a.data}, {"out", a.out}, {"resume", a.resume}, {"start_step", st.step}, {"config", cj}});
  const auto data = training::load_dataset(a.data);
  if (data.empty()) throw IoError("dataset " + a.data + " has no pairs");

  const fs::path out(a.out);
  fs::create_directories(out);
  {
    std::ofstream cf(out / "config.json");
    cf << cj.dump(2) << '\n';
  }
  const fs::path csv_path = out / "loss.csv";
  const bool append = !a.resume.empty() && fs::exists(csv_path);
  std::ofstream csv(csv_path, append ? std::ios::app : std::ios::trunc);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  if (!append) training::write_loss_csv(csv, {});

  training::LoopHooks hooks;
  hooks.on_step = [&](const training::LossReport& r) {
    training::write_loss_csv(csv, {r}, false);
    csv.flush();
    if (a.log_every > 0 && (r.step + 1) % a.log_every == 0)
      io.out << "step " << r.step + 1 << " total " << r.total << " denoise " << r.denoise << " latent " << r.latent
             << " pixel " << r.pixel << std::endl;
  };
  hooks.on_checkpoint = [&](std::int64_t step) {
    training::checkpoint_save(out / ckpt_name(step), st);
    training::checkpoint_save(out / "last.bin", st);
  };
  training::train_loop(st, data, hooks);
  io.out << "trained to step " << st.step << "; checkpoint " << (out / "last.bin").string() << '\n';
  return kOk;
}

struct DeblurArgs {
  std::string ckpt, input, out, trace;
  std::uint64_t seed = 0;
};

struct DeblurJob {
  fs::path input, output, trace_dir;
  std::uint64_t seed;
};

inline void deblur_one(const training::TrainState<float>& st, const DeblurJob& job) {
  const codec::Codec cc{st.config.codec};
  const auto img = image::read(job.input);
  const auto z_lq = codec::encode(image::to_model_range(image::to_luma(img.pixels)), cc);
  st.config.model.lkpn_unet.check_extents(z_lq.dim(1), z_lq.dim(2));
  const auto sched = st.config.model.schedule.build();
  const bool trace = !job.trace_dir.empty();
  const auto r = diffusion::sample(st.params, st.config.model, sched, z_lq, job.seed, trace);
  image::write(job.output, image::from_model_range(codec::decode(r.z0, cc)), img.maxval);
  for (const auto& e : r.trace)
    image::write(job.trace_dir / step_name(e.t), image::from_model_range(codec::decode(e.guidance, cc)), img.maxval);
}

// A file input is deblurred with --seed. A directory input processes every
// image in name order with seed derive_seed(--seed, i); when the directory is
// a synthesized dataset, the blurry member of each pair is deblurred and
// written under its sharp counterpart's name so `eval` can pair by filename.
inline std::vector<DeblurJob> deblur_jobs(const DeblurArgs& a) {
  const fs::path in(a.input), out(a.out), tr(a.trace);
  std::vector<DeblurJob> jobs;
  if (!fs::is_directory(in)) {
    if (!fs::exists(in)) throw IoError("cannot open input " + a.input);
    jobs.push_back({in, out, tr, a.seed});
    return jobs;
  }
  if (fs::exists(in / "manifest.json")) {
    const auto m = blur::read_manifest(in / "manifest.json");
    for (std::size_t i = 0; i < m.pairs.size(); ++i) {
      const auto& p = m.pairs[i];
      jobs.push_back({in / p.blurry_path, out / p.sharp_path,
                      tr.empty() ? tr : tr / fs::path(p.sharp_path).stem(), derive_seed(a.seed, i)});
    }
  } else {
    const auto files = blur::list_images(in);
    for (std::size_t i = 0; i < files.size(); ++i)
      jobs.push_back({files[i], out / files[i].filename(), tr.empty() ? tr : tr / files[i].stem(),
                      derive_seed(a.seed, i)});
  }
  if (jobs.empty()) throw IoError("no images to deblur in " + a.input);
  return jobs;
}

inline int cmd_deblur(const DeblurArgs& a, const Io& io) {
  const auto st = training::checkpoint_load<float>(a.ckpt);
  echo(io, "deblur", {{"ckpt", a.ckpt}, {"input", a.input}, {"out", a.out}, {"trace", a.trace}, {"seed", a.seed},
                      {"step", st.step}, {"config", to_json(st.config)}});
  const auto jobs = deblur_jobs(a);
  for (const auto& j : jobs) deblur_one(st, j);
  io.out << "deblurred " << jobs.size() << " image(s)\n";
  return kOk;
}

struct EvalArgs {
  std::string pred_dir, gt_dir, out;
};

inline metrics::QualityReport evaluate_dirs(const fs::path& pred_dir, const fs::path& gt_dir) {
  std::set<std::string> gt_names;
  for (const auto& p : blur::list_images(gt_dir)) gt_names.insert(p.filename().string());
  metrics::QualityReport rep;
  for (const auto& p : blur::list_images(pred_dir)) {
    const auto name = p.filename().string();
    if (!gt_names.count(name)) throw IoError("prediction " + name + " has no ground truth in " + gt_dir.string());
    const auto pred = image::to_luma(image::read(p).pixels);
    const auto gt = image::to_luma(image::read(gt_dir / name).pixels);
    rep.rows.push_back({name, metrics::psnr(pred, gt), metrics::ssim(pred, gt)});
  }
  if (rep.rows.empty())
    throw IoError("no matching filenames between " + pred_dir.string() + " and " + gt_dir.string());
  return rep;
}

inline int cmd_eval(const EvalArgs& a, const Io& io) {
  echo(io, "eval", {{"pred_dir", a.pred_dir}, {"gt_dir", a.gt_dir}, {"out", a.out}});
  const auto rep = evaluate_dirs(a.pred_dir, a.gt_dir);
  if (!a.out.empty()) {
    const fs::path out(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream f(out);
    if (!f) throw IoError("cannot write " + a.out);
    metrics::write_csv(f, rep);
  }
  io.out << "images " << rep.rows.size() << " mean_psnr_db " << metrics::format_db(rep.mean_psnr()) << " mean_ssim "
         << rep.mean_ssim() << '\n';
  return kOk;
}

struct GradcheckArgs {
  std::string ops = "all";
  std::uint64_t seeds = 1;
  double perturb = 0.0;
};

inline int cmd_gradcheck(const GradcheckArgs& a, const Io& io) {
  if (a.seeds < 1) throw ValueError("--seeds must be >= 1");
  std::vector<const gradsuite::Check*> checks;
  if (a.ops == "all") {
    for (const auto& c : gradsuite::registry()) checks.push_back(&c);
  } else {
    std::stringstream ss(a.ops);
    std::string name;
    while (std::getline(ss, name, ','))
      if (!name.empty()) checks.push_back(&gradsuite::find(name));
  }
  gradsuite::Options opt;
  opt.perturb = a.perturb;
  echo(io, "gradcheck", {{"ops", a.ops}, {"seeds", a.seeds}, {"eps", opt.eps}, {"perturb", a.perturb}});
  bool ok = true;
  for (const auto* c : checks) {
    double worst = 0;
    for (std::uint64_t s = 0; s < a.seeds; ++s) worst = std::max(worst, c->run(s, opt));
    const bool pass = worst <= c->threshold;
    ok = ok && pass;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-12s max_rel_err %.3e threshold %.0e %s\n", c->name.c_str(), worst, c->threshold,
                  pass ? "PASS" : "FAIL");
    io.out << buf;
  }
  return ok ? kOk : kVerify;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, const Io& io = {std::cout, std::cerr}) {
  CLI::App app{"Kernel-guided diffusion deblurring toolkit"};
  app.require_subcommand(1);

  ShapesArgs sh;
  auto* shapes = app.add_subcommand("shapes", "Write procedural sharp scenes");
  shapes->add_option("--out", sh.out)->required();
  shapes->add_option("--count", sh.count);
  shapes->add_option("--size", sh.size)->check(CLI::Range(8, 4096));
  shapes->add_option("--seed", sh.seed);

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "Synthesize blurry/sharp pairs plus a manifest");
  synth->add_option("--sharp-dir", sy.sharp_dir)->required();
  synth->add_option("--out", sy.out)->required();
  synth->add_option("--count", sy.count)->required();
  synth->add_option("--support", sy.support);
  synth->add_option("--max-len", sy.max_len);
  synth->add_option("--kind", sy.kind)->check(CLI::IsMember({"uniform", "regional"}));
  synth->add_option("--seed", sy.seed);
  synth->add_option("--crop", sy.crop);

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Jointly train the kernel predictor and the denoiser");
  train->add_option("--data", tr.data)->required();
  train->add_option("--out", tr.out)->required();
  train->add_option("--config", tr.config, "JSON config document");
  train->add_option("--ablation", tr.ablation)->check(CLI::IsMember({"full", "no_eac", "no_sd", "no_sd_for_lkpn"}));
  train->add_option("--head-init", tr.head_init);
  train->add_option("--codec", tr.codec);
  train->add_option("--resume", tr.resume, "checkpoint to continue from");
  train->add_option("--steps", tr.steps);
  train->add_option("--ckpt-every", tr.ckpt_every);
  train->add_option("--batch", tr.batch);
  train->add_option("--lr", tr.lr);
  train->add_option("--seed", tr.seed);
  train->add_option("--log-every", tr.log_every);

  DeblurArgs db;
  auto* deblur = app.add_subcommand("deblur", "Sample a sharp estimate for an image or directory");
  deblur->add_option("--ckpt", db.ckpt)->required();
  deblur->add_option("--input", db.input)->required();
  deblur->add_option("--out", db.out)->required();
  deblur->add_option("--seed", db.seed);
  deblur->add_option("--trace", db.trace, "directory for per-step guidance images");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "PSNR/SSIM of predictions against ground truth");
  eval->add_option("--pred-dir", ev.pred_dir)->required();
  eval->add_option("--gt-dir", ev.gt_dir)->required();
  eval->add_option("--out", ev.out, "CSV report path");

  GradcheckArgs gc;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient verification (64-bit)");
  grad->add_option("--ops", gc.ops, "all or a comma-separated list");
  grad->add_option("--seeds", gc.seeds);
  grad->add_option("--perturb", gc.perturb, "scale analytic gradients by 1+x (harness self-test)")
      ->group("");  // hidden

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    io.out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    io.out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    io.err << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (*shapes) return cmd_shapes(sh, io);
    if (*synth) return cmd_synth(sy, io);
    if (*train) return cmd_train(tr, io);
    if (*deblur) return cmd_deblur(db, io);
    if (*eval) return cmd_eval(ev, io);
    if (*grad) return cmd_gradcheck(gc, io);
  } catch (const ValueError& e) {
    io.err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

inline int run(const std::vector<std::string>& args, const Io& io = {std::cout, std::cerr}) {
  std::vector<const char*> argv{"deblurdiff"};
  for (const auto& s : args) argv.push_back(s.c_str());
  return run(int(argv.size()), argv.data(), io);
}

}  // namespace deblurdiff::cli
