// Acceptance harness: one PASS/FAIL line per criterion, details indented.
//
//   acceptance --work DIR [--steps N] [--ablation-steps N] [--only 1,7,...] [--reuse]
//
// Criteria 7-10 share one toy experiment under DIR/toy. Without --reuse the
// work directory is wiped first so every run trains from scratch.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "deblurdiff/cli.hpp"
#include "oracles.hpp"

using namespace deblurdiff;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  Verdict(int i, std::string n) : id(i), name(std::move(n)) {}

  int id;
  std::string name;
  bool pass = true;
  std::vector<std::string> details;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    details.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
  void note(const std::string& what) { details.push_back("     " + what); }
};

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Runs a CLI command in-process; output is kept for the failure message.
void cli_or_throw(const std::vector<std::string>& args, bool echo_progress = false) {
  std::ostringstream out, err;
  std::ostream& o = echo_progress ? std::cout : static_cast<std::ostream&>(out);
  const int code = cli::run(args, {o, err});
  if (code != 0) throw std::runtime_error("deblurdiff " + args.front() + " exited " + std::to_string(code) + ": " + err.str());
}

// ---------------------------------------------------------------------------
// 1-6: properties

Verdict eac_oracle() {
  Verdict v{1, "EAC matches the brute-force oracle"};
  const auto t0 = Clock::now();
  double worst = 0;
  std::size_t cases = 0;
  for (std::size_t k : {1, 3, 5})
    for (std::size_t c = 1; c <= 3; ++c)
      for (std::size_t h = 1; h <= 8; ++h)
        for (std::size_t w = 1; w <= 8; ++w)
          for (std::uint64_t s = 0; s < 20; ++s) {
            Rng rng(derive_seed(s, k, c * 100 + h * 10 + w));
            const auto z = rng.normal_tensor<double>({c, h, w});
            const auto f = rng.normal_tensor<double>({c * k * k, h, w});
            worst = std::max(worst, relative_error(eac::forward(z, f, k), oracle::eac(z, f, long(k))));
            ++cases;
          }
  const double secs = seconds_since(t0);
  v.check(worst <= 1e-12, "max relative error " + fmt("%.3e", worst) + " over " + std::to_string(cases) +
                              " cases (c<=3, h,w<=8, k in {1,3,5}, 20 seeds)");
  v.check(secs < 10, "runtime " + fmt("%.2f", secs) + " s < 10 s");
  return v;
}

Verdict gradient_suite() {
  Verdict v{2, "gradient suite matches central differences"};
  const auto t0 = Clock::now();
  for (const auto& c : gradsuite::registry()) {
    const auto t1 = Clock::now();
    const double err = c.run(0, {});
    v.check(err <= c.threshold, c.name + " max_rel_err " + fmt("%.3e", err) + " <= " + fmt("%.0e", c.threshold) +
                                    " (" + fmt("%.1f", seconds_since(t1)) + " s)");
  }
  const double secs = seconds_since(t0);
  v.check(secs < 300, "runtime " + fmt("%.1f", secs) + " s < 300 s");
  return v;
}

Verdict identity_chain() {
  Verdict v{3, "identity chain gives zero LKPN losses"};
  const codec::Codec cc{codec::Kind::identity};
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    const std::size_t k = 1 + 2 * (s % 3);
    const auto z0 = rng.normal_tensor<double>({1, 8, 8});
    const auto field = eac::delta_kernel_field<double>(1, 8, 8, k);
    const bool ident = eac::forward(z0, field) == z0;
    const auto [lat, pix] = training::lkpn_loss_value(z0, z0, field.values, cc);
    Tape<double> tape;
    const auto lk = training::lkpn_loss(tape.constant(z0), eac::apply(tape.constant(z0), tape.constant(field.values)), cc);
    const bool zero = lat == 0.0 && pix == 0.0 && lk.latent.value().item() == 0.0 && lk.pixel.value().item() == 0.0;
    if (!ident || !zero || s == 0)
      v.check(ident && zero, "seed " + std::to_string(s) + " k=" + std::to_string(k) + ": EAC identity " +
                                 (ident ? "exact" : "broken") + ", L_latent " + fmt("%g", lat) + ", L_pixel " +
                                 fmt("%g", pix));
  }
  v.note("20 seeds, k in {1,3,5}, exact equality");
  return v;
}

Verdict schedule_stats() {
  Verdict v{4, "schedule statistics"};
  const auto s = diffusion::schedule_linear(1000, 1e-4, 0.02);
  double prod = 1;
  for (int i = 0; i < 1000; ++i) prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * i / 999.0);
  const double rel = std::abs(s.alpha_bar_at(1000) / prod - 1.0);
  v.check(rel <= 1e-9, "alpha_bar_T " + fmt("%.6e", s.alpha_bar_at(1000)) + " vs direct product, rel " + fmt("%.2e", rel));
  v.check(std::abs(prod - 4.0e-5) < 0.1e-5, "alpha_bar_T ~ 4.0e-5");
  Rng rng(4);
  const Tensor<double> z0({1, 100, 100}, 0.8);
  const auto zt = diffusion::add_noise(z0, rng.normal_tensor<double>({1, 100, 100}), 1000, s);
  double m = 0, var = 0;
  for (auto x : zt.values()) m += x / double(zt.size());
  for (auto x : zt.values()) var += (x - m) * (x - m) / double(zt.size());
  v.check(std::abs(m) < 0.05, "add_noise(t=T) mean " + fmt("%.4f", m) + " over 1e4 draws");
  v.check(std::abs(var - 1) < 0.05, "add_noise(t=T) variance " + fmt("%.4f", var));
  return v;
}

Verdict zero_conv_gate() {
  Verdict v{5, "zero-conv gate"};
  const auto cfg = desk_profile().model;
  const auto store = diffusion::init_model<float>(cfg, 5);
  const auto dcfg = cfg.denoiser();
  Rng rng(6);
  const auto zt = rng.normal_tensor<float>({1, 32, 32});
  auto run = [&](const Tensor<float>& cond) {
    Tape<float> t(false);
    return diffusion::denoiser_forward(t, store, dcfg, t.constant(zt), t.constant(cond), 17).value();
  };
  const auto c1 = rng.normal_tensor<float>({2, 32, 32}), c2 = rng.uniform_tensor<float>({2, 32, 32}, -3, 3);
  v.check(run(c1) == run(c2), "untrained desk denoiser output bit-identical under two conditionings");
  return v;
}

Verdict algorithm_one() {
  Verdict v{6, "reverse update algebra and sampling determinism"};
  const Tensor<double> z({1, 1, 1}, 1.0), e({1, 1, 1}, 0.2), zero({1, 1, 1}), n({1, 1, 1}, 0.5);
  const double want = (1 - 0.01 * 0.2 / std::sqrt(0.5)) / std::sqrt(0.99);
  const double got = diffusion::reverse_update(z, e, zero, 0.99, 0.5, 0.3).item();
  v.check(std::abs(got - want) <= 1e-12, "alpha=0.99 abar=0.5 z=1 eps=0.2 noise=0: " + fmt("%.15f", got) + " vs " +
                                             fmt("%.15f", want));
  const double got_n = diffusion::reverse_update(z, e, n, 0.99, 0.5, 0.3).item();
  v.check(std::abs(got_n - (want + 0.3 * 0.5)) <= 1e-12, "same with sigma=0.3 noise=0.5 adds sigma*noise exactly");
  auto cfg = desk_profile().model;
  auto store = diffusion::init_model<float>(cfg, 7);
  Rng rng(8);
  for (auto& [name, t] : store)
    for (auto& x : t.storage()) x += float(rng.uniform(-0.02, 0.02));
  const auto zl = rng.normal_tensor<float>({1, 32, 32});
  const auto sched = cfg.schedule.build();
  const auto a = diffusion::sample(store, cfg, sched, zl, 99), b = diffusion::sample(store, cfg, sched, zl, 99);
  bool trace_same = a.trace.size() == b.trace.size();
  for (std::size_t i = 0; trace_same && i < a.trace.size(); ++i) trace_same = a.trace[i].guidance == b.trace[i].guidance;
  v.check(a.z0 == b.z0 && trace_same, "sample() with a fixed seed is bit-identical across runs (T=50, desk model)");
  return v;
}

// ---------------------------------------------------------------------------
// 7-10: toy experiment

struct ToyOptions {
  fs::path root;
  std::int64_t steps = 2000, ablation_steps = 2000;
};

// Settings for the end-to-end experiment.
TrainConfig toy_config(const std::string& ablation, std::int64_t steps) {
  TrainConfig c = desk_profile();
  c.steps = steps;
  c.ckpt_every = 500;
  c.codec = codec::Kind::identity;
  c.model.head_init = lkpn::HeadInit::delta;
  c.model.schedule.sigma = diffusion::SigmaKind::posterior;
  c.model.ablation = diffusion::parse_ablation(ablation);
  return c;
}

struct ToyData {
  fs::path train, test;
  std::size_t identical = 0;
  std::vector<bool> is_identical;  // per test pair
};

ToyData make_toy_data(const fs::path& root) {
  ToyData d;
  d.train = root / "train";
  d.test = root / "test";
  if (!fs::exists(d.train / "manifest.json")) {
    cli_or_throw({"shapes", "--out", (root / "scenes_train").string(), "--count", "512", "--size", "32", "--seed", "1"});
    cli_or_throw({"shapes", "--out", (root / "scenes_test").string(), "--count", "64", "--size", "32", "--seed", "2"});
    cli_or_throw({"synth", "--sharp-dir", (root / "scenes_train").string(), "--out", d.train.string(), "--count", "512",
                  "--support", "7", "--max-len", "7", "--kind", "uniform", "--seed", "11"});
    cli_or_throw({"synth", "--sharp-dir", (root / "scenes_test").string(), "--out", d.test.string(), "--count", "64",
                  "--support", "7", "--max-len", "7", "--kind", "uniform", "--seed", "12"});
  }
  for (const auto& p : blur::read_manifest(d.test / "manifest.json").pairs) {
    const bool same = slurp(d.test / p.sharp_path) == slurp(d.test / p.blurry_path);
    d.is_identical.push_back(same);
    d.identical += same;
  }
  return d;
}

struct RunResult {
  fs::path dir, ckpt, pred;
  double seconds = 0;
  metrics::QualityReport report;
};

RunResult train_and_deblur(const ToyOptions& o, const ToyData& d, const std::string& ablation, std::int64_t steps) {
  RunResult r;
  r.dir = o.root / ("run_" + ablation);
  r.ckpt = r.dir / "last.bin";
  r.pred = o.root / ("pred_" + ablation);
  const auto t0 = Clock::now();
  if (!fs::exists(r.ckpt)) {
    fs::create_directories(r.dir);
    const auto cfg_path = o.root / ("config_" + ablation + ".json");
    std::ofstream(cfg_path) << to_json(toy_config(ablation, steps)).dump(2) << '\n';
    std::cout << "  [" << ablation << "] training " << steps << " steps" << std::endl;
    cli_or_throw({"train", "--data", d.train.string(), "--out", r.dir.string(), "--config", cfg_path.string(),
                  "--log-every", "250"},
                 true);
  }
  r.seconds = seconds_since(t0);
  if (!fs::exists(r.pred)) cli_or_throw({"deblur", "--ckpt", r.ckpt.string(), "--input", d.test.string(), "--out",
                                         r.pred.string(), "--seed", "2024"});
  r.report = cli::evaluate_dirs(r.pred, d.test);
  return r;
}

// Mean PSNR over non-identical test pairs of (blurry, sharp) and of the run's
// predictions.
struct PsnrMeans {
  double blurry = 0, deblurred = 0, blurry_all = 0, deblurred_all = 0;
  std::size_t n = 0;
};

PsnrMeans psnr_means(const ToyData& d, const metrics::QualityReport& rep) {
  const auto m = blur::read_manifest(d.test / "manifest.json");
  PsnrMeans out;
  for (std::size_t i = 0; i < m.pairs.size(); ++i) {
    const auto& p = m.pairs[i];
    const auto sharp = image::to_luma(image::read(d.test / p.sharp_path).pixels);
    const auto blurry = image::to_luma(image::read(d.test / p.blurry_path).pixels);
    const auto row = std::find_if(rep.rows.begin(), rep.rows.end(), [&](const auto& r) { return r.path == p.sharp_path; });
    if (row == rep.rows.end()) throw std::runtime_error("missing prediction for " + p.sharp_path);
    const double pb = metrics::psnr(blurry, sharp);
    out.blurry_all += pb / double(m.pairs.size());
    out.deblurred_all += row->psnr_db / double(m.pairs.size());
    if (d.is_identical[i]) continue;
    out.blurry += pb;
    out.deblurred += row->psnr_db;
    ++out.n;
  }
  out.blurry /= double(out.n);
  out.deblurred /= double(out.n);
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<double> loss_totals(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  std::vector<double> out;
  while (std::getline(in, line)) out.push_back(std::stod(line.substr(line.rfind(',') + 1)));
  return out;
}

// PSNR of two 8-bit PGMs by a direct loop over the raw bytes.
double hand_psnr(const fs::path& a, const fs::path& b) {
  const auto x = image::read(a), y = image::read(b);
  double s = 0;
  for (std::size_t i = 0; i < x.pixels.size(); ++i) {
    const double d = std::round(x.pixels[i] * x.maxval) / x.maxval - std::round(y.pixels[i] * y.maxval) / y.maxval;
    s += d * d;
  }
  return 10 * std::log10(1.0 / (s / double(x.pixels.size())));
}

Verdict toy_deblurring(const ToyOptions& o, const ToyData& d, const RunResult& full) {
  Verdict v{7, "toy end-to-end deblurring"};
  const auto m = psnr_means(d, full.report);
  v.note("test pairs 64; identical (length-1 trajectory) " + std::to_string(d.identical) + " excluded from the gate");
  v.note("all 64 pairs: blurry " + metrics::format_db(m.blurry_all) + " dB, deblurred " +
         metrics::format_db(m.deblurred_all) + " dB");
  v.check(m.deblurred >= m.blurry + 1.0, "mean PSNR on " + std::to_string(m.n) + " blurred pairs: deblurred " +
                                             fmt("%.3f", m.deblurred) + " dB vs blurry " + fmt("%.3f", m.blurry) +
                                             " dB (gain " + fmt("%+.3f", m.deblurred - m.blurry) + ", need >= +1.0)");
  v.note("mean SSIM deblurred " + fmt("%.4f", full.report.mean_ssim()));
  v.note("training " + std::to_string(o.steps) + " steps took " + fmt("%.0f", full.seconds) +
         " s on this machine (budget 3600 s on an 8-core desktop)");

  const auto totals = loss_totals(full.dir / "loss.csv");
  const std::size_t dec = std::max<std::size_t>(1, totals.size() / 10);
  const double first = median({totals.begin(), totals.begin() + std::ptrdiff_t(dec)});
  const double last = median({totals.end() - std::ptrdiff_t(dec), totals.end()});
  v.check(last < first, "training progress: median last-decile loss " + fmt("%.5f", last) + " < first-decile " +
                            fmt("%.5f", first));

  double worst = 0;
  for (std::size_t i : {0, 21, 42}) {
    const auto& row = full.report.rows[i];
    worst = std::max(worst, std::abs(row.psnr_db - hand_psnr(full.pred / row.path, d.test / row.path)));
  }
  v.check(worst <= 1e-6, "eval spot check on 3 images vs hand-computed PSNR, max diff " + fmt("%.2e", worst));

  // Stability smoke check: sharp inputs should come back close to themselves.
  const auto sharp_in = o.root / "sharp_inputs", sharp_out = o.root / "sharp_outputs";
  fs::create_directories(sharp_in);
  const auto manifest = blur::read_manifest(d.test / "manifest.json");
  for (std::size_t i = 0; i < 16; ++i)
    fs::copy_file(d.test / manifest.pairs[i].sharp_path, sharp_in / manifest.pairs[i].sharp_path,
                  fs::copy_options::overwrite_existing);
  cli_or_throw({"deblur", "--ckpt", full.ckpt.string(), "--input", sharp_in.string(), "--out", sharp_out.string(),
                "--seed", "2024"});
  const auto rs = cli::evaluate_dirs(sharp_out, sharp_in);
  double from_blurry = 0;
  for (std::size_t i = 0; i < 16; ++i) from_blurry += full.report.rows[i].psnr_db / 16;
  v.check(rs.mean_psnr() > from_blurry - 3.0, "sharp inputs: deblur(sharp) " + fmt("%.3f", rs.mean_psnr()) +
                                                  " dB vs deblur(blurry) " + fmt("%.3f", from_blurry) +
                                                  " dB on the same 16 images (must not drop by 3 dB)");
  return v;
}

Verdict iterative_refinement(const ToyData& d, const RunResult& full) {
  Verdict v{8, "guidance improves over the reverse trajectory"};
  const auto st = training::checkpoint_load<float>(full.ckpt);
  const codec::Codec cc{st.config.codec};
  const auto sched = st.config.model.schedule.build();
  const auto m = blur::read_manifest(d.test / "manifest.json");
  std::size_t better = 0;
  double first_sum = 0, last_sum = 0;
  for (std::size_t i = 0; i < m.pairs.size(); ++i) {
    const auto& p = m.pairs[i];
    const auto z0 = codec::encode(image::to_model_range(image::to_luma(image::read(d.test / p.sharp_path).pixels)), cc);
    const auto zl = codec::encode(image::to_model_range(image::to_luma(image::read(d.test / p.blurry_path).pixels)), cc);
    const auto r = diffusion::sample(st.params, st.config.model, sched, zl, derive_seed(2024, i));
    const double first = mse(r.trace.front().guidance, z0), last = mse(r.trace.back().guidance, z0);
    better += last <= first;
    first_sum += first / double(m.pairs.size());
    last_sum += last / double(m.pairs.size());
  }
  const double frac = double(better) / double(m.pairs.size());
  v.check(frac >= 0.8, "MSE(z^s_1, z0) <= MSE(z^s_T, z0) for " + std::to_string(better) + "/" +
                           std::to_string(m.pairs.size()) + " test images (" + fmt("%.1f", 100 * frac) + "%, need >= 80%)");
  v.note("mean guidance MSE first step " + fmt("%.6f", first_sum) + ", last step " + fmt("%.6f", last_sum));
  return v;
}

Verdict ablations(const ToyOptions& o, const ToyData& d, const RunResult& full) {
  Verdict v{9, "ablation profiles train and sample"};
  v.note("full   : deblurred " + fmt("%.3f", psnr_means(d, full.report).deblurred) + " dB");
  for (const char* ab : {"no_eac", "no_sd"}) {
    try {
      const auto r = train_and_deblur(o, d, ab, o.ablation_steps);
      const auto m = psnr_means(d, r.report);
      v.check(std::isfinite(m.deblurred) && r.report.rows.size() == 64,
              std::string(ab) + (std::string(ab).size() < 6 ? " " : "") + ": trained " + std::to_string(o.ablation_steps) +
                  " steps, sampled 64 images, deblurred " + fmt("%.3f", m.deblurred) + " dB (blurry " +
                  fmt("%.3f", m.blurry) + ")");
    } catch (const std::exception& e) {
      v.check(false, std::string(ab) + ": " + e.what());
    }
  }
  return v;
}

Verdict data_pipeline(const ToyOptions& o, const ToyData& d, const RunResult* full) {
  Verdict v{10, "data pipeline invariants"};
  std::size_t bad = 0;
  double worst = 0;
  for (std::uint64_t s = 0; s < 10000; ++s) {
    Rng rng(derive_seed(77, s));
    const int support = 7 + 2 * int(s % 4);
    const auto psf = blur::rasterize_psf(blur::gen_trajectory(rng, 13, support), support);
    double sum = 0;
    bool nonneg = true;
    for (double x : psf.values.values()) {
      sum += x;
      nonneg = nonneg && x >= 0;
    }
    worst = std::max(worst, std::abs(sum - 1));
    bad += !nonneg || std::abs(sum - 1) > 1e-6 || support % 2 == 0;
  }
  v.check(bad == 0, "1e4 PSFs (support 7-13, max_len 13): nonneg and unit sum, worst |sum-1| " + fmt("%.2e", worst));

  const auto regen = o.root / "train_regenerated";
  fs::remove_all(regen);
  blur::regenerate(blur::read_manifest(d.train / "manifest.json"), regen);
  std::size_t files = 0, differ = 0;
  for (const auto& e : fs::directory_iterator(d.train)) {
    ++files;
    differ += slurp(e.path()) != slurp(regen / e.path().filename());
  }
  v.check(differ == 0, "train set regenerated from manifest: " + std::to_string(files - differ) + "/" +
                           std::to_string(files) + " files byte-identical");

  fs::path ckpt;
  if (full) {
    ckpt = full->ckpt;
  } else {
    ckpt = o.root / "init.bin";
    training::checkpoint_save(ckpt, training::init_state<float>(toy_config("full", 0)));
  }
  const auto copy = o.root / "resaved.bin";
  training::checkpoint_save(copy, training::checkpoint_load<float>(ckpt));
  v.check(slurp(ckpt) == slurp(copy), "checkpoint save/load/save byte-identical (" + ckpt.filename().string() + ", " +
                                          std::to_string(fs::file_size(ckpt)) + " bytes)");
  return v;
}

void print(const Verdict& v, double secs) {
  std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << v.id << ": " << v.name << " (" << fmt("%.1f", secs)
            << " s)\n";
  for (const auto& d : v.details) std::cout << "    " << d << '\n';
  std::cout.flush();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deblurdiff acceptance criteria"};
  std::string work;
  std::string only;
  ToyOptions toy;
  bool reuse = false;
  app.add_option("--work", work, "scratch directory")->required();
  app.add_option("--steps", toy.steps, "training steps for the toy model");
  app.add_option("--ablation-steps", toy.ablation_steps, "training steps for each ablation");
  app.add_option("--only", only, "comma-separated criterion ids");
  app.add_flag("--reuse", reuse, "keep trained models and data from a previous run");
  CLI11_PARSE(app, argc, argv);

  std::set<int> want;
  {
    std::stringstream ss(only);
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) want.insert(std::stoi(tok));
  }
  auto selected = [&](int id) { return want.empty() || want.count(id); };

  toy.root = fs::path(work) / "toy";
  if (!reuse) fs::remove_all(work);
  fs::create_directories(toy.root);

  int failures = 0, ran = 0;
  auto report = [&](const Verdict& v, Clock::time_point t0) {
    print(v, seconds_since(t0));
    failures += !v.pass;
    ++ran;
  };
  auto guarded = [&](int id, const std::string& name, auto&& fn) {
    if (!selected(id)) return;
    const auto t0 = Clock::now();
    try {
      report(fn(), t0);
    } catch (const std::exception& e) {
      Verdict v{id, name};
      v.check(false, std::string("exception: ") + e.what());
      report(v, t0);
    }
  };

  guarded(1, "EAC oracle", eac_oracle);
  guarded(2, "gradient suite", gradient_suite);
  guarded(3, "identity chain", identity_chain);
  guarded(4, "schedule statistics", schedule_stats);
  guarded(5, "zero-conv gate", zero_conv_gate);
  guarded(6, "reverse update", algorithm_one);

  if (selected(7) || selected(8) || selected(9) || selected(10)) {
    std::optional<ToyData> data;
    std::optional<RunResult> full;
    const auto t0 = Clock::now();
    try {
      data = make_toy_data(toy.root);
      if (selected(7) || selected(8) || selected(9)) full = train_and_deblur(toy, *data, "full", toy.steps);
    } catch (const std::exception& e) {
      for (int id : {7, 8, 9, 10}) {
        if (!selected(id)) continue;
        Verdict v{id, "toy experiment"};
        v.check(false, std::string("setup: ") + e.what());
        report(v, t0);
      }
      data.reset();
    }
    if (data) {
      if (full) guarded(7, "toy deblurring", [&] { return toy_deblurring(toy, *data, *full); });
      if (full) guarded(8, "iterative refinement", [&] { return iterative_refinement(*data, *full); });
      if (full) guarded(9, "ablations", [&] { return ablations(toy, *data, *full); });
      guarded(10, "data pipeline", [&] { return data_pipeline(toy, *data, full ? &*full : nullptr); });
    }
  }

  std::cout << "acceptance: " << ran - failures << "/" << ran << " criteria passed\n";
  return failures == 0 ? 0 : 1;
}
