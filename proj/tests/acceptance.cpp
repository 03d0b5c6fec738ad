// Acceptance runner. Prints one PASS/FAIL line per criterion and exits
// non-zero if any selected criterion fails.
//
//   acceptance [--only 1,2,...] [--work DIR]

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "cardioseg/checkpoint.hpp"
#include "cardioseg/layers.hpp"
#include "cardioseg/loss.hpp"
#include "cardioseg/mesh.hpp"
#include "cardioseg/metrics.hpp"
#include "cardioseg/phantom.hpp"
#include "cardioseg/pipeline.hpp"
#include "cardioseg/training.hpp"
#include "cardioseg/volume_io.hpp"
#include "reference_conv.hpp"

namespace fs = std::filesystem;
using namespace cardioseg;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 6) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("'") + CARDIOSEG_CLI + "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// ------------------------------------------------------------------ 1

Outcome gradient_suite(const fs::path& work) {
  const auto t0 = Clock::now();
  const int code = run_cli("gradcheck", work / "gradcheck.txt");
  const double secs = seconds_since(t0);
  return {code == 0 && secs < 60.0, "exit " + std::to_string(code) + ", " + fmt(secs, 3) + " s (limit 60 s)"};
}

// ------------------------------------------------------------------ 2

Outcome loss_oracle(const fs::path&) {
  const LossConfig cfg{0.999, 0.0005, 0.02};
  const double l11 = pixel_loss(1.0, 1.0, cfg), l51 = pixel_loss(0.5, 1.0, cfg), l10 = pixel_loss(1.0, 0.0, cfg);
  const double e = std::max({std::abs(l11 - 0.0), std::abs(l51 - 0.693147), std::abs(l10 - 7.600902)});
  const double bl = pixel_loss(0.01, 0.0, cfg), bg = pixel_loss_grad(0.01, 0.0, cfg);
  return {e <= 1e-6 && bl == 0.0 && bg == 0.0,
          "max deviation " + fmt(e, 3) + " (limit 1e-6), class-balance loss " + fmt(bl) + " grad " + fmt(bg)};
}

// ------------------------------------------------------------------ 3

Outcome conv_oracle(const fs::path&) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(31337);
  std::uniform_int_distribution<std::size_t> nd(1, 2), cd(1, 4), sd(1, 16), kd(0, 2), st(1, 2), pd(0, 2);
  std::uniform_real_distribution<double> u(-1, 1);
  const std::size_t kernels[] = {1, 3, 5};
  auto fill = [&](Tensor<double>& t) {
    for (auto& v : t.storage()) v = u(rng);
  };
  double worst = 0;
  int done = 0;
  while (done < 100) {
    const std::size_t n = nd(rng), ci = cd(rng), co = cd(rng), h = sd(rng), w = sd(rng);
    const std::size_t k = kernels[kd(rng)], s = st(rng), p = pd(rng);
    if (h + 2 * p < k || w + 2 * p < k) continue;
    Tensor<double> x(Shape{n, ci, h, w}), wt(Shape{co, ci, k, k}), b(Shape{co});
    fill(x);
    fill(wt);
    fill(b);
    const auto got = conv2d(x, wt, b, s, p);
    const auto want = testing_support::naive_conv(x, wt, b, s, p);
    if (got.shape() != want.shape()) return {false, "shape mismatch on instance " + std::to_string(done)};
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
    ++done;
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-10 && secs < 30.0,
          "100 instances, max abs error " + fmt(worst, 3) + " (limit 1e-10), " + fmt(secs, 3) + " s (limit 30 s)"};
}

// ------------------------------------------------------------------ 4

struct OverfitRun {
  double first = 0, final = 0, dice = 0, seconds = 0;
  std::string checkpoint;
};

OverfitRun overfit(const fs::path& dir) {
  fs::create_directories(dir);
  const auto t0 = Clock::now();
  PhantomSpec spec;
  spec.seed = 0;
  const Phantom ph = generate_phantom(spec);
  const Volume v = preprocess(ph.volume);
  const BinaryMask3D gt = resample_isotropic(crop(ph.ground_truth));
  const std::size_t z = select_init_slice(v.grid);
  const InitSample sample{v.slice_tensor(z), gt.slice_tensor(z)};

  TrainConfig cfg = TrainConfig::defaults(NetworkKind::init);
  cfg.iterations = 2000;
  cfg.learning_rate = 1e-4;
  cfg.batch_size = 1;
  cfg.augmentation = AugmentConfig::disabled();
  cfg.log_every = 1;
  cfg.seed = 4;
  const TrainResult r = train_init({sample}, cfg);

  OverfitRun out;
  out.first = r.first_loss;
  out.final = r.final_loss;
  const Tensor<float> pred = binarize(forward(r.params, sample.slice).finest());
  std::vector<std::uint8_t> a(pred.size()), b(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    a[i] = pred[i] > 0.5f;
    b[i] = sample.mask[i] > 0.5f;
  }
  out.dice = dice(a, b);
  out.seconds = seconds_since(t0);
  save_checkpoint(r.params, dir / "init.cseg");
  write_loss_log(dir / "loss.csv", r.scales, r.log);
  out.checkpoint = serialize_checkpoint(r.params);
  return out;
}

// ------------------------------------------------------------------ 5

struct EndToEndRun {
  std::vector<double> dice3d, jump, apex;
  double seconds = 0;
  std::string init_ckpt, prop_ckpt;
  std::vector<std::string> masks;
};

constexpr std::uint64_t kTrainSeeds[] = {100, 101, 102, 103, 104, 105, 106, 107};
constexpr std::uint64_t kHeldOutSeeds[] = {200, 201};

EndToEndRun end_to_end(const fs::path& dir, bool verbose) {
  fs::create_directories(dir);
  const auto t0 = Clock::now();
  std::vector<InitSample> init_data;
  std::vector<PropSample> prop_data;
  for (std::uint64_t seed : kTrainSeeds) {
    PhantomSpec spec;
    spec.seed = seed;
    const Phantom ph = generate_phantom(spec);
    const Volume v = preprocess(ph.volume);
    const BinaryMask3D gt = resample_isotropic(crop(ph.ground_truth));
    auto si = init_samples(v, gt);
    init_data.insert(init_data.end(), si.begin(), si.end());
    auto sp = prop_samples(v, gt);
    prop_data.insert(prop_data.end(), std::make_move_iterator(sp.begin()), std::make_move_iterator(sp.end()));
  }

  auto progress = [&](const char* what) {
    return [&, what](const LossRecord& r) {
      if (verbose)
        std::cerr << "  [" << what << "] iteration " << r.iteration << " loss " << r.total << " ("
                  << fmt(seconds_since(t0), 4) << " s)\n";
    };
  };
  TrainConfig ci = TrainConfig::defaults(NetworkKind::init);
  ci.iterations = 20000;
  ci.seed = 1;
  ci.log_every = 1000;
  const TrainResult ri = train_init(init_data, ci, ArchSpec::defaults(NetworkKind::init), progress("init"));
  TrainConfig cp = TrainConfig::defaults(NetworkKind::propagation);
  cp.iterations = 40000;
  cp.seed = 2;
  cp.log_every = 2000;
  const TrainResult rp = train_prop(prop_data, cp, ArchSpec::defaults(NetworkKind::propagation), progress("prop"));
  save_checkpoint(ri.params, dir / "init.cseg");
  save_checkpoint(rp.params, dir / "prop.cseg");
  write_loss_log(dir / "init_loss.csv", ri.scales, ri.log);
  write_loss_log(dir / "prop_loss.csv", rp.scales, rp.log);

  EndToEndRun out;
  out.init_ckpt = serialize_checkpoint(ri.params);
  out.prop_ckpt = serialize_checkpoint(rp.params);
  for (std::uint64_t seed : kHeldOutSeeds) {
    PhantomSpec spec;
    spec.seed = seed;
    const Phantom ph = generate_phantom(spec);
    const Volume v = preprocess(ph.volume);
    const BinaryMask3D gt = resample_isotropic(crop(ph.ground_truth));
    const SegmentationResult seg = segment_volume(v, ri.params, rp.params);
    const std::size_t base = v.grid.base_index;
    const BinaryMask3D p = slice_range(seg.binary, 0, base), g = slice_range(gt, 0, base);
    const DiceProfile prof = slicewise_dice_profile(p, g);
    const std::size_t apex_n = static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(base + 1)));
    double apex = 0;
    for (std::size_t z = 0; z < apex_n; ++z) apex += prof.dice[z];
    out.dice3d.push_back(dice_3d(p, g));
    out.jump.push_back(prof.max_jump);
    out.apex.push_back(apex / static_cast<double>(apex_n));
    write_mask(seg.binary, dir / ("segmentation_" + std::to_string(seed) + ".cmsk"));
    write_mask(gt, dir / ("ground_truth_" + std::to_string(seed) + ".cmsk"));
    write_profile_csv(dir / ("profile_" + std::to_string(seed) + ".csv"), prof);
    out.masks.push_back(serialize_mask(seg.binary));
  }
  out.seconds = seconds_since(t0);
  return out;
}

// ------------------------------------------------------------------ 6

Outcome controller_oracle(const fs::path&) {
  const auto t0 = Clock::now();
  const Phantom ph = generate_phantom(PhantomSpec{});
  const BinaryMask3D& gt = ph.ground_truth;
  InitPredictor init = [&](const Tensor<float>&, std::size_t z) { return gt.slice_tensor(z); };
  PropPredictor prop = [&](const PropagationInput<float>&, const PropagationQuery& q) {
    auto out = Tensor<float>::nchw(1, kLookahead, gt.grid.dims[1], gt.grid.dims[0]);
    for (std::size_t k = 0; k < kLookahead; ++k) {
      auto s = gt.slice(q.lookahead[k]);
      std::copy(s.begin(), s.end(), out.plane(0, k));
    }
    return out;
  };
  const Volume v = preprocess(ph.volume);
  const SegmentationResult r = segment_volume(v, init, prop);
  std::size_t wrong = 0;
  for (std::size_t z = 0; z <= v.grid.base_index; ++z) {
    if (z == r.init_index) continue;
    for (std::size_t i = 0; i < gt.grid.slice_size(); ++i) wrong += r.binary.slice(z)[i] != gt.slice(z)[i];
  }
  const std::size_t n_up = v.grid.base_index - r.init_index, n_down = r.init_index;
  const std::size_t expected = (n_up + 3) / 4 + (n_down + 3) / 4;
  const double secs = seconds_since(t0);
  return {wrong == 0 && r.propagation_calls == expected && secs < 5.0,
          std::to_string(wrong) + " differing voxels, " + std::to_string(r.propagation_calls) + " calls (expected " +
              std::to_string(expected) + "), " + fmt(secs, 3) + " s (limit 5 s)"};
}

// ------------------------------------------------------------------ 8

Outcome mesh_topology(const fs::path&) {
  const auto t0 = Clock::now();
  Grid g;
  g.dims = {24, 24, 24};
  g.base_index = 23;
  BinaryMask3D ball(g);
  for (std::size_t z = 0; z < 24; ++z)
    for (std::size_t y = 0; y < 24; ++y)
      for (std::size_t x = 0; x < 24; ++x) {
        const double dx = x - 11.5, dy = y - 11.5, dz = z - 11.5;
        ball.at(x, y, z) = dx * dx + dy * dy + dz * dz <= 81.0;
      }

  // Ring slice of a phantom without RV, extruded through ten slices.
  PhantomSpec spec;
  spec.rv_extent_deg = 0;
  spec.n_slices = 40;
  const Phantom ph = generate_phantom(spec);
  Grid tg = ph.ground_truth.grid;
  tg.dims[2] = 14;
  tg.base_index = 13;
  BinaryMask3D torus(tg);
  for (std::size_t z = 2; z < 12; ++z) {
    auto src = ph.ground_truth.slice(35);
    std::copy(src.begin(), src.end(), torus.slice(z).begin());
  }
  const TriangleMesh mb = extract_surface(ball, 1.0);
  const TriangleMesh mt = extract_surface(torus, kIsotropicSpacingMm);
  const long eb = euler_characteristic(mb), et = euler_characteristic(mt);
  const bool wb = is_watertight(mb), wt = is_watertight(mt);
  const double secs = seconds_since(t0);
  return {eb == 2 && et == 0 && wb && wt && secs < 10.0,
          "ball chi " + std::to_string(eb) + (wb ? " watertight" : " open") + ", torus chi " + std::to_string(et) +
              (wt ? " watertight" : " open") + ", " + fmt(secs, 3) + " s (limit 10 s)"};
}

// ------------------------------------------------------------------ 9

Outcome inference_speed(const fs::path& work) {
  const fs::path dir = work / "speed";
  fs::create_directories(dir);
  PhantomSpec spec;
  spec.seed = 300;
  const Phantom ph = generate_phantom(spec);
  write_volume(ph.volume, dir / "volume.cvol");
  save_checkpoint(init_parameters<float>(NetworkKind::init, 1), dir / "init.cseg");
  save_checkpoint(init_parameters<float>(NetworkKind::propagation, 2), dir / "prop.cseg");
  const auto t0 = Clock::now();
  const int code = run_cli("segment --volume '" + (dir / "volume.cvol").string() + "' --init-ckpt '" +
                               (dir / "init.cseg").string() + "' --prop-ckpt '" + (dir / "prop.cseg").string() +
                               "' --out-mask '" + (dir / "mask.cmsk").string() + "'",
                           dir / "segment.txt");
  const double secs = seconds_since(t0);
  return {code == 0 && secs < 10.0,
          "128x128x60 volume, exit " + std::to_string(code) + ", " + fmt(secs, 3) + " s (limit 10 s)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string only = "1,2,3,4,5,6,7,8,9";
  std::string work = "acceptance_work";
  bool verbose = false;
  app.add_option("--only", only, "Comma-separated criterion numbers");
  app.add_option("--work", work, "Directory for artifacts");
  app.add_flag("--verbose", verbose, "Print training progress");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  {
    std::istringstream in(only);
    for (std::string tok; std::getline(in, tok, ',');) selected.insert(std::stoi(tok));
  }
  const fs::path wd = work;
  fs::create_directories(wd);

  bool all = true;
  auto report = [&](int id, const std::string& name, const Outcome& o) {
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail
              << std::endl;
    all = all && o.pass;
  };
  auto guarded = [&](int id, const std::string& name, const std::function<Outcome()>& f) {
    if (!selected.count(id)) return;
    try {
      report(id, name, f());
    } catch (const std::exception& e) {
      report(id, name, {false, std::string("exception: ") + e.what()});
    }
  };

  guarded(1, "gradient suite", [&] { return gradient_suite(wd); });
  guarded(2, "loss oracle", [&] { return loss_oracle(wd); });
  guarded(3, "convolution oracle", [&] { return conv_oracle(wd); });

  std::optional<OverfitRun> first_overfit;
  std::optional<EndToEndRun> first_e2e;
  guarded(4, "overfit convergence", [&] {
    first_overfit = overfit(wd / "overfit");
    const auto& r = *first_overfit;
    const double ratio = r.final / r.first;
    return Outcome{ratio <= 0.01 && r.dice >= 0.95 && r.seconds < 900.0,
                   "loss " + fmt(r.first) + " -> " + fmt(r.final) + " (ratio " + fmt(ratio, 3) +
                       ", limit 0.01), dice " + fmt(r.dice, 4) + " (limit 0.95), " + fmt(r.seconds, 4) +
                       " s (limit 900 s)"};
  });
  guarded(5, "desk-scale end to end", [&] {
    first_e2e = end_to_end(wd / "e2e", verbose);
    const auto& r = *first_e2e;
    bool ok = r.seconds <= 4 * 3600.0;
    std::string d;
    for (std::size_t i = 0; i < r.dice3d.size(); ++i) {
      ok = ok && r.dice3d[i] >= 0.80 && r.jump[i] <= 0.25 && r.apex[i] >= 0.70;
      d += "held-out " + std::to_string(kHeldOutSeeds[i]) + ": dice3d " + fmt(r.dice3d[i], 4) + " max jump " +
           fmt(r.jump[i], 4) + " apex " + fmt(r.apex[i], 4) + "; ";
    }
    d += "limits 0.80 / 0.25 / 0.70, " + fmt(r.seconds, 5) + " s (limit 14400 s)";
    return Outcome{ok, d};
  });
  guarded(7, "determinism", [&] {
    if (!first_overfit) first_overfit = overfit(wd / "overfit");
    if (!first_e2e) first_e2e = end_to_end(wd / "e2e", verbose);
    const OverfitRun o2 = overfit(wd / "overfit_repeat");
    const EndToEndRun e2 = end_to_end(wd / "e2e_repeat", verbose);
    const bool c4 = o2.checkpoint == first_overfit->checkpoint;
    const bool c5 = e2.init_ckpt == first_e2e->init_ckpt && e2.prop_ckpt == first_e2e->prop_ckpt;
    const bool m5 = e2.masks == first_e2e->masks;
    return Outcome{c4 && c5 && m5, std::string("overfit checkpoint ") + (c4 ? "identical" : "differs") +
                                       ", end-to-end checkpoints " + (c5 ? "identical" : "differ") + ", masks " +
                                       (m5 ? "identical" : "differ")};
  });
  guarded(6, "propagation controller oracle", [&] { return controller_oracle(wd); });
  guarded(8, "mesh topology", [&] { return mesh_topology(wd); });
  guarded(9, "inference speed", [&] { return inference_speed(wd); });

  return all ? 0 : 1;
}
