// cardioseg command-line tool.
//
// Exit codes: 0 success, 1 verification failure, 2 usage or input error,
// 3 numeric failure during training. Failures print one line starting with
// "error:" on stderr.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "cardioseg/checkpoint.hpp"
#include "cardioseg/gradcheck.hpp"
#include "cardioseg/mesh.hpp"
#include "cardioseg/metrics.hpp"
#include "cardioseg/phantom.hpp"
#include "cardioseg/pipeline.hpp"
#include "cardioseg/training.hpp"
#include "cardioseg/volume_io.hpp"

namespace fs = std::filesystem;
using namespace cardioseg;

namespace {

enum ExitCode : int { kOk = 0, kVerificationFailed = 1, kUsage = 2, kNumeric = 3 };

struct VerificationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t count_foreground(const BinaryMask3D& m) {
  return static_cast<std::size_t>(std::count(m.data.begin(), m.data.end(), std::uint8_t{1}));
}

BinaryMask3D preprocess_mask(const BinaryMask3D& m) { return resample_isotropic(crop(m)); }

// ---------------------------------------------------------------- phantom

struct PhantomArgs {
  std::string spec_path;
  std::uint64_t seed = 0;
  std::string out_volume, out_gt;
  bool dump_spec = false;
};

int cmd_phantom(const PhantomArgs& a) {
  PhantomSpec spec = a.spec_path.empty() ? PhantomSpec{} : parse_phantom_spec(read_text(a.spec_path));
  spec.seed = a.seed;
  if (a.dump_spec) {
    std::cout << format_phantom_spec(spec);
    return kOk;
  }
  if (a.out_volume.empty() || a.out_gt.empty())
    throw std::invalid_argument("--out-volume and --out-gt are required");
  const Phantom p = generate_phantom(spec);
  write_volume(p.volume, a.out_volume);
  write_mask(p.ground_truth, a.out_gt);
  const auto& d = p.volume.grid.dims;
  const std::size_t fg = count_foreground(p.ground_truth);
  std::cout << "dims " << d[0] << " x " << d[1] << " x " << d[2] << "\n"
            << "base_index " << p.volume.grid.base_index << "\n"
            << "voxels " << p.ground_truth.data.size() << "\n"
            << "myocardium_voxels " << fg << "\n"
            << "myocardium_fraction " << std::setprecision(6)
            << static_cast<double>(fg) / static_cast<double>(p.ground_truth.data.size()) << "\n";
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string kind, data, out, log;
  std::size_t iterations = 0;
  double lr = kDefaultLearningRate;
  std::uint64_t seed = 0;
  std::size_t log_every = 100;
  std::size_t checkpoint_every = 0;
  bool no_augment = false;
};

struct Case {
  Volume volume;
  BinaryMask3D gt;
};

std::vector<Case> load_cases(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::invalid_argument("data directory " + dir.string() + " does not exist");
  std::vector<fs::path> volumes;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".cvol") volumes.push_back(e.path());
  std::sort(volumes.begin(), volumes.end());
  if (volumes.empty()) throw std::invalid_argument("no .cvol files in " + dir.string());
  std::vector<Case> cases;
  for (const auto& v : volumes) {
    fs::path gt = v;
    gt.replace_extension(".cmsk");
    if (!fs::exists(gt)) throw std::invalid_argument("missing ground truth " + gt.string() + " for " + v.string());
    NormalizeReport report;
    Case c{preprocess(read_volume(v), &report), preprocess_mask(read_mask(gt))};
    if (!report.warning.empty()) std::cerr << "warning: " << v.filename().string() << ": " << report.warning << "\n";
    if (c.volume.grid.dims != c.gt.grid.dims)
      throw std::invalid_argument("volume and ground truth grids differ for " + v.string());
    cases.push_back(std::move(c));
  }
  return cases;
}

int cmd_train(const TrainArgs& a) {
  const NetworkKind kind = a.kind == "init" ? NetworkKind::init : NetworkKind::propagation;
  TrainConfig cfg = TrainConfig::defaults(kind);
  cfg.learning_rate = a.lr;
  cfg.seed = a.seed;
  cfg.log_every = a.log_every;
  if (a.iterations) cfg.iterations = a.iterations;
  if (a.no_augment) cfg.augmentation = AugmentConfig::disabled();
  cfg.checkpoint_every = a.checkpoint_every;
  cfg.checkpoint_path = a.out;
  cfg.validate();

  const auto cases = load_cases(a.data);
  std::cout << "network " << to_string(kind) << "\n"
            << "learning_rate " << cfg.learning_rate << "\n"
            << "iterations " << cfg.iterations << "\n"
            << "seed " << cfg.seed << "\n"
            << "volumes " << cases.size() << "\n";

  auto progress = [](const LossRecord& r) {
    std::cout << "iteration " << r.iteration << " loss " << std::setprecision(8) << r.total << std::endl;
  };
  TrainResult result;
  if (kind == NetworkKind::init) {
    std::vector<InitSample> samples;
    for (const auto& c : cases) {
      auto s = init_samples(c.volume, c.gt);
      samples.insert(samples.end(), s.begin(), s.end());
    }
    std::cout << "samples " << samples.size() << std::endl;
    result = train_init(samples, cfg, ArchSpec::defaults(kind), progress);
  } else {
    std::vector<PropSample> samples;
    for (const auto& c : cases) {
      auto s = prop_samples(c.volume, c.gt);
      samples.insert(samples.end(), s.begin(), s.end());
    }
    std::cout << "samples " << samples.size() << std::endl;
    result = train_prop(samples, cfg, ArchSpec::defaults(kind), progress);
  }
  save_checkpoint(result.params, a.out);
  if (!a.log.empty()) write_loss_log(a.log, result.scales, result.log);
  std::cout << "first_loss " << std::setprecision(8) << result.first_loss << "\n"
            << "final_loss " << result.final_loss << "\n"
            << "checkpoint " << a.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------- segment

struct SegmentArgs {
  std::string volume, init_ckpt, prop_ckpt, out_mask, out_prob, out_mesh;
  std::size_t stride = kLookahead;
};

int cmd_segment(const SegmentArgs& a) {
  const auto start = std::chrono::steady_clock::now();
  const ModelParameters<float> init = load_checkpoint(a.init_ckpt, NetworkKind::init);
  const ModelParameters<float> prop = load_checkpoint(a.prop_ckpt, NetworkKind::propagation);
  NormalizeReport report;
  const Volume v = preprocess(read_volume(a.volume), &report);
  if (!report.warning.empty()) std::cerr << "warning: " << report.warning << "\n";

  PropagationOptions opts;
  opts.stride = a.stride;
  const SegmentationResult r = segment_volume(v, init, prop, opts);
  write_mask(r.binary, a.out_mask);
  if (!a.out_prob.empty()) write_probability(r.probability, a.out_prob);
  std::size_t triangles = 0;
  if (!a.out_mesh.empty()) {
    const auto& s = r.binary.grid.spacing;
    const TriangleMesh mesh = extract_surface(r.binary, {double(s[0]), double(s[1]), double(s[2])});
    write_obj(mesh, a.out_mesh);
    triangles = mesh.triangle_count();
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto& d = r.binary.grid.dims;
  std::cout << "dims " << d[0] << " x " << d[1] << " x " << d[2] << "\n"
            << "init_index " << r.init_index << "\n"
            << "segmented_slices " << r.first_slice << ".." << r.last_slice << "\n"
            << "propagation_calls " << r.propagation_calls << "\n"
            << "myocardium_voxels " << count_foreground(r.binary) << "\n";
  if (!a.out_mesh.empty()) std::cout << "mesh_triangles " << triangles << "\n";
  std::cout << "elapsed_s " << std::fixed << std::setprecision(3) << seconds << "\n";
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string pred, gt, profile;
};

int cmd_eval(const EvalArgs& a) {
  const BinaryMask3D pred = read_mask(a.pred), gt = read_mask(a.gt);
  const DiceProfile profile = slicewise_dice_profile(pred, gt);
  // Slices above the base are not part of the ventricles.
  const std::size_t base = std::min(gt.grid.base_index, gt.grid.dims[2] - 1);
  const double d3 = dice_3d(slice_range(pred, 0, base), slice_range(gt, 0, base));
  std::cout << std::fixed << std::setprecision(6) << "dice_3d " << d3 << "\n"
            << "max_adjacent_jump " << profile.max_jump << "\n"
            << "slices " << profile.dice.size() << "\n";
  if (!a.profile.empty()) write_profile_csv(a.profile, profile);
  return kOk;
}

// ---------------------------------------------------------------- mesh

struct MeshArgs {
  std::string mask, out;
};

int cmd_mesh(const MeshArgs& a) {
  const BinaryMask3D m = read_mask(a.mask);
  const auto& s = m.grid.spacing;
  const TriangleMesh mesh = extract_surface(m, {double(s[0]), double(s[1]), double(s[2])});
  write_obj(mesh, a.out);
  const MeshStats st = mesh_stats(mesh);
  std::cout << "vertices " << st.vertices << "\n"
            << "triangles " << st.triangles << "\n"
            << "euler_characteristic " << st.euler_characteristic << "\n"
            << "watertight " << (is_watertight(mesh) ? "yes" : "no") << "\n";
  return kOk;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  std::vector<std::uint64_t> seeds;
  std::string inject_fault;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  GradcheckOptions opts;
  if (!a.seeds.empty()) opts.seeds = a.seeds;
  opts.inject_fault = a.inject_fault;
  const GradcheckReport report = run_gradcheck(opts);
  std::cout << report.format() << "elapsed_s " << std::fixed << std::setprecision(3) << report.seconds << "\n";
  if (!report.passed()) {
    std::string names;
    for (const auto& n : report.offenders()) names += (names.empty() ? "" : ", ") + n;
    throw VerificationFailure("gradient check failed: " + names);
  }
  return kOk;
}

template <typename F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const VerificationFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kVerificationFailed;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Biventricular myocardium segmentation: phantoms, training, segmentation, evaluation"};
  app.require_subcommand(1);

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic volume and ground-truth mask");
  phantom->add_option("--spec", pa.spec_path, "key = value phantom spec file (defaults when omitted)")
      ->check(CLI::ExistingFile);
  phantom->add_option("--seed", pa.seed, "Phantom seed");
  phantom->add_option("--out-volume", pa.out_volume, "Output CVOL file");
  phantom->add_option("--out-gt", pa.out_gt, "Output CMSK file");
  phantom->add_flag("--dump-spec", pa.dump_spec, "Print the resolved spec and exit");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train the init or propagation network");
  train->add_option("--kind", ta.kind, "init or prop")->required()->check(CLI::IsMember({"init", "prop"}));
  train->add_option("--data", ta.data, "Directory of <name>.cvol / <name>.cmsk pairs")->required();
  train->add_option("--iterations", ta.iterations, "Iterations (default 300000 init, 600000 prop)");
  train->add_option("--lr", ta.lr, "Learning rate")->capture_default_str();
  train->add_option("--seed", ta.seed, "Initialization and sampling seed");
  train->add_option("--out", ta.out, "Output checkpoint")->required();
  train->add_option("--log", ta.log, "Loss CSV");
  train->add_option("--log-every", ta.log_every, "Log every k-th iteration")->capture_default_str();
  train->add_option("--checkpoint-every", ta.checkpoint_every, "Save the checkpoint every k iterations");
  train->add_flag("--no-augment", ta.no_augment, "Disable rotation and noise augmentation");

  SegmentArgs sa;
  auto* segment = app.add_subcommand("segment", "Segment a volume");
  segment->add_option("--volume", sa.volume, "Input CVOL")->required();
  segment->add_option("--init-ckpt", sa.init_ckpt, "Init-network checkpoint")->required();
  segment->add_option("--prop-ckpt", sa.prop_ckpt, "Propagation-network checkpoint")->required();
  segment->add_option("--out-mask", sa.out_mask, "Output CMSK")->required();
  segment->add_option("--out-prob", sa.out_prob, "Output CPRB probability mask");
  segment->add_option("--out-mesh", sa.out_mesh, "Output OBJ surface mesh");
  segment->add_option("--stride", sa.stride, "Slices written per propagation step")
      ->check(CLI::IsMember({std::size_t{1}, std::size_t{4}}))
      ->capture_default_str();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Dice of a predicted mask against ground truth");
  eval->add_option("--pred", ea.pred, "Predicted CMSK")->required();
  eval->add_option("--gt", ea.gt, "Ground-truth CMSK")->required();
  eval->add_option("--profile", ea.profile, "Per-slice Dice CSV");

  MeshArgs ma;
  auto* mesh = app.add_subcommand("mesh", "Surface mesh of a binary mask");
  mesh->add_option("--mask", ma.mask, "Input CMSK")->required();
  mesh->add_option("--out", ma.out, "Output OBJ")->required();

  GradcheckArgs ga;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
  gradcheck->add_option("--seed", ga.seeds, "Seed(s) to run (default 0-4)");
  gradcheck->add_option("--inject-fault", ga.inject_fault, "Perturb one op's gradient (self-test)")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }

  if (*phantom) return guarded([&] { return cmd_phantom(pa); });
  if (*train) return guarded([&] { return cmd_train(ta); });
  if (*segment) return guarded([&] { return cmd_segment(sa); });
  if (*eval) return guarded([&] { return cmd_eval(ea); });
  if (*mesh) return guarded([&] { return cmd_mesh(ma); });
  if (*gradcheck) return guarded([&] { return cmd_gradcheck(ga); });
  return kUsage;
}
