// Behavioural checks on the artifacts of the acceptance training run.

#include "doctest.h"

#include <fstream>
#include <sstream>

#include "cardioseg/checkpoint.hpp"
#include "cardioseg/phantom.hpp"
#include "cardioseg/pipeline.hpp"

using namespace cardioseg;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = CARDIOSEG_ACCEPTANCE_WORK;

std::vector<double> read_totals(const fs::path& csv) {
  std::ifstream in(csv);
  REQUIRE(in);
  std::string line;
  std::getline(in, line);
  std::vector<double> totals;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string it, total;
    std::getline(row, it, ',');
    std::getline(row, total, ',');
    totals.push_back(std::stod(total));
  }
  return totals;
}

}  // namespace

TEST_CASE("all-background phantom yields a nearly empty mask") {
  const auto init = load_checkpoint(kWork / "e2e" / "init.cseg", NetworkKind::init);
  const auto prop = load_checkpoint(kWork / "e2e" / "prop.cseg", NetworkKind::propagation);
  PhantomSpec spec;
  spec.seed = 400;
  spec.myocardium = spec.background;
  spec.blood = spec.background;
  const Phantom ph = generate_phantom(spec);
  const auto r = segment_volume(preprocess(ph.volume), init, prop);
  std::size_t on = 0;
  for (auto v : r.binary.data) on += v;
  const double frac = double(on) / double(r.binary.data.size());
  INFO("myocardium fraction " << frac);
  CHECK(frac < 0.02);
}

TEST_CASE("preprocessing then segmenting is deterministic with trained checkpoints") {
  const auto init = load_checkpoint(kWork / "e2e" / "init.cseg", NetworkKind::init);
  const auto prop = load_checkpoint(kWork / "e2e" / "prop.cseg", NetworkKind::propagation);
  PhantomSpec spec;
  spec.seed = 201;
  const Phantom ph = generate_phantom(spec);
  const auto a = segment_volume(preprocess(ph.volume), init, prop);
  const auto b = segment_volume(preprocess(ph.volume), init, prop);
  CHECK(a.probability == b.probability);
  CHECK(a.binary == b.binary);
}

TEST_CASE("overfit loss decreases over consecutive 200-iteration windows after iteration 200") {
  const auto totals = read_totals(kWork / "overfit" / "loss.csv");
  REQUIRE(totals.size() == 2000);
  std::vector<double> means;
  for (std::size_t start = 200; start + 200 <= totals.size(); start += 200) {
    double s = 0;
    for (std::size_t i = start; i < start + 200; ++i) s += totals[i];
    means.push_back(s / 200.0);
  }
  for (std::size_t k = 1; k < means.size(); ++k) {
    INFO("window " << k << " mean " << means[k] << " previous " << means[k - 1]);
    CHECK(means[k] <= means[k - 1]);
  }
}
