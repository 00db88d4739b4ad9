#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "xsreg/dataio.hpp"

using namespace xsreg;
namespace fs = std::filesystem;

namespace {
fs::path tmpdir() {
  auto d = fs::temp_directory_path() / "xsreg_dataio_test";
  fs::create_directories(d);
  return d;
}
}  // namespace

TEST_CASE("manifest round trip with three records") {
  auto dir = tmpdir();
  for (auto name : {"v1.png", "t1.png", "v2.png", "t2.png", "v3.png", "t3.png"})
    write_image((dir / name).string(), make_phantom(16, 16, 5));
  std::ofstream f(dir / "m.csv");
  f << "pair_id,visible_path,thermal_path,subject_id,lighting,split\n"
    << "p1,v1.png,t1.png,s1,hard,train\n"
    << "p2,v2.png,t2.png,s1,low,test\n"
    << "p3,v3.png,t3.png,s2,,\n";
  f.close();
  auto m = load_manifest(dir / "m.csv");
  REQUIRE(m.records.size() == 3);
  REQUIRE(m.records[1].lighting == Lighting::low);
  REQUIRE(m.records[1].split == Split::test);
  REQUIRE(m.records[2].lighting == Lighting::hard);  // default
}

TEST_CASE("duplicate pair ids are rejected with the offending id named") {
  auto dir = tmpdir();
  write_image((dir / "a.png").string(), make_phantom(8, 8, 1));
  std::ofstream f(dir / "dup.csv");
  f << "pair_id,visible_path,thermal_path\n"
    << "same,a.png,a.png\n"
    << "same,a.png,a.png\n";
  f.close();
  try {
    load_manifest(dir / "dup.csv");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    REQUIRE(std::string(e.what()).find("same") != std::string::npos);
  }
}

TEST_CASE("empty manifest is legal") {
  auto dir = tmpdir();
  std::ofstream(dir / "empty.csv").close();
  auto m = load_manifest(dir / "empty.csv");
  REQUIRE(m.records.empty());
}

TEST_CASE("image io: resize, range, channel replication") {
  auto dir = tmpdir();
  write_image((dir / "big.png").string(), make_phantom(64, 64, 9));
  Image img = read_image((dir / "big.png").string(), 32, 3);
  REQUIRE(img.h == 32);
  REQUIRE(img.w == 32);
  REQUIRE(img.c == 3);
  REQUIRE(img_min(img) >= -1.f);
  REQUIRE(img_max(img) <= 1.f);
  // grayscale source replicates channels
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      REQUIRE(img.at(0, y, x) == img.at(1, y, x));
      REQUIRE(img.at(1, y, x) == img.at(2, y, x));
    }
}

TEST_CASE("synthetic pair: determinism, range contract, round trip") {
  Image src = make_phantom(32, 32, 77);
  ThetaRange translation_only{0.f, 0.f, 0.25f, 0.f};
  auto p1 = make_synthetic(src, translation_only, 5);
  auto p2 = make_synthetic(src, translation_only, 5);
  REQUIRE(p1.theta_true.t == p2.theta_true.t);
  REQUIRE(p1.theta_true.t[0] == Catch::Approx(1.f));
  REQUIRE(p1.theta_true.t[1] == Catch::Approx(0.f));
  REQUIRE(std::fabs(p1.theta_true.t[2]) <= 0.25f);
  REQUIRE(std::fabs(p1.theta_true.t[5]) <= 0.25f);

  // zero-width range centered at identity: moving equals aligned thermal
  auto pid = make_synthetic(src, ThetaRange{0.f, 0.f, 0.f, 0.f}, 3);
  Image thermal = to_fake_thermal(src);
  for (size_t i = 0; i < thermal.data.size(); ++i)
    REQUIRE(pid.moving.data[i] == Catch::Approx(thermal.data[i]).margin(1e-5));

  // inverse warp of moving recovers the aligned thermal interior
  auto p = make_synthetic(src, ThetaRange{8.f, 0.1f, 0.15f, 0.f}, 21);
  auto undone = warp_affine(p.moving, invert_affine(p.theta_true));
  float max_err = 0;
  for (int y = 6; y < 26; ++y)
    for (int x = 6; x < 26; ++x)
      max_err = std::max(max_err,
                         std::fabs(undone.at(0, y, x) - thermal.at(0, y, x)));
  REQUIRE(max_err < 0.05f);
}

TEST_CASE("perturbations: vflip involution, erase determinism and area") {
  Image img = make_phantom(40, 40, 13);
  auto flipped = perturb(img, PerturbKind::vflip, 0);
  auto twice = perturb(flipped, PerturbKind::vflip, 0);
  REQUIRE(twice.data == img.data);

  auto e1 = perturb(img, PerturbKind::erase_visible, 9);
  auto e2 = perturb(img, PerturbKind::erase_visible, 9);
  REQUIRE(e1.data == e2.data);
  int erased = 0;
  for (size_t i = 0; i < img.data.size(); ++i)
    if (e1.data[i] == 0.f && img.data[i] != 0.f) ++erased;
  float frac = static_cast<float>(erased) / img.data.size();
  REQUIRE(frac >= 0.08f);  // small slack: some pixels may already be 0
  REQUIRE(frac <= 0.30f);
}

TEST_CASE("phantom with thin curves carries bright ridges") {
  PhantomOptions opt;
  opt.thin_curves = true;
  Image img = make_phantom(64, 64, 3, opt);
  REQUIRE(img_max(img) > 0.7f);
  REQUIRE(img.finite());
}
