// Command-line front end: train / register / evaluate / vessels / diffmap /
// synth, sharing one JSON config with dotted --set overrides.
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "xsreg/metrics.hpp"
#include "xsreg/trainer.hpp"
#include "xsreg/vessels.hpp"

using namespace xsreg;
using nlohmann::json;

namespace {

struct AppConfig {
  TrainConfig train;
  NetsConfig nets;
  VesselConfig vessels;

  void apply(const json& j, const std::string& prefix = "") {
    for (auto it = j.begin(); it != j.end(); ++it) {
      std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
      const json& v = it.value();
      if (v.is_object()) {
        apply(v, key);
        continue;
      }
      if (key == "direction") {
        std::string d = v.get<std::string>();
        if (d == "thermal_to_visible" || d == "TV")
          train.direction = Direction::thermal_to_visible;
        else if (d == "visible_to_thermal" || d == "VT")
          train.direction = Direction::visible_to_thermal;
        else
          throw ConfigError("unknown direction: " + d);
      } else if (key == "epochs") train.epochs = v.get<int>();
      else if (key == "batch_size") train.batch_size = v.get<int>();
      else if (key == "lr_g") train.lr_g = v.get<float>();
      else if (key == "lr_d") train.lr_d = v.get<float>();
      else if (key == "lr_stn") train.lr_stn = v.get<float>();
      else if (key == "stn_warm_epochs") train.stn_warm_epochs = v.get<int>();
      else if (key == "fourier") train.fourier = v.get<bool>();
      else if (key == "seed") train.seed = v.get<uint64_t>();
      else if (key == "mixed_precision") train.mixed_precision = v.get<bool>();
      else if (key == "checkpoint_every") train.checkpoint_every = v.get<int>();
      else if (key == "image_size") {
        train.image_size = v.get<int>();
        nets.disc.image_size = train.image_size;
        nets.reg.image_size = train.image_size;
      } else if (key == "weights.perc") train.weights.perc = v.get<float>();
      else if (key == "weights.recon") train.weights.recon = v.get<float>();
      else if (key == "weights.morph") train.weights.morph = v.get<float>();
      else if (key == "weights.fourier") train.weights.fourier = v.get<float>();
      else if (key == "gen.base_channels") nets.gen.base_channels = v.get<int>();
      else if (key == "gen.use_blurpool") nets.gen.use_blurpool = v.get<bool>();
      else if (key == "disc.base_channels")
        nets.disc.base_channels = v.get<int>();
      else if (key == "disc.use_blurpool")
        nets.disc.use_blurpool = v.get<bool>();
      else if (key == "reg.patch_size") nets.reg.patch_size = v.get<int>();
      else if (key == "reg.vit_depth") nets.reg.vit_depth = v.get<int>();
      else if (key == "reg.embed_dim") nets.reg.embed_dim = v.get<int>();
      else if (key == "reg.heads") nets.reg.heads = v.get<int>();
      else if (key == "reg.mlp_ratio") nets.reg.mlp_ratio = v.get<int>();
      else if (key == "reg.mlp_widths")
        nets.reg.mlp_widths = v.get<std::vector<int>>();
      else if (key == "reg.deeper_regressor")
        nets.reg.deeper_regressor = v.get<bool>();
      else if (key == "vessels.diffusion_iters")
        vessels.diffusion_iters = v.get<int>();
      else if (key == "vessels.kappa") vessels.kappa = v.get<float>();
      else if (key == "vessels.lambda") vessels.lambda = v.get<float>();
      else if (key == "vessels.clahe_clip") vessels.clahe_clip = v.get<float>();
      else if (key == "vessels.clahe_tiles") vessels.clahe_tiles = v.get<int>();
      else if (key == "vessels.tophat_kernel")
        vessels.tophat_kernel = v.get<int>();
      else
        throw ConfigError("unknown config key: " + key);
    }
  }

  void finalize() {
    nets.disc.image_size = train.image_size;
    nets.reg.image_size = train.image_size;
    while (nets.reg.patch_size > train.image_size) nets.reg.patch_size /= 2;
  }
};

json parse_override(const std::string& kv) {
  auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must be key=value: " + kv);
  std::string key = kv.substr(0, eq), raw = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // bare strings are legal values
  }
  // apply() flattens nested objects into the same dotted keys, so a flat
  // {key: value} object reuses that path directly
  json obj;
  obj[key] = value;
  return obj;
}

AppConfig load_config(const std::string& config_path,
                      const std::vector<std::string>& overrides) {
  AppConfig cfg;
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw DataError("cannot read config " + config_path);
    cfg.apply(json::parse(f));
  }
  for (auto& kv : overrides) cfg.apply(parse_override(kv));
  cfg.finalize();
  return cfg;
}

std::vector<std::pair<Image, Image>> load_oriented(const PairManifest& manifest,
                                                   const AppConfig& cfg,
                                                   Split split) {
  std::vector<std::pair<Image, Image>> pairs;
  for (auto& rec : manifest.records) {
    if (rec.split != split) continue;
    auto [vis, thr] = load_pair(rec, cfg.train.image_size);
    pairs.push_back(orient_pair(vis, thr, cfg.train.direction));
  }
  return pairs;
}

int cmd_synth(const std::string& out_dir, int n, uint64_t seed, int size) {
  std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.csv");
  std::ofstream thetas(dir / "theta_true.csv");
  manifest << "pair_id,visible_path,thermal_path,subject_id,lighting,split\n";
  thetas << "pair_id,a11,a12,tx,a21,a22,ty\n";
  for (int i = 0; i < n; ++i) {
    auto fixed = make_phantom(size, size, seed * 1000 + i,
                              {.blur_sigma = 3.0f});
    auto sp = make_synthetic(fixed, {}, seed * 1000 + i);
    std::string id = "synth" + std::to_string(i);
    auto vpath = dir / (id + "_visible.png");
    auto tpath = dir / (id + "_thermal.png");
    write_image(vpath.string(), replicate_channels(sp.fixed, 3));
    write_image(tpath.string(), replicate_channels(luminance(sp.moving), 3));
    // paths relative to the manifest's own directory
    manifest << id << ',' << vpath.filename().string() << ','
             << tpath.filename().string()
             << ",synthetic,none," << (i % 4 == 3 ? "test" : "train") << '\n';
    char row[256];
    std::snprintf(row, sizeof row, "%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  id.c_str(), sp.theta_true.t[0], sp.theta_true.t[1],
                  sp.theta_true.t[2], sp.theta_true.t[3], sp.theta_true.t[4],
                  sp.theta_true.t[5]);
    thetas << row;
  }
  std::cout << "wrote " << n << " synthetic pairs to " << out_dir << '\n';
  return 0;
}

int cmd_train(const AppConfig& cfg, const std::string& data,
              const std::string& out_dir) {
  auto manifest = load_manifest(data);
  auto pairs = load_oriented(manifest, cfg, Split::train);
  if (pairs.empty()) throw DataError("no training pairs in " + data);
  Nets nets(cfg.nets, cfg.train.seed);
  RunDir run(out_dir, cfg.train);
  train(pairs, nets, cfg.train, run);
  std::cout << "trained on " << pairs.size() << " pairs; run dir " << out_dir
            << '\n';
  return 0;
}

int cmd_register(const AppConfig& cfg, const std::string& data,
                 const std::string& checkpoint, const std::string& out_dir) {
  auto manifest = load_manifest(data);
  Nets nets(cfg.nets, cfg.train.seed);
  if (!checkpoint.empty()) nets.load(checkpoint);
  auto sum = register_dataset(manifest, nets, cfg.train.direction, out_dir,
                              cfg.train.image_size);
  std::cout << "registered " << sum.written << " pairs, skipped "
            << sum.skipped.size() << '\n';
  return sum.skipped.empty() ? 0 : 2;
}

int cmd_evaluate(const AppConfig& cfg, const std::string& data,
                 const std::string& out_dir) {
  auto manifest = load_manifest(data);
  std::filesystem::create_directories(out_dir);
  losses::FeatureExtractor feat(cfg.train.seed + 101);
  metrics::EvalReport report;
  for (auto& rec : manifest.records) {
    auto [vis, thr] = load_pair(rec, cfg.train.image_size);
    metrics::PairEval pe;
    pe.pair_id = rec.pair_id;
    auto lv = luminance(vis), lt = luminance(thr);
    std::tie(pe.ssim_edges, pe.ncc_edges) = metrics::edge_metrics(lv, lt);
    pe.mutual_info = metrics::mutual_information(lv, lt);
    pe.lpips = metrics::lpips(vis, thr, feat);
    pe.psnr = metrics::psnr(lv, lt);
    report.pairs.push_back(pe);
  }
  std::filesystem::path dir(out_dir);
  report.write_csv(dir / "report.csv");
  report.write_summary_json(dir / "summary.json");
  std::cout << "evaluated " << report.pairs.size() << " pairs; mean edge SSIM "
            << report.mean_of(
                   [](const metrics::PairEval& p) { return p.ssim_edges; })
            << '\n';
  return 0;
}

int cmd_vessels(const AppConfig& cfg, const std::string& a,
                const std::string& b, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::filesystem::path dir(out_dir);
  Image ia = read_image(a, cfg.train.image_size, 1);
  Image ma = vessels::vessel_map(ia, cfg.vessels);
  // vessel maps live in [0,1]; write_image expects [-1,1]
  auto to_png = [](Image m) {
    for (auto& v : m.data) v = 2.f * v - 1.f;
    return m;
  };
  write_image((dir / "vessels_a.png").string(), to_png(ma));
  if (!b.empty()) {
    Image ib = read_image(b, cfg.train.image_size, 1);
    write_image((dir / "vessels_b.png").string(),
                to_png(vessels::vessel_map(ib, cfg.vessels)));
    double sim = vessels::identity_similarity(ia, ib, cfg.vessels);
    std::ofstream tab(dir / "psnr.csv");
    tab << "a,b,psnr\n" << a << ',' << b << ',' << sim << '\n';
    std::cout << "vessel-map PSNR " << sim << '\n';
  }
  return 0;
}

int cmd_diffmap(const AppConfig& cfg, const std::string& a,
                const std::string& b, const std::string& out_path) {
  Image vis = read_image(a, cfg.train.image_size, 1);
  Image thr = read_image(b, cfg.train.image_size, 1);
  auto parent = std::filesystem::path(out_path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  write_image(out_path, metrics::difference_map(vis, thr));
  std::cout << "wrote " << out_path << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unsupervised cross-spectral face registration toolkit"};
  app.require_subcommand(1);

  std::string config_path, data, out_dir = "run", checkpoint, in_a, in_b;
  std::vector<std::string> overrides;
  int n = 32, size = 128;
  uint64_t seed = 0;
  bool seed_set = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--set", overrides, "dotted key=value override");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option_function<uint64_t>(
        "--seed", [&](uint64_t s) { seed = s; seed_set = true; },
        "override random seed");
  };

  auto* s_train = app.add_subcommand("train", "train the GANs and the STN");
  add_common(s_train);
  s_train->add_option("--data", data, "pair manifest CSV")->required();

  auto* s_reg = app.add_subcommand("register", "warp a dataset with a checkpoint");
  add_common(s_reg);
  s_reg->add_option("--data", data)->required();
  s_reg->add_option("--checkpoint", checkpoint, "checkpoint directory");

  auto* s_eval = app.add_subcommand("evaluate", "registration quality report");
  add_common(s_eval);
  s_eval->add_option("--data", data)->required();

  auto* s_ves = app.add_subcommand("vessels", "extract thermal vessel maps");
  add_common(s_ves);
  s_ves->add_option("--a", in_a, "thermal image")->required();
  s_ves->add_option("--b", in_b, "second thermal image (enables PSNR table)");

  auto* s_diff = app.add_subcommand("diffmap", "red/blue difference overlay");
  add_common(s_diff);
  s_diff->add_option("--a", in_a, "visible image")->required();
  s_diff->add_option("--b", in_b, "thermal image")->required();

  auto* s_synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(s_synth);
  s_synth->add_option("--n", n, "number of pairs");
  s_synth->add_option("--size", size, "image size");

  CLI11_PARSE(app, argc, argv);

  try {
    AppConfig cfg = load_config(config_path, overrides);
    if (seed_set) cfg.train.seed = seed;
    if (s_synth->parsed()) return cmd_synth(out_dir, n, cfg.train.seed, size);
    if (s_train->parsed()) return cmd_train(cfg, data, out_dir);
    if (s_reg->parsed()) return cmd_register(cfg, data, checkpoint, out_dir);
    if (s_eval->parsed()) return cmd_evaluate(cfg, data, out_dir);
    if (s_ves->parsed()) return cmd_vessels(cfg, in_a, in_b, out_dir);
    if (s_diff->parsed())
      return cmd_diffmap(cfg, in_a, in_b,
                         (std::filesystem::path(out_dir) / "diffmap.png")
                             .string());
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
