#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "scalelaw/cli.hpp"

using namespace scalelaw;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "scalelaw");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("scalelaw_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// y = 0.1 + 2 x1^-0.4 + 3 x2^-0.6 on a 6 x 6 log grid.
fs::path write_cf_csv(const fs::path& dir) {
  const CfParams p{std::log(0.1), std::log(2.0), 0.4, std::log(3.0), 0.6};
  const auto ds = simulate_noiseless(FormSpec::cf(), p,
                                     product_grid({log_space(1, 1e4, 6), log_space(1, 1e4, 6)}),
                                     {"params", "tokens"}, "loss");
  const fs::path csv = dir / "cf.csv";
  std::ofstream f(csv);
  write_dataset(f, ds);
  return csv;
}

const std::vector<std::string> kSmall{"--n-grid", "0", "--s-grid", "0", "--lambda-grid", "0",
                                      "--seeds", "2", "--max-steps", "200", "--warmup-steps", "100"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  EXPECT_EQ(run({"fit", "--bogus"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"fit"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"fit", "--fixture", "no_such_fixture"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"predict", "--data", "x.csv"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"--help"}).code, cli::kExitOk);
}

TEST(Cli, MissingDataFile) {
  const Outcome r = run({"fit", "--data", "/nonexistent/scalelaw.csv"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("scalelaw:"), std::string::npos);
}

TEST(Cli, CfNeedsTwoInputs) {
  const fs::path dir = scratch("cf_arity");
  const Outcome r = run(with({"fit", "--fixture", "llm_trivariate", "--form", "cf", "--out", dir.string()}, kSmall));
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("cf"), std::string::npos);
}

TEST(Cli, BadSplitThreshold) {
  const fs::path dir = scratch("bad_split");
  const fs::path csv = write_cf_csv(dir);
  EXPECT_EQ(run(with({"fit", "--data", csv.string(), "--split-threshold", "nope=3"}, kSmall)).code,
            cli::kExitUsage);
  EXPECT_EQ(run(with({"fit", "--data", csv.string(), "--split-threshold", "params=-3"}, kSmall)).code,
            cli::kExitUsage);
}

TEST(Cli, FitWritesArtifactsDeterministically) {
  const fs::path dir = scratch("fit_det");
  const fs::path csv = write_cf_csv(dir);
  const auto args = with({"fit", "--data", csv.string(), "--form", "cf"}, kSmall);
  const Outcome a = run(with(args, {"--out", (dir / "a").string()}));
  const Outcome b = run(with(args, {"--out", (dir / "b").string()}));
  ASSERT_EQ(a.code, cli::kExitOk) << a.err;
  ASSERT_EQ(b.code, cli::kExitOk) << b.err;
  EXPECT_NE(a.out.find("test RMSLE"), std::string::npos);
  EXPECT_EQ(a.out, b.out);

  ASSERT_TRUE(fs::exists(dir / "a" / "fit.json"));
  ASSERT_TRUE(fs::exists(dir / "a" / "plot" / "index.tsv"));
  EXPECT_EQ(slurp(dir / "a" / "fit.json"), slurp(dir / "b" / "fit.json"));
  for (const auto& e : fs::directory_iterator(dir / "a" / "plot"))
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / "plot" / e.path().filename())) << e.path();

  const FitArtifact art = load_artifact(dir / "a" / "fit.json");
  EXPECT_EQ(art.spec.kind, FormKind::cf);
  EXPECT_EQ(art.dim_names, (std::vector<std::string>{"params", "tokens"}));
  EXPECT_EQ(art.metric_name, "loss");
  EXPECT_EQ(art.per_seed_train_loss.size(), 2u);
  EXPECT_LE(art.test.rmsle, 1e-3);
}

TEST(Cli, FixtureFitMatchesLibrary) {
  const fs::path dir = scratch("fixture_fit");
  const Outcome r = run({"fit", "--fixture", "imagenet_mix_b16", "--n-grid", "0", "--s-grid", "0",
                     "--lambda-grid", "0", "--seeds", "1", "--max-steps", "30", "--warmup-steps", "20",
                     "--out", dir.string()});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const FitArtifact art = load_artifact(dir / "fit.json");

  const Fixture f = load_fixture("imagenet_mix_b16");
  const Split sp = threshold_split(f.data, half_max_thresholds(f.data));
  FitConfig cfg;
  cfg.seeds = 1;
  cfg.max_steps = 30;
  cfg.budget.warmup_steps = 20;
  cfg.lambda = 0.0;
  const FormSpec spec = FormSpec::unsl(2, 0, 0, f.overfit, f.metric_upper_limit);
  const FitResult lib = fit_form(sp.train, spec, cfg);
  EXPECT_EQ(art.test.rmsle, score(lib.spec, lib.best_params, sp.test).rmsle);
  EXPECT_EQ(art.per_seed_train_loss, lib.per_seed_train_loss);
}

TEST(Cli, PredictAndMalformedArtifact) {
  const fs::path dir = scratch("predict");
  const fs::path csv = write_cf_csv(dir);
  ASSERT_EQ(run(with({"fit", "--data", csv.string(), "--form", "cf", "--out", dir.string()}, kSmall)).code,
            cli::kExitOk);
  const Outcome p = run({"predict", "--fit", (dir / "fit.json").string(), "--data", csv.string()});
  ASSERT_EQ(p.code, cli::kExitOk) << p.err;
  EXPECT_EQ(p.out.substr(0, p.out.find('\n')), "params\ttokens\tloss\ty_pred");
  EXPECT_EQ(std::count(p.out.begin(), p.out.end(), '\n'), 37);

  std::ofstream(dir / "broken.json") << "{\"format\": \"scalelaw-fit\", \"version\": 1}";
  std::ofstream(dir / "garbage.json") << "not json";
  EXPECT_EQ(run({"predict", "--fit", (dir / "broken.json").string(), "--data", csv.string()}).code,
            cli::kExitUsage);
  EXPECT_EQ(run({"predict", "--fit", (dir / "garbage.json").string(), "--data", csv.string()}).code,
            cli::kExitUsage);
  EXPECT_EQ(run({"predict", "--fit", (dir / "fit.json").string(), "--fixture", "llm_trivariate"}).code,
            cli::kExitUsage);
}

TEST(Cli, CompareOneForm) {
  const fs::path dir = scratch("compare");
  const fs::path csv = write_cf_csv(dir);
  const Outcome r = run(with({"compare", "--data", csv.string(), "--form", "cf", "--out", dir.string()}, kSmall));
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const std::string tsv = slurp(dir / "compare.tsv");
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 2);
  EXPECT_EQ(tsv.substr(tsv.find('\n') + 1, 3), "cf\t");
}

TEST(Cli, ComputeOptimalSymmetric) {
  const Outcome r = run({"compute-optimal", "--cf", "-2.3,0,0.4,0,0.4", "--C", "6e12", "--compute-dims", "x1,x2"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  std::istringstream in(r.out);
  std::string name, eq;
  double x1, x2;
  in >> name >> eq >> x1 >> name >> eq >> x2;
  EXPECT_NEAR(x1 / 1e6, 1.0, 1e-8);
  EXPECT_NEAR(x2 / 1e6, 1.0, 1e-8);
}

TEST(Cli, ComputeOptimalErrors) {
  EXPECT_EQ(run({"compute-optimal", "--C", "1e9", "--compute-dims", "x1,x2"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"compute-optimal", "--cf", "1,2", "--C", "1e9", "--compute-dims", "x1,x2"}).code,
            cli::kExitUsage);
  EXPECT_EQ(run({"compute-optimal", "--cf", "-2.3,0,0.4,0,0.4", "--C", "1e9", "--compute-dims", "x1,x9"}).code,
            cli::kExitUsage);
}

TEST(Cli, SimulateThenRefit) {
  const fs::path dir = scratch("simulate");
  const fs::path csv = dir / "sim.csv";
  const Outcome s = run({"simulate", "--cf", "-2.3,0.69,0.4,1.1,0.6", "--grid", "x1=1:1e4:8", "--grid",
                     "x2=1:1e4:8", "--out", csv.string()});
  ASSERT_EQ(s.code, cli::kExitOk) << s.err;
  const ScalingDataset ds = load_dataset(csv.string());
  EXPECT_EQ(ds.size(), 64u);
  const Outcome f = run(with({"fit", "--data", csv.string(), "--form", "cf", "--out", (dir / "fit").string()}, kSmall));
  ASSERT_EQ(f.code, cli::kExitOk) << f.err;
  EXPECT_LE(load_artifact(dir / "fit" / "fit.json").test.rmsle, 1e-3);

  EXPECT_EQ(run({"simulate", "--cf", "-2.3,0.69,0.4,1.1,0.6", "--grid", "x1=1:1e4:8"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"simulate", "--cf", "-2.3,0.69,0.4,1.1,0.6", "--grid", "x1=0:1e4:8", "--grid", "x2=1:2:2"}).code,
            cli::kExitUsage);
}

TEST(Io, ArtifactRoundTripIsExact) {
  const FormSpec spec = FormSpec::unsl(2, 1, 1, true, false);
  ParamSet p = make_param_set(spec);
  double v = 0.1234567890123456789;
  for (auto& [id, k] : p.kernels) {
    k.log_offset = v;
    v *= -1.7;
    for (auto& c : k.init_exponents) c = (v *= 1.3);
    for (auto& b : k.breaks) {
      for (auto& c : b.exponents) c = (v *= -0.9);
      b.log_location = 1.0 / 3.0;
      b.sharpness = -2.0 / 7.0;
    }
  }
  FitArtifact a;
  a.spec = spec;
  a.params = p;
  a.dim_names = {"a", "b"};
  a.per_seed_train_loss = {0.1, kInf};
  a.val = {kNaN, kNaN};
  a.stats.log_x_mean = {1.0 / 3.0, 2.0};
  a.stats.log_x_std = {1.0, 0.7};

  const std::string text = artifact_to_json(a).dump(2);
  const FitArtifact b = artifact_from_json(Json::parse(text));
  EXPECT_EQ(artifact_to_json(b).dump(2), text);
  const auto& q = std::get<ParamSet>(b.params);
  ASSERT_EQ(q.kernels.size(), p.kernels.size());
  for (const auto& [id, k] : p.kernels) {
    EXPECT_EQ(q.kernels.at(id).log_offset, k.log_offset);
    EXPECT_EQ(q.kernels.at(id).init_exponents, k.init_exponents);
    EXPECT_EQ(q.kernels.at(id).breaks[0].exponents, k.breaks[0].exponents);
  }
  ASSERT_EQ(q.limits.size(), p.limits.size());
  bool saw_inf = false;
  for (const auto& [role, l] : p.limits) {
    EXPECT_EQ(q.limits.at(role).kind, l.kind);
    EXPECT_EQ(q.limits.at(role).log_value, l.log_value);
    saw_inf = saw_inf || l.log_value == -kInf;
  }
  EXPECT_TRUE(saw_inf);
  EXPECT_TRUE(std::isinf(b.per_seed_train_loss[1]));
  EXPECT_TRUE(std::isnan(b.val.rmsle));
}
