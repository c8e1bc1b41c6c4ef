#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mrigen/phantom.hpp"
#include "mrigen/sampler.hpp"
#include "mrigen/schedule.hpp"
#include "mrigen/train.hpp"

using namespace mrigen;

namespace {

std::vector<TrainItem> phantom_items(int size, int per_class, std::uint64_t seed) {
  std::vector<TrainItem> items;
  int k = 0;
  for (const Modality m : {Modality::T1, Modality::T2, Modality::Flair}) {
    for (int i = 0; i < per_class; ++i) {
      PhantomSpec spec;
      spec.meta = {FieldStrength::Low, m, 1 + i % kMaxSliceIndex, "s"};
      spec.size = size;
      spec.seed = derive_seed(seed, static_cast<std::uint64_t>(k++));
      items.push_back(TrainItem{generate_phantom(spec).data, tokenize(build_prompt(spec.meta))});
    }
  }
  return items;
}

template <class S>
bool params_equal(const DenoiserParams<S>& a, const DenoiserParams<S>& b) {
  auto ta = collect_tensors(std::as_const(a));
  auto tb = collect_tensors(std::as_const(b));
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (*ta[i] != *tb[i]) return false;
  }
  return true;
}

double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("make_schedule hand-checked products") {
  const NoiseSchedule s1 = make_schedule(1, 0.5, 0.5);
  CHECK(s1.alpha_bar(0) == doctest::Approx(0.5).epsilon(1e-15));

  const NoiseSchedule s2 = make_schedule(2, 0.5, 0.5);
  CHECK(s2.alpha_bar(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s2.alpha_bar(1) == doctest::Approx(0.25).epsilon(1e-15));

  const NoiseSchedule def = make_schedule();
  CHECK(def.T == 1000);
  CHECK(def.beta(0) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(def.beta(999) == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(def.alpha_bar(999) < 0.01);

  for (int t = 1; t < def.T; ++t) CHECK(def.alpha_bar(t) < def.alpha_bar(t - 1));

  CHECK_THROWS_AS(make_schedule(0, 1e-4, 0.02), DataError);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), DataError);
  CHECK_THROWS_AS(make_schedule(10, 0.03, 0.02), DataError);
  CHECK_THROWS_AS(make_schedule(10, 1e-4, 1.0), DataError);
}

TEST_CASE("q_sample noise-free and terminal limits") {
  const NoiseSchedule sched = make_schedule();
  Mat<double> x0(1, 16);
  Rng rng(2);
  for (int i = 0; i < 16; ++i) x0(0, i) = rng.uniform(-1.0, 1.0);
  const Mat<double> zero = Mat<double>::Zero(1, 16);
  const Mat<double> xt = q_sample(x0, 400, zero, sched);
  const double sab = std::sqrt(sched.alpha_bar_at(400));
  CHECK((xt - sab * x0).cwiseAbs().maxCoeff() < 1e-12);

  Mat<double> eps(1, 16);
  for (int i = 0; i < 16; ++i) eps(0, i) = rng.normal();
  const Mat<double> xT = q_sample(x0, sched.T, eps, sched);
  CHECK((xT - eps).cwiseAbs().maxCoeff() < 0.1 * x0.cwiseAbs().maxCoeff());

  CHECK_THROWS_AS(q_sample(x0, 0, eps, sched), DataError);
  CHECK_THROWS_AS(q_sample(x0, sched.T + 1, eps, sched), DataError);
  Mat<double> bad(1, 4);
  bad.setZero();
  CHECK_THROWS_AS(q_sample(x0, 5, bad, sched), DataError);
}

TEST_CASE("q_sample empirical moments match the closed-form marginal") {
  // Monte-Carlo oracle: per-pixel mean ~ sqrt(abar)*x0, var ~ 1-abar.
  const NoiseSchedule sched = make_schedule(50);
  const int n = 10000;
  Mat<double> x0(1, 16);
  Rng xr(7);
  for (int i = 0; i < 16; ++i) x0(0, i) = xr.uniform(-1.0, 1.0);
  Rng rng(1234);
  for (const int t : {1, 25, 50}) {
    const double ab = sched.alpha_bar_at(t);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(16);
    Eigen::VectorXd sum2 = Eigen::VectorXd::Zero(16);
    Mat<double> eps(1, 16);
    for (int k = 0; k < n; ++k) {
      for (int i = 0; i < 16; ++i) eps(0, i) = rng.normal();
      const Mat<double> xt = q_sample(x0, t, eps, sched);
      for (int i = 0; i < 16; ++i) {
        sum(i) += xt(0, i);
        sum2(i) += xt(0, i) * xt(0, i);
      }
    }
    const double se_mean = std::sqrt((1.0 - ab) / n);
    const double se_var = (1.0 - ab) * std::sqrt(2.0 / (n - 1));
    for (int i = 0; i < 16; ++i) {
      const double mean = sum(i) / n;
      const double var = sum2(i) / n - mean * mean;
      CHECK(std::abs(mean - std::sqrt(ab) * x0(0, i)) < 3.0 * se_mean + 1e-12);
      CHECK(std::abs(var - (1.0 - ab)) < 3.0 * se_var + 1e-12);
    }
  }
}

TEST_CASE("training_loss on the zero-output net estimates E[eps^2] = 1") {
  const DenoiserConfig cfg = DenoiserConfig::reduced();
  const auto params = init_denoiser<double>(cfg, 3);  // zero output conv => eps_pred == 0
  const auto items = phantom_items(cfg.image_size, 16, 5);
  const NoiseSchedule sched = make_schedule(50);
  Rng rng(99);
  double total = 0.0;
  const int reps = 3;
  for (int r = 0; r < reps; ++r) {
    total += static_cast<double>(training_loss<double>(params, items, sched, rng, 0.1, nullptr));
  }
  CHECK(total / reps == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("training_loss is deterministic given the rng seed") {
  const DenoiserConfig cfg = DenoiserConfig::reduced();
  const auto params = init_denoiser<float>(cfg, 13, /*zero_out_conv=*/false);
  const auto items = phantom_items(cfg.image_size, 4, 6);
  const NoiseSchedule sched = make_schedule(50);
  auto g1 = make_zero_params<float>(cfg);
  auto g2 = make_zero_params<float>(cfg);
  Rng r1(31), r2(31);
  const float l1 = training_loss<float>(params, items, sched, r1, 0.1, &g1);
  const float l2 = training_loss<float>(params, items, sched, r2, 0.1, &g2);
  CHECK(l1 == l2);
  CHECK(params_equal(g1, g2));
}

TEST_CASE("lr_at: constant keeps lr0; cosine endpoints and midpoint are exact") {
  TrainConfig cfg;
  cfg.learning_rate = 5e-6;
  cfg.max_steps = 400;
  cfg.lr_schedule = LrSchedule::Constant;
  CHECK(lr_at(0, cfg) == 5e-6);
  CHECK(lr_at(123, cfg) == 5e-6);
  CHECK(lr_at(400, cfg) == 5e-6);

  cfg.lr_schedule = LrSchedule::Cosine;
  cfg.learning_rate = 2e-3;
  CHECK(lr_at(0, cfg) == 2e-3);
  CHECK(lr_at(400, cfg) == 0.0);
  CHECK(lr_at(200, cfg) == 1e-3);
}

TEST_CASE("adamw_step: zero gradient leaves params unchanged without decay") {
  Mat<double> p(2, 2);
  p << 1.0, -2.0, 3.0, 0.5;
  const Mat<double> p0 = p;
  Mat<double> g = Mat<double>::Zero(2, 2);
  Mat<double> m = g, v = g;
  AdamWHyper h;
  h.weight_decay = 0.0;
  adamw_step(p, g, m, v, 1, 1e-3, h);
  CHECK(p == p0);
}

TEST_CASE("adamw_step: bias-corrected first step moves by about -lr*sign(g)") {
  Mat<double> p = Mat<double>::Zero(1, 3);
  Mat<double> g(1, 3);
  g << 0.5, -2.0, 1e-3;
  Mat<double> m = Mat<double>::Zero(1, 3), v = m;
  AdamWHyper h;
  h.weight_decay = 0.0;
  const double lr = 1e-2;
  adamw_step(p, g, m, v, 1, lr, h);
  // m_hat = g, v_hat = g^2 -> update = -lr * g/(|g| + eps)
  for (int i = 0; i < 3; ++i) {
    const double expected = -lr * g(0, i) / (std::abs(g(0, i)) + h.eps);
    CHECK(p(0, i) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("adamw_step: decay-only shrink factor is exact per step") {
  Mat<double> p(1, 2);
  p << 2.0, -4.0;
  Mat<double> g = Mat<double>::Zero(1, 2), m = g, v = g;
  AdamWHyper h;  // weight_decay 0.01
  const double lr = 0.05;
  Mat<double> expected = p;
  for (int k = 1; k <= 7; ++k) {
    adamw_step(p, g, m, v, k, lr, h);
    expected = expected * (1.0 - lr * h.weight_decay);
    CHECK(p(0, 0) == expected(0, 0));
    CHECK(p(0, 1) == expected(0, 1));
  }
}

TEST_CASE("gradient accumulation equals the large batch on a quadratic toy") {
  // L_i(theta) = 0.5 ||A_i theta - b_i||^2 over 4 items; the averaged gradient
  // computed by accumulation must match the single-batch gradient.
  Rng rng(17);
  const int d = 6;
  std::vector<Mat<double>> grads;
  Mat<double> theta(d, 1);
  for (int i = 0; i < d; ++i) theta(i, 0) = rng.normal();
  for (int item = 0; item < 4; ++item) {
    Mat<double> a(d, d), b(d, 1);
    for (int i = 0; i < d; ++i) {
      b(i, 0) = rng.normal();
      for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
    }
    grads.push_back(a.transpose() * (a * theta - b));
  }
  Mat<double> accum = Mat<double>::Zero(d, 1);
  for (const auto& g : grads) accum += g;
  accum /= 4.0;
  Mat<double> big = 0.25 * (grads[0] + grads[1] + grads[2] + grads[3]);

  Mat<double> p1 = theta, p2 = theta;
  Mat<double> m1 = Mat<double>::Zero(d, 1), v1 = m1, m2 = m1, v2 = m1;
  adamw_step(p1, accum, m1, v1, 1, 1e-3);
  adamw_step(p2, big, m2, v2, 1, 1e-3);
  CHECK(((p1 - p2).cwiseAbs().maxCoeff() / p1.cwiseAbs().maxCoeff()) < 1e-6);
}

TEST_CASE("train: zero steps returns params unchanged and an empty curve") {
  const DenoiserConfig cfg = DenoiserConfig::reduced();
  auto params = init_denoiser<float>(cfg, 1);
  const auto before = params;
  TrainConfig tc;
  tc.max_steps = 0;
  tc.seed = 9;
  const auto items = phantom_items(cfg.image_size, 2, 3);
  const auto result = train(std::move(params), items, make_schedule(50), tc);
  CHECK(result.curve.points.empty());
  CHECK(params_equal(result.params, before));
}

TEST_CASE("train: loss trends down on the phantom toy set") {
  const DenoiserConfig cfg = DenoiserConfig::reduced();
  auto params = init_denoiser<float>(cfg, 42);
  TrainConfig tc;
  tc.learning_rate = 2e-3;
  tc.max_steps = 150;
  tc.batch_size = 2;
  tc.seed = 11;
  tc.lr_schedule = LrSchedule::Cosine;
  const auto items = phantom_items(cfg.image_size, 12, 21);
  const auto result = train(std::move(params), items, make_schedule(50), tc);
  REQUIRE(result.curve.points.size() == 150);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 20; ++i) {
    head += result.curve.points[static_cast<std::size_t>(i)].second;
    tail += result.curve.points[static_cast<std::size_t>(130 + i)].second;
  }
  CHECK(tail < head);
  CHECK(result.params.trained_steps == 150);
}

TEST_CASE("train is bit-reproducible under a fixed seed") {
  const DenoiserConfig cfg = DenoiserConfig::reduced();
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.max_steps = 25;
  tc.seed = 77;
  const auto items = phantom_items(cfg.image_size, 4, 2);
  const auto r1 = train(init_denoiser<float>(cfg, 5), items, make_schedule(50), tc);
  const auto r2 = train(init_denoiser<float>(cfg, 5), items, make_schedule(50), tc);
  CHECK(params_equal(r1.params, r2.params));
  CHECK(r1.curve.points == r2.curve.points);
}

TEST_CASE("dreambooth: lambda 0 reduces exactly to train on identifier prompts") {
  const DenoiserConfig cfg = DenoiserConfig::reduced();
  const NoiseSchedule sched = make_schedule(50);
  // pre-train a few steps so trained_steps > 0
  TrainConfig pre;
  pre.max_steps = 5;
  pre.seed = 3;
  pre.learning_rate = 1e-3;
  const auto base = train(init_denoiser<float>(cfg, 8), phantom_items(cfg.image_size, 3, 4), sched, pre);

  std::vector<DatasetItem> instance;
  for (int i = 0; i < 3; ++i) {
    PhantomSpec spec;
    spec.meta = {FieldStrength::Low, Modality::T2, 9, "inst"};
    spec.size = cfg.image_size;
    spec.seed = 100 + static_cast<std::uint64_t>(i);
    instance.push_back({generate_phantom(spec), spec.meta});
  }

  TrainConfig tc;
  tc.learning_rate = 5e-6;  // the documented fine-tuning row
  tc.max_steps = 10;
  tc.batch_size = 1;
  tc.grad_accum_steps = 1;
  tc.lr_schedule = LrSchedule::Constant;
  tc.seed = 55;

  const auto db = train_dreambooth(base.params, instance, "sks0",
                                   "0.3T brain MRI, slice 9, T2 contrast", 0.0, sched, tc);

  std::vector<TrainItem> manual;
  for (const auto& item : instance) {
    manual.push_back(TrainItem{item.image.data, tokenize(build_prompt(item.meta, std::string("sks0")))});
  }
  TrainConfig plain = tc;
  plain.train_text_embedding = false;  // dreambooth freezes the table by default
  const auto ref = train(base.params, manual, sched, plain);
  CHECK(params_equal(db.params, ref.params));
}

TEST_CASE("dreambooth: validations and the lambda > 0 path") {
  const DenoiserConfig cfg = DenoiserConfig::reduced();
  const NoiseSchedule sched = make_schedule(50);
  TrainConfig tc;
  tc.max_steps = 2;
  tc.seed = 1;
  std::vector<DatasetItem> instance;
  PhantomSpec spec;
  spec.meta = {FieldStrength::Low, Modality::T2, 9, "inst"};
  spec.size = cfg.image_size;
  instance.push_back({generate_phantom(spec), spec.meta});

  auto fresh = init_denoiser<float>(cfg, 4);
  CHECK_THROWS_WITH_AS(
      train_dreambooth(fresh, instance, "sks0", "0.3T brain MRI, slice 9, T2 contrast", 1.0, sched, tc),
      doctest::Contains("pre-trained"), DataError);

  TrainConfig pre;
  pre.max_steps = 3;
  pre.seed = 3;
  const auto base = train(std::move(fresh), phantom_items(cfg.image_size, 2, 4), sched, pre);
  CHECK_THROWS_WITH_AS(
      train_dreambooth(base.params, instance, "dog", "0.3T brain MRI, slice 9, T2 contrast", 1.0, sched, tc),
      doctest::Contains("identifier"), DataError);

  const auto db = train_dreambooth(base.params, instance, "sks0",
                                   "0.3T brain MRI, slice 9, T2 contrast", 1.0, sched, tc);
  CHECK(db.params.all_finite());
  CHECK(db.curve.points.size() == 2);
  CHECK_FALSE(params_equal(db.params, base.params));
}

TEST_CASE("dreambooth accepts the documented fine-tuning row verbatim") {
  TrainConfig tc;
  tc.learning_rate = 5e-6;
  tc.max_steps = 400;
  tc.batch_size = 1;
  tc.grad_accum_steps = 1;
  tc.lr_schedule = LrSchedule::Constant;
  CHECK_NOTHROW(tc.validate());
  CHECK(lr_at(0, tc) == 5e-6);
  CHECK(lr_at(400, tc) == 5e-6);
}

TEST_CASE("sample_ddpm: fixed seed reproduces the image bit for bit") {
  const DenoiserConfig cfg = DenoiserConfig::reduced();
  const auto params = init_denoiser<float>(cfg, 19, /*zero_out_conv=*/false);
  const NoiseSchedule sched = make_schedule(50);
  const auto a = sample_ddpm(params, "0.3T brain MRI, slice 5, T1 contrast", sched, 7);
  const auto b = sample_ddpm(params, "0.3T brain MRI, slice 5, T1 contrast", sched, 7);
  CHECK(a.data == b.data);
}

TEST_CASE("sample_ddpm with a zero net equals the direct noise recursion") {
  const DenoiserConfig cfg = DenoiserConfig::reduced();
  const auto params = init_denoiser<float>(cfg, 2);  // eps_pred == 0
  const NoiseSchedule sched = make_schedule(50);
  const std::uint64_t seed = 99;
  const auto img = sample_ddpm(params, "0.3T brain MRI, slice 5, T1 contrast", sched, seed);

  // Oracle: simulate x <- x/sqrt(alpha_t) + sqrt(beta_t) z with the same stream.
  const int n = cfg.image_size * cfg.image_size;
  Rng rng(seed);
  Eigen::VectorXd x(n);
  for (int i = 0; i < n; ++i) x(i) = rng.normal();
  for (int t = sched.T; t >= 1; --t) {
    x /= std::sqrt(sched.alpha_at(t));
    if (t > 1) {
      const double s = std::sqrt(sched.beta_at(t));
      for (int i = 0; i < n; ++i) x(i) += s * rng.normal();
    }
  }
  for (int r = 0; r < cfg.image_size; ++r) {
    for (int c = 0; c < cfg.image_size; ++c) {
      const double expected = (std::clamp(static_cast<double>(static_cast<float>(x(r * cfg.image_size + c))), -1.0, 1.0) + 1.0) / 2.0;
      CHECK(img.data(r, c) == doctest::Approx(expected).epsilon(1e-6));
    }
  }
}

TEST_CASE("zero-net ddpm pixel histogram matches the clamped-Gaussian law") {
  // Variance recursion v <- v/alpha + beta gives the pre-clamp sigma; the
  // fraction of pixels clamped to exactly 0 or 1 follows 2*Phi(-1/sigma).
  const DenoiserConfig cfg = DenoiserConfig::reduced();
  const auto params = init_denoiser<float>(cfg, 2);
  const NoiseSchedule sched = make_schedule(50);
  double v = 1.0;
  for (int t = sched.T; t >= 1; --t) {
    v /= sched.alpha_at(t);
    if (t > 1) v += sched.beta_at(t);
  }
  const double sigma = std::sqrt(v);
  const double p_clamp = 2.0 * phi(-1.0 / sigma);

  long clamped = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto img = sample_ddpm(params, "0.3T brain MRI, slice 5, T1 contrast", sched, 1000 + seed);
    for (int r = 0; r < cfg.image_size; ++r) {
      for (int c = 0; c < cfg.image_size; ++c) {
        ++total;
        if (img.data(r, c) == 0.0f || img.data(r, c) == 1.0f) ++clamped;
      }
    }
  }
  const double observed = static_cast<double>(clamped) / static_cast<double>(total);
  const double se = std::sqrt(p_clamp * (1.0 - p_clamp) / static_cast<double>(total));
  CHECK(std::abs(observed - p_clamp) < 3.0 * se + 1e-9);
}

TEST_CASE("guidance off never evaluates the unconditional branch") {
  const DenoiserConfig cfg = DenoiserConfig::reduced();
  const auto params = init_denoiser<float>(cfg, 19, /*zero_out_conv=*/false);
  const NoiseSchedule sched = make_schedule(25);
  SampleStats stats;
  sample_ddpm(params, "0.3T brain MRI, slice 5, T1 contrast", sched, 7, 1.0, &stats);
  CHECK(stats.cond_evals == sched.T);
  CHECK(stats.uncond_evals == 0);

  SampleStats guided;
  sample_ddpm(params, "0.3T brain MRI, slice 5, T1 contrast", sched, 7, 2.0, &guided);
  CHECK(guided.uncond_evals == sched.T);
}

TEST_CASE("ddim timestep subsequence endpoints and full-step identity") {
  const auto full = ddim_timesteps(50, 50);
  REQUIRE(full.size() == 50);
  for (int i = 0; i < 50; ++i) CHECK(full[static_cast<std::size_t>(i)] == i + 1);
  const auto sub = ddim_timesteps(1000, 10);
  CHECK(sub.front() == 1);
  CHECK(sub.back() == 1000);
  CHECK(ddim_timesteps(1000, 1) == std::vector<int>{1000});
  CHECK_THROWS_AS(ddim_timesteps(10, 11), DataError);
}

TEST_CASE("ddim at full steps with eta 1 reproduces the ddpm variance table") {
  const NoiseSchedule sched = make_schedule(200);
  const Eigen::VectorXd sigma = ddim_sigma_table(sched, sched.T, 1.0);
  for (int t = 1; t <= sched.T; ++t) {
    CHECK(std::abs(sigma(t - 1) - std::sqrt(sched.beta_at(t))) < 1e-10);
  }
}

TEST_CASE("ddim: eta 0 is deterministic; eta bounds are enforced") {
  const DenoiserConfig cfg = DenoiserConfig::reduced();
  const auto params = init_denoiser<float>(cfg, 19, /*zero_out_conv=*/false);
  const NoiseSchedule sched = make_schedule(50);
  const auto a = sample_ddim(params, "3T brain MRI, slice 2, T2 contrast", sched, 10, 0.0, 5);
  const auto b = sample_ddim(params, "3T brain MRI, slice 2, T2 contrast", sched, 10, 0.0, 5);
  CHECK(a.data == b.data);
  CHECK_THROWS_AS(sample_ddim(params, "3T brain MRI, slice 2, T2 contrast", sched, 10, 1.5, 5), DataError);
}

TEST_CASE("loss curve serializes as step,loss csv") {
  namespace fs = std::filesystem;
  LossCurve curve;
  curve.points = {{1, 0.875}, {2, 0.5}};
  const fs::path file = fs::temp_directory_path() / "mrigen_loss_curve.csv";
  curve.to_csv(file);
  std::ifstream is(file);
  std::string line;
  std::getline(is, line);
  CHECK(line == "step,loss");
  std::getline(is, line);
  CHECK(line == "1,0.875");
}
