#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "mrigen/checkpoint.hpp"
#include "mrigen/denoiser.hpp"
#include "mrigen/schedule.hpp"

using namespace mrigen;

namespace {

TokenSeq example_tokens() { return tokenize("3T brain MRI, slice 2, T2 contrast"); }

template <class S>
std::vector<NoisedSample<S>> make_batch(const DenoiserConfig& cfg, int n, std::uint64_t seed) {
  Rng rng(seed);
  const NoiseSchedule sched = make_schedule(50);
  std::vector<NoisedSample<S>> batch;
  const Eigen::Index npix = static_cast<Eigen::Index>(cfg.image_size) * cfg.image_size;
  const std::vector<std::string> prompts = {
      "3T brain MRI, slice 2, T2 contrast",
      "0.3T brain MRI, slice 7, FLAIR contrast",
      "sks1 0.3T brain MRI, slice 12, T1 contrast",
  };
  for (int i = 0; i < n; ++i) {
    NoisedSample<S> s;
    s.tokens = tokenize(prompts[static_cast<std::size_t>(i) % prompts.size()]);
    s.t = rng.uniform_int(1, sched.T);
    Mat<S> x0(1, npix);
    s.eps.resize(1, npix);
    for (Eigen::Index k = 0; k < npix; ++k) {
      x0(0, k) = static_cast<S>(rng.uniform(-1.0, 1.0));
      s.eps(0, k) = static_cast<S>(rng.normal());
    }
    s.x_t = q_sample(x0, s.t, s.eps, sched);
    batch.push_back(std::move(s));
  }
  return batch;
}

}  // namespace

TEST_CASE("tokenize maps the prompt grammar onto the closed vocabulary") {
  const auto& vocab = Vocabulary::instance();
  const TokenSeq seq = example_tokens();
  CHECK(vocab.token(seq.ids[0]) == "3T");
  CHECK(vocab.token(seq.ids[1]) == "brain");
  CHECK(vocab.token(seq.ids[2]) == "MRI");
  CHECK(vocab.token(seq.ids[3]) == "slice");
  CHECK(vocab.token(seq.ids[4]) == "2");
  CHECK(vocab.token(seq.ids[5]) == "T2");
  CHECK(vocab.token(seq.ids[6]) == "contrast");
  CHECK(seq.ids[7] == kPadToken);
}

TEST_CASE("tokenize: empty prompt is the unconditional sequence") {
  const TokenSeq seq = tokenize("");
  CHECK(seq.ids[0] == kNullToken);
  for (int i = 1; i < kTokenSeqLen; ++i) CHECK(seq.ids[static_cast<std::size_t>(i)] == kPadToken);
  CHECK(seq == null_tokens());
}

TEST_CASE("tokenize names the unknown word") {
  CHECK_THROWS_WITH_AS(tokenize("xyz scan"), doctest::Contains("xyz"), DataError);
}

TEST_CASE("embed_text: all-pad sequence repeats the pad row; single-token edits are local") {
  const DenoiserConfig cfg = DenoiserConfig::reduced();
  const auto params = init_denoiser<double>(cfg, 5);
  TokenSeq pads;
  pads.ids.fill(kPadToken);
  const Mat<double> e = embed_text(pads, params);
  for (int i = 0; i < kTokenSeqLen; ++i) {
    CHECK((e.row(i) - params.token_emb.row(kPadToken)).cwiseAbs().maxCoeff() == 0.0);
  }
  TokenSeq a = example_tokens();
  TokenSeq b = a;
  b.ids[4] = Vocabulary::instance().id("9");
  const Mat<double> ea = embed_text(a, params);
  const Mat<double> eb = embed_text(b, params);
  for (int i = 0; i < kTokenSeqLen; ++i) {
    const bool differs = (ea.row(i) - eb.row(i)).cwiseAbs().maxCoeff() > 0;
    CHECK(differs == (i == 4));
  }
}

TEST_CASE("sinusoidal time embedding: t=0 pattern, squared norm, distinctness over 0..1000") {
  const int d = 64;
  const Eigen::VectorXd e0 = sinusoidal_time_embedding(0, d);
  for (int k = 0; k < d / 2; ++k) {
    CHECK(e0(2 * k) == 0.0);
    CHECK(e0(2 * k + 1) == 1.0);
  }
  for (int t : {1, 17, 999}) {
    const Eigen::VectorXd e = sinusoidal_time_embedding(t, d);
    CHECK(e.squaredNorm() == doctest::Approx(d / 2.0).epsilon(1e-12));
  }
  std::set<std::pair<double, double>> seen;  // (first sin, first cos) identifies t at omega_0 = 1
  for (int t = 0; t <= 1000; ++t) {
    const Eigen::VectorXd e = sinusoidal_time_embedding(t, d);
    CHECK(seen.insert({e(0), e(1)}).second);
  }
}

TEST_CASE("cross attention: zero W_Q gives uniform rows; rows always sum to 1; zero W_O is identity") {
  const int C = 6, N = 10, dt = 8, da = 8;
  Rng rng(3);
  auto randm = [&rng](int r, int c) {
    Mat<double> m(r, c);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
    }
    return m;
  };
  CrossAttn<double> attn{randm(C, da), randm(dt, da), randm(dt, da), randm(da, C)};
  const Mat<double> x = randm(C, N);
  const Mat<double> text = randm(kTokenSeqLen, dt);

  AttnCache<double> cache;
  cross_attn_forward(attn, x, text, cache);
  for (Eigen::Index r = 0; r < cache.attn.rows(); ++r) {
    CHECK(cache.attn.row(r).sum() == doctest::Approx(1.0).epsilon(1e-6));
  }

  CrossAttn<double> no_q = attn;
  no_q.wq.setZero();
  cross_attn_forward(no_q, x, text, cache);
  for (Eigen::Index r = 0; r < cache.attn.rows(); ++r) {
    for (Eigen::Index c = 0; c < cache.attn.cols(); ++c) {
      CHECK(cache.attn(r, c) == doctest::Approx(1.0 / kTokenSeqLen).epsilon(1e-12));
    }
  }

  CrossAttn<double> no_o = attn;
  no_o.wo.setZero();
  const Mat<double> out = cross_attn_forward(no_o, x, text, cache);
  CHECK((out - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("unet_forward preserves shape and is bit-deterministic") {
  for (const DenoiserConfig cfg : {DenoiserConfig{}, DenoiserConfig::reduced()}) {
    const auto params = init_denoiser<float>(cfg, 11, /*zero_out_conv=*/false);
    const Eigen::Index npix = static_cast<Eigen::Index>(cfg.image_size) * cfg.image_size;
    Rng rng(4);
    Mat<float> x(1, npix);
    for (Eigen::Index i = 0; i < npix; ++i) x(0, i) = static_cast<float>(rng.normal());
    const auto a = unet_forward(params, x, example_tokens(), 13);
    const auto b = unet_forward(params, x, example_tokens(), 13);
    CHECK(a.rows() == 1);
    CHECK(a.cols() == npix);
    CHECK(a == b);
  }
}

TEST_CASE("unet with zero-init output conv predicts exactly zero") {
  const DenoiserConfig cfg = DenoiserConfig::reduced();
  const auto params = init_denoiser<float>(cfg, 2);  // default: zero output conv
  const Eigen::Index npix = static_cast<Eigen::Index>(cfg.image_size) * cfg.image_size;
  Mat<float> x = Mat<float>::Ones(1, npix);
  const auto out = unet_forward(params, x, example_tokens(), 7);
  CHECK(out.cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("all-zero weights with random biases produce a spatially constant output") {
  const DenoiserConfig cfg = DenoiserConfig::reduced();
  auto params = make_zero_params<double>(cfg);
  Rng rng(9);
  params.for_each_tensor([&rng](const std::string& name, Mat<double>& m) {
    const bool is_bias = name.size() >= 2 && (name.ends_with(".b") || name.ends_with("beta"));
    if (is_bias) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    }
  });
  const Eigen::Index npix = static_cast<Eigen::Index>(cfg.image_size) * cfg.image_size;
  Mat<double> x(1, npix);
  for (Eigen::Index i = 0; i < npix; ++i) x(0, i) = rng.normal();
  const auto out = unet_forward(params, x, example_tokens(), 3);
  CHECK(out.maxCoeff() == out.minCoeff());
}

TEST_CASE("changing the prompt changes the output") {
  const DenoiserConfig cfg = DenoiserConfig::reduced();
  const auto params = init_denoiser<float>(cfg, 21, /*zero_out_conv=*/false);
  const Eigen::Index npix = static_cast<Eigen::Index>(cfg.image_size) * cfg.image_size;
  Rng rng(5);
  Mat<float> x(1, npix);
  for (Eigen::Index i = 0; i < npix; ++i) x(0, i) = static_cast<float>(rng.normal());
  const auto a = unet_forward(params, x, tokenize("0.3T brain MRI, slice 5, T1 contrast"), 10);
  const auto b = unet_forward(params, x, tokenize("3T brain MRI, slice 5, T2 contrast"), 10);
  CHECK((a - b).cwiseAbs().maxCoeff() > 0.0f);
}

TEST_CASE("parameter counts are stable for the fixed manifests") {
  // stem 160; down1 {res 5744, attn 3072, ds 2320}; down2 {16608, 4096, 9248};
  // mid {20704, 4096, 20704}; up2 {13792, 3072}; up1 {8608, 3072};
  // out {32 + 145}; token table 33*32 = 1056; time MLP 8320.
  const auto full = make_zero_params<float>(DenoiserConfig{});
  CHECK(full.parameter_count() == 124849);
  const auto reduced = make_zero_params<float>(DenoiserConfig::reduced());
  CHECK(reduced.parameter_count() == 8317);
}

TEST_CASE("gradient check: double precision under 1e-6") {
  const DenoiserConfig cfg = DenoiserConfig::reduced();
  const auto params = init_denoiser<double>(cfg, 31, /*zero_out_conv=*/false);
  const auto batch = make_batch<double>(cfg, 2, 77);
  const double err = check_gradients<double>(params, batch, 220, 123);
  CHECK(err < 1e-6);
}

TEST_CASE("gradient check: single precision under 1e-3") {
  const DenoiserConfig cfg = DenoiserConfig::reduced();
  const auto params = init_denoiser<float>(cfg, 31, /*zero_out_conv=*/false);
  const auto batch = make_batch<float>(cfg, 2, 77);
  const double err = check_gradients<float>(params, batch, 220, 123);
  CHECK(err < 1e-3);
}

TEST_CASE("zero-loss batch yields zero gradients") {
  const DenoiserConfig cfg = DenoiserConfig::reduced();
  const auto params = init_denoiser<double>(cfg, 6);  // zero output conv => eps_pred == 0
  auto batch = make_batch<double>(cfg, 2, 50);
  for (auto& s : batch) s.eps.setZero();  // target equals the prediction by construction
  auto grads = make_zero_params<double>(cfg);
  const double loss = den_loss<double>(params, batch, &grads);
  CHECK(loss == 0.0);
  double max_abs = 0.0;
  grads.for_each_tensor([&max_abs](const std::string&, const Mat<double>& m) {
    if (m.size() > 0) max_abs = std::max(max_abs, m.cwiseAbs().maxCoeff());
  });
  CHECK(max_abs == 0.0);
}

TEST_CASE("embedding gradients are sparse: only tokens in the batch get updates") {
  const DenoiserConfig cfg = DenoiserConfig::reduced();
  const auto params = init_denoiser<double>(cfg, 8, /*zero_out_conv=*/false);
  auto batch = make_batch<double>(cfg, 1, 99);
  batch[0].tokens = example_tokens();
  auto grads = make_zero_params<double>(cfg);
  den_loss<double>(params, batch, &grads);
  std::set<int> present(batch[0].tokens.ids.begin(), batch[0].tokens.ids.end());
  for (int id = 0; id < cfg.vocab_size; ++id) {
    const double g = grads.token_emb.row(id).cwiseAbs().maxCoeff();
    if (present.count(id)) {
      CHECK(g > 0.0);
    } else {
      CHECK(g == 0.0);
    }
  }
}

TEST_CASE("checkpoint round-trip and manifest-hash rejection") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "mrigen_ckpt_test";
  fs::remove_all(dir);
  fs::create_directories(dir);

  const DenoiserConfig cfg = DenoiserConfig::reduced();
  auto params = init_denoiser<float>(cfg, 77, /*zero_out_conv=*/false);
  params.trained_steps = 1234;
  const fs::path file = dir / "model.bin";
  save_checkpoint(file, params);

  const CheckpointInfo info = peek_checkpoint(file);
  CHECK(info.dtype == 0);
  CHECK(info.trained_steps == 1234);
  CHECK(info.cfg == cfg);

  const auto loaded = load_checkpoint<float>(file);
  CHECK(loaded.trained_steps == 1234);
  auto orig_t = collect_tensors(std::as_const(params));
  auto load_t = collect_tensors(std::as_const(loaded));
  for (std::size_t i = 0; i < orig_t.size(); ++i) CHECK(*orig_t[i] == *load_t[i]);

  CHECK_THROWS_AS(load_checkpoint<double>(file), DataError);  // dtype mismatch

  // corrupt the stored manifest hash
  std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(12);
  char byte = 0x5A;
  f.write(&byte, 1);
  f.close();
  CHECK_THROWS_WITH_AS(load_checkpoint<float>(file), doctest::Contains("hash"), DataError);
}
