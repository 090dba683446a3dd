#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "hqsvc/metrics.hpp"
#include "hqsvc/pipeline.hpp"

using namespace hqsvc;

namespace {

AudioBuffer make_noise(std::uint64_t seed, int sr, double dur, float amp) {
  AudioBuffer b;
  b.sample_rate = sr;
  b.samples.resize(static_cast<std::size_t>(sr * dur));
  Rng rng(seed, 0);
  for (auto& s : b.samples)
    s = static_cast<float>(rng.uniform(-amp, amp));
  return b;
}

AudioBuffer make_vibrato(double f0, double depth, double rate_hz, int sr,
                         double dur) {
  AudioBuffer b;
  b.sample_rate = sr;
  const int n = static_cast<int>(sr * dur);
  b.samples.resize(n);
  double phase = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    const double f = f0 * (1.0 + depth * std::sin(kTwoPi * rate_hz * t));
    phase += kTwoPi * f / sr;
    b.samples[i] = static_cast<float>(0.5 * std::sin(phase));
  }
  return b;
}

AudioBuffer scale_audio(AudioBuffer b, float g) {
  for (auto& s : b.samples) s *= g;
  return b;
}

// Zeroes rfft bins [k0, k1) of the leading power-of-two stretch.
AudioBuffer zero_band(const AudioBuffer& in, int nfft, int k0, int k1) {
  AudioBuffer out = in;
  std::vector<float> head(in.samples.begin(), in.samples.begin() + nfft);
  auto spec = rfft(head);
  for (int k = k0; k < k1 && k < static_cast<int>(spec.size()); ++k)
    spec[k] = {0.0f, 0.0f};
  const auto back = irfft(spec, nfft);
  std::copy(back.begin(), back.end(), out.samples.begin());
  out.samples.resize(nfft);
  return out;
}

}  // namespace

TEST_CASE("f0 rmse") {
  SECTION("identical contours score zero") {
    const std::vector<float> c = {100.0f, 150.0f, 200.0f, 0.0f, 250.0f};
    REQUIRE(f0_rmse(c, c) == 0.0);
  }
  SECTION("constant offset is returned directly") {
    const std::vector<float> ref = {100.0f, 150.0f, 200.0f, 250.0f};
    std::vector<float> hyp = ref;
    for (auto& v : hyp) v += 5.0f;
    REQUIRE(f0_rmse(ref, hyp) == Catch::Approx(5.0).margin(1e-9));
    REQUIRE(f0_rmse(hyp, ref) == Catch::Approx(5.0).margin(1e-9));
  }
  SECTION("two-frame arithmetic") {
    REQUIRE(f0_rmse({100.0f, 200.0f}, {103.0f, 196.0f}) ==
            Catch::Approx(std::sqrt(12.5)).margin(1e-9));
  }
  SECTION("unvoiced frames are excluded") {
    const std::vector<float> ref = {100.0f, 0.0f, 200.0f, 300.0f};
    const std::vector<float> hyp = {110.0f, 500.0f, 0.0f, 302.0f};
    REQUIRE(f0_rmse(ref, hyp) ==
            Catch::Approx(std::sqrt((100.0 + 4.0) / 2.0)).margin(1e-9));
  }
  SECTION("length mismatch compares the overlapping prefix") {
    const std::vector<float> ref(9, 200.0f);
    const std::vector<float> hyp(5, 205.0f);
    REQUIRE(f0_rmse(ref, hyp) == Catch::Approx(5.0).margin(1e-6));
  }
  SECTION("no mutually voiced frames is an error") {
    REQUIRE_THROWS_AS(f0_rmse({100.0f, 0.0f}, {0.0f, 100.0f}), Error);
    REQUIRE_THROWS_AS(f0_rmse({}, {100.0f}), Error);
  }
}

TEST_CASE("pitch correlation") {
  const std::vector<float> ref = {100.0f, 120.0f, 140.0f, 160.0f, 130.0f};

  SECTION("self correlation is one") {
    REQUIRE(fpc(ref, ref).value() == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("positive affine maps keep correlation at one") {
    std::vector<float> hyp;
    for (float v : ref) hyp.push_back(1.7f * v + 10.0f);
    REQUIRE(fpc(ref, hyp).value() == Catch::Approx(1.0).margin(1e-9));
  }
  SECTION("negation flips the sign") {
    std::vector<float> hyp;
    for (float v : ref) hyp.push_back(500.0f - v);
    REQUIRE(fpc(ref, hyp).value() == Catch::Approx(-1.0).margin(1e-9));
  }
  SECTION("degenerate contours report absent") {
    REQUIRE(!fpc({200.0f, 200.0f, 200.0f}, {100.0f, 150.0f, 120.0f}));
    REQUIRE(!fpc({200.0f, 0.0f, 0.0f}, {100.0f, 0.0f, 0.0f}));
  }
}

TEST_CASE("log spectral distance") {
  const auto ref = make_noise(900, 44100, 1.0, 0.4);

  SECTION("identical audio scores zero") {
    REQUIRE(lsd(ref, ref) == 0.0);
  }
  SECTION("a 20 dB gain moves every bin log power by two") {
    const auto hyp = scale_audio(ref, 10.0f);
    REQUIRE(lsd(ref, hyp) == Catch::Approx(2.0).margin(1e-3));
    REQUIRE(lsd(hyp, ref) == Catch::Approx(lsd(ref, hyp)).margin(1e-12));
  }
  SECTION("zeroed bands raise the distance with their width") {
    const auto base = zero_band(ref, 32768, 0, 0);
    const auto narrow = zero_band(ref, 32768, 3000, 3300);
    const auto wide = zero_band(ref, 32768, 3000, 4500);
    const double d_narrow = lsd(base, narrow);
    const double d_wide = lsd(base, wide);
    INFO("narrow " << d_narrow << " wide " << d_wide);
    REQUIRE(d_narrow > 0.05);
    REQUIRE(d_wide > d_narrow);
  }
  SECTION("incompatible inputs are rejected") {
    AudioBuffer other = ref;
    other.sample_rate = 16000;
    REQUIRE_THROWS_AS(lsd(ref, other), Error);
    AudioBuffer tiny{std::vector<float>(100, 0.1f), 44100};
    REQUIRE_THROWS_AS(lsd(tiny, tiny), Error);
  }
}

TEST_CASE("intelligibility score") {
  const auto ref = make_noise(901, 10000, 1.2, 0.4);

  SECTION("self comparison is near one") {
    REQUIRE(stoi_like(ref, ref).value() >= 0.99);
  }
  SECTION("uniform gain is normalized away") {
    REQUIRE(stoi_like(ref, scale_audio(ref, 0.5f)).value() >= 0.99);
  }
  SECTION("unrelated noise scores low") {
    const auto hyp = make_noise(902, 10000, 1.2, 0.4);
    const double v = stoi_like(ref, hyp).value();
    INFO("noise-vs-noise " << v);
    REQUIRE(v <= 0.3);
  }
  SECTION("too-short input reports absent") {
    const auto blip = make_noise(903, 10000, 0.2, 0.4);
    REQUIRE(!stoi_like(blip, blip));
  }
}

TEST_CASE("embedding cosine") {
  const std::vector<float> a = {1.0f, 2.0f, -3.0f, 0.5f};

  SECTION("aligned, opposed, orthogonal") {
    std::vector<float> neg;
    for (float v : a) neg.push_back(-v);
    REQUIRE(embed_cos(a, a) == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(embed_cos(a, neg) == Catch::Approx(-1.0).margin(1e-12));
    REQUIRE(embed_cos({1.0f, 0.0f}, {0.0f, 3.0f}) ==
            Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("scale invariance") {
    std::vector<float> twice;
    for (float v : a) twice.push_back(2.0f * v);
    REQUIRE(embed_cos(a, twice) == Catch::Approx(1.0).margin(1e-9));
  }
  SECTION("degenerate vectors are rejected") {
    REQUIRE_THROWS_AS(embed_cos(a, {1.0f, 2.0f}), Error);
    REQUIRE_THROWS_AS(embed_cos({0.0f, 0.0f}, {1.0f, 1.0f}), Error);
    REQUIRE_THROWS_AS(embed_cos({}, {}), Error);
  }
}

TEST_CASE("report formatting") {
  SECTION("absent metrics print as absent") {
    REQUIRE(format_metric(std::nullopt) == "absent");
    REQUIRE(format_metric(1.23456) == "1.2346");
  }
  SECTION("header names the similarity substitute") {
    const auto h = report_header();
    REQUIRE(h.find("cosine") != std::string::npos);
    REQUIRE(h.find("f0_rmse") != std::string::npos);
  }
  SECTION("means skip absent entries") {
    EvalReport a, b, c;
    a.lsd = 1.0;
    b.lsd = 3.0;
    std::vector<EvalReport> rows = {a, b, c};
    REQUIRE(mean_metric(rows, &EvalReport::lsd).value() ==
            Catch::Approx(2.0));
    REQUIRE(!mean_metric(rows, &EvalReport::stoi));
  }
  SECTION("report carries one line per pair plus a mean line") {
    EvalReport a;
    a.f0_rmse = 4.0;
    const auto text = format_eval_report({"p0", "p1"}, {a, a});
    REQUIRE(text.find("p0 4.0000") != std::string::npos);
    REQUIRE(text.find("p1 4.0000") != std::string::npos);
    REQUIRE(text.find("mean 4.0000") != std::string::npos);
    REQUIRE_THROWS_AS(format_eval_report({"p0"}, {a, a}), Error);
  }
}

TEST_CASE("pairs manifest") {
  SECTION("comments and blanks are skipped") {
    const char* path = "pairs_ok.txt";
    {
      std::ofstream f(path);
      f << "# comment\n\nref0.wav hyp0.wav\nref1.wav hyp1.wav\n";
    }
    const auto pairs = load_pairs(path);
    REQUIRE(pairs.size() == 2);
    REQUIRE(pairs[0].ref_path == "ref0.wav");
    REQUIRE(pairs[0].hyp_path == "hyp0.wav");
    REQUIRE(pairs[1].ref_path == "ref1.wav");
    std::remove(path);
  }
  SECTION("malformed lines and missing files are errors") {
    const char* path = "pairs_bad.txt";
    {
      std::ofstream f(path);
      f << "only_one_token\n";
    }
    REQUIRE_THROWS_AS(load_pairs(path), Error);
    std::remove(path);
    REQUIRE_THROWS_AS(load_pairs("no_such_pairs.txt"), Error);
  }
}

TEST_CASE("pair evaluation") {
  auto ref = make_vibrato(220.0, 0.05, 3.0, 44100, 3.0);
  {
    Rng rng(904, 0);
    for (auto& s : ref.samples)
      s += static_cast<float>(rng.uniform(-0.01, 0.01));
  }

  SECTION("self evaluation hits the metric fixed points") {
    const auto r = evaluate_pair<float>(nullptr, ref, ref);
    REQUIRE(r.f0_rmse.value() == 0.0);
    REQUIRE(r.fpc.value() == Catch::Approx(1.0).margin(1e-6));
    REQUIRE(r.lsd.value() == 0.0);
    REQUIRE(r.stoi.value() >= 0.99);
    REQUIRE(!r.embed_cos);
    REQUIRE(!r.rtf);
  }
  SECTION("a resampled copy keeps the pitch contour") {
    const auto hyp = resample(ref, 16000);
    const auto r = evaluate_pair<float>(nullptr, ref, hyp);
    REQUIRE(r.f0_rmse.value() < 10.0);
    REQUIRE(r.fpc.value() > 0.9);
    REQUIRE(r.lsd.value() > 0.0);
    REQUIRE(std::isfinite(r.lsd.value()));
  }
}
