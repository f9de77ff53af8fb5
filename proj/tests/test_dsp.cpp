/*
 * Copyright 2026 The sonoloc Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "sonoloc/dsp.hpp"

#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>

using namespace sonoloc::dsp;

namespace
{
Eigen::VectorXd noise(int n, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::VectorXd x(n);
  for (int i = 0; i < n; ++i) x[i] = g(rng);
  return x;
}

Eigen::VectorXd delayed(const Eigen::VectorXd & x, int d)
{
  Eigen::VectorXd y = Eigen::VectorXd::Zero(x.size());
  y.tail(x.size() - d) = x.head(x.size() - d);
  return y;
}
}  // namespace

TEST_CASE("stft shapes and zero input")
{
  CHECK(stft_frame_count(21000, 511, 78) == 263);
  const ComplexSpectrogram s = stft(Eigen::VectorXd::Zero(21000));
  CHECK(s.bins() == 256);
  CHECK(s.frames() == 263);
  CHECK(s.values.isZero());
  CHECK_THROWS_AS(stft(Eigen::VectorXd::Zero(100)), std::invalid_argument);
}

TEST_CASE("bin-centred sinusoid concentrates its energy")
{
  const int bin = 40;
  const double f = bin * 21000.0 / 511;
  Eigen::VectorXd x(4000);
  for (int i = 0; i < x.size(); ++i) x[i] = std::sin(2 * std::numbers::pi * f * i / 21000.0);
  const Eigen::MatrixXd p = stft(x).values.cwiseAbs2();
  for (Eigen::Index t = 0; t < p.cols(); ++t) {
    CHECK(p.col(t).segment(bin - 1, 3).sum() >= 0.95 * p.col(t).sum());
  }
}

TEST_CASE("mel filterbank rows are non-empty triangles")
{
  const Eigen::MatrixXd fb = mel_filterbank(256, 511, 21000);
  for (Eigen::Index m = 0; m < fb.rows(); ++m) {
    CHECK(fb.row(m).sum() > 0);
    CHECK(fb.row(m).minCoeff() >= 0);
    // Support is one contiguous run of bins.
    Eigen::Index first = -1;
    Eigen::Index last = -1;
    for (Eigen::Index b = 0; b < fb.cols(); ++b) {
      if (fb(m, b) > 0) {
        if (first < 0) first = b;
        last = b;
      }
    }
    for (Eigen::Index b = first; b <= last; ++b) CHECK(fb(m, b) > 0);
  }
  CHECK(hz_to_mel(mel_to_hz(1234.5)) == doctest::Approx(1234.5));
}

TEST_CASE("log-mel floor and amplitude scaling")
{
  const Eigen::MatrixXd zero = log_mel(stft(Eigen::VectorXd::Zero(2000)), 64);
  CHECK((zero.array() - std::log(1e-10)).abs().maxCoeff() < 1e-12);

  const Eigen::VectorXd x = noise(4000, 3);
  const Eigen::MatrixXd a = log_mel(stft(x), 256);
  const Eigen::MatrixXd b = log_mel(stft(2 * x), 256);
  CHECK(((b - a).array() - std::log(4.0)).abs().maxCoeff() < 1e-6);
}

TEST_CASE("gcc-phat")
{
  const Eigen::VectorXd x = noise(6000, 5);
  const ComplexSpectrogram k = stft(x);

  SUBCASE("autocorrelation peaks at zero")
  {
    const Eigen::MatrixXd g = gcc_phat(k, k, 256);
    for (Eigen::Index t = 0; t < g.cols(); ++t) {
      Eigen::Index idx = 0;
      g.col(t).maxCoeff(&idx);
      CHECK(idx == 128);
    }
  }

  SUBCASE("delay of five samples")
  {
    const ComplexSpectrogram l = stft(delayed(x, 5));
    const Eigen::MatrixXd g = gcc_phat(k, l, 256);
    CHECK(median_peak_lag(g) == 5);
    CHECK(g.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
  }

  SUBCASE("antisymmetry")
  {
    const ComplexSpectrogram l = stft(noise(6000, 6));
    const Eigen::MatrixXd kl = gcc_phat(k, l, 256);
    const Eigen::MatrixXd lk = gcc_phat(l, k, 256);
    // Row j holds lag j - 128; lag -128 has no mirror in the window.
    for (int j = 1; j < 256; ++j) CHECK((kl.row(j) - lk.row(256 - j)).cwiseAbs().maxCoeff() < 1e-9);
  }

  SUBCASE("zero frames stay finite")
  {
    const ComplexSpectrogram z = stft(Eigen::VectorXd::Zero(2000));
    CHECK(gcc_phat(z, z, 64).allFinite());
  }
}

TEST_CASE("input feature tensor")
{
  Eigen::MatrixXd audio(4, 21000);
  for (int c = 0; c < 4; ++c) audio.row(c) = noise(21000, 10 + c).transpose();
  const InputFeatureTensor f = build_input_feature(audio, {});
  CHECK(f.channels == 10);
  CHECK(f.height == 256);
  CHECK(f.width == 256);
  CHECK(f.data.allFinite());
  for (int c = 4; c < 10; ++c) CHECK(f.channel(c).cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
  CHECK(f.data == build_input_feature(audio, {}).data);

  // Channel 4 is the (0, 1) pair.
  const Eigen::MatrixXd g01 =
    fit_frames(gcc_phat(stft(audio.row(0).transpose()), stft(audio.row(1).transpose()), 256), 256);
  CHECK(f.channel(4) == g01);

  Eigen::MatrixXd six(6, 3000);
  for (int c = 0; c < 6; ++c) six.row(c) = noise(3000, 20 + c).transpose();
  CHECK(build_input_feature(six, {511, 78, 21000, 64, 64, 64}).channels == 21);
}

TEST_CASE("joint delay by one hop shifts log-mel columns")
{
  const Eigen::VectorXd x = noise(6000, 8);
  const Eigen::MatrixXd a = log_mel(stft(x), 64);
  const Eigen::MatrixXd b = log_mel(stft(delayed(x, 78)), 64);
  CHECK((b.rightCols(b.cols() - 1) - a.leftCols(a.cols() - 1)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("fit_frames crops the centre and pads symmetrically")
{
  Eigen::MatrixXd m(1, 6);
  m << 0, 1, 2, 3, 4, 5;
  CHECK(fit_frames(m, 4) == (Eigen::MatrixXd(1, 4) << 1, 2, 3, 4).finished());
  CHECK(fit_frames(m, 8) == (Eigen::MatrixXd(1, 8) << 0, 0, 1, 2, 3, 4, 5, 0).finished());
}
