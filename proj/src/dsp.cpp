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

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>

namespace sonoloc::dsp
{

namespace
{
constexpr double kLogFloor = 1e-10;
constexpr double kWhiteningGuard = 1e-12;

// Integral of a piecewise-linear function over [a, b], split at the given breakpoints.
template <typename F>
double integrate_piecewise_linear(F f, double a, double b, const double (&breaks)[3])
{
  if (!(b > a)) return 0.0;
  double pts[5] = {a, b, 0, 0, 0};
  int n = 2;
  for (double br : breaks) {
    if (br > a && br < b) pts[n++] = br;
  }
  std::sort(pts, pts + n);
  double total = 0.0;
  for (int i = 0; i + 1 < n; ++i) total += 0.5 * (f(pts[i]) + f(pts[i + 1])) * (pts[i + 1] - pts[i]);
  return total;
}
}  // namespace

Eigen::VectorXd hann_window(int n)
{
  // Periodic Hann, as used for spectral analysis.
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

ComplexSpectrogram stft(const Eigen::Ref<const Eigen::VectorXd> & signal, int n_fft, int hop, double fs)
{
  if (n_fft < 2 || hop < 1) throw std::invalid_argument("stft: invalid frame parameters");
  if (signal.size() < n_fft) throw std::invalid_argument("stft: signal shorter than n_fft");
  const int frames = stft_frame_count(static_cast<int>(signal.size()), n_fft, hop);
  const int bins = n_fft / 2 + 1;
  const Eigen::VectorXd window = hann_window(n_fft);

  ComplexSpectrogram out;
  out.n_fft = n_fft;
  out.hop = hop;
  out.fs = fs;
  out.values.resize(bins, frames);

  Eigen::FFT<double> fft;
  std::vector<double> frame(static_cast<std::size_t>(n_fft));
  std::vector<std::complex<double>> spectrum;
  for (int t = 0; t < frames; ++t) {
    for (int i = 0; i < n_fft; ++i) frame[i] = signal[static_cast<Eigen::Index>(t) * hop + i] * window[i];
    fft.fwd(spectrum, frame);
    for (int b = 0; b < bins; ++b) out.values(b, t) = spectrum[b];
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Eigen::MatrixXd mel_filterbank(int n_mels, int n_fft, double fs)
{
  const int bins = n_fft / 2 + 1;
  if (n_mels < 1 || n_mels > bins) throw std::invalid_argument("mel_filterbank: n_mels must lie in [1, bins]");
  const double nyquist = fs / 2;
  const double df = fs / n_fft;
  const double mel_max = hz_to_mel(nyquist);

  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) edges[i] = mel_to_hz(mel_max * i / (n_mels + 1));

  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mels, bins);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m];
    const double mid = edges[m + 1];
    const double hi = edges[m + 2];
    const auto tri = [&](double f) {
      if (f <= lo || f >= hi) return 0.0;
      return f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    };
    const double breaks[3] = {lo, mid, hi};
    for (int b = 0; b < bins; ++b) {
      const double a = std::max(0.0, (b - 0.5) * df);
      const double z = std::min(nyquist, (b + 0.5) * df);
      fb(m, b) = integrate_piecewise_linear(tri, std::max(a, lo), std::min(z, hi), breaks);
    }
    const double total = fb.row(m).sum();
    if (total > 0) fb.row(m) /= total;
  }
  return fb;
}

Eigen::MatrixXd log_mel(const ComplexSpectrogram & spec, int n_mels)
{
  const Eigen::MatrixXd fb = mel_filterbank(n_mels, spec.n_fft, spec.fs);
  const Eigen::MatrixXd power = spec.values.cwiseAbs2();
  return (fb * power).array().unaryExpr([](double x) { return std::log(x + kLogFloor); });
}

Eigen::MatrixXd gcc_phat(const ComplexSpectrogram & spec_k, const ComplexSpectrogram & spec_l, int n_lags)
{
  if (spec_k.values.rows() != spec_l.values.rows() || spec_k.values.cols() != spec_l.values.cols() ||
      spec_k.n_fft != spec_l.n_fft) {
    throw std::invalid_argument("gcc_phat: spectrogram shapes differ");
  }
  const int n = spec_k.n_fft;
  if (n_lags < 2 || n_lags > n) throw std::invalid_argument("gcc_phat: n_lags must lie in [2, n_fft]");
  const int bins = spec_k.bins();
  const int half = n_lags / 2;

  Eigen::MatrixXd out(n_lags, spec_k.frames());
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> full(static_cast<std::size_t>(n));
  std::vector<std::complex<double>> corr;
  for (int t = 0; t < spec_k.frames(); ++t) {
    // conj(K) L whitened; its inverse transform peaks at the delay of l relative to k.
    for (int b = 0; b < bins; ++b) {
      const std::complex<double> x = std::conj(spec_k.values(b, t)) * spec_l.values(b, t);
      full[b] = x / (std::abs(x) + kWhiteningGuard);
    }
    for (int b = bins; b < n; ++b) full[b] = std::conj(full[n - b]);
    fft.inv(corr, full);
    for (int j = 0; j < n_lags; ++j) {
      const int lag = j - half;
      out(j, t) = corr[static_cast<std::size_t>(((lag % n) + n) % n)].real();
    }
  }
  return out;
}

Eigen::MatrixXd fit_frames(const Eigen::MatrixXd & map, int frames)
{
  const auto have = static_cast<int>(map.cols());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(map.rows(), frames);
  if (have >= frames) {
    out = map.middleCols((have - frames) / 2, frames);
  } else {
    out.middleCols((frames - have) / 2, have) = map;
  }
  return out;
}

InputFeatureTensor build_input_feature(const Eigen::MatrixXd & audio, const FeatureConfig & cfg)
{
  if (cfg.n_mels != cfg.n_lags) throw std::invalid_argument("build_input_feature: n_mels must equal n_lags");
  const int mics = static_cast<int>(audio.rows());
  if (mics < 2) throw std::invalid_argument("build_input_feature: need at least two channels");

  std::vector<ComplexSpectrogram> specs;
  specs.reserve(static_cast<std::size_t>(mics));
  for (int m = 0; m < mics; ++m) {
    const Eigen::VectorXd channel = audio.row(m).transpose();
    specs.push_back(stft(channel, cfg.n_fft, cfg.hop, cfg.fs));
  }

  InputFeatureTensor out;
  out.channels = feature_channel_count(mics);
  out.height = cfg.n_mels;
  out.width = cfg.frames;
  out.data.resize(static_cast<Eigen::Index>(out.channels) * out.height * out.width);
  int c = 0;
  for (int m = 0; m < mics; ++m) out.channel(c++) = fit_frames(log_mel(specs[m], cfg.n_mels), cfg.frames);
  for (int k = 0; k < mics; ++k) {
    for (int l = k + 1; l < mics; ++l) {
      out.channel(c++) = fit_frames(gcc_phat(specs[k], specs[l], cfg.n_lags), cfg.frames);
    }
  }
  return out;
}

int median_peak_lag(const Eigen::MatrixXd & gcc)
{
  std::vector<int> peaks;
  peaks.reserve(static_cast<std::size_t>(gcc.cols()));
  const auto half = static_cast<int>(gcc.rows() / 2);
  for (Eigen::Index t = 0; t < gcc.cols(); ++t) {
    Eigen::Index idx = 0;
    gcc.col(t).maxCoeff(&idx);
    peaks.push_back(static_cast<int>(idx) - half);
  }
  std::nth_element(peaks.begin(), peaks.begin() + static_cast<std::ptrdiff_t>(peaks.size() / 2), peaks.end());
  return peaks[peaks.size() / 2];
}

}  // namespace sonoloc::dsp
