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

#ifndef SONOLOC__DSP_HPP_
#define SONOLOC__DSP_HPP_

#include <Eigen/Core>

#include <vector>

namespace sonoloc::dsp
{

/// One-sided short-time spectrum, bins x frames.
struct ComplexSpectrogram
{
  Eigen::MatrixXcd values;
  int n_fft = 0;
  int hop = 0;
  double fs = 0;

  int bins() const { return static_cast<int>(values.rows()); }
  int frames() const { return static_cast<int>(values.cols()); }
};

inline int stft_frame_count(int samples, int n_fft, int hop) { return (samples - n_fft) / hop + 1; }

Eigen::VectorXd hann_window(int n);

/// Hann-windowed STFT; throws std::invalid_argument when the signal is shorter than one frame.
ComplexSpectrogram stft(const Eigen::Ref<const Eigen::VectorXd> & signal, int n_fft = 511, int hop = 78,
                        double fs = 21000.0);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// n_mels x bins triangular filterbank on the HTK mel scale spanning [0, fs / 2].
/// Each weight is the triangle integrated over the bin's frequency interval, so
/// narrow low-frequency filters still touch at least one bin; rows sum to one.
Eigen::MatrixXd mel_filterbank(int n_mels, int n_fft, double fs);

/// ln(mel power + 1e-10), n_mels x frames.
Eigen::MatrixXd log_mel(const ComplexSpectrogram & spec, int n_mels = 256);

/// Per-frame phase-transform cross-correlation, n_lags x frames. Row j holds
/// lag j - n_lags / 2; a positive lag means channel l lags channel k.
Eigen::MatrixXd gcc_phat(const ComplexSpectrogram & spec_k, const ComplexSpectrogram & spec_l, int n_lags = 256);

struct FeatureConfig
{
  int n_fft = 511;
  int hop = 78;
  double fs = 21000.0;
  int n_mels = 256;
  int n_lags = 256;
  int frames = 256;
};

/// channels x height x width, row-major.
struct InputFeatureTensor
{
  int channels = 0;
  int height = 0;
  int width = 0;
  Eigen::VectorXd data;

  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> channel(int c)
  {
    return {data.data() + static_cast<Eigen::Index>(c) * height * width, height, width};
  }
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> channel(int c) const
  {
    return {data.data() + static_cast<Eigen::Index>(c) * height * width, height, width};
  }
};

/// m + m (m - 1) / 2 for m microphones.
inline int feature_channel_count(int mics) { return mics + mics * (mics - 1) / 2; }

/// Centre-crops or zero-pads the time axis to `frames` columns.
Eigen::MatrixXd fit_frames(const Eigen::MatrixXd & map, int frames);

/// Stacks log-mel maps of every channel followed by GCC-PHAT maps of every
/// pair (k < l) in lexicographic order.
InputFeatureTensor build_input_feature(const Eigen::MatrixXd & audio, const FeatureConfig & cfg);

/// Median over frames of the per-frame argmax lag.
int median_peak_lag(const Eigen::MatrixXd & gcc);

}  // namespace sonoloc::dsp

#endif  // SONOLOC__DSP_HPP_
