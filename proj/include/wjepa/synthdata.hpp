// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "wjepa/io.hpp"
#include "wjepa/rng.hpp"

namespace wjepa {

using cplx = std::complex<double>;

// Fixed waveform set, ids 0..6. Linear classes use root-raised-cosine pulse
// shaping; FSK2 is phase-continuous, TONE is a single complex exponential.
enum WaveformId {
  kBPSK = 0,
  kQPSK,
  kPSK8,
  kQAM16,
  kQAM64,
  kFSK2,
  kTONE,
  kNumWaveforms
};

const std::vector<std::string>& waveform_names();

// Unit-average-power constellation for a linear modulation class.
const std::vector<cplx>& constellation(int waveform);

// Root-raised-cosine taps, `span` symbols each side, normalized so that an
// i.i.d. unit-power symbol stream keeps unit average power after shaping.
std::vector<double> rrc_taps(int sps, double rolloff, int span = 8);

// Random data symbols prior to pulse shaping (linear classes only).
std::vector<cplx> draw_symbols(int waveform, int count, Rng& rng);

// Steady-state modulated baseband of exactly n_samples, average power ~1.
std::vector<cplx> modulate(int waveform, int n_samples, Rng& rng, int sps = 4,
                           double rolloff = 0.35);

// Half-wavelength ULA: antenna n receives x * exp(j pi n sin(aoa)).
std::vector<std::vector<cplx>> apply_steering(const std::vector<cplx>& baseband,
                                              double aoa_deg, int antennas);

struct ChannelConfig {
  double snr_db_min = 0.0, snr_db_max = 20.0;
  double cfo_max = 1e-4;  // fraction of the sample rate, drawn in [-max, max]
  int antennas = 4;
  bool noise = true;
};

// Common random phase and common CFO rotation (inter-antenna phase is
// preserved), then i.i.d. complex AWGN per antenna at the drawn SNR.
void apply_channel(std::vector<std::vector<cplx>>& signal,
                   const ChannelConfig& cfg, Rng& rng);

struct SyntheticDatasetSpec {
  int waveforms = kNumWaveforms;
  int aoa_classes = 19;
  int replicas = 10;  // samples per (waveform x AoA) cell
  int window = 256;
  int antennas = 4;
  int sps = 4;
  double rolloff = 0.35;
  ChannelConfig channel;
  double train_fraction = 0.8;
  uint64_t seed = 1;
};

// Class centers inset by half a step so the ULA endfire directions
// (+-90 deg, which alias to the same steering vector) are never labels.
double aoa_class_angle(int k, int num_classes);
std::vector<std::string> aoa_class_names(int num_classes);

// One labeled, unit-max-normalized window for a (waveform, AoA) cell.
IQSample synth_sample(const SyntheticDatasetSpec& spec, int waveform,
                      int aoa_class, Rng& rng);

struct DatasetPair {
  Dataset train, test;
};

// Deterministic corpus: replicas are split into train/test by index, and
// every cell derives its own seed stream from spec.seed.
DatasetPair build_dataset(const SyntheticDatasetSpec& spec);

}  // namespace wjepa
