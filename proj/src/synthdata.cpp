// SPDX-License-Identifier: Apache-2.0
#include "wjepa/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "wjepa/errors.hpp"
#include "wjepa/parallel.hpp"

namespace wjepa {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kToneFreq = 1.0 / 16.0;  // cycles per sample
}  // namespace

const std::vector<std::string>& waveform_names() {
  static const std::vector<std::string> names = {"BPSK", "QPSK",  "PSK8", "QAM16",
                                                 "QAM64", "FSK2", "TONE"};
  return names;
}

const std::vector<cplx>& constellation(int waveform) {
  static const std::vector<std::vector<cplx>> tables = [] {
    std::vector<std::vector<cplx>> t(kNumWaveforms);
    t[kBPSK] = {{1, 0}, {-1, 0}};
    const double s2 = 1.0 / std::sqrt(2.0);
    t[kQPSK] = {{s2, s2}, {-s2, s2}, {-s2, -s2}, {s2, -s2}};
    for (int k = 0; k < 8; ++k)
      t[kPSK8].push_back(std::polar(1.0, 2.0 * kPi * k / 8.0));
    auto qam = [](int levels) {
      std::vector<cplx> pts;
      double power = 0.0;
      for (int i = 0; i < levels; ++i)
        for (int q = 0; q < levels; ++q) {
          const double re = 2.0 * i - (levels - 1);
          const double im = 2.0 * q - (levels - 1);
          pts.push_back({re, im});
          power += re * re + im * im;
        }
      const double scale = 1.0 / std::sqrt(power / pts.size());
      for (auto& p : pts) p *= scale;
      return pts;
    };
    t[kQAM16] = qam(4);
    t[kQAM64] = qam(8);
    return t;
  }();
  if (waveform < 0 || waveform >= kNumWaveforms)
    throw std::invalid_argument("unknown waveform id");
  if (tables[waveform].empty())
    throw std::invalid_argument(waveform_names()[waveform] +
                                " has no linear constellation");
  return tables[waveform];
}

std::vector<double> rrc_taps(int sps, double rolloff, int span) {
  const int half = span * sps;
  std::vector<double> h(2 * half + 1);
  const double b = rolloff;
  for (int i = -half; i <= half; ++i) {
    const double t = static_cast<double>(i) / sps;
    double v;
    if (i == 0) {
      v = 1.0 - b + 4.0 * b / kPi;
    } else if (b > 0.0 && std::abs(std::abs(t) - 1.0 / (4.0 * b)) < 1e-9) {
      v = (b / std::sqrt(2.0)) *
          ((1.0 + 2.0 / kPi) * std::sin(kPi / (4.0 * b)) +
           (1.0 - 2.0 / kPi) * std::cos(kPi / (4.0 * b)));
    } else {
      const double num =
          std::sin(kPi * t * (1.0 - b)) + 4.0 * b * t * std::cos(kPi * t * (1.0 + b));
      const double den = kPi * t * (1.0 - 16.0 * b * b * t * t);
      v = num / den;
    }
    h[i + half] = v;
  }
  // With zero-stuffed unit-power symbols the output power is sum(h^2)/sps.
  double e = 0.0;
  for (double v : h) e += v * v;
  const double scale = std::sqrt(static_cast<double>(sps) / e);
  for (double& v : h) v *= scale;
  return h;
}

std::vector<cplx> draw_symbols(int waveform, int count, Rng& rng) {
  if (waveform == kFSK2) {
    std::vector<cplx> s(count);
    for (auto& v : s) v = rng.uniform_int(2) == 0 ? cplx(1, 0) : cplx(-1, 0);
    return s;
  }
  if (waveform == kTONE)
    throw std::invalid_argument("TONE has no data symbols");
  const auto& table = constellation(waveform);
  std::vector<cplx> s(count);
  for (auto& v : s) v = table[rng.uniform_int(static_cast<int>(table.size()))];
  return s;
}

std::vector<cplx> modulate(int waveform, int n_samples, Rng& rng, int sps,
                           double rolloff) {
  if (n_samples < sps)
    throw std::invalid_argument("modulate: need at least one symbol period");

  if (waveform == kTONE) {
    std::vector<cplx> x(n_samples);
    const double phi0 = rng.uniform(0.0, 2.0 * kPi);
    for (int t = 0; t < n_samples; ++t)
      x[t] = std::polar(1.0, phi0 + 2.0 * kPi * kToneFreq * t);
    return x;
  }

  if (waveform == kFSK2) {
    // Phase-continuous binary FSK, deviation 1/(2*sps) cycles per sample.
    const int nsym = (n_samples + sps - 1) / sps;
    const auto bits = draw_symbols(waveform, nsym, rng);
    std::vector<cplx> x(n_samples);
    double phase = rng.uniform(0.0, 2.0 * kPi);
    const double dev = kPi / sps;
    for (int t = 0; t < n_samples; ++t) {
      phase += dev * bits[t / sps].real();
      x[t] = std::polar(1.0, phase);
    }
    return x;
  }

  const int span = 8;
  const auto taps = rrc_taps(sps, rolloff, span);
  const int half = span * sps;
  // enough symbols that [2*half, 2*half + n) is fully inside steady state
  const int nsym = (n_samples + 2 * half) / sps + 2;
  const auto syms = draw_symbols(waveform, nsym, rng);

  std::vector<cplx> x(n_samples);
  for (int t = 0; t < n_samples; ++t) {
    // y[u] = sum_k s_k taps[u - k*sps], evaluated past the filter warmup
    const int u = t + 2 * half;
    cplx acc = 0.0;
    const int kmin = std::max(0, (u - 2 * half + sps - 1) / sps);
    const int kmax = std::min(nsym - 1, u / sps);
    for (int k = kmin; k <= kmax; ++k) {
      const int idx = u - k * sps;  // in [0, 2*half]
      acc += syms[k] * taps[idx];
    }
    x[t] = acc;
  }
  return x;
}

std::vector<std::vector<cplx>> apply_steering(const std::vector<cplx>& baseband,
                                              double aoa_deg, int antennas) {
  if (std::abs(aoa_deg) > 90.0)
    throw std::invalid_argument("|aoa| must be <= 90 degrees");
  std::vector<std::vector<cplx>> out(antennas);
  const double s = std::sin(aoa_deg * kPi / 180.0);
  for (int a = 0; a < antennas; ++a) {
    const cplx phase = std::polar(1.0, kPi * a * s);
    out[a].resize(baseband.size());
    for (size_t t = 0; t < baseband.size(); ++t) out[a][t] = baseband[t] * phase;
  }
  return out;
}

void apply_channel(std::vector<std::vector<cplx>>& signal,
                   const ChannelConfig& cfg, Rng& rng) {
  if (signal.empty()) return;
  const size_t n = signal[0].size();

  const double phi0 = rng.uniform(0.0, 2.0 * kPi);
  const double cfo = cfg.cfo_max == 0.0 ? 0.0 : rng.uniform(-cfg.cfo_max, cfg.cfo_max);
  const double snr_db = rng.uniform(cfg.snr_db_min, cfg.snr_db_max);

  for (auto& ant : signal)
    for (size_t t = 0; t < n; ++t)
      ant[t] *= std::polar(1.0, phi0 + 2.0 * kPi * cfo * static_cast<double>(t));

  if (!cfg.noise) return;

  double power = 0.0;
  size_t count = 0;
  for (const auto& ant : signal) {
    for (const cplx& v : ant) power += std::norm(v);
    count += ant.size();
  }
  power /= static_cast<double>(count);
  const double nvar = power / std::pow(10.0, snr_db / 10.0);
  const double sigma = std::sqrt(nvar / 2.0);
  for (auto& ant : signal)
    for (auto& v : ant) v += cplx(sigma * rng.normal(), sigma * rng.normal());
}

double aoa_class_angle(int k, int num_classes) {
  if (k < 0 || k >= num_classes) throw std::invalid_argument("bad AoA class");
  return -90.0 + (k + 0.5) * 180.0 / num_classes;
}

std::vector<std::string> aoa_class_names(int num_classes) {
  std::vector<std::string> names(num_classes);
  char buf[32];
  for (int k = 0; k < num_classes; ++k) {
    std::snprintf(buf, sizeof(buf), "%.2fdeg", aoa_class_angle(k, num_classes));
    names[k] = buf;
  }
  return names;
}

IQSample synth_sample(const SyntheticDatasetSpec& spec, int waveform,
                      int aoa_class, Rng& rng) {
  auto baseband = modulate(waveform, spec.window, rng, spec.sps, spec.rolloff);
  auto sig = apply_steering(baseband, aoa_class_angle(aoa_class, spec.aoa_classes),
                            spec.antennas);
  ChannelConfig ch = spec.channel;
  ch.antennas = spec.antennas;
  apply_channel(sig, ch, rng);

  IQSample s;
  s.x = Tensor4<float>(1, kIQChannels, spec.antennas, spec.window);
  for (int a = 0; a < spec.antennas; ++a)
    for (int t = 0; t < spec.window; ++t) {
      s.x.at(0, 0, a, t) = static_cast<float>(sig[a][t].real());
      s.x.at(0, 1, a, t) = static_cast<float>(sig[a][t].imag());
    }
  unit_max_normalize_inplace(s.x);
  s.mod_label = waveform;
  s.aoa_label = aoa_class;
  return s;
}

DatasetPair build_dataset(const SyntheticDatasetSpec& spec) {
  if (spec.waveforms < 1 || spec.waveforms > kNumWaveforms)
    throw ConfigError("waveforms must be in [1, 7]");
  if (spec.aoa_classes < 1) throw ConfigError("aoa_classes must be >= 1");
  if (spec.replicas < 1) throw ConfigError("replicas must be >= 1");
  if (spec.train_fraction < 0.0 || spec.train_fraction > 1.0)
    throw ConfigError("train_fraction must be in [0,1]");

  const int cells = spec.waveforms * spec.aoa_classes;
  const int total = cells * spec.replicas;
  const int train_per_cell =
      static_cast<int>(std::lround(spec.train_fraction * spec.replicas));

  std::vector<IQSample> all(total);
  parallel_for(total, [&](int idx) {
    const int replica = idx % spec.replicas;
    const int cell = idx / spec.replicas;
    const int aoa = cell % spec.aoa_classes;
    const int wf = cell / spec.aoa_classes;
    Rng rng(derive_seed(spec.seed, static_cast<uint64_t>(idx)));
    all[idx] = synth_sample(spec, wf, aoa, rng);
    (void)replica;
  });

  DatasetPair out;
  for (Dataset* d : {&out.train, &out.test}) {
    d->antennas = spec.antennas;
    d->window = spec.window;
    d->mod_names.assign(waveform_names().begin(),
                        waveform_names().begin() + spec.waveforms);
    d->aoa_names = aoa_class_names(spec.aoa_classes);
  }
  for (int idx = 0; idx < total; ++idx) {
    const int replica = idx % spec.replicas;
    (replica < train_per_cell ? out.train : out.test)
        .samples.push_back(std::move(all[idx]));
  }
  return out;
}

}  // namespace wjepa
