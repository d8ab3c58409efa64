#pragma once

// Signal preparation: rate reduction, standardization, windowing, noise
// injection, channel substitution, synthetic recordings and file I/O.
//
// The canonical model input rate is 100 Hz with one label per second, so
// every prepared channel is stored as an (epochs x 100) float matrix.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tsfuse/common.hpp"
#include "tsfuse/genome.hpp"
#include "tsfuse/rng.hpp"

namespace tsfuse {

constexpr int kModelRateHz = 100;
constexpr int kSamplesPerEpoch = 100;  // 1 s epochs at the model rate

// ---------------------------------------------------------------------------
// Low-pass decimation filter.
//
// Rate reduction by integer factor s low-pass filters with an order-8
// type-I Chebyshev (0.05 dB passband ripple, cutoff 0.8/s of Nyquist),
// applied causally, then keeps every s-th sample.

struct IirFilter {
  std::vector<double> b;  // numerator, b.size() == order + 1
  std::vector<double> a;  // denominator, a[0] == 1
};

// cutoff_norm is a fraction of Nyquist in (0, 1).
IirFilter design_cheby1_lowpass(int order, double ripple_db,
                                double cutoff_norm);

// |H(e^{j pi f})| in dB at normalized frequency f in [0, 1].
double filter_magnitude_db(const IirFilter& f, double freq_norm);

// Causal direct-form-II-transposed run over the signal.
std::vector<double> filter_forward(const IirFilter& f,
                                   std::span<const double> x);

// Keeps samples 0, s, 2s, ...; output length ceil(n/s).  factor == 1 is an
// exact identity (no filtering).  ConfigError on factor < 1 or >= n.
std::vector<double> decimate(std::span<const double> x, int factor);

// ---------------------------------------------------------------------------
// Standardization: zero mean, unit population standard deviation.
// A flat signal (std < 1e-12) cannot be scaled; it becomes all zeros and
// the return value flags it.

struct StandardizeResult {
  bool degenerate = false;
};

StandardizeResult standardize(std::vector<double>& x);

// ---------------------------------------------------------------------------
// Prepared recordings and epoch windows.

struct PreparedSubject {
  std::string id;
  std::vector<std::string> channel_names;          // size = slots
  std::vector<Eigen::MatrixXf> channel_epochs;     // each (epochs x 100)
  std::vector<std::uint8_t> degenerate_channels;   // flags, one per slot
  std::vector<std::uint8_t> labels;                // one per epoch, 0/1

  int num_epochs() const { return static_cast<int>(labels.size()); }
  int slot_of(const std::string& name) const;      // DataError if absent
};

// A window view over a prepared subject: one window per label, covering the
// time_steps epochs that end at the labeled epoch.  Windows that would
// reach before the recording start repeat epoch 0 in the missing slots.
struct SubjectWindows {
  std::shared_ptr<const PreparedSubject> subject;
  int time_steps = 0;

  int num_windows() const { return subject->num_epochs(); }
  // Epoch index feeding step t (0-based) of window w.
  int epoch_for_step(int w, int t) const {
    const int e = w - time_steps + 1 + t;
    return e < 0 ? 0 : e;
  }
};

SubjectWindows assemble_windows(std::shared_ptr<const PreparedSubject> s,
                                int time_steps);

// ---------------------------------------------------------------------------
// Test-time perturbations.

// Gaussian noise at the requested signal-to-noise ratio; noise variance is
// mean(x^2) / 10^(snr_db/10).  DataError on an all-zero signal.
void add_awgn(std::span<float> x, double snr_db, Rng& rng);

// Copy of the subject where every channel slot holds the data of
// source_slot[slot].  Identity mapping returns an equal subject.
PreparedSubject substitute_channels(const PreparedSubject& s,
                                    const std::vector<int>& source_slot);

/// Convenience: noisy copy of all channels at one SNR.
PreparedSubject with_awgn(const PreparedSubject& s, double snr_db, Rng& rng);

// ---------------------------------------------------------------------------
// Synthetic recordings.
//
// Background is band-limited noise; every labeled second of class 1 carries
// a low-frequency oscillatory burst visible on all channels, with a fresh
// per-run, per-channel gain so no single channel is sufficient on its own.

struct SynthParams {
  int duration_s = 1200;              // >= 120
  double prevalence = 0.129;          // target class-1 fraction, in (0,1)
  int sample_rate_hz = kModelRateHz;  // integer multiple of 100
  double burst_amplitude = 3.0;       // in background-sigma units
  double gain_lo = 0.35;              // per-run per-channel gain range
  double gain_hi = 1.0;
  double band_lo_hz = 0.5;            // burst frequency band
  double band_hi_hz = 4.0;
  double background_cutoff = 0.6;     // of Nyquist
  double white_level = 0.15;          // broadband floor mixed into background
  int run_lo_s = 2;                   // run-length draw range (runs stay
  int run_hi_s = 10;                  //   within the 2..60 s rule)
};

struct RawRecording {
  std::string subject_id;
  int sample_rate_hz = 0;
  std::vector<std::string> channel_names;
  std::vector<std::vector<float>> channel_data;
  std::vector<std::uint8_t> labels;  // one per second
};

// Deterministic in (params, seed).  Throws ConfigError on bad params.
RawRecording synth_recording(const std::string& subject_id,
                             const SynthParams& p, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Recording files.
//
// A subject is a manifest JSON naming raw little-endian float32 channel
// files and a labels text file (one '0'/'1' per line, one line per second).

void save_recording(const RawRecording& r, const std::string& dir);
RawRecording load_recording(const std::string& manifest_path);

// Decimate to 100 Hz (rate must be an integer multiple) and standardize
// each channel.  DataError on inconsistent lengths.
PreparedSubject prepare_subject(const RawRecording& r);

}  // namespace tsfuse
