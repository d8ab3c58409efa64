#include "tsfuse/signal.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace tsfuse {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Multiply polynomial (in z^-1) by (1 - r z^-1).
void poly_mul_root(std::vector<std::complex<double>>& poly,
                   std::complex<double> r) {
  poly.push_back({0.0, 0.0});
  for (std::size_t i = poly.size() - 1; i >= 1; --i) poly[i] -= r * poly[i - 1];
}

}  // namespace

IirFilter design_cheby1_lowpass(int order, double ripple_db,
                                double cutoff_norm) {
  if (order < 1) throw ConfigError("filter order must be >= 1");
  if (ripple_db <= 0.0) throw ConfigError("filter ripple must be > 0 dB");
  if (cutoff_norm <= 0.0 || cutoff_norm >= 1.0)
    throw ConfigError("filter cutoff must be inside (0, 1) of Nyquist");

  // Analog prototype poles for a unit ripple-edge frequency.
  const double eps = std::sqrt(std::pow(10.0, ripple_db / 10.0) - 1.0);
  const double mu = std::asinh(1.0 / eps) / order;
  const double sh = std::sinh(mu), ch = std::cosh(mu);

  // Pre-warp so the bilinear map puts the ripple edge exactly at the
  // requested digital frequency.
  const double warp = std::tan(kPi * cutoff_norm / 2.0);

  std::vector<std::complex<double>> zpoles;
  std::complex<double> pole_prod_1mz = 1.0;  // prod(1 - zp_k)
  for (int k = 1; k <= order; ++k) {
    const double theta = kPi * (2 * k - 1) / (2.0 * order);
    const std::complex<double> p(-sh * std::sin(theta), ch * std::cos(theta));
    const std::complex<double> q = warp * p;
    const std::complex<double> zp = (1.0 + q) / (1.0 - q);
    zpoles.push_back(zp);
    pole_prod_1mz *= (1.0 - zp);
  }

  std::vector<std::complex<double>> den{1.0};
  for (const auto& zp : zpoles) poly_mul_root(den, zp);

  // All zeros sit at z = -1; scale so the DC gain equals the analog DC
  // gain (the ripple floor for even orders, unity for odd).
  const double dc_gain =
      (order % 2 == 0) ? 1.0 / std::sqrt(1.0 + eps * eps) : 1.0;
  const double scale =
      dc_gain * pole_prod_1mz.real() / std::pow(2.0, order);

  IirFilter f;
  f.a.resize(order + 1);
  for (int i = 0; i <= order; ++i) f.a[i] = den[i].real();
  f.b.resize(order + 1);
  double binom = 1.0;
  for (int i = 0; i <= order; ++i) {
    f.b[i] = scale * binom;
    binom = binom * (order - i) / (i + 1);
  }
  return f;
}

double filter_magnitude_db(const IirFilter& f, double freq_norm) {
  const std::complex<double> w(0.0, -kPi * freq_norm);
  std::complex<double> num = 0.0, den = 0.0, zk = 1.0;
  const std::complex<double> z1 = std::exp(w);
  for (std::size_t i = 0; i < std::max(f.b.size(), f.a.size()); ++i) {
    if (i < f.b.size()) num += f.b[i] * zk;
    if (i < f.a.size()) den += f.a[i] * zk;
    zk *= z1;
  }
  return 20.0 * std::log10(std::abs(num / den));
}

std::vector<double> filter_forward(const IirFilter& f,
                                   std::span<const double> x) {
  const std::size_t order = f.a.size() - 1;
  std::vector<double> w(order + 1, 0.0), y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double yi = f.b[0] * x[i] + w[0];
    for (std::size_t k = 0; k < order; ++k)
      w[k] = f.b[k + 1] * x[i] + w[k + 1] - f.a[k + 1] * yi;
    y[i] = yi;
  }
  return y;
}

std::vector<double> decimate(std::span<const double> x, int factor) {
  if (factor < 1) throw ConfigError("decimation factor must be >= 1");
  if (static_cast<std::size_t>(factor) >= x.size() && factor != 1)
    throw ConfigError("decimation factor must be smaller than the signal");
  if (factor == 1) return std::vector<double>(x.begin(), x.end());
  const IirFilter f = design_cheby1_lowpass(8, 0.05, 0.8 / factor);
  const std::vector<double> y = filter_forward(f, x);
  std::vector<double> out;
  out.reserve((x.size() + factor - 1) / factor);
  for (std::size_t i = 0; i < y.size(); i += factor) out.push_back(y[i]);
  return out;
}

StandardizeResult standardize(std::vector<double>& x) {
  if (x.empty()) return {};
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  const double sd = std::sqrt(var);
  if (sd < 1e-12) {
    std::fill(x.begin(), x.end(), 0.0);
    return {.degenerate = true};
  }
  for (double& v : x) v = (v - mean) / sd;
  return {};
}

int PreparedSubject::slot_of(const std::string& name) const {
  for (std::size_t i = 0; i < channel_names.size(); ++i)
    if (channel_names[i] == name) return static_cast<int>(i);
  throw DataError("subject " + id + " has no channel named " + name);
}

SubjectWindows assemble_windows(std::shared_ptr<const PreparedSubject> s,
                                int time_steps) {
  if (time_steps < 1) throw ConfigError("time_steps must be >= 1");
  return SubjectWindows{std::move(s), time_steps};
}

void add_awgn(std::span<float> x, double snr_db, Rng& rng) {
  if (x.empty()) throw DataError("cannot add noise to an empty signal");
  double power = 0.0;
  for (float v : x) power += static_cast<double>(v) * v;
  power /= static_cast<double>(x.size());
  if (power <= 0.0)
    throw DataError("cannot add noise at a fixed SNR to an all-zero signal");
  const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  for (float& v : x) v += static_cast<float>(sigma * rng.normal());
}

PreparedSubject substitute_channels(const PreparedSubject& s,
                                    const std::vector<int>& source_slot) {
  const int n = static_cast<int>(s.channel_epochs.size());
  if (static_cast<int>(source_slot.size()) != n)
    throw ConfigError("substitution map must name a source for every slot");
  PreparedSubject out = s;
  for (int i = 0; i < n; ++i) {
    const int src = source_slot[i];
    if (src < 0 || src >= n)
      throw ConfigError("substitution source slot out of range");
    out.channel_epochs[i] = s.channel_epochs[src];
    out.degenerate_channels[i] = s.degenerate_channels[src];
  }
  return out;
}

PreparedSubject with_awgn(const PreparedSubject& s, double snr_db, Rng& rng) {
  PreparedSubject out = s;
  for (auto& m : out.channel_epochs)
    add_awgn(std::span<float>(m.data(), m.size()), snr_db, rng);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic recordings.

namespace {

struct BurstRun {
  int start_s = 0;
  int len_s = 0;
  double freq_hz = 0.0;
  double phase = 0.0;
  std::vector<double> gains;  // per channel
};

std::vector<std::uint8_t> synth_labels(const SynthParams& p, Rng& rng) {
  const int target = static_cast<int>(std::lround(p.prevalence * p.duration_s));
  const double mean_run = 0.5 * (p.run_lo_s + p.run_hi_s);
  const double mean_gap =
      std::max(2.0, mean_run * (1.0 - p.prevalence) / p.prevalence);
  const int gap_hi = std::max(2, static_cast<int>(std::lround(2 * mean_gap)) - 2);

  std::vector<std::uint8_t> labels(p.duration_s, 0);
  int placed = 0;
  int pos = static_cast<int>(rng.below(gap_hi + 1));  // leading gap may be 0
  while (pos < p.duration_s && target - placed >= p.run_lo_s) {
    int run = p.run_lo_s + static_cast<int>(rng.below(p.run_hi_s - p.run_lo_s + 1));
    run = std::min(run, target - placed);
    if (pos + run > p.duration_s) break;
    std::fill(labels.begin() + pos, labels.begin() + pos + run, 1);
    placed += run;
    pos += run + 2 + static_cast<int>(rng.below(gap_hi - 2 + 1));
  }
  return labels;
}

}  // namespace

RawRecording synth_recording(const std::string& subject_id,
                             const SynthParams& p, std::uint64_t seed) {
  if (p.duration_s < 120)
    throw ConfigError("synthetic duration must be >= 120 s");
  if (p.prevalence <= 0.0 || p.prevalence >= 1.0)
    throw ConfigError("prevalence must be inside (0, 1)");
  if (p.sample_rate_hz < kModelRateHz || p.sample_rate_hz % kModelRateHz != 0)
    throw ConfigError("sample rate must be a positive multiple of 100 Hz");
  if (p.band_lo_hz <= 0.0 || p.band_hi_hz <= p.band_lo_hz ||
      p.band_hi_hz >= p.sample_rate_hz / 2.0)
    throw ConfigError("burst band must satisfy 0 < lo < hi < Nyquist");
  if (p.run_lo_s < 2 || p.run_hi_s < p.run_lo_s || p.run_hi_s > 60)
    throw ConfigError("run lengths must stay within 2..60 s");
  if (p.gain_lo <= 0.0 || p.gain_hi < p.gain_lo)
    throw ConfigError("burst gain range must be positive");

  // Labels first; retry with a derived stream until the realized prevalence
  // lands inside the +-3 percentage point band.
  std::vector<std::uint8_t> labels;
  bool ok = false;
  for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
    Rng rng(derive_seed(seed, seed_role::kSynth, 1, attempt));
    labels = synth_labels(p, rng);
    double frac = 0.0;
    for (auto v : labels) frac += v;
    frac /= labels.size();
    ok = std::abs(frac - p.prevalence) <= 0.03;
  }
  if (!ok)
    throw RunError("could not reach the target prevalence for subject " +
                   subject_id);

  std::vector<BurstRun> runs;
  {
    Rng rng(derive_seed(seed, seed_role::kSynth, 2));
    int i = 0;
    while (i < p.duration_s) {
      if (!labels[i]) {
        ++i;
        continue;
      }
      BurstRun r;
      r.start_s = i;
      while (i < p.duration_s && labels[i]) ++i;
      r.len_s = i - r.start_s;
      r.freq_hz = rng.uniform(p.band_lo_hz, p.band_hi_hz);
      r.phase = rng.uniform(0.0, 2.0 * kPi);
      for (int c = 0; c < kNumChannelSlots; ++c)
        r.gains.push_back(rng.uniform(p.gain_lo, p.gain_hi));
      runs.push_back(r);
    }
  }

  RawRecording rec;
  rec.subject_id = subject_id;
  rec.sample_rate_hz = p.sample_rate_hz;
  const int n = p.duration_s * p.sample_rate_hz;
  const IirFilter bg_filter = design_cheby1_lowpass(8, 0.05, p.background_cutoff);
  for (int c = 0; c < kNumChannelSlots; ++c) {
    rec.channel_names.push_back(channel_name(static_cast<Channel>(c)));
    Rng rng(derive_seed(seed, seed_role::kSynth, 3, c));

    std::vector<double> white(n);
    for (double& v : white) v = rng.normal();
    std::vector<double> bg = filter_forward(bg_filter, white);
    standardize(bg);
    for (int i = 0; i < n; ++i) bg[i] += p.white_level * rng.normal();
    standardize(bg);

    for (const BurstRun& r : runs) {
      const double ramp = std::min(0.5, r.len_s / 4.0);
      const int s0 = r.start_s * p.sample_rate_hz;
      const int s1 = (r.start_s + r.len_s) * p.sample_rate_hz;
      const double amp = p.burst_amplitude * r.gains[c];
      for (int i = s0; i < s1; ++i) {
        const double t = static_cast<double>(i - s0) / p.sample_rate_hz;
        double env = 1.0;
        if (t < ramp) env = std::sin(kPi / 2.0 * t / ramp);
        const double tail = r.len_s - t;
        if (tail < ramp) env = std::min(env, std::sin(kPi / 2.0 * tail / ramp));
        bg[i] += amp * env * std::sin(2.0 * kPi * r.freq_hz * t + r.phase);
      }
    }

    std::vector<float> data(n);
    for (int i = 0; i < n; ++i) data[i] = static_cast<float>(bg[i]);
    rec.channel_data.push_back(std::move(data));
  }
  rec.labels = std::move(labels);
  return rec;
}

// ---------------------------------------------------------------------------
// Files.

namespace {

void write_f32_le(const std::string& path, const std::vector<float>& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (float v : data) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    const unsigned char bytes[4] = {
        static_cast<unsigned char>(u & 0xff),
        static_cast<unsigned char>((u >> 8) & 0xff),
        static_cast<unsigned char>((u >> 16) & 0xff),
        static_cast<unsigned char>((u >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(bytes), 4);
  }
}

std::vector<float> read_f32_le(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot read " + path);
  const std::streamoff size = in.tellg();
  if (size % 4 != 0)
    throw DataError(path + " is not a float32 stream (size not 4-aligned)");
  in.seekg(0);
  std::vector<float> data(static_cast<std::size_t>(size / 4));
  for (float& v : data) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    const std::uint32_t u = static_cast<std::uint32_t>(bytes[0]) |
                            (static_cast<std::uint32_t>(bytes[1]) << 8) |
                            (static_cast<std::uint32_t>(bytes[2]) << 16) |
                            (static_cast<std::uint32_t>(bytes[3]) << 24);
    std::memcpy(&v, &u, 4);
  }
  if (!in) throw DataError("short read on " + path);
  return data;
}

std::string channel_file_name(const std::string& channel) {
  std::string s = channel;
  for (char& c : s) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (c == '-') c = '_';
  }
  return s + ".f32";
}

}  // namespace

void save_recording(const RawRecording& r, const std::string& dir) {
  fs::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["subject_id"] = r.subject_id;
  manifest["sample_rate_hz"] = r.sample_rate_hz;
  auto channels = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < r.channel_names.size(); ++c) {
    const std::string file = channel_file_name(r.channel_names[c]);
    write_f32_le((fs::path(dir) / file).string(), r.channel_data[c]);
    channels.push_back({{"name", r.channel_names[c]}, {"file", file}});
  }
  manifest["channels"] = channels;
  manifest["labels_file"] = "labels.txt";

  std::ofstream labels((fs::path(dir) / "labels.txt").string());
  for (auto v : r.labels) labels << (v ? '1' : '0') << '\n';
  std::ofstream mf((fs::path(dir) / "manifest.json").string());
  mf << manifest.dump(2) << '\n';
}

RawRecording load_recording(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot read manifest " + manifest_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + manifest_path + ": " + e.what());
  }
  const fs::path base = fs::path(manifest_path).parent_path();
  RawRecording r;
  try {
    r.subject_id = j.at("subject_id").get<std::string>();
    r.sample_rate_hz = j.at("sample_rate_hz").get<int>();
    for (const auto& ch : j.at("channels")) {
      r.channel_names.push_back(ch.at("name").get<std::string>());
      r.channel_data.push_back(
          read_f32_le((base / ch.at("file").get<std::string>()).string()));
    }
    const std::string labels_file = j.at("labels_file").get<std::string>();
    std::ifstream lf((base / labels_file).string());
    if (!lf) throw DataError("cannot read labels file " + labels_file);
    std::string line;
    while (std::getline(lf, line)) {
      if (line.empty()) continue;
      if (line != "0" && line != "1")
        throw DataError("labels file " + labels_file +
                        " must hold one '0'/'1' per line, got: " + line);
      r.labels.push_back(static_cast<std::uint8_t>(line == "1"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + manifest_path +
                    " is missing required fields: " + e.what());
  }
  if (r.sample_rate_hz <= 0)
    throw DataError("manifest " + manifest_path + " has a bad sample rate");
  if (r.channel_data.empty())
    throw DataError("manifest " + manifest_path + " lists no channels");
  const std::size_t len = r.channel_data.front().size();
  for (std::size_t c = 0; c < r.channel_data.size(); ++c)
    if (r.channel_data[c].size() != len)
      throw DataError("subject " + r.subject_id + ": channel " +
                      r.channel_names[c] + " length differs from " +
                      r.channel_names.front());
  if (len % r.sample_rate_hz != 0)
    throw DataError("subject " + r.subject_id +
                    ": signal length is not a whole number of seconds");
  if (r.labels.size() != len / r.sample_rate_hz)
    throw DataError("subject " + r.subject_id + ": " +
                    std::to_string(r.labels.size()) + " labels for " +
                    std::to_string(len / r.sample_rate_hz) + " seconds");
  return r;
}

PreparedSubject prepare_subject(const RawRecording& r) {
  if (r.sample_rate_hz % kModelRateHz != 0)
    throw DataError("subject " + r.subject_id +
                    ": sample rate is not an integer multiple of 100 Hz");
  const int factor = r.sample_rate_hz / kModelRateHz;
  PreparedSubject s;
  s.id = r.subject_id;
  s.channel_names = r.channel_names;
  s.labels = r.labels;
  for (const auto& raw : r.channel_data) {
    std::vector<double> x(raw.begin(), raw.end());
    if (factor > 1) x = decimate(x, factor);
    const StandardizeResult st = standardize(x);
    const int epochs = static_cast<int>(x.size()) / kSamplesPerEpoch;
    if (epochs != static_cast<int>(r.labels.size()) ||
        static_cast<int>(x.size()) % kSamplesPerEpoch != 0)
      throw DataError("subject " + r.subject_id +
                      ": prepared length does not match the labels");
    Eigen::MatrixXf m(epochs, kSamplesPerEpoch);
    for (int e = 0; e < epochs; ++e)
      for (int i = 0; i < kSamplesPerEpoch; ++i)
        m(e, i) = static_cast<float>(x[e * kSamplesPerEpoch + i]);
    s.channel_epochs.push_back(std::move(m));
    s.degenerate_channels.push_back(st.degenerate);
  }
  return s;
}

}  // namespace tsfuse
