#include "tsfuse/genome.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

namespace tsfuse {

namespace {

// Channel subset per 3-bit code, as a bitmask over canonical slots
// (bit 0 = Fp2F4, bit 1 = F4C4, bit 2 = C4A1).
constexpr std::uint8_t kChannelMaskByCode[8] = {
    0b001,  // 000: Fp2-F4
    0b100,  // 001: C4-A1
    0b010,  // 010: F4-C4
    0b101,  // 011: Fp2-F4 + C4-A1
    0b011,  // 100: Fp2-F4 + F4-C4
    0b110,  // 101: F4-C4 + C4-A1
    0b111,  // 110: all three
    0b111,  // 111: alias of 110
};

int field_value(const Genome& g, int lo, int n) {
  int v = 0;
  for (int i = 0; i < n; ++i) v = (v << 1) | g.bits[lo + i];
  return v;
}

void set_field(Genome& g, int lo, int n, int v) {
  for (int i = n - 1; i >= 0; --i) {
    g.bits[lo + i] = static_cast<std::uint8_t>(v & 1);
    v >>= 1;
  }
}

constexpr int kTimeStepMenu[4] = {10, 15, 20, 25};
constexpr int kHiddenMenu[4] = {100, 200, 300, 400};
constexpr double kDropoutMenu[4] = {0.0, 0.05, 0.10, 0.15};
constexpr int kDenseMenu[4] = {0, 200, 300, 400};

template <class T, int N>
int menu_index(const T (&menu)[N], T v) {
  for (int i = 0; i < N; ++i)
    if (menu[i] == v) return i;
  return -1;
}

}  // namespace

const char* channel_name(Channel c) {
  switch (c) {
    case Channel::Fp2F4: return "Fp2-F4";
    case Channel::F4C4: return "F4-C4";
    case Channel::C4A1: return "C4-A1";
  }
  return "?";
}

Channel channel_from_name(const std::string& name) {
  for (Channel c : {Channel::Fp2F4, Channel::F4C4, Channel::C4A1})
    if (name == channel_name(c)) return c;
  throw ConfigError("unknown channel name: " + name);
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Relu: return "relu";
    case Activation::Selu: return "selu";
  }
  return "?";
}

std::string genome_to_string(const Genome& g) {
  std::string s(kGenomeBits, '0');
  for (int i = 0; i < kGenomeBits; ++i) s[i] = g.bits[i] ? '1' : '0';
  return s;
}

Genome genome_from_string(const std::string& s) {
  if (s.size() != kGenomeBits)
    throw ConfigError("genome string must have exactly 15 characters, got " +
                      std::to_string(s.size()));
  Genome g;
  for (int i = 0; i < kGenomeBits; ++i) {
    if (s[i] != '0' && s[i] != '1')
      throw ConfigError("genome string may contain only '0'/'1': " + s);
    g.bits[i] = static_cast<std::uint8_t>(s[i] - '0');
  }
  return g;
}

ModelConfig decode_genome(const Genome& g) {
  ModelConfig c;
  const std::uint8_t mask = kChannelMaskByCode[field_value(g, 0, 3)];
  for (int slot = 0; slot < kNumChannelSlots; ++slot)
    if (mask & (1u << slot)) c.channels.push_back(static_cast<Channel>(slot));
  c.time_steps = kTimeStepMenu[field_value(g, 3, 2)];
  c.lstm_layers = 1 + field_value(g, 5, 1);
  c.lstm_kind = static_cast<LstmKind>(field_value(g, 6, 1));
  c.lstm_shape = kHiddenMenu[field_value(g, 7, 2)];
  c.dropout = kDropoutMenu[field_value(g, 9, 2)];
  c.dense_size = kDenseMenu[field_value(g, 11, 2)];
  c.dense_activation = static_cast<Activation>(field_value(g, 13, 2));
  return c;
}

Genome encode_config(const ModelConfig& c) {
  if (c.channels.empty()) throw ConfigError("config has no channels");
  std::uint8_t mask = 0;
  for (Channel ch : c.channels) {
    const int slot = static_cast<int>(ch);
    if (slot < 0 || slot >= kNumChannelSlots)
      throw ConfigError("config has an invalid channel");
    if (mask & (1u << slot)) throw ConfigError("config repeats a channel");
    mask |= static_cast<std::uint8_t>(1u << slot);
  }
  if (!std::is_sorted(c.channels.begin(), c.channels.end()))
    throw ConfigError("config channels must be in canonical order");
  int channel_code = -1;
  for (int code = 0; code < 7; ++code)  // never emit the 111 alias
    if (kChannelMaskByCode[code] == mask) {
      channel_code = code;
      break;
    }

  const int t = menu_index(kTimeStepMenu, c.time_steps);
  if (t < 0) throw ConfigError("time_steps must be one of 10/15/20/25");
  if (c.lstm_layers != 1 && c.lstm_layers != 2)
    throw ConfigError("lstm_layers must be 1 or 2");
  const int h = menu_index(kHiddenMenu, c.lstm_shape);
  if (h < 0) throw ConfigError("lstm_shape must be one of 100/200/300/400");
  const int d = menu_index(kDropoutMenu, c.dropout);
  if (d < 0) throw ConfigError("dropout must be one of 0/0.05/0.10/0.15");
  const int dn = menu_index(kDenseMenu, c.dense_size);
  if (dn < 0) throw ConfigError("dense_size must be one of 0/200/300/400");
  const int act = static_cast<int>(c.dense_activation);
  if (act < 0 || act > 3) throw ConfigError("invalid dense_activation");

  Genome g;
  set_field(g, 0, 3, channel_code);
  set_field(g, 3, 2, t);
  set_field(g, 5, 1, c.lstm_layers - 1);
  set_field(g, 6, 1, static_cast<int>(c.lstm_kind));
  set_field(g, 7, 2, h);
  set_field(g, 9, 2, d);
  set_field(g, 11, 2, dn);
  set_field(g, 13, 2, act);
  return g;
}

std::vector<ModelConfig> enumerate_distinct_configs() {
  std::vector<ModelConfig> out;
  out.reserve(7 * 4096);
  for (std::uint32_t v = 0; v < (1u << kGenomeBits); ++v) {
    Genome g;
    for (int i = 0; i < kGenomeBits; ++i)
      g.bits[i] = static_cast<std::uint8_t>((v >> (kGenomeBits - 1 - i)) & 1);
    if (field_value(g, 0, 3) == 7) continue;  // alias of channel code 6
    out.push_back(decode_genome(g));
  }
  return out;
}

nlohmann::ordered_json config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  auto names = nlohmann::ordered_json::array();
  for (Channel ch : c.channels) names.push_back(channel_name(ch));
  j["channels"] = names;
  j["time_steps"] = c.time_steps;
  j["lstm_layers"] = c.lstm_layers;
  j["lstm_kind"] = c.lstm_kind == LstmKind::Bidirectional ? "bidirectional"
                                                          : "unidirectional";
  j["lstm_shape"] = c.lstm_shape;
  j["dropout"] = c.dropout;
  j["dense_size"] = c.dense_size;
  j["dense_activation"] = activation_name(c.dense_activation);
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    for (const auto& name : j.at("channels"))
      c.channels.push_back(channel_from_name(name.get<std::string>()));
    std::sort(c.channels.begin(), c.channels.end());
    if (std::adjacent_find(c.channels.begin(), c.channels.end()) !=
        c.channels.end())
      throw ConfigError("model config repeats a channel");
    c.time_steps = j.at("time_steps").get<int>();
    c.lstm_layers = j.at("lstm_layers").get<int>();
    const std::string kind = j.at("lstm_kind").get<std::string>();
    if (kind == "unidirectional") {
      c.lstm_kind = LstmKind::Unidirectional;
    } else if (kind == "bidirectional") {
      c.lstm_kind = LstmKind::Bidirectional;
    } else {
      throw ConfigError("lstm_kind must be unidirectional or bidirectional");
    }
    c.lstm_shape = j.at("lstm_shape").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.dense_size = j.at("dense_size").get<int>();
    const std::string act = j.at("dense_activation").get<std::string>();
    bool found = false;
    for (int a = 0; a < 4; ++a)
      if (act == activation_name(static_cast<Activation>(a))) {
        c.dense_activation = static_cast<Activation>(a);
        found = true;
      }
    if (!found) throw ConfigError("unknown dense_activation: " + act);
    encode_config(c);  // rejects off-menu values
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config json: ") + e.what());
  }
}

}  // namespace tsfuse
