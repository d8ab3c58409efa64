#pragma once

// 15-bit genome <-> network configuration codec.
//
// Bit layout (locus 0 is the leftmost character of the string form):
//   0-2   channel subset        3-4   time steps {10,15,20,25}
//   5     recurrent layers {1,2}      6     uni/bidirectional
//   7-8   hidden units {100,200,300,400}
//   9-10  dropout {0,5,10,15}%        11-12 dense size {0,200,300,400}
//   13-14 dense activation {tanh,sigmoid,relu,selu}
//
// Multi-bit fields read most-significant-bit first.  The channel field has
// one alias: both 110 and 111 mean "all three channels"; encode() always
// emits 110.  Everything else is bijective, so there are 7 * 2^12 = 28672
// distinct configurations.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tsfuse/common.hpp"

namespace tsfuse {

enum class Channel : int { Fp2F4 = 0, F4C4 = 1, C4A1 = 2 };

constexpr int kNumChannelSlots = 3;

const char* channel_name(Channel c);
Channel channel_from_name(const std::string& name);

enum class LstmKind : int { Unidirectional = 0, Bidirectional = 1 };
enum class Activation : int { Tanh = 0, Sigmoid = 1, Relu = 2, Selu = 3 };

const char* activation_name(Activation a);

struct ModelConfig {
  std::vector<Channel> channels;  // canonical order Fp2F4 < F4C4 < C4A1
  int time_steps = 10;
  int lstm_layers = 1;
  LstmKind lstm_kind = LstmKind::Unidirectional;
  int lstm_shape = 100;  // hidden units per direction
  double dropout = 0.0;
  int dense_size = 0;  // 0 disables the dense stage entirely
  Activation dense_activation = Activation::Tanh;

  bool operator==(const ModelConfig& o) const = default;
};

constexpr int kGenomeBits = 15;

struct Genome {
  std::array<std::uint8_t, kGenomeBits> bits{};  // each 0 or 1

  bool operator==(const Genome& o) const = default;

  // Compact key for caching / hashing (locus 0 is the high bit).
  std::uint32_t key() const {
    std::uint32_t k = 0;
    for (int i = 0; i < kGenomeBits; ++i) k = (k << 1) | bits[i];
    return k;
  }
};

// String form: exactly 15 characters of '0'/'1', locus 0 first.
std::string genome_to_string(const Genome& g);
Genome genome_from_string(const std::string& s);  // ConfigError on bad input

// Total on all 2^15 genomes.
ModelConfig decode_genome(const Genome& g);

// Canonical inverse; ConfigError if any field is not on its menu or the
// channel list is empty / unsorted / has duplicates.
Genome encode_config(const ModelConfig& c);

// All semantically distinct configurations, ordered by canonical genome
// value.  Size is always 28672.
std::vector<ModelConfig> enumerate_distinct_configs();

// JSON round-trip used by checkpoints, best-config artifacts and the CLI.
nlohmann::ordered_json config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);  // ConfigError

}  // namespace tsfuse
