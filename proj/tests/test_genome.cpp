#include <doctest.h>

#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "tsfuse/common.hpp"
#include "tsfuse/genome.hpp"

using namespace tsfuse;

namespace {

Genome from_key(std::uint32_t key) {
  Genome g{};
  for (int locus = 0; locus < kGenomeBits; ++locus)
    g.bits[locus] = (key >> (kGenomeBits - 1 - locus)) & 1;
  return g;
}

}  // namespace

TEST_CASE("string round trip") {
  const std::string s = "101010111000110";
  const Genome g = genome_from_string(s);
  CHECK(genome_to_string(g) == s);
  CHECK(g.bits[0] == 1);
  CHECK(g.bits[1] == 0);
  CHECK(g.bits[14] == 0);
}

TEST_CASE("string parsing rejects bad input") {
  CHECK_THROWS_AS(genome_from_string(""), ConfigError);
  CHECK_THROWS_AS(genome_from_string("0101"), ConfigError);
  CHECK_THROWS_AS(genome_from_string("0101010101010102"), ConfigError);
  CHECK_THROWS_AS(genome_from_string("01010101010101x"), ConfigError);
}

TEST_CASE("key packs locus 0 as the high bit") {
  Genome g{};
  g.bits[0] = 1;
  CHECK(g.key() == 0x4000u);
  g = Genome{};
  g.bits[14] = 1;
  CHECK(g.key() == 1u);
}

TEST_CASE("decoding the known three-channel bidirectional winner") {
  const ModelConfig c = decode_genome(genome_from_string("110000100111001"));
  CHECK(c.channels ==
        std::vector<Channel>{Channel::Fp2F4, Channel::F4C4, Channel::C4A1});
  CHECK(c.time_steps == 10);
  CHECK(c.lstm_layers == 1);
  CHECK(c.lstm_kind == LstmKind::Bidirectional);
  CHECK(c.lstm_shape == 100);
  CHECK(c.dropout == doctest::Approx(0.15));
  CHECK(c.dense_size == 300);
  CHECK(c.dense_activation == Activation::Sigmoid);
}

TEST_CASE("decoding the known swarm winner") {
  const ModelConfig c = decode_genome(genome_from_string("110110100010110"));
  CHECK(c.channels.size() == 3);
  CHECK(c.time_steps == 25);
  CHECK(c.lstm_layers == 1);
  CHECK(c.lstm_kind == LstmKind::Bidirectional);
  CHECK(c.lstm_shape == 100);
  CHECK(c.dropout == doctest::Approx(0.05));
  CHECK(c.dense_size == 200);
  CHECK(c.dense_activation == Activation::Relu);
}

TEST_CASE("encoding a hand-built single-channel stack") {
  ModelConfig c;
  c.channels = {Channel::C4A1};
  c.time_steps = 15;
  c.lstm_layers = 2;
  c.lstm_kind = LstmKind::Unidirectional;
  c.lstm_shape = 200;
  c.dropout = 0.10;
  c.dense_size = 0;
  c.dense_activation = Activation::Tanh;
  CHECK(genome_to_string(encode_config(c)) == "001011001100000");
}

TEST_CASE("both all-channel codes decode identically") {
  const Genome a = genome_from_string("110000000000000");
  const Genome b = genome_from_string("111000000000000");
  CHECK(decode_genome(a) == decode_genome(b));
  CHECK(decode_genome(a).channels.size() == 3);
}

TEST_CASE("encode is canonical for the alias pair") {
  const Genome g = genome_from_string("111010101010101");
  const Genome canon = encode_config(decode_genome(g));
  CHECK(genome_to_string(canon).substr(0, 3) == "110");
  CHECK(genome_to_string(canon).substr(3) ==
        genome_to_string(g).substr(3));
}

TEST_CASE("decode-encode round trip over the whole space") {
  int fixed_points = 0;
  for (std::uint32_t key = 0; key < (1u << kGenomeBits); ++key) {
    const Genome g = from_key(key);
    const Genome back = encode_config(decode_genome(g));
    if (back == g) {
      ++fixed_points;
    } else {
      // The only non-fixed points are the 111 channel aliases, which
      // canonicalize to 110 with every other locus untouched.
      CHECK(g.bits[0] == 1);
      CHECK(g.bits[1] == 1);
      CHECK(g.bits[2] == 1);
      CHECK(back.bits[2] == 0);
      for (int locus = 3; locus < kGenomeBits; ++locus)
        CHECK(back.bits[locus] == g.bits[locus]);
    }
  }
  CHECK(fixed_points == (1 << kGenomeBits) - (1 << 12));
}

TEST_CASE("distinct configuration count") {
  const auto configs = enumerate_distinct_configs();
  CHECK(configs.size() == 28672u);
  std::set<std::string> keys;
  for (const auto& c : configs) keys.insert(genome_to_string(encode_config(c)));
  CHECK(keys.size() == configs.size());
}

TEST_CASE("channel names round trip") {
  CHECK(std::string(channel_name(Channel::Fp2F4)) == "Fp2-F4");
  CHECK(std::string(channel_name(Channel::F4C4)) == "F4-C4");
  CHECK(std::string(channel_name(Channel::C4A1)) == "C4-A1");
  CHECK(channel_from_name("F4-C4") == Channel::F4C4);
  CHECK_THROWS_AS(channel_from_name("bogus"), ConfigError);
}

TEST_CASE("config json round trip") {
  const ModelConfig c = decode_genome(genome_from_string("110000100111001"));
  const auto j = config_to_json(c);
  CHECK(j["channels"].size() == 3);
  CHECK(j["channels"][0] == "Fp2-F4");
  CHECK(j["lstm_kind"] == "bidirectional");
  CHECK(j["dense_activation"] == "sigmoid");
  CHECK(config_from_json(j) == c);
}

TEST_CASE("config json validation") {
  auto j = config_to_json(decode_genome(genome_from_string("001000000000000")));
  SUBCASE("duplicate channel") {
    j["channels"] = {"C4-A1", "C4-A1"};
    CHECK_THROWS_AS(config_from_json(j), ConfigError);
  }
  SUBCASE("empty channel list") {
    j["channels"] = nlohmann::json::array();
    CHECK_THROWS_AS(config_from_json(j), ConfigError);
  }
  SUBCASE("bad activation") {
    j["dense_activation"] = "swish";
    CHECK_THROWS_AS(config_from_json(j), ConfigError);
  }
  SUBCASE("bad layer count") {
    j["lstm_layers"] = 3;
    CHECK_THROWS_AS(config_from_json(j), ConfigError);
  }
}
