#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "crackseg/backbone.hpp"
#include "crackseg/config.hpp"
#include "crackseg/head.hpp"

namespace crackseg {

namespace detail {

inline void store_le_f64(double v, unsigned char* out) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  for (int i = 0; i < 8; ++i) out[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
}

inline double load_le_f64(const unsigned char* in) {
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(in[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

inline void store_le_u32(uint32_t v, unsigned char* out) {
  for (int i = 0; i < 4; ++i) out[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
}

inline uint32_t load_le_u32(const unsigned char* in) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(in[i]) << (8 * i);
  return v;
}

}  // namespace detail

constexpr char kCheckpointMagic[8] = {'C', 'S', 'E', 'G', 'N', 'E', 'T', '1'};

/// Full segmentation network: backbone + multi-scale head.
struct Network {
  NetworkConfig cfg;
  Backbone backbone;
  MfsHead head;

  static Network init(const NetworkConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    Network net;
    net.cfg = cfg;
    net.backbone = Backbone::init(cfg, rng);
    net.head = MfsHead::init(cfg, rng);
    return net;
  }

  /// image [N,3,H,W] -> logits [N,1,H,W]. H and W must be multiples of the
  /// patch size; probability map = sigmoid(logits).
  Tensor forward(const Tensor& image) const {
    std::vector<Tensor> pyramid = backbone.forward(image);
    return head.forward(pyramid, image.dim(2), image.dim(3));
  }

  std::vector<std::pair<std::string, Tensor>> named_params() const {
    std::vector<std::pair<std::string, Tensor>> out = backbone.named_params();
    for (auto& p : head.named_params()) out.push_back(std::move(p));
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_params()) out.push_back(t);
    return out;
  }

  long long param_count() const {
    long long n = 0;
    for (auto& [name, t] : named_params()) n += t.numel();
    return n;
  }

  void zero_grad() const {
    for (auto& [name, t] : named_params()) const_cast<Tensor&>(t).zero_grad();
  }

  /// Checkpoint layout: 8-byte magic, u32 header length, JSON header
  /// {"format", "config", "params": [{"name", "shape"}...]}, then the
  /// little-endian f64 payload concatenated in header order.
  void save(std::ostream& os) const {
    json header;
    header["format"] = 1;
    header["config"] = cfg.to_json();
    json params = json::array();
    long long total = 0;
    auto named = named_params();
    for (auto& [name, t] : named) {
      params.push_back(json{{"name", name}, {"shape", t.shape()}});
      total += t.numel();
    }
    header["params"] = params;
    std::string hs = header.dump();
    os.write(kCheckpointMagic, 8);
    unsigned char len[4];
    detail::store_le_u32(static_cast<uint32_t>(hs.size()), len);
    os.write(reinterpret_cast<const char*>(len), 4);
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    std::vector<unsigned char> buf(8);
    for (auto& [name, t] : named) {
      for (double v : t.data()) {
        detail::store_le_f64(v, buf.data());
        os.write(reinterpret_cast<const char*>(buf.data()), 8);
      }
    }
    if (!os) throw IoError("checkpoint save: stream write failed");
  }

  void save_file(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint save: cannot open '" + path.string() + "'");
    save(os);
  }

  static Network load(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
      throw IoError("checkpoint load: bad magic (not a checkpoint file)");
    unsigned char len[4];
    is.read(reinterpret_cast<char*>(len), 4);
    if (!is) throw IoError("checkpoint load: truncated header length");
    uint32_t hlen = detail::load_le_u32(len);
    std::string hs(hlen, '\0');
    is.read(hs.data(), hlen);
    if (!is) throw IoError("checkpoint load: truncated header");
    json header;
    try {
      header = json::parse(hs);
    } catch (const json::exception& e) {
      throw IoError(std::string("checkpoint load: header parse error: ") + e.what());
    }
    if (!header.contains("config") || !header.contains("params"))
      throw IoError("checkpoint load: header missing config/params");
    NetworkConfig cfg = NetworkConfig::from_json(header.at("config"));
    Network net = Network::init(cfg, 0);
    auto named = net.named_params();
    const json& params = header.at("params");
    if (params.size() != named.size())
      throw IoError("checkpoint load: header lists " + std::to_string(params.size()) +
                    " tensors, model has " + std::to_string(named.size()));
    std::vector<unsigned char> buf(8);
    for (size_t i = 0; i < named.size(); ++i) {
      const json& p = params.at(i);
      std::string name = p.at("name").get<std::string>();
      Shape shape = p.at("shape").get<Shape>();
      if (name != named[i].first)
        throw IoError("checkpoint load: tensor " + std::to_string(i) + " is '" + name +
                      "', model expects '" + named[i].first + "'");
      if (shape != named[i].second.shape())
        throw IoError("checkpoint load: shape mismatch for '" + name + "'");
      auto& data = named[i].second.raw_data();
      for (double& v : data) {
        is.read(reinterpret_cast<char*>(buf.data()), 8);
        if (!is) throw IoError("checkpoint load: truncated payload at '" + name + "'");
        v = detail::load_le_f64(buf.data());
      }
    }
    return net;
  }

  static Network load_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint load: cannot open '" + path.string() + "'");
    return load(is);
  }

  /// Exact on-disk checkpoint size in bytes.
  long long checkpoint_size_bytes() const {
    std::ostringstream os(std::ios::binary);
    save(os);
    return static_cast<long long>(os.str().size());
  }
};

}  // namespace crackseg
