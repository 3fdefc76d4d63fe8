// Copyright 2026 The fedsv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedsv/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace fedsv {

namespace {

constexpr char kMagic[8] = {'F', 'S', 'V', 'C', 'K', 'P', 'T', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw std::runtime_error("checkpoint: truncated stream");
  return v;
}

double read_f64(std::istream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw std::runtime_error("checkpoint: truncated stream");
  return v;
}

std::string read_string(std::istream& in) {
  const std::uint32_t n = read_u32(in);
  if (n > (1u << 20)) throw std::runtime_error("checkpoint: implausible string length");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw std::runtime_error("checkpoint: truncated stream");
  return s;
}

}  // namespace

void save_checkpoint(const Network& net, std::ostream& out) {
  out.write(kMagic, sizeof(kMagic));
  const NetworkSpec& spec = net.spec();
  write_u32(out, static_cast<std::uint32_t>(spec.input_dim));
  write_u32(out, static_cast<std::uint32_t>(spec.trunk.size()));
  for (const LayerSpec& l : spec.trunk) {
    write_u32(out, static_cast<std::uint32_t>(l.kind));
    write_u32(out, static_cast<std::uint32_t>(l.in_dim));
    write_u32(out, static_cast<std::uint32_t>(l.out_dim));
  }
  write_u32(out, static_cast<std::uint32_t>(spec.heads.size()));
  for (const HeadSpec& h : spec.heads) {
    write_string(out, h.name);
    write_u32(out, static_cast<std::uint32_t>(h.out_dim));
  }
  write_f64(out, net.bn_config().running_momentum);
  write_f64(out, net.bn_config().epsilon);
  write_u32(out, static_cast<std::uint32_t>(net.blocks().size()));
  for (const ParamBlock& b : net.blocks()) {
    write_string(out, b.name);
    write_u32(out, static_cast<std::uint32_t>(b.value.rows));
    write_u32(out, static_cast<std::uint32_t>(b.value.cols));
    out.write(reinterpret_cast<const char*>(b.value.data.data()),
              static_cast<std::streamsize>(b.value.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

void save_checkpoint(const Network& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  save_checkpoint(net, out);
}

Network load_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic, not a checkpoint stream");
  }
  NetworkSpec spec;
  spec.input_dim = static_cast<int>(read_u32(in));
  const std::uint32_t n_trunk = read_u32(in);
  for (std::uint32_t i = 0; i < n_trunk; ++i) {
    LayerSpec l;
    l.kind = static_cast<LayerKind>(read_u32(in));
    l.in_dim = static_cast<int>(read_u32(in));
    l.out_dim = static_cast<int>(read_u32(in));
    spec.trunk.push_back(l);
  }
  const std::uint32_t n_heads = read_u32(in);
  for (std::uint32_t i = 0; i < n_heads; ++i) {
    HeadSpec h;
    h.name = read_string(in);
    h.out_dim = static_cast<int>(read_u32(in));
    spec.heads.push_back(h);
  }
  BatchNormConfig bn_cfg;
  bn_cfg.running_momentum = read_f64(in);
  bn_cfg.epsilon = read_f64(in);
  Network net(spec, bn_cfg);

  const std::uint32_t n_blocks = read_u32(in);
  if (n_blocks != net.blocks().size()) {
    throw std::runtime_error("checkpoint: block count does not match architecture");
  }
  for (std::uint32_t i = 0; i < n_blocks; ++i) {
    const std::string name = read_string(in);
    const int rows = static_cast<int>(read_u32(in));
    const int cols = static_cast<int>(read_u32(in));
    ParamBlock& b = net.block(name);
    if (b.value.rows != rows || b.value.cols != cols) {
      throw std::runtime_error("checkpoint: shape mismatch for block " + name);
    }
    in.read(reinterpret_cast<char*>(b.value.data.data()),
            static_cast<std::streamsize>(b.value.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated stream");
  }
  return net;
}

Network load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  return load_checkpoint(in);
}

}  // namespace fedsv
