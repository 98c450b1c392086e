// Copyright 2026 The capmil Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "capmil/models.hpp"

// Layout (all integers and floats little-endian):
//   "CAPMILCK" | u32 version | u64 header_len | header (key = value text)
//   | u64 count | count x { u32 name_len | name | u64 rows | u64 cols | f64[rows*cols] }

namespace capmil {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'P', 'M', 'I', 'L', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw ParseError("checkpoint '" + path_ + "' is truncated");
  }
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& config, const ModelParams& params) {
  KeyValueConfig header;
  write_model_config(header, config);
  const std::string text = header.to_string();

  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  put_le<std::uint64_t>(out, params.tensors.size());
  for (const auto& [name, m] : params.tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(m.data()[i]));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint '" + path + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing checkpoint '" + path + "'");
}

std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  Reader r(ss.str(), path);
  if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
    throw ParseError("'" + path + "' is not a checkpoint");
  if (const auto v = r.le<std::uint32_t>(); v != kVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(v));
  const auto header_len = r.le<std::uint64_t>();
  const ModelConfig config = read_model_config(KeyValueConfig::parse(r.bytes(header_len), path));

  ModelParams params;
  const auto count = r.le<std::uint64_t>();
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto name_len = r.le<std::uint32_t>();
    std::string name = r.bytes(name_len);
    const auto rows = r.le<std::uint64_t>();
    const auto cols = r.le<std::uint64_t>();
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<double>(r.le<std::uint64_t>());
    params.tensors.emplace(std::move(name), std::move(m));
  }
  if (!r.done()) throw ParseError("checkpoint '" + path + "' has trailing bytes");
  return {config, std::move(params)};
}

}  // namespace capmil
