// Copyright 2026 The Estimator Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "est/checkpoint.hpp"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace est {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kMagic[] = "ESTCKPT1";
constexpr size_t kMagicLen = 8;
constexpr const char* kSuffix = ".estckpt";
constexpr const char* kIndex = "checkpoint";
constexpr const char* kWriterFile = "writer_id";

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

uint32_t get_u32(const std::string& in, size_t pos) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<uint32_t>(static_cast<unsigned char>(in[pos + static_cast<size_t>(i)]))
         << (8 * i);
  }
  return v;
}

uint32_t crc_of(const char* data, size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<uint32_t>(crc);
}

[[noreturn]] void corrupt(const std::string& why) {
  throw Error("corrupt checkpoint: " + why);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void sync_dir(const fs::path& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

json read_index(const fs::path& model_dir) {
  const fs::path p = model_dir / kIndex;
  if (!fs::exists(p)) return json::object();
  try {
    return json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw Error("unreadable checkpoint index " + p.string() + ": " + e.what());
  }
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : variables) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  json header;
  header["format_version"] = 1;
  header["global_step"] = ckpt.global_step;
  header["variables"] = json::array();
  size_t total = 0;
  for (const auto& [name, t] : ckpt.variables) {
    header["variables"].push_back({{"name", name}, {"shape", t.shape().dims()}});
    total += t.size();
  }
  const std::string h = header.dump();
  std::string out(kMagic, kMagicLen);
  put_u32(out, static_cast<uint32_t>(h.size()));
  out += h;
  const size_t payload_start = out.size();
  out.resize(payload_start + total * sizeof(double));
  char* dst = out.data() + payload_start;
  for (const auto& [name, t] : ckpt.variables) {
    std::memcpy(dst, t.raw().data(), t.size() * sizeof(double));
    dst += t.size() * sizeof(double);
  }
  put_u32(out, crc_of(out.data() + payload_start, total * sizeof(double)));
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagicLen + 4 || bytes.compare(0, kMagicLen, kMagic) != 0) {
    corrupt("bad magic or truncated header");
  }
  const uint32_t hlen = get_u32(bytes, kMagicLen);
  const size_t hstart = kMagicLen + 4;
  if (bytes.size() < hstart + hlen) corrupt("truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(hstart, hlen));
  } catch (const json::exception&) {
    corrupt("unparsable header");
  }
  Checkpoint ckpt;
  size_t pos = hstart + hlen;
  const size_t payload_start = pos;
  std::vector<std::pair<std::string, Shape>> entries;
  size_t total = 0;
  try {
    if (!header.is_object()) corrupt("malformed header");
    if (header.value("format_version", json(nullptr)) != json(1)) {
      throw Error("unsupported checkpoint format_version " +
                  header.value("format_version", json(nullptr)).dump());
    }
    ckpt.global_step = header.at("global_step").get<int64_t>();
    for (const auto& v : header.at("variables")) {
      Shape s(v.at("shape").get<std::vector<int64_t>>());
      for (int64_t d : s.dims()) {
        if (d < 0) corrupt("negative dimension in header");
      }
      total += static_cast<size_t>(s.num_elements());
      entries.emplace_back(v.at("name").get<std::string>(), std::move(s));
    }
  } catch (const json::exception&) {
    corrupt("malformed header");
  }
  if (bytes.size() != payload_start + total * sizeof(double) + 4) {
    corrupt("payload size mismatch (truncated file?)");
  }
  const uint32_t want = get_u32(bytes, payload_start + total * sizeof(double));
  if (crc_of(bytes.data() + payload_start, total * sizeof(double)) != want) {
    corrupt("CRC mismatch");
  }
  for (auto& [name, shape] : entries) {
    Tensor t(shape);
    std::memcpy(t.raw().data(), bytes.data() + pos, t.size() * sizeof(double));
    pos += t.size() * sizeof(double);
    ckpt.variables.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  static std::atomic<uint64_t> counter{0};
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  fs::create_directories(dir);
  const fs::path tmp = dir / ("." + path.filename().string() + ".tmp-" +
                              std::to_string(::getpid()) + "-" +
                              std::to_string(counter.fetch_add(1)));
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw Error("cannot write " + tmp.string() + ": " + std::strerror(errno));
  size_t off = 0;
  while (off < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + off, bytes.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      const std::string err = std::strerror(errno);
      ::close(fd);
      fs::remove(tmp);
      throw Error("write failed for " + tmp.string() + ": " + err);
    }
    off += static_cast<size_t>(n);
  }
  if (::fsync(fd) != 0 || ::close(fd) != 0) {
    fs::remove(tmp);
    throw Error("cannot flush " + tmp.string());
  }
  fs::rename(tmp, path);
  sync_dir(dir);
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint restore_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw Error("checkpoint not found: " + path.string());
  return decode_checkpoint(read_file(path));
}

Checkpoint snapshot(Graph& g) {
  Checkpoint c;
  c.global_step = g.global_step();
  const int gs = g.global_step_variable().index();
  for (const Variable& v : g.variables()) {
    if (v.index() == gs) continue;
    c.variables.emplace_back(v.name(), v.value());
  }
  return c;
}

void load_into(Graph& g, const Checkpoint& ckpt) {
  const int gs = g.global_step_variable().index();
  for (const Variable& v : g.variables()) {
    if (v.index() == gs) continue;
    const Tensor* t = ckpt.find(v.name());
    if (t == nullptr) {
      if (v.trainable()) {
        throw Error("checkpoint has no value for variable '" + v.name() + "'");
      }
      continue;
    }
    if (t->shape() != v.shape()) {
      throw Error("checkpoint variable '" + v.name() + "' has shape " +
                  t->shape().to_string() + ", graph expects " + v.shape().to_string());
    }
    v.assign(*t);
  }
  g.global_step_variable().assign(Tensor::scalar(static_cast<double>(ckpt.global_step)));
}

std::string checkpoint_prefix(int64_t step) { return "model.ckpt-" + std::to_string(step); }

fs::path checkpoint_file(const fs::path& model_dir, const std::string& prefix_or_path) {
  fs::path p(prefix_or_path);
  if (p.is_relative()) p = model_dir / p;
  if (p.extension() != kSuffix) p += kSuffix;
  return p;
}

CheckpointManager::CheckpointManager(fs::path model_dir, int keep_checkpoint_max,
                                     std::string writer_id)
    : model_dir_(std::move(model_dir)),
      keep_max_(keep_checkpoint_max),
      writer_id_(std::move(writer_id)) {
  if (model_dir_.empty()) throw ConfigError("model_dir must not be empty");
}

void CheckpointManager::claim_writer() {
  if (claimed_) return;
  fs::create_directories(model_dir_);
  const fs::path p = model_dir_ / kWriterFile;
  const int fd = ::open(p.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
  if (fd >= 0) {
    const ssize_t n = ::write(fd, writer_id_.data(), writer_id_.size());
    ::fsync(fd);
    ::close(fd);
    if (n != static_cast<ssize_t>(writer_id_.size())) {
      throw Error("cannot record writer id in " + p.string());
    }
  } else {
    const std::string owner = read_file(p);
    if (owner != writer_id_) {
      throw Error("checkpoint writer conflict in " + model_dir_.string() + ": owned by '" +
                  owner + "', write attempted by '" + writer_id_ + "'");
    }
  }
  claimed_ = true;
}

fs::path CheckpointManager::save(const Checkpoint& ckpt) {
  claim_writer();
  const std::string prefix = checkpoint_prefix(ckpt.global_step);
  const fs::path file = checkpoint_file(model_dir_, prefix);
  save_checkpoint(file, ckpt);

  std::vector<std::string> retained = all_retained(model_dir_);
  retained.erase(std::remove(retained.begin(), retained.end(), prefix), retained.end());
  retained.push_back(prefix);
  std::vector<std::string> dropped;
  if (keep_max_ > 0 && retained.size() > static_cast<size_t>(keep_max_)) {
    const auto n = retained.size() - static_cast<size_t>(keep_max_);
    dropped.assign(retained.begin(), retained.begin() + static_cast<std::ptrdiff_t>(n));
    retained.erase(retained.begin(), retained.begin() + static_cast<std::ptrdiff_t>(n));
  }
  json index = {{"latest", prefix}, {"all_retained", retained}};
  write_file_atomic(model_dir_ / kIndex, index.dump(2) + "\n");
  for (const auto& d : dropped) {
    std::error_code ec;
    fs::remove(checkpoint_file(model_dir_, d), ec);
  }
  return file;
}

std::optional<fs::path> CheckpointManager::latest(const fs::path& model_dir) {
  const json index = read_index(model_dir);
  if (!index.contains("latest")) return std::nullopt;
  return checkpoint_file(model_dir, index["latest"].get<std::string>());
}

std::vector<std::string> CheckpointManager::all_retained(const fs::path& model_dir) {
  const json index = read_index(model_dir);
  if (!index.contains("all_retained")) return {};
  return index["all_retained"].get<std::vector<std::string>>();
}

}  // namespace est
