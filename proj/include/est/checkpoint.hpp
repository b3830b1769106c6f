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

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "est/graph.hpp"

namespace est {

// Snapshot of named variables plus the global step.
struct Checkpoint {
  int64_t global_step = 0;
  std::vector<std::pair<std::string, Tensor>> variables;  // in save order

  const Tensor* find(const std::string& name) const;
};

// File layout: "ESTCKPT1", u32 LE header length, JSON header
// {format_version, global_step, variables:[{name, shape}]}, LE f64 payload in
// header order, CRC32 of the payload as u32 LE.
std::string encode_checkpoint(const Checkpoint& ckpt);
// Throws Error("corrupt checkpoint: ...") on a bad magic, truncation or CRC
// mismatch.
Checkpoint decode_checkpoint(const std::string& bytes);

// Durable write: temp file in the same directory, fsync, rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint restore_checkpoint(const std::filesystem::path& path);

// Every variable of `g` except global_step, in creation order.
Checkpoint snapshot(Graph& g);
// Loads `ckpt` into `g`. Trainable variables of `g` must all be present;
// other missing variables keep their initial values; extra entries are
// ignored. Shape mismatches are errors. Sets global_step.
void load_into(Graph& g, const Checkpoint& ckpt);

// model.ckpt-<step>
std::string checkpoint_prefix(int64_t step);
// Accepts a prefix ("model.ckpt-10") or a file name, relative to model_dir
// or absolute; returns the data file path.
std::filesystem::path checkpoint_file(const std::filesystem::path& model_dir,
                                      const std::string& prefix_or_path);

// Checkpoints of one model_dir: data files "model.ckpt-<step>.estckpt" and
// the JSON index "checkpoint" {latest, all_retained}.
class CheckpointManager {
 public:
  // `writer_id` identifies the single task allowed to write this model_dir.
  CheckpointManager(std::filesystem::path model_dir, int keep_checkpoint_max = 5,
                    std::string writer_id = "worker:0");

  // Writes the data file, then the index, then prunes old files.
  std::filesystem::path save(const Checkpoint& ckpt);
  std::filesystem::path save(Graph& g) { return save(snapshot(g)); }

  const std::filesystem::path& model_dir() const { return model_dir_; }

  // Latest checkpoint data file recorded in the index, if any.
  static std::optional<std::filesystem::path> latest(const std::filesystem::path& model_dir);
  // Prefixes listed in the index, oldest first.
  static std::vector<std::string> all_retained(const std::filesystem::path& model_dir);

 private:
  void claim_writer();

  std::filesystem::path model_dir_;
  int keep_max_;
  std::string writer_id_;
  bool claimed_ = false;
};

}  // namespace est
