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

#include "est/hooks.hpp"

#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>

namespace est {
namespace fs = std::filesystem;

void run_loop_with_hooks(RunContext& ctx, std::span<const HookPtr> hooks,
                         const LoopBody& body) {
  try {
    for (const auto& h : hooks) h->begin();
    for (const auto& h : hooks) h->after_session_start(ctx);
    std::vector<Node> extra;
    std::vector<size_t> counts(hooks.size());
    std::vector<Tensor> results;
    while (!ctx.stop_requested()) {
      if (!body.next()) break;
      extra.clear();
      for (size_t i = 0; i < hooks.size(); ++i) {
        auto req = hooks[i]->before_run(ctx);
        counts[i] = req.size();
        extra.insert(extra.end(), req.begin(), req.end());
      }
      results.clear();
      body.run(extra, results);
      size_t off = 0;
      for (size_t i = 0; i < hooks.size(); ++i) {
        std::vector<Tensor> mine(results.begin() + static_cast<std::ptrdiff_t>(off),
                                 results.begin() + static_cast<std::ptrdiff_t>(off + counts[i]));
        off += counts[i];
        hooks[i]->after_run(ctx, mine);
      }
    }
  } catch (...) {
    ctx.set_aborted();
    for (const auto& h : hooks) {
      try {
        h->end(ctx);
      } catch (...) {
        // The original error wins.
      }
    }
    throw;
  }
  for (const auto& h : hooks) h->end(ctx);
}

void append_scalar_log(const fs::path& model_dir, int64_t step, const std::string& name,
                       double value) {
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  fs::create_directories(model_dir);
  const fs::path p = model_dir / "scalar_logs.csv";
  const bool fresh = !fs::exists(p) || fs::file_size(p) == 0;
  std::ofstream out(p, std::ios::app);
  if (!out) throw Error("cannot append to " + p.string());
  if (fresh) out << "wall_time,step,name,value\n";
  const double wall = std::chrono::duration<double>(
                          std::chrono::system_clock::now().time_since_epoch())
                          .count();
  out << std::fixed << std::setprecision(6) << wall << ',' << step << ',' << name << ','
      << std::setprecision(17) << std::defaultfloat << value << '\n';
}

std::shared_ptr<StopAtStepHook> StopAtStepHook::at(int64_t last_step) {
  return std::shared_ptr<StopAtStepHook>(new StopAtStepHook(std::nullopt, last_step));
}

std::shared_ptr<StopAtStepHook> StopAtStepHook::after(int64_t num_steps) {
  if (num_steps < 0) throw ConfigError("stop_at_step: steps must be >= 0");
  return std::shared_ptr<StopAtStepHook>(new StopAtStepHook(num_steps, std::nullopt));
}

StopAtStepHook::StopAtStepHook(std::optional<int64_t> num_steps,
                               std::optional<int64_t> last_step)
    : num_steps_(num_steps), last_step_(last_step) {}

void StopAtStepHook::after_session_start(RunContext& ctx) {
  if (num_steps_) last_step_ = ctx.global_step() + *num_steps_;
  if (ctx.global_step() >= *last_step_) ctx.request_stop();
}

void StopAtStepHook::after_run(RunContext& ctx, const std::vector<Tensor>&) {
  if (ctx.global_step() >= *last_step_) ctx.request_stop();
}

TimeBasedStopHook::TimeBasedStopHook(std::chrono::duration<double> duration)
    : duration_(duration) {
  if (duration.count() < 0) throw ConfigError("time_based_stop: duration must be >= 0");
}

void TimeBasedStopHook::begin() { started_at_ = std::chrono::steady_clock::now(); }

void TimeBasedStopHook::after_run(RunContext& ctx, const std::vector<Tensor>&) {
  if (std::chrono::steady_clock::now() - started_at_ >= duration_) ctx.request_stop();
}

CheckpointSaverHook::CheckpointSaverHook(int64_t every_n) : every_n_(every_n) {
  if (every_n < 1) throw ConfigError("checkpoint_saver: every_n must be >= 1");
}

void CheckpointSaverHook::save(RunContext& ctx) {
  if (!ctx.save_checkpoint) return;
  ctx.save_checkpoint();
  ctx.last_checkpoint_step = ctx.global_step();
}

void CheckpointSaverHook::after_run(RunContext& ctx, const std::vector<Tensor>&) {
  if (ctx.global_step() % every_n_ == 0 && ctx.last_checkpoint_step != ctx.global_step()) {
    save(ctx);
  }
}

void CheckpointSaverHook::end(RunContext& ctx) {
  if (ctx.aborted()) return;
  if (ctx.last_checkpoint_step != ctx.global_step()) save(ctx);
}

StepCounterHook::StepCounterHook(int64_t every_n) : every_n_(every_n) {
  if (every_n < 1) throw ConfigError("step_counter: every_n must be >= 1");
}

void StepCounterHook::after_session_start(RunContext& ctx) {
  last_step_ = ctx.global_step();
  last_time_ = std::chrono::steady_clock::now();
}

void StepCounterHook::emit(RunContext& ctx) {
  const auto now = std::chrono::steady_clock::now();
  const int64_t step = ctx.global_step();
  const double secs = std::chrono::duration<double>(now - last_time_).count();
  if (step > last_step_ && !ctx.model_dir.empty()) {
    const double rate = static_cast<double>(step - last_step_) / std::max(secs, 1e-9);
    append_scalar_log(ctx.model_dir, step, "global_step/sec", rate);
    if (ctx.last_loss()) append_scalar_log(ctx.model_dir, step, "loss", *ctx.last_loss());
  }
  last_step_ = step;
  last_time_ = now;
}

void StepCounterHook::after_run(RunContext& ctx, const std::vector<Tensor>&) {
  if (ctx.global_step() - last_step_ >= every_n_) emit(ctx);
}

void StepCounterHook::end(RunContext& ctx) {
  if (!ctx.aborted()) emit(ctx);
}

LoggingHook::LoggingHook(std::map<std::string, Node> tensors, int64_t every_n,
                         std::ostream& out)
    : tensors_(std::move(tensors)), every_n_(every_n), out_(&out) {
  if (every_n < 1) throw ConfigError("logger: every_n must be >= 1");
}

std::vector<Node> LoggingHook::before_run(RunContext&) {
  if (iter_ % every_n_ != 0) return {};
  std::vector<Node> out;
  for (const auto& [name, n] : tensors_) out.push_back(n);
  return out;
}

void LoggingHook::after_run(RunContext& ctx, const std::vector<Tensor>& results) {
  if (!results.empty()) {
    std::ostringstream line;
    line << "step " << ctx.global_step() << ':';
    size_t i = 0;
    for (const auto& [name, n] : tensors_) {
      const Tensor& t = results[i++];
      line << ' ' << name << " = ";
      if (t.size() == 1) {
        line << t[0];
      } else {
        line << t.shape().to_string();
      }
    }
    *out_ << line.str() << '\n';
  }
  ++iter_;
}

}  // namespace est
