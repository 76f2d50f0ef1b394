#include "sam/service/jobs.hpp"

#include <algorithm>
#include <random>

#include <fmt/format.h>

#include "sam/errors.hpp"

namespace sam::service {

const char* to_string(JobState s) {
  switch (s) {
    case JobState::Queued: return "queued";
    case JobState::Running: return "running";
    case JobState::Done: return "done";
    case JobState::Failed: return "failed";
  }
  return "unknown";
}

JobQueue::JobQueue(int workers, std::size_t capacity) : capacity_(capacity) {
  if (workers < 1) throw UsageError("job queue needs at least one worker");
  if (capacity < 1) throw UsageError("job queue capacity must be positive");
  for (int i = 0; i < workers; ++i) threads_.emplace_back([this] { worker(); });
}

JobQueue::~JobQueue() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  wake_.notify_all();
  for (auto& t : threads_) t.join();
}

std::string JobQueue::submit(Task task) {
  std::string id;
  {
    std::lock_guard lock(mutex_);
    if (pending_.size() >= capacity_) {
      throw QueueFullError(fmt::format("{} jobs already waiting", pending_.size()));
    }
    thread_local std::mt19937_64 rng{std::random_device{}()};
    id = fmt::format("job-{:06d}-{:08x}", ++counter_, static_cast<std::uint32_t>(rng()));
    records_[id] = JobRecord{id};
    pending_.emplace_back(id, std::move(task));
  }
  wake_.notify_one();
  return id;
}

std::optional<JobRecord> JobQueue::get(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = records_.find(id);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

void JobQueue::wait_idle() {
  std::unique_lock lock(mutex_);
  idle_.wait(lock, [this] { return pending_.empty() && running_ == 0; });
}

std::size_t JobQueue::queued() const {
  std::lock_guard lock(mutex_);
  return pending_.size();
}

void JobQueue::worker() {
  for (;;) {
    std::pair<std::string, Task> job;
    {
      std::unique_lock lock(mutex_);
      wake_.wait(lock, [this] { return stopping_ || !pending_.empty(); });
      if (stopping_ && pending_.empty()) return;
      job = std::move(pending_.front());
      pending_.pop_front();
      records_[job.first].state = JobState::Running;
      ++running_;
    }
    const std::string& id = job.first;
    const Report report = [this, &id](double fraction) {
      std::lock_guard lock(mutex_);
      JobRecord& r = records_[id];
      r.progress = std::max(r.progress, std::clamp(fraction, 0.0, 1.0));
    };
    std::string bundle;
    std::string error;
    try {
      bundle = job.second(report);
    } catch (const std::exception& e) {
      error = e.what();
      if (error.empty()) error = "job failed";
    } catch (...) {
      error = "job failed with an unknown exception";
    }
    {
      std::lock_guard lock(mutex_);
      JobRecord& r = records_[id];
      if (error.empty()) {
        r.state = JobState::Done;
        r.progress = 1.0;
        r.bundle_id = bundle;
      } else {
        r.state = JobState::Failed;
        r.error = error;
      }
      --running_;
    }
    idle_.notify_all();
  }
}

}  // namespace sam::service
