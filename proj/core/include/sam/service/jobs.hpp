#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace sam::service {

enum class JobState { Queued, Running, Done, Failed };
const char* to_string(JobState s);

struct JobRecord {
  std::string id;
  JobState state = JobState::Queued;
  double progress = 0.0;  // in [0, 1]
  std::string bundle_id;  // set once done
  std::string error;      // set once failed
};

/// Fixed pool of workers draining a bounded FIFO. A task reports progress
/// through the callback and returns the id of the bundle it produced.
class JobQueue {
 public:
  using Report = std::function<void(double fraction)>;
  using Task = std::function<std::string(const Report&)>;

  JobQueue(int workers, std::size_t capacity);
  ~JobQueue();
  JobQueue(const JobQueue&) = delete;
  JobQueue& operator=(const JobQueue&) = delete;

  /// Throws QueueFullError when `capacity` jobs are already waiting.
  std::string submit(Task task);
  std::optional<JobRecord> get(const std::string& id) const;
  /// Blocks until no job is queued or running.
  void wait_idle();
  std::size_t queued() const;

 private:
  void worker();

  mutable std::mutex mutex_;
  std::condition_variable wake_;
  std::condition_variable idle_;
  std::deque<std::pair<std::string, Task>> pending_;
  std::map<std::string, JobRecord> records_;
  std::size_t capacity_;
  int running_ = 0;
  std::uint64_t counter_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> threads_;
};

}  // namespace sam::service
