#pragma once

// Bounded worker pool for long-running service jobs. Submitters get a job
// id back immediately and poll its status.

#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

namespace vibe::service {

using json = nlohmann::json;

enum class JobStatus { Queued, Running, Done, Failed };

inline std::string to_string(JobStatus s) {
  switch (s) {
    case JobStatus::Queued: return "queued";
    case JobStatus::Running: return "running";
    case JobStatus::Done: return "done";
    case JobStatus::Failed: return "failed";
  }
  return "failed";
}

struct JobRecord {
  std::string id;
  std::string kind;
  JobStatus status = JobStatus::Queued;
  json result;
  /// {status, message} when failed.
  json error;
};

inline json to_json(const JobRecord& j) {
  return json{{"id", j.id},
              {"kind", j.kind},
              {"status", to_string(j.status)},
              {"result", j.result.is_null() ? json(nullptr) : j.result},
              {"error", j.error.is_null() ? json(nullptr) : j.error}};
}

class JobQueue {
 public:
  /// Maps an exception thrown by a job to its {status, message} error.
  using ErrorMapper = std::function<json(std::exception_ptr)>;

  JobQueue(std::size_t workers, ErrorMapper mapper) : mapper_(std::move(mapper)) {
    if (workers == 0) workers = 1;
    for (std::size_t i = 0; i < workers; ++i) threads_.emplace_back([this] { run(); });
  }

  ~JobQueue() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    wake_.notify_all();
    for (auto& t : threads_) t.join();
  }

  JobQueue(const JobQueue&) = delete;
  JobQueue& operator=(const JobQueue&) = delete;

  std::string submit(std::string kind, std::function<json()> work) {
    std::lock_guard lock(mutex_);
    JobRecord r;
    r.id = "job-" + std::to_string(++counter_);
    r.kind = std::move(kind);
    jobs_.emplace(r.id, r);
    pending_.push_back({r.id, std::move(work)});
    wake_.notify_one();
    return r.id;
  }

  std::optional<JobRecord> get(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

  /// Blocks until the job finishes or the timeout passes; returns the record.
  std::optional<JobRecord> wait(const std::string& id, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mutex_);
    done_.wait_for(lock, timeout, [&] {
      auto it = jobs_.find(id);
      return it == jobs_.end() || it->second.status == JobStatus::Done || it->second.status == JobStatus::Failed;
    });
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

 private:
  struct Pending {
    std::string id;
    std::function<json()> work;
  };

  void run() {
    for (;;) {
      Pending p;
      {
        std::unique_lock lock(mutex_);
        wake_.wait(lock, [&] { return stopping_ || !pending_.empty(); });
        if (pending_.empty()) return;
        p = std::move(pending_.front());
        pending_.pop_front();
        jobs_[p.id].status = JobStatus::Running;
      }
      json result, error;
      try {
        result = p.work();
      } catch (...) {
        error = mapper_(std::current_exception());
      }
      {
        std::lock_guard lock(mutex_);
        auto& r = jobs_[p.id];
        r.status = error.is_null() ? JobStatus::Done : JobStatus::Failed;
        r.result = std::move(result);
        r.error = std::move(error);
      }
      done_.notify_all();
    }
  }

  ErrorMapper mapper_;
  mutable std::mutex mutex_;
  std::condition_variable wake_;
  mutable std::condition_variable done_;
  std::deque<Pending> pending_;
  std::map<std::string, JobRecord> jobs_;
  std::size_t counter_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> threads_;
};

}  // namespace vibe::service
