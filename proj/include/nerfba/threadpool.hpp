#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace nerfba {

// Minimal persistent worker pool. run() hands out task indices [0, n) through
// an atomic counter and blocks until all tasks finished; the calling thread
// participates. Task order of *execution* is unspecified, so callers that
// need determinism must write results into per-task slots and reduce in a
// fixed order afterwards.
class ThreadPool {
    struct Job {
        const std::function<void(int)>* fn = nullptr;
        std::atomic<int> next{0};
        int total = 0;
        std::atomic<int> remaining{0};
    };

public:
    explicit ThreadPool(int threads) {
        int helpers = threads > 1 ? threads - 1 : 0;
        workers_.reserve(helpers);
        for (int i = 0; i < helpers; ++i) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    ~ThreadPool() {
        {
            std::unique_lock<std::mutex> lock(mutex_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    int size() const { return static_cast<int>(workers_.size()) + 1; }

    // fn(task_index) is invoked exactly once for each index in [0, n).
    void run(int n_tasks, const std::function<void(int)>& fn) {
        if (n_tasks <= 0) return;
        if (workers_.empty()) {
            for (int i = 0; i < n_tasks; ++i) fn(i);
            return;
        }
        auto job = std::make_shared<Job>();
        job->fn = &fn;
        job->total = n_tasks;
        job->remaining.store(n_tasks, std::memory_order_relaxed);
        {
            std::unique_lock<std::mutex> lock(mutex_);
            current_ = job;
        }
        cv_.notify_all();
        execute(*job);
        {
            // Wait until every handed-out index has finished running.
            std::unique_lock<std::mutex> lock(mutex_);
            done_cv_.wait(lock, [&] { return job->remaining.load(std::memory_order_acquire) == 0; });
            if (current_ == job) current_.reset();
        }
    }

private:
    // Pull indices from the job until exhausted. Safe to call on a stale job:
    // the counter is already past total, so the loop exits immediately.
    void execute(Job& job) {
        for (;;) {
            int idx = job.next.fetch_add(1, std::memory_order_relaxed);
            if (idx >= job.total) break;
            (*job.fn)(idx);
            if (job.remaining.fetch_sub(1, std::memory_order_acq_rel) == 1) {
                std::unique_lock<std::mutex> lock(mutex_);
                done_cv_.notify_all();
            }
        }
    }

    void worker_loop() {
        std::shared_ptr<Job> last;
        for (;;) {
            std::shared_ptr<Job> job;
            {
                std::unique_lock<std::mutex> lock(mutex_);
                cv_.wait(lock, [&] { return stop_ || (current_ && current_ != last); });
                if (stop_) return;
                job = current_;
            }
            execute(*job);
            last = std::move(job);
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    std::shared_ptr<Job> current_;
    bool stop_ = false;
};

}  // namespace nerfba
