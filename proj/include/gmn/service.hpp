#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "gmn/counting.hpp"
#include "gmn/density.hpp"
#include "gmn/image.hpp"
#include "gmn/model.hpp"

namespace httplib {
class Server;
}

namespace gmn {

/// Content-addressed store of decoded images; id = SHA-256 of the bytes.
class ImageStore {
 public:
  /// Throws InvalidArgument for empty or undecodable payloads.
  std::string put(std::span<const std::uint8_t> bytes);
  std::shared_ptr<const Image> get(const std::string& id) const;
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::shared_ptr<const Image>> images_;
};

/// LRU cache of similarity maps bounded by total payload bytes.
class SimilarityCache {
 public:
  explicit SimilarityCache(std::size_t capacity_bytes) : capacity_(capacity_bytes) {}

  std::shared_ptr<const DensityMap> get(const std::string& key);
  void put(const std::string& key, std::shared_ptr<const DensityMap> map);
  std::size_t bytes() const;
  std::size_t capacity() const { return capacity_; }
  std::size_t entries() const;
  std::uint64_t hits() const;
  std::uint64_t misses() const;

  static std::size_t entry_bytes(const DensityMap& map);
  static std::string key(const std::string& image_id, const BBox& box, const std::string& checkpoint_id);

 private:
  struct Entry {
    std::string key;
    std::shared_ptr<const DensityMap> map;
    std::size_t bytes;
  };
  void evict_locked();

  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::list<Entry> lru_;  // front = most recently used
  std::unordered_map<std::string, std::list<Entry>::iterator> index_;
  std::size_t bytes_ = 0;
  std::uint64_t hits_ = 0;
  std::uint64_t misses_ = 0;
};

enum class JobStatus { Queued, Running, Done, Failed };
std::string to_string(JobStatus status);

struct CountRequest {
  std::string image_id;
  BBox box;
  CountMode mode = CountMode::LocalMax;
  double threshold = kDefaultThreshold;
  std::optional<double> min_distance;
};

struct CountJob {
  std::string id;
  CountRequest request;
  JobStatus status = JobStatus::Queued;
  std::optional<CountResult> result;
  std::shared_ptr<const DensityMap> map;
  bool cache_hit = false;
  std::string error;
};

struct ServiceConfig {
  std::size_t cache_bytes = 64u << 20;
  int workers = 2;
};

struct ServiceStats {
  std::uint64_t embedding_calls = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  std::size_t cache_bytes = 0;
  std::size_t cache_entries = 0;
  std::size_t images = 0;
  std::size_t jobs = 0;
};

/// Counting service over one checkpoint. Jobs run on a bounded worker
/// pool; inference is serialised, and a cached similarity map for the same
/// (image, box, checkpoint) is reused so only the counting step re-runs.
class CountService {
 public:
  CountService(GmnNetwork net, std::string checkpoint_id, ServiceConfig config = {});
  ~CountService();
  CountService(const CountService&) = delete;
  CountService& operator=(const CountService&) = delete;

  std::string upload_image(std::span<const std::uint8_t> bytes);
  /// Width x height of a stored image. Throws NotFound.
  cv::Size image_size(const std::string& image_id) const;
  /// Validates and enqueues. Throws NotFound (unknown image) or
  /// InvalidArgument (box not inside the image).
  std::string start_count(const CountRequest& request);
  CountJob get_job(const std::string& job_id) const;
  /// Blocks until the job is terminal or the timeout expires.
  CountJob wait(const std::string& job_id,
                std::chrono::milliseconds timeout = std::chrono::milliseconds(60000)) const;

  std::vector<std::uint8_t> map_gmnd(const std::string& job_id) const;
  std::vector<std::uint8_t> map_png(const std::string& job_id) const;

  /// Holds queued jobs in the queue until resume().
  void pause();
  void resume();

  ServiceStats stats() const;
  const std::string& checkpoint_id() const { return checkpoint_id_; }

 private:
  void worker_loop(std::stop_token stop);
  void run_job(const std::string& job_id);
  void update(const std::string& job_id, const std::function<void(CountJob&)>& fn);

  GmnNetwork net_;
  std::string checkpoint_id_;
  ServiceConfig config_;
  ImageStore images_;
  SimilarityCache cache_;

  mutable std::mutex jobs_mutex_;
  mutable std::condition_variable_any jobs_cv_;
  std::map<std::string, CountJob> jobs_;
  std::deque<std::string> queue_;
  bool paused_ = false;
  std::uint64_t next_job_ = 1;

  std::mutex inference_mutex_;
  std::vector<std::jthread> workers_;
};

/// HTTP JSON front end:
///   POST /images            raw PNG/JPEG body -> {"image_id", "width", "height"}
///   POST /count             {image_id, box:{x,y,w,h}, mode, threshold, min_distance} -> {"job_id", "status"}
///   GET  /jobs/{id}         job status, result and map links
///   GET  /maps/{id}.gmnd    GMND density map
///   GET  /maps/{id}.png     8-bit heatmap
///   GET  /stats             cache and embedding counters
class HttpServer {
 public:
  explicit HttpServer(CountService& service);
  ~HttpServer();
  /// Binds to `port` (0 = any free port) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocking accept loop; returns after stop().
  void listen_after_bind();
  void stop();

 private:
  CountService& service_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace gmn
