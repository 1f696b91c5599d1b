#include "gmn/service.hpp"

#include <sstream>

#include "gmn/checkpoint.hpp"
#include "gmn/errors.hpp"

namespace gmn {

// ---------------------------------------------------------------------------

std::string ImageStore::put(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw InvalidArgument("empty image payload");
  const std::string id = sha256_hex(bytes.data(), bytes.size());
  {
    std::lock_guard lock(mutex_);
    if (images_.count(id)) return id;
  }
  auto image = std::make_shared<Image>(decode_image(bytes, id));
  validate_image(*image);
  std::lock_guard lock(mutex_);
  images_.try_emplace(id, std::move(image));
  return id;
}

std::shared_ptr<const Image> ImageStore::get(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = images_.find(id);
  if (it == images_.end()) throw NotFound("unknown image id " + id);
  return it->second;
}

std::size_t ImageStore::size() const {
  std::lock_guard lock(mutex_);
  return images_.size();
}

// ---------------------------------------------------------------------------

std::size_t SimilarityCache::entry_bytes(const DensityMap& map) {
  return static_cast<std::size_t>(map.rows()) * map.cols() * sizeof(float);
}

std::string SimilarityCache::key(const std::string& image_id, const BBox& box,
                                 const std::string& checkpoint_id) {
  std::ostringstream k;
  k.precision(17);
  k << image_id << '|' << box.x << ',' << box.y << ',' << box.w << ',' << box.h << '|' << checkpoint_id;
  return k.str();
}

std::shared_ptr<const DensityMap> SimilarityCache::get(const std::string& key) {
  std::lock_guard lock(mutex_);
  const auto it = index_.find(key);
  if (it == index_.end()) {
    ++misses_;
    return nullptr;
  }
  ++hits_;
  lru_.splice(lru_.begin(), lru_, it->second);
  return it->second->map;
}

void SimilarityCache::put(const std::string& key, std::shared_ptr<const DensityMap> map) {
  const std::size_t size = entry_bytes(*map);
  std::lock_guard lock(mutex_);
  if (const auto it = index_.find(key); it != index_.end()) {
    bytes_ -= it->second->bytes;
    lru_.erase(it->second);
    index_.erase(it);
  }
  if (size > capacity_) return;  // never fits
  lru_.push_front({key, std::move(map), size});
  index_[key] = lru_.begin();
  bytes_ += size;
  evict_locked();
}

void SimilarityCache::evict_locked() {
  while (bytes_ > capacity_ && !lru_.empty()) {
    bytes_ -= lru_.back().bytes;
    index_.erase(lru_.back().key);
    lru_.pop_back();
  }
}

std::size_t SimilarityCache::bytes() const {
  std::lock_guard lock(mutex_);
  return bytes_;
}

std::size_t SimilarityCache::entries() const {
  std::lock_guard lock(mutex_);
  return lru_.size();
}

std::uint64_t SimilarityCache::hits() const {
  std::lock_guard lock(mutex_);
  return hits_;
}

std::uint64_t SimilarityCache::misses() const {
  std::lock_guard lock(mutex_);
  return misses_;
}

// ---------------------------------------------------------------------------

std::string to_string(JobStatus status) {
  switch (status) {
    case JobStatus::Queued: return "queued";
    case JobStatus::Running: return "running";
    case JobStatus::Done: return "done";
    case JobStatus::Failed: return "failed";
  }
  return "unknown";
}

CountService::CountService(GmnNetwork net, std::string checkpoint_id, ServiceConfig config)
    : net_(std::move(net)), checkpoint_id_(std::move(checkpoint_id)), config_(config),
      cache_(config.cache_bytes) {
  if (net_.is_empty()) throw InvalidArgument("service needs a network");
  if (config_.workers < 1) throw InvalidArgument("service needs at least one worker");
  net_->eval();
  for (int i = 0; i < config_.workers; ++i) {
    workers_.emplace_back([this](std::stop_token stop) { worker_loop(stop); });
  }
}

CountService::~CountService() {
  for (auto& w : workers_) w.request_stop();
  jobs_cv_.notify_all();
  workers_.clear();
}

std::string CountService::upload_image(std::span<const std::uint8_t> bytes) { return images_.put(bytes); }

cv::Size CountService::image_size(const std::string& image_id) const {
  const auto image = images_.get(image_id);
  return {image->width(), image->height()};
}

std::string CountService::start_count(const CountRequest& request) {
  const auto image = images_.get(request.image_id);
  const BBox& b = request.box;
  if (!(b.w > 0) || !(b.h > 0) || b.x < 0 || b.y < 0 || b.x + b.w > image->width() ||
      b.y + b.h > image->height()) {
    throw InvalidArgument("invalid box: must have positive size and lie inside the " +
                          std::to_string(image->width()) + "x" + std::to_string(image->height()) + " image");
  }
  if (request.min_distance && *request.min_distance < 0) throw InvalidArgument("min_distance must be >= 0");
  std::lock_guard lock(jobs_mutex_);
  CountJob job;
  job.id = "job-" + std::to_string(next_job_++);
  job.request = request;
  const std::string id = job.id;
  jobs_.emplace(id, std::move(job));
  queue_.push_back(id);
  jobs_cv_.notify_all();
  return id;
}

CountJob CountService::get_job(const std::string& job_id) const {
  std::lock_guard lock(jobs_mutex_);
  const auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw NotFound("unknown job " + job_id);
  return it->second;
}

CountJob CountService::wait(const std::string& job_id, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(jobs_mutex_);
  const auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw NotFound("unknown job " + job_id);
  jobs_cv_.wait_for(lock, timeout, [&] {
    return it->second.status == JobStatus::Done || it->second.status == JobStatus::Failed;
  });
  return it->second;
}

void CountService::pause() {
  std::lock_guard lock(jobs_mutex_);
  paused_ = true;
}

void CountService::resume() {
  std::lock_guard lock(jobs_mutex_);
  paused_ = false;
  jobs_cv_.notify_all();
}

void CountService::update(const std::string& job_id, const std::function<void(CountJob&)>& fn) {
  std::lock_guard lock(jobs_mutex_);
  fn(jobs_.at(job_id));
  jobs_cv_.notify_all();
}

void CountService::worker_loop(std::stop_token stop) {
  while (true) {
    std::string job_id;
    {
      std::unique_lock lock(jobs_mutex_);
      if (!jobs_cv_.wait(lock, stop, [&] { return !paused_ && !queue_.empty(); })) return;
      job_id = queue_.front();
      queue_.pop_front();
      jobs_.at(job_id).status = JobStatus::Running;
    }
    run_job(job_id);
  }
}

void CountService::run_job(const std::string& job_id) {
  const CountRequest request = get_job(job_id).request;
  try {
    const auto image = images_.get(request.image_id);
    const std::string key = SimilarityCache::key(request.image_id, request.box, checkpoint_id_);
    std::shared_ptr<const DensityMap> map;
    bool hit = false;
    {
      // One inference at a time; also makes the miss-then-fill sequence
      // atomic per key.
      std::lock_guard lock(inference_mutex_);
      map = cache_.get(key);
      hit = map != nullptr;
      if (!hit) {
        map = std::make_shared<const DensityMap>(similarity_for_exemplar(*net_, *image, *image, request.box));
        cache_.put(key, map);
      }
    }
    CountOptions options;
    options.mode = request.mode;
    options.threshold = request.threshold;
    options.min_distance = request.min_distance;
    CountResult result = count_from_map(*map, options);
    update(job_id, [&](CountJob& job) {
      job.map = map;
      job.cache_hit = hit;
      job.result = std::move(result);
      job.status = JobStatus::Done;
    });
  } catch (const std::exception& e) {
    update(job_id, [&](CountJob& job) {
      job.error = e.what();
      job.status = JobStatus::Failed;
    });
  }
}

std::vector<std::uint8_t> CountService::map_gmnd(const std::string& job_id) const {
  const CountJob job = get_job(job_id);
  if (!job.map) throw NotFound("job " + job_id + " has no map yet");
  return encode_gmnd(*job.map);
}

std::vector<std::uint8_t> CountService::map_png(const std::string& job_id) const {
  const CountJob job = get_job(job_id);
  if (!job.map) throw NotFound("job " + job_id + " has no map yet");
  return encode_heatmap_png(*job.map);
}

ServiceStats CountService::stats() const {
  ServiceStats s;
  s.embedding_calls = net_->embedding_calls();
  s.cache_hits = cache_.hits();
  s.cache_misses = cache_.misses();
  s.cache_bytes = cache_.bytes();
  s.cache_entries = cache_.entries();
  s.images = images_.size();
  std::lock_guard lock(jobs_mutex_);
  s.jobs = jobs_.size();
  return s;
}

}  // namespace gmn
