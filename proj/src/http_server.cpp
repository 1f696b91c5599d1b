#include <httplib.h>

#include <nlohmann/json.hpp>

#include "gmn/errors.hpp"
#include "gmn/service.hpp"

namespace gmn {
namespace {

using nlohmann::json;

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

json job_json(const CountJob& job) {
  json j = {{"job_id", job.id},
            {"status", to_string(job.status)},
            {"image_id", job.request.image_id},
            {"box", {{"x", job.request.box.x}, {"y", job.request.box.y}, {"w", job.request.box.w},
                     {"h", job.request.box.h}}},
            {"mode", to_string(job.request.mode)},
            {"threshold", job.request.threshold},
            {"cache_hit", job.cache_hit}};
  if (job.request.min_distance) j["min_distance"] = *job.request.min_distance;
  if (job.result) j["result"] = *job.result;
  if (job.map) {
    j["map"] = {{"gmnd", "/maps/" + job.id + ".gmnd"},
                {"png", "/maps/" + job.id + ".png"},
                {"height", job.map->rows()},
                {"width", job.map->cols()},
                {"stride", job.map->stride},
                {"offset", {{"x", job.map->offset_x}, {"y", job.map->offset_y}}}};
  }
  if (!job.error.empty()) j["error"] = job.error;
  return j;
}

// Maps library errors onto HTTP status codes.
template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const NotFound& e) {
    send_error(res, 404, e.what());
  } catch (const InvalidArgument& e) {
    send_error(res, 400, e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, std::string("malformed request: ") + e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, e.what());
  }
}

}  // namespace

HttpServer::HttpServer(CountService& service)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto& s = *server_;
  s.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                         {"Access-Control-Allow-Headers", "Content-Type"},
                         {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  s.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  s.Post("/images", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto* data = reinterpret_cast<const std::uint8_t*>(req.body.data());
      const std::string id = service_.upload_image({data, req.body.size()});
      const cv::Size size = service_.image_size(id);
      send_json(res, 201, {{"image_id", id}, {"width", size.width}, {"height", size.height}});
    });
  });

  s.Post("/count", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = json::parse(req.body);
      CountRequest r;
      r.image_id = body.at("image_id").get<std::string>();
      const auto& box = body.at("box");
      r.box = {box.at("x").get<double>(), box.at("y").get<double>(), box.at("w").get<double>(),
               box.at("h").get<double>()};
      r.mode = count_mode_from_string(body.value("mode", std::string("localmax")));
      r.threshold = body.value("threshold", kDefaultThreshold);
      if (body.contains("min_distance") && !body["min_distance"].is_null()) {
        r.min_distance = body["min_distance"].get<double>();
      }
      const std::string id = service_.start_count(r);
      send_json(res, 202, {{"job_id", id}, {"status", "queued"}});
    });
  });

  s.Get(R"(/jobs/([A-Za-z0-9_-]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, job_json(service_.get_job(req.matches[1]))); });
  });

  s.Get(R"(/maps/([A-Za-z0-9_-]+)\.(png|gmnd))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      if (req.matches[2] == "png") {
        const auto png = service_.map_png(id);
        res.set_content(std::string(png.begin(), png.end()), "image/png");
      } else {
        const auto bytes = service_.map_gmnd(id);
        res.set_content(std::string(bytes.begin(), bytes.end()), "application/octet-stream");
      }
    });
  });

  s.Get("/stats", [this](const httplib::Request&, httplib::Response& res) {
    const auto st = service_.stats();
    send_json(res, 200,
              {{"embedding_calls", st.embedding_calls},
               {"cache_hits", st.cache_hits},
               {"cache_misses", st.cache_misses},
               {"cache_bytes", st.cache_bytes},
               {"cache_entries", st.cache_entries},
               {"images", st.images},
               {"jobs", st.jobs},
               {"checkpoint_id", service_.checkpoint_id()}});
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return server_->bind_to_any_port(host);
  if (!server_->bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen_after_bind() { server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_) server_->stop();
}

}  // namespace gmn
