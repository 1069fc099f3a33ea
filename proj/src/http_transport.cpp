#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include <httplib.h>

#include "atgraph/xrpc_client.hpp"

namespace atgraph {
namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path below the origin, no trailing '/'
};

SplitUrl split_base_url(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  const auto path_begin =
      scheme_end == std::string::npos ? std::string::npos : base_url.find('/', scheme_end + 3);
  SplitUrl out;
  if (path_begin == std::string::npos) {
    out.origin = base_url;
  } else {
    out.origin = base_url.substr(0, path_begin);
    out.prefix = base_url.substr(path_begin);
  }
  while (!out.prefix.empty() && out.prefix.back() == '/') {
    out.prefix.pop_back();
  }
  return out;
}

class HttplibTransport final : public HttpTransport {
 public:
  HttpResponse get(const std::string& base_url, const std::string& path,
                   const QueryParams& params, std::chrono::milliseconds timeout) override {
    const SplitUrl url = split_base_url(base_url);
    std::unique_ptr<httplib::Client> client = checkout(url.origin);
    client->set_connection_timeout(timeout);
    client->set_read_timeout(timeout);
    client->set_write_timeout(timeout);

    httplib::Params query;
    for (const auto& [key, value] : params) {
      query.emplace(key, value);
    }
    httplib::Result res = client->Get(url.prefix + path, query, httplib::Headers{});
    if (!res) {
      throw TransportError("GET " + url.origin + url.prefix + path + ": " +
                           httplib::to_string(res.error()));
    }
    HttpResponse out{res->status, std::move(res->body)};
    checkin(url.origin, std::move(client));
    return out;
  }

 private:
  std::unique_ptr<httplib::Client> checkout(const std::string& origin) {
    {
      std::lock_guard lock(mu_);
      auto& idle = idle_[origin];
      if (!idle.empty()) {
        auto client = std::move(idle.back());
        idle.pop_back();
        return client;
      }
    }
    auto client = std::make_unique<httplib::Client>(origin);
    client->set_keep_alive(true);
    client->set_tcp_nodelay(true);
    return client;
  }

  void checkin(const std::string& origin, std::unique_ptr<httplib::Client> client) {
    std::lock_guard lock(mu_);
    idle_[origin].push_back(std::move(client));
  }

  std::mutex mu_;
  std::map<std::string, std::vector<std::unique_ptr<httplib::Client>>> idle_;
};

}  // namespace

std::unique_ptr<HttpTransport> make_http_transport() {
  return std::make_unique<HttplibTransport>();
}

}  // namespace atgraph
