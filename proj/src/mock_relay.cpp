#include "atgraph/mock_relay.hpp"

#include <charconv>
#include <map>
#include <mutex>
#include <stdexcept>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

namespace atgraph {
namespace {

using json = nlohmann::json;

constexpr std::string_view kB64 =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";
constexpr std::uint64_t kSalt = 0x5bd1e9955bd1e995ULL;

std::string b64_encode(std::string_view in) {
  std::string out;
  std::uint32_t buf = 0;
  int bits = 0;
  for (unsigned char c : in) {
    buf = (buf << 8) | c;
    bits += 8;
    while (bits >= 6) {
      bits -= 6;
      out.push_back(kB64[(buf >> bits) & 0x3F]);
    }
  }
  if (bits > 0) {
    out.push_back(kB64[(buf << (6 - bits)) & 0x3F]);
  }
  return out;
}

std::optional<std::string> b64_decode(std::string_view in) {
  std::string out;
  std::uint32_t buf = 0;
  int bits = 0;
  for (char c : in) {
    const auto pos = kB64.find(c);
    if (pos == std::string_view::npos) {
      return std::nullopt;
    }
    buf = (buf << 6) | static_cast<std::uint32_t>(pos);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((buf >> bits) & 0xFF));
    }
  }
  return out;
}

std::optional<std::size_t> parse_size(std::string_view text) {
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    return std::nullopt;
  }
  return value;
}

std::string encode_cursor(CursorStyle style, std::size_t offset) {
  switch (style) {
    case CursorStyle::Base64Offset:
      return b64_encode(fmt::format("offset:{}", offset));
    case CursorStyle::SaltedHex:
      return fmt::format("x{:016x}", static_cast<std::uint64_t>(offset) ^ kSalt);
  }
  return {};
}

std::optional<std::size_t> decode_cursor(CursorStyle style, std::string_view token) {
  switch (style) {
    case CursorStyle::Base64Offset: {
      const auto raw = b64_decode(token);
      constexpr std::string_view kPrefix = "offset:";
      if (!raw || !std::string_view(*raw).starts_with(kPrefix)) {
        return std::nullopt;
      }
      return parse_size(std::string_view(*raw).substr(kPrefix.size()));
    }
    case CursorStyle::SaltedHex: {
      if (token.size() != 17 || token.front() != 'x') {
        return std::nullopt;
      }
      std::uint64_t v = 0;
      const auto [ptr, ec] = std::from_chars(token.data() + 1, token.data() + token.size(), v, 16);
      if (ec != std::errc() || ptr != token.data() + token.size()) {
        return std::nullopt;
      }
      return static_cast<std::size_t>(v ^ kSalt);
    }
  }
  return std::nullopt;
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view error,
                std::string_view message) {
  send_json(res, status, json{{"error", error}, {"message", message}});
}

}  // namespace

struct MockRelay::Impl {
  FixtureSet fixtures;
  MockRelayOptions options;
  std::map<std::string, const FixtureRepo*, std::less<>> by_did;
  std::map<std::uint64_t, FailureKind> failures;
  httplib::Server server;
  std::mutex route_mu;
  std::map<std::string, std::uint64_t, std::less<>> route_counts;
};

MockRelay::MockRelay(FixtureSet fixtures, MockRelayOptions options)
    : impl_(std::make_unique<Impl>()) {
  fixtures.validate();
  impl_->fixtures = std::move(fixtures);
  impl_->options = options;
  for (const FixtureRepo& repo : impl_->fixtures.repos) {
    impl_->by_did.emplace(repo.did.str(), &repo);
  }
  for (const FailureInjection& f : impl_->fixtures.failure_plan) {
    impl_->failures.emplace(f.request_index, f.failure);
  }

  Impl& impl = *impl_;
  impl.server.set_tcp_nodelay(true);
  // Wraps a route handler with request accounting and failure injection.
  const auto route = [this, &impl](std::string_view name, auto handler) {
    return [this, &impl, name = std::string(name), handler](const httplib::Request& req,
                                                            httplib::Response& res) {
      const std::uint64_t index = requests_.fetch_add(1);
      const int now = in_flight_.fetch_add(1) + 1;
      int prev = max_in_flight_.load();
      while (now > prev && !max_in_flight_.compare_exchange_weak(prev, now)) {
      }
      {
        std::lock_guard lock(impl.route_mu);
        ++impl.route_counts[name];
      }
      struct Leave {
        std::atomic<int>& counter;
        ~Leave() { counter.fetch_sub(1); }
      } leave{in_flight_};

      if (const auto it = impl.failures.find(index); it != impl.failures.end()) {
        switch (it->second) {
          case FailureKind::TooManyRequests:
            send_error(res, 429, "RateLimitExceeded", "injected");
            return;
          case FailureKind::ServiceUnavailable:
            send_error(res, 503, "ServiceUnavailable", "injected");
            return;
          case FailureKind::Timeout:
            std::this_thread::sleep_for(impl.options.timeout_delay);
            send_error(res, 504, "Timeout", "injected");
            return;
        }
      }
      handler(req, res);
    };
  };

  const auto page_window = [&impl](const httplib::Request& req, httplib::Response& res,
                                   std::size_t max_limit, std::size_t total)
      -> std::optional<std::pair<std::size_t, std::size_t>> {
    std::size_t limit = max_limit;
    if (req.has_param("limit")) {
      const auto parsed = parse_size(req.get_param_value("limit"));
      if (!parsed || *parsed == 0) {
        send_error(res, 400, "InvalidRequest", "limit must be a positive integer");
        return std::nullopt;
      }
      limit = std::min(*parsed, max_limit);
    }
    std::size_t offset = 0;
    if (req.has_param("cursor")) {
      const auto decoded = decode_cursor(impl.options.cursor_style, req.get_param_value("cursor"));
      if (!decoded || *decoded > total) {
        send_error(res, 400, "InvalidRequest", "unrecognized cursor");
        return std::nullopt;
      }
      offset = *decoded;
    }
    return std::make_pair(offset, std::min(total, offset + limit));
  };

  impl.server.Get(
      fmt::format("/xrpc/{}", kListReposRoute),
      route(kListReposRoute, [&impl, page_window](const httplib::Request& req,
                                                  httplib::Response& res) {
        const auto& repos = impl.fixtures.repos;
        const auto window = page_window(req, res, kListReposMaxLimit, repos.size());
        if (!window) {
          return;
        }
        const auto [begin, end] = *window;
        json items = json::array();
        for (std::size_t i = begin; i < end; ++i) {
          items.push_back({{"did", repos[i].did.str()},
                           {"head", fmt::format("bafyhead{:08}", i)},
                           {"rev", fmt::format("3krev{:08}", i)}});
        }
        json body{{"repos", std::move(items)}};
        if (end < repos.size()) {
          body["cursor"] = encode_cursor(impl.options.cursor_style, end);
        }
        send_json(res, 200, body);
      }));

  impl.server.Get(
      fmt::format("/xrpc/{}", kDescribeRepoRoute),
      route(kDescribeRepoRoute, [&impl](const httplib::Request& req, httplib::Response& res) {
        const auto it = impl.by_did.find(req.get_param_value("repo"));
        if (it == impl.by_did.end()) {
          send_error(res, 400, "RepoNotFound", "Could not find repo: " + req.get_param_value("repo"));
          return;
        }
        const FixtureRepo& repo = *it->second;
        json collections = json::array();
        for (const auto& [name, records] : repo.collections) {
          collections.push_back(name);
        }
        send_json(res, 200,
                  json{{"handle", repo.handle},
                       {"did", repo.did.str()},
                       {"didDoc", json::object()},
                       {"collections", std::move(collections)},
                       {"handleIsCorrect", true}});
      }));

  impl.server.Get(
      fmt::format("/xrpc/{}", kListRecordsRoute),
      route(kListRecordsRoute, [&impl, page_window](const httplib::Request& req,
                                                    httplib::Response& res) {
        const auto it = impl.by_did.find(req.get_param_value("repo"));
        if (it == impl.by_did.end()) {
          send_error(res, 400, "RepoNotFound", "Could not find repo: " + req.get_param_value("repo"));
          return;
        }
        static const std::vector<RawRecord> kEmpty;
        const auto coll = it->second->collections.find(req.get_param_value("collection"));
        const std::vector<RawRecord>& records =
            coll == it->second->collections.end() ? kEmpty : coll->second;
        const auto window = page_window(req, res, kListRecordsMaxLimit, records.size());
        if (!window) {
          return;
        }
        const auto [begin, end] = *window;
        json items = json::array();
        for (std::size_t i = begin; i < end; ++i) {
          items.push_back({{"uri", records[i].uri}, {"cid", records[i].cid}, {"value", records[i].value}});
        }
        json body{{"records", std::move(items)}};
        if (end < records.size()) {
          body["cursor"] = encode_cursor(impl.options.cursor_style, end);
        }
        send_json(res, 200, body);
      }));
}

MockRelay::~MockRelay() { stop(); }

int MockRelay::start(const std::string& host, int port) {
  if (thread_.joinable()) {
    throw std::logic_error("mock relay already started");
  }
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                              : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) {
    throw std::runtime_error(fmt::format("mock relay: cannot bind {}:{}", host, port));
  }
  host_ = host;
  port_ = bound;
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port_;
}

void MockRelay::run(const std::string& host, int port) {
  if (!impl_->server.bind_to_port(host, port)) {
    throw std::runtime_error(fmt::format("mock relay: cannot bind {}:{}", host, port));
  }
  host_ = host;
  port_ = port;
  spdlog::info("mock relay serving {} repos on {}", impl_->fixtures.repos.size(), base_url());
  impl_->server.listen_after_bind();
}

void MockRelay::stop() {
  impl_->server.stop();
  if (thread_.joinable()) {
    thread_.join();
  }
}

std::string MockRelay::base_url() const { return fmt::format("http://{}:{}", host_, port_); }

std::uint64_t MockRelay::route_requests(std::string_view route) const {
  std::lock_guard lock(impl_->route_mu);
  const auto it = impl_->route_counts.find(route);
  return it == impl_->route_counts.end() ? 0 : it->second;
}

void MockRelay::reset_counters() {
  requests_.store(0);
  max_in_flight_.store(0);
  std::lock_guard lock(impl_->route_mu);
  impl_->route_counts.clear();
}

}  // namespace atgraph
