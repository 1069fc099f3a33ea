#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <json.hpp>

#include "atgraph/types.hpp"

namespace atgraph {

inline constexpr int kListReposMaxLimit = 1000;
inline constexpr int kListRecordsMaxLimit = 100;

inline constexpr std::string_view kListReposRoute = "com.atproto.sync.listRepos";
inline constexpr std::string_view kDescribeRepoRoute = "com.atproto.repo.describeRepo";
inline constexpr std::string_view kListRecordsRoute = "com.atproto.repo.listRecords";

class XrpcError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Connection failure, timeout, or retries exhausted on a transient status.
class TransportError : public XrpcError {
 public:
  using XrpcError::XrpcError;
};

// Non-2xx response that is not retried.
class ProtocolError : public XrpcError {
 public:
  ProtocolError(int status, std::string body);

  int status() const noexcept { return status_; }
  const std::string& body() const noexcept { return body_; }

 private:
  int status_;
  std::string body_;
};

class NotFoundError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

struct ClientConfig {
  std::string relay_base_url = "https://bsky.network";
  std::string pds_base_url = "https://bsky.social";
  double max_requests_per_second = 10.0;
  int max_retries = 5;
  std::chrono::milliseconds backoff_base{250};
  std::chrono::milliseconds backoff_cap{30'000};
  std::chrono::milliseconds request_timeout{30'000};

  // Throws std::invalid_argument on the first violated constraint.
  void validate() const;
};

using QueryParams = std::vector<std::pair<std::string, std::string>>;

struct HttpResponse {
  int status = 0;
  std::string body;
};

// One GET against `base_url` + `path`. Implementations throw TransportError
// when no HTTP response was obtained (refused connection, timeout).
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse get(const std::string& base_url, const std::string& path,
                           const QueryParams& params,
                           std::chrono::milliseconds timeout) = 0;
};

// cpp-httplib backed transport with a per-host keep-alive connection pool.
std::unique_ptr<HttpTransport> make_http_transport();

// Token bucket with burst capacity one: over any window of W seconds at most
// ceil(rate * W) + 1 acquisitions return.
class RateLimiter {
 public:
  explicit RateLimiter(double requests_per_second);

  void acquire();

 private:
  std::mutex mu_;
  std::chrono::steady_clock::duration interval_;
  std::chrono::steady_clock::time_point next_slot_;
};

template <typename T>
struct Page {
  std::vector<T> items;
  std::optional<Cursor> next_cursor;
};

struct RepoHead {
  Did did;
};

struct RepoDescription {
  std::string handle;
  Did did;
  std::vector<std::string> collections;
};

struct RawRecord {
  std::string uri;
  std::string cid;
  nlohmann::json value;
};

// The three read routes a crawl consumes. XrpcClient is the network-backed
// implementation; tests decorate it.
class RecordSource {
 public:
  virtual ~RecordSource() = default;

  virtual Page<RepoHead> list_repos(const std::optional<Cursor>& cursor,
                                    int limit = kListReposMaxLimit) = 0;
  virtual RepoDescription describe_repo(const Did& did) = 0;
  virtual Page<RawRecord> list_records(const Did& did, std::string_view collection,
                                       const std::optional<Cursor>& cursor,
                                       int limit = kListRecordsMaxLimit) = 0;
};

// Safe for concurrent use: the rate limiter, retry RNG and transport pool
// are internally synchronized.
class XrpcClient : public RecordSource {
 public:
  explicit XrpcClient(ClientConfig config);
  XrpcClient(ClientConfig config, std::unique_ptr<HttpTransport> transport);

  Page<RepoHead> list_repos(const std::optional<Cursor>& cursor,
                            int limit = kListReposMaxLimit) override;
  RepoDescription describe_repo(const Did& did) override;
  Page<RawRecord> list_records(const Did& did, std::string_view collection,
                               const std::optional<Cursor>& cursor,
                               int limit = kListRecordsMaxLimit) override;

  const ClientConfig& config() const noexcept { return config_; }
  // HTTP attempts issued, retries included.
  std::uint64_t request_count() const noexcept { return requests_.load(); }

 private:
  nlohmann::json get_json(const std::string& base_url, std::string_view route,
                          const QueryParams& params);
  std::chrono::milliseconds backoff_delay(int attempt);

  ClientConfig config_;
  std::unique_ptr<HttpTransport> transport_;
  RateLimiter limiter_;
  std::mutex rng_mu_;
  std::mt19937_64 rng_;
  std::atomic<std::uint64_t> requests_{0};
};

struct PaginateStats {
  std::size_t requests = 0;
};

// Follows `next_cursor` until it is absent and concatenates every page.
// `fetch_page` is called with std::nullopt first, then with each cursor
// exactly as received.
template <typename Fetch>
auto paginate(Fetch&& fetch_page, PaginateStats* stats = nullptr) {
  using PageT = std::invoke_result_t<Fetch&, const std::optional<Cursor>&>;
  decltype(PageT{}.items) out;
  std::optional<Cursor> cursor;
  do {
    PageT page = fetch_page(cursor);
    if (stats != nullptr) {
      ++stats->requests;
    }
    if (page.next_cursor && cursor && *page.next_cursor == *cursor) {
      throw XrpcError("server returned the same cursor twice: " + cursor->str());
    }
    for (auto& item : page.items) {
      out.push_back(std::move(item));
    }
    cursor = std::move(page.next_cursor);
  } while (cursor);
  return out;
}

}  // namespace atgraph
