#include "atgraph/xrpc_client.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace atgraph {
namespace {

using json = nlohmann::json;

bool is_http_url(std::string_view url) {
  for (std::string_view scheme : {"http://", "https://"}) {
    if (url.starts_with(scheme)) {
      const std::string_view rest = url.substr(scheme.size());
      return !rest.empty() && rest.front() != '/' && rest.front() != ':';
    }
  }
  return false;
}

bool is_retryable_status(int status) { return status == 429 || status >= 500; }

bool is_not_found(const HttpResponse& resp) {
  if (resp.status == 404) {
    return true;
  }
  if (resp.status != 400) {
    return false;
  }
  const json body = json::parse(resp.body, nullptr, false);
  if (!body.is_object()) {
    return false;
  }
  const auto it = body.find("error");
  if (it == body.end() || !it->is_string()) {
    return false;
  }
  const auto& code = it->get_ref<const std::string&>();
  return code == "RepoNotFound" || code == "NotFound" || code == "RecordNotFound";
}

void check_limit(int limit, int max_limit) {
  if (limit < 1 || limit > max_limit) {
    throw std::invalid_argument(
        fmt::format("limit {} outside [1, {}]", limit, max_limit));
  }
}

std::optional<Cursor> read_cursor(const json& doc) {
  const auto it = doc.find("cursor");
  if (it == doc.end() || !it->is_string() || it->get_ref<const std::string&>().empty()) {
    return std::nullopt;
  }
  return Cursor(it->get<std::string>());
}

const json& require_array(const json& doc, const char* field, std::string_view route) {
  const auto it = doc.find(field);
  if (it == doc.end() || !it->is_array()) {
    throw XrpcError(fmt::format("{}: response lacks '{}' array", route, field));
  }
  return *it;
}

std::string string_field(const json& obj, const char* field) {
  const auto it = obj.find(field);
  if (it == obj.end() || !it->is_string()) {
    return {};
  }
  return it->get<std::string>();
}

}  // namespace

ProtocolError::ProtocolError(int status, std::string body)
    : XrpcError(fmt::format("HTTP {}: {}", status, body)),
      status_(status),
      body_(std::move(body)) {}

void ClientConfig::validate() const {
  if (!is_http_url(relay_base_url)) {
    throw std::invalid_argument("relay base URL must be an absolute http(s) URL: " +
                                relay_base_url);
  }
  if (!is_http_url(pds_base_url)) {
    throw std::invalid_argument("PDS base URL must be an absolute http(s) URL: " +
                                pds_base_url);
  }
  if (!(max_requests_per_second > 0.0) || !std::isfinite(max_requests_per_second)) {
    throw std::invalid_argument("max_requests_per_second must be positive");
  }
  if (max_retries < 0) {
    throw std::invalid_argument("max_retries must be non-negative");
  }
  if (backoff_base.count() < 0 || backoff_cap < backoff_base) {
    throw std::invalid_argument("backoff_base must be in [0, backoff_cap]");
  }
  if (request_timeout.count() <= 0) {
    throw std::invalid_argument("request_timeout must be positive");
  }
}

RateLimiter::RateLimiter(double requests_per_second)
    : interval_(std::chrono::duration_cast<std::chrono::steady_clock::duration>(
          std::chrono::duration<double>(1.0 / requests_per_second))),
      next_slot_(std::chrono::steady_clock::now()) {
  if (!(requests_per_second > 0.0)) {
    throw std::invalid_argument("rate must be positive");
  }
}

void RateLimiter::acquire() {
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(mu_);
    slot = std::max(next_slot_, std::chrono::steady_clock::now());
    next_slot_ = slot + interval_;
  }
  std::this_thread::sleep_until(slot);
}

XrpcClient::XrpcClient(ClientConfig config)
    : XrpcClient(std::move(config), make_http_transport()) {}

XrpcClient::XrpcClient(ClientConfig config, std::unique_ptr<HttpTransport> transport)
    : config_((config.validate(), std::move(config))),
      transport_(std::move(transport)),
      limiter_(config_.max_requests_per_second),
      rng_(std::random_device{}()) {}

std::chrono::milliseconds XrpcClient::backoff_delay(int attempt) {
  // Full jitter: uniform in [0, min(cap, base * 2^attempt)].
  const double ceiling =
      std::min(static_cast<double>(config_.backoff_cap.count()),
               static_cast<double>(config_.backoff_base.count()) * std::ldexp(1.0, attempt));
  std::lock_guard lock(rng_mu_);
  std::uniform_real_distribution<double> dist(0.0, ceiling);
  return std::chrono::milliseconds(static_cast<std::int64_t>(dist(rng_)));
}

json XrpcClient::get_json(const std::string& base_url, std::string_view route,
                          const QueryParams& params) {
  const std::string path = fmt::format("/xrpc/{}", route);
  for (int attempt = 0;; ++attempt) {
    limiter_.acquire();
    requests_.fetch_add(1);
    const bool last_attempt = attempt >= config_.max_retries;
    try {
      HttpResponse resp = transport_->get(base_url, path, params, config_.request_timeout);
      if (resp.status >= 200 && resp.status < 300) {
        json doc = json::parse(resp.body, nullptr, false);
        if (doc.is_discarded() || !doc.is_object()) {
          throw XrpcError(fmt::format("{}: response is not a JSON object", route));
        }
        return doc;
      }
      if (!is_retryable_status(resp.status) || last_attempt) {
        if (is_not_found(resp)) {
          throw NotFoundError(resp.status, std::move(resp.body));
        }
        throw ProtocolError(resp.status, std::move(resp.body));
      }
      spdlog::debug("{}: HTTP {}, retrying (attempt {})", route, resp.status, attempt + 1);
    } catch (const TransportError& e) {
      if (last_attempt) {
        throw TransportError(fmt::format("{}: {} (after {} attempts)", route, e.what(),
                                         attempt + 1));
      }
      spdlog::debug("{}: {}, retrying (attempt {})", route, e.what(), attempt + 1);
    }
    std::this_thread::sleep_for(backoff_delay(attempt));
  }
}

Page<RepoHead> XrpcClient::list_repos(const std::optional<Cursor>& cursor, int limit) {
  check_limit(limit, kListReposMaxLimit);
  QueryParams params{{"limit", std::to_string(limit)}};
  if (cursor) {
    params.emplace_back("cursor", cursor->str());
  }
  const json doc = get_json(config_.relay_base_url, kListReposRoute, params);

  Page<RepoHead> page;
  for (const json& entry : require_array(doc, "repos", kListReposRoute)) {
    auto did = entry.is_object() ? Did::parse(string_field(entry, "did")) : std::nullopt;
    if (!did) {
      spdlog::warn("listRepos: skipping entry with malformed did: {}", entry.dump());
      continue;
    }
    page.items.push_back(RepoHead{std::move(*did)});
  }
  page.next_cursor = read_cursor(doc);
  return page;
}

RepoDescription XrpcClient::describe_repo(const Did& did) {
  const json doc = get_json(config_.pds_base_url, kDescribeRepoRoute, {{"repo", did.str()}});
  RepoDescription desc{string_field(doc, "handle"), did, {}};
  if (auto reported = Did::parse(string_field(doc, "did"))) {
    desc.did = std::move(*reported);
  }
  if (const auto it = doc.find("collections"); it != doc.end() && it->is_array()) {
    for (const json& c : *it) {
      if (c.is_string()) {
        desc.collections.push_back(c.get<std::string>());
      }
    }
  }
  return desc;
}

Page<RawRecord> XrpcClient::list_records(const Did& did, std::string_view collection,
                                         const std::optional<Cursor>& cursor, int limit) {
  check_limit(limit, kListRecordsMaxLimit);
  QueryParams params{{"repo", did.str()},
                     {"collection", std::string(collection)},
                     {"limit", std::to_string(limit)}};
  if (cursor) {
    params.emplace_back("cursor", cursor->str());
  }
  const json doc = get_json(config_.pds_base_url, kListRecordsRoute, params);

  Page<RawRecord> page;
  for (const json& entry : require_array(doc, "records", kListRecordsRoute)) {
    if (!entry.is_object()) {
      throw XrpcError("listRecords: record entry is not an object");
    }
    RawRecord rec{string_field(entry, "uri"), string_field(entry, "cid"), json::object()};
    if (const auto it = entry.find("value"); it != entry.end()) {
      rec.value = *it;
    }
    page.items.push_back(std::move(rec));
  }
  page.next_cursor = read_cursor(doc);
  return page;
}

}  // namespace atgraph
