#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "atgraph/time.hpp"
#include "atgraph/types.hpp"
#include "atgraph/xrpc_client.hpp"

namespace atgraph {

enum class FailureKind { Timeout, TooManyRequests, ServiceUnavailable };

struct FailureInjection {
  std::uint64_t request_index = 0;  // 0-based, counted over all routes
  FailureKind failure = FailureKind::ServiceUnavailable;
};

struct FixtureRepo {
  Did did;
  std::string handle;
  // NSID -> records in listing order. Keys are what describeRepo reports.
  std::map<std::string, std::vector<RawRecord>> collections;
};

struct FixtureSet {
  std::vector<FixtureRepo> repos;
  std::vector<FailureInjection> failure_plan;

  // Throws std::invalid_argument on duplicate DIDs or record uris.
  void validate() const;
  std::size_t record_count() const;
  std::size_t record_count(std::string_view nsid) const;
};

nlohmann::json fixtures_to_json(const FixtureSet& fixtures);
FixtureSet fixtures_from_json(const nlohmann::json& doc);
FixtureSet load_fixtures(const std::filesystem::path& path);
void save_fixtures(const FixtureSet& fixtures, const std::filesystem::path& path);

// A user who blocks `blocks_per_day` accounts on each day offset in
// [first_day, last_day] and is otherwise silent.
struct BurstPlan {
  std::size_t user_index = 0;
  int first_day = 0;  // 0-based offset from GeneratorParams::start
  int last_day = 0;
  int blocks_per_day = 50;
};

struct GeneratorParams {
  std::uint64_t seed = 42;
  std::size_t n_users = 100;
  Date start = Date{std::chrono::year{2023} / 8 / 1};
  int n_days = 31;
  // Poisson means.
  double blocks_per_user_day = 0.5;
  double follows_per_user = 2.0;
  double posts_per_user = 2.0;
  double reposts_per_user = 1.0;
  double facet_probability = 0.3;  // per post, for each of tag/link/mention
  bool profiles = true;
  std::vector<BurstPlan> bursts;
  // Every round(1 / malformed_fraction)-th generated record is corrupted.
  double malformed_fraction = 0.0;

  void validate() const;
};

// Deterministic for a fixed parameter set.
FixtureSet generate_fixtures(const GeneratorParams& params);

enum class CursorStyle { Base64Offset, SaltedHex };

struct MockRelayOptions {
  CursorStyle cursor_style = CursorStyle::Base64Offset;
  // How long an injected timeout stalls before answering 504.
  std::chrono::milliseconds timeout_delay{1500};
};

// In-process XRPC server for listRepos, describeRepo and listRecords over a
// fixture set. Plays both relay and PDS.
class MockRelay {
 public:
  explicit MockRelay(FixtureSet fixtures, MockRelayOptions options = {});
  ~MockRelay();

  MockRelay(const MockRelay&) = delete;
  MockRelay& operator=(const MockRelay&) = delete;

  // Binds (port 0 picks a free port) and serves on a background thread.
  // Returns the bound port; throws std::runtime_error on bind failure.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Binds and serves on the calling thread until stop() is called.
  void run(const std::string& host, int port);
  void stop();

  std::string base_url() const;
  std::uint64_t total_requests() const noexcept { return requests_.load(); }
  std::uint64_t route_requests(std::string_view route) const;
  int max_concurrent() const noexcept { return max_in_flight_.load(); }
  void reset_counters();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
  std::string host_;
  int port_ = 0;
  std::atomic<std::uint64_t> requests_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
};

}  // namespace atgraph
