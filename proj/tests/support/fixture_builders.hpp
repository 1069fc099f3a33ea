#pragma once

#include <string>

#include <fmt/format.h>

#include "atgraph/mock_relay.hpp"

namespace atgraph::testing {

inline Did user_did(std::size_t i) { return Did(fmt::format("did:plc:t{:05}", i)); }

inline FixtureRepo empty_repo(std::size_t i) {
  return FixtureRepo{user_did(i), fmt::format("t{:05}.test", i), {}};
}

inline RawRecord block_record(const Did& author, std::size_t n, const Did& subject,
                              const std::string& created_at) {
  const std::string rkey = fmt::format("3kb{:08}", n);
  return RawRecord{
      fmt::format("at://{}/app.bsky.graph.block/{}", author.str(), rkey),
      fmt::format("bafyblock{:08}", n),
      {{"$type", "app.bsky.graph.block"}, {"subject", subject.str()}, {"createdAt", created_at}}};
}

inline RawRecord post_record(const Did& author, std::size_t n, const std::string& text,
                             nlohmann::json facets = nlohmann::json::array()) {
  const std::string rkey = fmt::format("3kp{:08}", n);
  nlohmann::json value{{"$type", "app.bsky.feed.post"},
                       {"text", text},
                       {"createdAt", "2023-08-03T12:00:00Z"}};
  if (!facets.empty()) {
    value["facets"] = std::move(facets);
  }
  return RawRecord{fmt::format("at://{}/app.bsky.feed.post/{}", author.str(), rkey),
                   fmt::format("bafypost{:08}", n), std::move(value)};
}

// `n_repos` repos with no records.
inline FixtureSet repos_only(std::size_t n_repos) {
  FixtureSet set;
  for (std::size_t i = 0; i < n_repos; ++i) {
    set.repos.push_back(empty_repo(i));
  }
  return set;
}

// One repo holding `n_blocks` blocks, all on 2023-08-02.
inline FixtureSet one_repo_with_blocks(std::size_t n_blocks) {
  FixtureSet set;
  FixtureRepo repo = empty_repo(0);
  auto& blocks = repo.collections[std::string(kBlockNsid)];
  for (std::size_t i = 0; i < n_blocks; ++i) {
    blocks.push_back(block_record(repo.did, i, user_did(1000 + i), "2023-08-02T10:00:00Z"));
  }
  set.repos.push_back(std::move(repo));
  return set;
}

inline ClientConfig client_for(const MockRelay& relay) {
  ClientConfig config;
  config.relay_base_url = relay.base_url();
  config.pds_base_url = relay.base_url();
  config.max_requests_per_second = 1000.0;
  config.backoff_base = std::chrono::milliseconds(1);
  config.backoff_cap = std::chrono::milliseconds(5);
  config.request_timeout = std::chrono::milliseconds(5000);
  return config;
}

}  // namespace atgraph::testing
