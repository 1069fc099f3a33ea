#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <fmt/format.h>

#include "atgraph/mock_relay.hpp"

namespace atgraph {
namespace {

using json = nlohmann::json;

std::string_view failure_name(FailureKind kind) {
  switch (kind) {
    case FailureKind::Timeout:
      return "timeout";
    case FailureKind::TooManyRequests:
      return "429";
    case FailureKind::ServiceUnavailable:
      return "503";
  }
  return "503";
}

FailureKind failure_from_json(const json& value) {
  const std::string text = value.is_number_integer() ? std::to_string(value.get<int>())
                           : value.is_string()       ? value.get<std::string>()
                                                     : std::string();
  if (text == "timeout") {
    return FailureKind::Timeout;
  }
  if (text == "429") {
    return FailureKind::TooManyRequests;
  }
  if (text == "503") {
    return FailureKind::ServiceUnavailable;
  }
  throw std::invalid_argument("unknown failure kind " + value.dump());
}

std::string ts_millis(Timestamp ts, int millis) {
  std::string s = format_timestamp(ts);
  s.insert(s.size() - 1, fmt::format(".{:03}", millis));
  return s;
}

// Deterministic record-level generator state.
class Builder {
 public:
  explicit Builder(const GeneratorParams& params)
      : params_(params), rng_(params.seed) {
    if (params.malformed_fraction > 0.0) {
      corrupt_every_ = static_cast<std::size_t>(std::llround(1.0 / params.malformed_fraction));
    }
  }

  std::mt19937_64& rng() { return rng_; }

  std::string next_rkey() { return fmt::format("3k{:011x}", ++rkey_counter_); }

  std::string cid_for(std::string_view uri) {
    return fmt::format("bafyrei{:016x}{:016x}", std::hash<std::string_view>{}(uri),
                       ++cid_counter_);
  }

  Timestamp random_time_on(int day_offset) {
    std::uniform_int_distribution<int> sec(0, 86'399);
    return Timestamp{params_.start + std::chrono::days(day_offset)} +
           std::chrono::seconds(sec(rng_));
  }

  Timestamp random_time() {
    std::uniform_int_distribution<int> day(0, params_.n_days - 1);
    return random_time_on(day(rng_));
  }

  std::string created_at(Timestamp ts) {
    std::uniform_int_distribution<int> ms(0, 999);
    return ts_millis(ts, ms(rng_));
  }

  RawRecord make(const Did& author, std::string_view nsid_value, json value) {
    const std::string uri = fmt::format("at://{}/{}/{}", author.str(), nsid_value, next_rkey());
    value["$type"] = nsid_value;
    RawRecord rec{uri, cid_for(uri), std::move(value)};
    if (corrupt_every_ > 0 && ++record_counter_ % corrupt_every_ == 0) {
      corrupt(rec, author);
    }
    return rec;
  }

 private:
  // Cycles through distinct malformations so every skip reason shows up.
  void corrupt(RawRecord& rec, const Did& author) {
    switch (corruptions_++ % 4) {
      case 0:
        rec.value.erase("createdAt");
        break;
      case 1:
        rec.value["$type"] = "app.bsky.feed.like";
        break;
      case 2:
        rec.value["createdAt"] = "yesterday";
        break;
      case 3:
        // Drop the collection segment; stays unique per record.
        rec.uri = "at://" + author.str() + "/" + rec.uri.substr(rec.uri.rfind('/') + 1);
        break;
    }
  }

  const GeneratorParams& params_;
  std::mt19937_64 rng_;
  std::size_t corrupt_every_ = 0;
  std::size_t record_counter_ = 0;
  std::size_t corruptions_ = 0;
  std::uint64_t rkey_counter_ = 0;
  std::uint64_t cid_counter_ = 0;
};

}  // namespace

void FixtureSet::validate() const {
  std::set<std::string> dids;
  for (const FixtureRepo& repo : repos) {
    if (!dids.insert(repo.did.str()).second) {
      throw std::invalid_argument("duplicate fixture DID " + repo.did.str());
    }
    for (const auto& [name, records] : repo.collections) {
      std::set<std::string_view> uris;
      for (const RawRecord& rec : records) {
        if (!uris.insert(rec.uri).second) {
          throw std::invalid_argument(fmt::format("duplicate record uri {} in {}/{}", rec.uri,
                                                  repo.did.str(), name));
        }
      }
    }
  }
}

std::size_t FixtureSet::record_count() const {
  std::size_t n = 0;
  for (const FixtureRepo& repo : repos) {
    for (const auto& [name, records] : repo.collections) {
      n += records.size();
    }
  }
  return n;
}

std::size_t FixtureSet::record_count(std::string_view nsid_value) const {
  std::size_t n = 0;
  for (const FixtureRepo& repo : repos) {
    if (const auto it = repo.collections.find(std::string(nsid_value));
        it != repo.collections.end()) {
      n += it->second.size();
    }
  }
  return n;
}

json fixtures_to_json(const FixtureSet& fixtures) {
  json repos = json::array();
  for (const FixtureRepo& repo : fixtures.repos) {
    json collections = json::object();
    for (const auto& [name, records] : repo.collections) {
      json list = json::array();
      for (const RawRecord& rec : records) {
        list.push_back({{"uri", rec.uri}, {"cid", rec.cid}, {"value", rec.value}});
      }
      collections[name] = std::move(list);
    }
    repos.push_back(
        {{"did", repo.did.str()}, {"handle", repo.handle}, {"collections", std::move(collections)}});
  }
  json plan = json::array();
  for (const FailureInjection& f : fixtures.failure_plan) {
    plan.push_back({{"request_index", f.request_index}, {"failure", failure_name(f.failure)}});
  }
  return json{{"repos", std::move(repos)}, {"failure_plan", std::move(plan)}};
}

FixtureSet fixtures_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("repos") || !doc["repos"].is_array()) {
    throw std::invalid_argument("fixtures: expected an object with a 'repos' array");
  }
  FixtureSet out;
  for (const json& repo : doc["repos"]) {
    FixtureRepo r{Did(repo.at("did").get<std::string>()), repo.value("handle", ""), {}};
    if (const auto it = repo.find("collections"); it != repo.end()) {
      for (const auto& [name, list] : it->items()) {
        auto& records = r.collections[name];
        for (const json& rec : list) {
          records.push_back(RawRecord{rec.at("uri").get<std::string>(), rec.value("cid", ""),
                                      rec.value("value", json::object())});
        }
      }
    }
    out.repos.push_back(std::move(r));
  }
  if (const auto it = doc.find("failure_plan"); it != doc.end()) {
    for (const json& f : *it) {
      out.failure_plan.push_back(FailureInjection{f.at("request_index").get<std::uint64_t>(),
                                                  failure_from_json(f.at("failure"))});
    }
  }
  out.validate();
  return out;
}

FixtureSet load_fixtures(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open fixtures " + path.string());
  }
  const json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) {
    throw std::invalid_argument("fixtures " + path.string() + " is not valid JSON");
  }
  return fixtures_from_json(doc);
}

void save_fixtures(const FixtureSet& fixtures, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write fixtures " + path.string());
  }
  out << fixtures_to_json(fixtures).dump() << '\n';
}

void GeneratorParams::validate() const {
  if (n_days < 1) {
    throw std::invalid_argument("n_days must be at least 1");
  }
  for (double rate : {blocks_per_user_day, follows_per_user, posts_per_user, reposts_per_user}) {
    if (!(rate >= 0.0) || !std::isfinite(rate)) {
      throw std::invalid_argument("activity rates must be finite and non-negative");
    }
  }
  if (!(facet_probability >= 0.0 && facet_probability <= 1.0)) {
    throw std::invalid_argument("facet_probability must be in [0, 1]");
  }
  if (!(malformed_fraction >= 0.0 && malformed_fraction <= 1.0)) {
    throw std::invalid_argument("malformed_fraction must be in [0, 1]");
  }
  for (const BurstPlan& b : bursts) {
    if (b.user_index >= n_users) {
      throw std::invalid_argument("burst user index out of range");
    }
    if (b.first_day < 0 || b.last_day < b.first_day || b.last_day >= n_days) {
      throw std::invalid_argument("burst days outside the generated range");
    }
    if (b.blocks_per_day < 1) {
      throw std::invalid_argument("burst blocks_per_day must be positive");
    }
  }
  if (n_users < 2 && (blocks_per_user_day > 0.0 || follows_per_user > 0.0 || !bursts.empty())) {
    throw std::invalid_argument("blocks and follows need at least two users");
  }
}

FixtureSet generate_fixtures(const GeneratorParams& params) {
  params.validate();
  Builder b(params);
  auto& rng = b.rng();

  std::vector<Did> dids;
  dids.reserve(params.n_users);
  for (std::size_t i = 0; i < params.n_users; ++i) {
    dids.emplace_back(fmt::format("did:plc:user{:06}", i));
  }
  const auto other_user = [&](std::size_t self) {
    std::uniform_int_distribution<std::size_t> pick(0, params.n_users - 2);
    const std::size_t j = pick(rng);
    return dids[j >= self ? j + 1 : j];
  };
  const auto poisson = [&](double mean) -> std::size_t {
    if (mean <= 0.0) {
      return 0;
    }
    return static_cast<std::size_t>(std::poisson_distribution<int>(mean)(rng));
  };
  std::bernoulli_distribution facet(params.facet_probability);

  std::set<std::size_t> bursters;
  for (const BurstPlan& plan : params.bursts) {
    bursters.insert(plan.user_index);
  }

  FixtureSet out;
  out.repos.reserve(params.n_users);
  for (std::size_t i = 0; i < params.n_users; ++i) {
    const Did& did = dids[i];
    FixtureRepo repo{did, fmt::format("user{:06}.test", i), {}};

    auto& blocks = repo.collections[std::string(kBlockNsid)];
    if (bursters.contains(i)) {
      for (const BurstPlan& plan : params.bursts) {
        if (plan.user_index != i) {
          continue;
        }
        for (int day = plan.first_day; day <= plan.last_day; ++day) {
          for (int k = 0; k < plan.blocks_per_day; ++k) {
            blocks.push_back(b.make(did, kBlockNsid,
                                    {{"subject", other_user(i).str()},
                                     {"createdAt", b.created_at(b.random_time_on(day))}}));
          }
        }
      }
    } else {
      for (int day = 0; day < params.n_days; ++day) {
        const std::size_t n = poisson(params.blocks_per_user_day);
        for (std::size_t k = 0; k < n; ++k) {
          blocks.push_back(b.make(did, kBlockNsid,
                                  {{"subject", other_user(i).str()},
                                   {"createdAt", b.created_at(b.random_time_on(day))}}));
        }
      }
    }

    auto& follows = repo.collections[std::string(kFollowNsid)];
    for (std::size_t k = poisson(params.follows_per_user); k > 0; --k) {
      follows.push_back(b.make(did, kFollowNsid,
                               {{"subject", other_user(i).str()},
                                {"createdAt", b.created_at(b.random_time())}}));
    }

    auto& posts = repo.collections[std::string(kPostNsid)];
    for (std::size_t k = poisson(params.posts_per_user); k > 0; --k) {
      json value = {{"text", fmt::format("post {} from {}", k, repo.handle)},
                    {"createdAt", b.created_at(b.random_time())},
                    {"langs", json::array({"en"})}};
      json features = json::array();
      if (facet(rng)) {
        features.push_back({{"$type", "app.bsky.richtext.facet#tag"}, {"tag", fmt::format("topic{}", k)}});
      }
      if (facet(rng)) {
        features.push_back({{"$type", "app.bsky.richtext.facet#link"},
                            {"uri", fmt::format("https://example.com/{}/{}", i, k)}});
      }
      if (facet(rng) && params.n_users > 1) {
        features.push_back({{"$type", "app.bsky.richtext.facet#mention"}, {"did", other_user(i).str()}});
      }
      if (!features.empty()) {
        json facets = json::array();
        for (json& f : features) {
          facets.push_back({{"index", {{"byteStart", 0}, {"byteEnd", 4}}},
                            {"features", json::array({std::move(f)})}});
        }
        value["facets"] = std::move(facets);
      }
      posts.push_back(b.make(did, kPostNsid, std::move(value)));
    }

    auto& reposts = repo.collections[std::string(kRepostNsid)];
    for (std::size_t k = poisson(params.reposts_per_user); k > 0; --k) {
      const std::string subject_uri =
          fmt::format("at://{}/{}/3kexternal{:04}", other_user(i).str(), kPostNsid, k);
      reposts.push_back(b.make(did, kRepostNsid,
                               {{"subject", {{"uri", subject_uri}, {"cid", b.cid_for(subject_uri)}}},
                                {"createdAt", b.created_at(b.random_time())}}));
    }

    if (params.profiles) {
      const std::string uri = fmt::format("at://{}/{}/self", did.str(), kProfileNsid);
      repo.collections[std::string(kProfileNsid)].push_back(RawRecord{
          uri, b.cid_for(uri),
          {{"$type", kProfileNsid},
           {"displayName", fmt::format("User {}", i)},
           {"description", fmt::format("Synthetic account {}\nline two, \"quoted\"", i)},
           {"avatar",
            {{"$type", "blob"},
             {"ref", {{"$link", fmt::format("bafkrei{:020}", i)}}},
             {"mimeType", "image/jpeg"},
             {"size", 1024}}}}});
    }
    out.repos.push_back(std::move(repo));
  }
  return out;
}

}  // namespace atgraph
