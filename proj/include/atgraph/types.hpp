#pragma once

#include <compare>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace atgraph {

// Decentralized identifier, `did:<method>:<identifier>`. Join key for every
// user-owned row.
class Did {
 public:
  // Throws std::invalid_argument when `value` is not a well-formed DID.
  explicit Did(std::string value);

  static bool is_valid(std::string_view value) noexcept;
  static std::optional<Did> parse(std::string_view value);

  const std::string& str() const noexcept { return value_; }

  friend auto operator<=>(const Did&, const Did&) = default;
  friend bool operator==(const Did&, const Did&) = default;

 private:
  std::string value_;
};

// Opaque pagination token. Never interpreted, only echoed back.
class Cursor {
 public:
  explicit Cursor(std::string value);

  const std::string& str() const noexcept { return value_; }

  friend bool operator==(const Cursor&, const Cursor&) = default;

 private:
  std::string value_;
};

// The five record collections a crawl understands.
enum class Collection { Block, Follow, Post, Repost, Profile };

inline constexpr std::string_view kBlockNsid = "app.bsky.graph.block";
inline constexpr std::string_view kFollowNsid = "app.bsky.graph.follow";
inline constexpr std::string_view kPostNsid = "app.bsky.feed.post";
inline constexpr std::string_view kRepostNsid = "app.bsky.feed.repost";
inline constexpr std::string_view kProfileNsid = "app.bsky.actor.profile";

std::string_view nsid(Collection c) noexcept;
std::optional<Collection> collection_from_nsid(std::string_view nsid) noexcept;
std::span<const Collection> all_collections() noexcept;

}  // namespace atgraph
