#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "atgraph/time.hpp"
#include "atgraph/types.hpp"
#include "atgraph/xrpc_client.hpp"

namespace atgraph {

// Why a record (or a facet feature) did not become a row.
enum class SkipReason {
  MalformedUri,     // uri is not at://<did>/<collection>/<rkey>
  WrongType,        // value.$type does not match the collection
  MissingField,     // a required field is absent or empty
  InvalidField,     // a field is present but unparseable (timestamp, DID)
  SelfReference,    // block/follow whose subject is the author
  OutsideWindow,    // created_at outside the crawl's since/until window
  MalformedFacet,   // a facet feature lacking its payload
};

std::string_view to_string(SkipReason reason) noexcept;
std::optional<SkipReason> skip_reason_from_string(std::string_view text) noexcept;

class ParseError : public std::runtime_error {
 public:
  ParseError(SkipReason reason, const std::string& what)
      : std::runtime_error(what), reason_(reason) {}

  SkipReason reason() const noexcept { return reason_; }

 private:
  SkipReason reason_;
};

struct AtUri {
  Did authority;
  std::string collection;
  std::string rkey;
};

std::optional<AtUri> parse_at_uri(std::string_view uri);

struct BlockRow {
  Did blocker;
  Did subject;
  std::string rkey;
  Timestamp created_at;

  friend bool operator==(const BlockRow&, const BlockRow&) = default;
};

struct FollowRow {
  Did follower;
  Did subject;
  std::string rkey;
  Timestamp created_at;

  friend bool operator==(const FollowRow&, const FollowRow&) = default;
};

struct UserRow {
  Did did;
  std::string handle;
  std::optional<std::string> display_name;
  std::optional<std::string> description;
  std::optional<std::string> avatar_url;
  std::optional<Timestamp> profile_created_at;

  friend bool operator==(const UserRow&, const UserRow&) = default;
};

struct PostRow {
  Did author;
  std::string rkey;
  std::string text;
  Timestamp created_at;
  std::optional<std::string> reply_parent_uri;

  friend bool operator==(const PostRow&, const PostRow&) = default;
};

struct RepostRow {
  Did reposter;
  std::string subject_uri;
  std::string subject_cid;
  std::string rkey;
  Timestamp created_at;

  friend bool operator==(const RepostRow&, const RepostRow&) = default;
};

struct TagRow {
  Did author;
  std::string post_rkey;
  std::string tag;

  friend bool operator==(const TagRow&, const TagRow&) = default;
};

struct LinkRow {
  Did author;
  std::string post_rkey;
  std::string uri;

  friend bool operator==(const LinkRow&, const LinkRow&) = default;
};

struct MentionRow {
  Did author;
  std::string post_rkey;
  Did mentioned;

  friend bool operator==(const MentionRow&, const MentionRow&) = default;
};

// Each parser throws ParseError carrying the skip reason.
BlockRow parse_block(const RawRecord& raw);
FollowRow parse_follow(const RawRecord& raw);
PostRow parse_post(const RawRecord& raw);
RepostRow parse_repost(const RawRecord& raw);

// Never fails; a missing or partial profile leaves optional fields empty.
UserRow build_user(const RepoDescription& desc, const RawRecord* profile);

struct Facets {
  std::vector<TagRow> tags;
  std::vector<LinkRow> links;
  std::vector<MentionRow> mentions;
  std::size_t skipped = 0;  // malformed facet features
};

// Walks value.facets[].features[] in order. Only the protocol's rich-text
// facets are consulted; post text is never scanned.
Facets extract_facets(const RawRecord& post);

// Tally of skip reasons, keyed by reason.
using SkipCounts = std::map<SkipReason, std::size_t>;

}  // namespace atgraph
