#include "atgraph/records.hpp"

#include <array>
#include <utility>

#include <fmt/format.h>

namespace atgraph {
namespace {

using json = nlohmann::json;

constexpr std::array<std::pair<SkipReason, std::string_view>, 7> kReasonNames = {{
    {SkipReason::MalformedUri, "malformed_uri"},
    {SkipReason::WrongType, "wrong_type"},
    {SkipReason::MissingField, "missing_field"},
    {SkipReason::InvalidField, "invalid_field"},
    {SkipReason::SelfReference, "self_reference"},
    {SkipReason::OutsideWindow, "outside_window"},
    {SkipReason::MalformedFacet, "malformed_facet"},
}};

constexpr std::string_view kTagFeature = "app.bsky.richtext.facet#tag";
constexpr std::string_view kLinkFeature = "app.bsky.richtext.facet#link";
constexpr std::string_view kMentionFeature = "app.bsky.richtext.facet#mention";

[[noreturn]] void fail(SkipReason reason, const RawRecord& raw, std::string_view detail) {
  throw ParseError(reason, fmt::format("{}: {}", raw.uri, detail));
}

// Validates the envelope shared by every collection and returns the author
// and rkey from the uri.
AtUri check_envelope(const RawRecord& raw, std::string_view expected_nsid) {
  auto uri = parse_at_uri(raw.uri);
  if (!uri || uri->collection != expected_nsid) {
    fail(SkipReason::MalformedUri, raw, "uri is not a record of " + std::string(expected_nsid));
  }
  if (!raw.value.is_object()) {
    fail(SkipReason::MissingField, raw, "record value is not an object");
  }
  if (const auto it = raw.value.find("$type"); it != raw.value.end()) {
    if (!it->is_string() || it->get_ref<const std::string&>() != expected_nsid) {
      fail(SkipReason::WrongType, raw, "unexpected $type " + it->dump());
    }
  }
  return std::move(*uri);
}

const std::string* find_string(const json& obj, const char* field) {
  if (!obj.is_object()) {
    return nullptr;
  }
  const auto it = obj.find(field);
  if (it == obj.end() || !it->is_string()) {
    return nullptr;
  }
  return &it->get_ref<const std::string&>();
}

const std::string& require_string(const RawRecord& raw, const json& obj, const char* field,
                                  bool allow_empty = false) {
  const std::string* value = find_string(obj, field);
  if (value == nullptr || (!allow_empty && value->empty())) {
    fail(SkipReason::MissingField, raw, fmt::format("missing '{}'", field));
  }
  return *value;
}

Timestamp require_created_at(const RawRecord& raw) {
  const std::string& text = require_string(raw, raw.value, "createdAt");
  const auto ts = parse_timestamp(text);
  if (!ts) {
    fail(SkipReason::InvalidField, raw, "unparseable createdAt '" + text + "'");
  }
  return *ts;
}

Did require_subject_did(const RawRecord& raw, const Did& author) {
  const std::string& text = require_string(raw, raw.value, "subject");
  auto subject = Did::parse(text);
  if (!subject) {
    fail(SkipReason::InvalidField, raw, "subject is not a DID: '" + text + "'");
  }
  if (*subject == author) {
    fail(SkipReason::SelfReference, raw, "subject is the record author");
  }
  return std::move(*subject);
}

std::optional<std::string> non_empty(const std::string* value) {
  if (value == nullptr || value->empty()) {
    return std::nullopt;
  }
  return *value;
}

bool is_absolute_url(std::string_view uri) {
  const auto colon = uri.find("://");
  if (colon == std::string_view::npos || colon == 0 || colon + 3 >= uri.size()) {
    return false;
  }
  const auto is_scheme_char = [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '+' || c == '-' || c == '.';
  };
  for (std::size_t i = 0; i < colon; ++i) {
    if (!is_scheme_char(uri[i])) {
      return false;
    }
  }
  return uri.find_first_of(" \t\r\n") == std::string_view::npos;
}

// Profile avatars are blobs; render them as the public CDN URL.
std::optional<std::string> avatar_url(const json& avatar, const Did& did) {
  if (avatar.is_string()) {
    return non_empty(&avatar.get_ref<const std::string&>());
  }
  if (!avatar.is_object()) {
    return std::nullopt;
  }
  const auto ref = avatar.find("ref");
  if (ref == avatar.end()) {
    return std::nullopt;
  }
  const std::string* link = find_string(*ref, "$link");
  if (link == nullptr && ref->is_string()) {
    link = &ref->get_ref<const std::string&>();
  }
  if (link == nullptr || link->empty()) {
    return std::nullopt;
  }
  return fmt::format("https://cdn.bsky.app/img/avatar/plain/{}/{}@jpeg", did.str(), *link);
}

}  // namespace

std::string_view to_string(SkipReason reason) noexcept {
  for (const auto& [r, name] : kReasonNames) {
    if (r == reason) {
      return name;
    }
  }
  return "unknown";
}

std::optional<SkipReason> skip_reason_from_string(std::string_view text) noexcept {
  for (const auto& [r, name] : kReasonNames) {
    if (name == text) {
      return r;
    }
  }
  return std::nullopt;
}

std::optional<AtUri> parse_at_uri(std::string_view uri) {
  constexpr std::string_view kScheme = "at://";
  if (!uri.starts_with(kScheme)) {
    return std::nullopt;
  }
  uri.remove_prefix(kScheme.size());
  const auto first = uri.find('/');
  if (first == std::string_view::npos) {
    return std::nullopt;
  }
  const auto second = uri.find('/', first + 1);
  if (second == std::string_view::npos) {
    return std::nullopt;
  }
  auto authority = Did::parse(uri.substr(0, first));
  const std::string_view collection = uri.substr(first + 1, second - first - 1);
  const std::string_view rkey = uri.substr(second + 1);
  if (!authority || collection.empty() || rkey.empty() ||
      rkey.find('/') != std::string_view::npos) {
    return std::nullopt;
  }
  return AtUri{std::move(*authority), std::string(collection), std::string(rkey)};
}

BlockRow parse_block(const RawRecord& raw) {
  AtUri uri = check_envelope(raw, kBlockNsid);
  Did subject = require_subject_did(raw, uri.authority);
  const Timestamp created = require_created_at(raw);
  return BlockRow{std::move(uri.authority), std::move(subject), std::move(uri.rkey), created};
}

FollowRow parse_follow(const RawRecord& raw) {
  AtUri uri = check_envelope(raw, kFollowNsid);
  Did subject = require_subject_did(raw, uri.authority);
  const Timestamp created = require_created_at(raw);
  return FollowRow{std::move(uri.authority), std::move(subject), std::move(uri.rkey), created};
}

PostRow parse_post(const RawRecord& raw) {
  AtUri uri = check_envelope(raw, kPostNsid);
  std::string text = require_string(raw, raw.value, "text", /*allow_empty=*/true);
  const Timestamp created = require_created_at(raw);

  std::optional<std::string> parent;
  if (const auto reply = raw.value.find("reply"); reply != raw.value.end()) {
    const auto parent_ref = reply->is_object() ? reply->find("parent") : reply->end();
    if (parent_ref != reply->end()) {
      parent = non_empty(find_string(*parent_ref, "uri"));
    }
  }
  return PostRow{std::move(uri.authority), std::move(uri.rkey), std::move(text), created,
                 std::move(parent)};
}

RepostRow parse_repost(const RawRecord& raw) {
  AtUri uri = check_envelope(raw, kRepostNsid);
  const auto subject = raw.value.find("subject");
  if (subject == raw.value.end() || !subject->is_object()) {
    fail(SkipReason::MissingField, raw, "missing 'subject'");
  }
  std::string subject_uri = require_string(raw, *subject, "uri");
  std::string subject_cid = require_string(raw, *subject, "cid");
  const Timestamp created = require_created_at(raw);
  return RepostRow{std::move(uri.authority), std::move(subject_uri), std::move(subject_cid),
                   std::move(uri.rkey), created};
}

UserRow build_user(const RepoDescription& desc, const RawRecord* profile) {
  UserRow user{desc.did, desc.handle, std::nullopt, std::nullopt, std::nullopt, std::nullopt};
  if (profile == nullptr || !profile->value.is_object()) {
    return user;
  }
  const json& value = profile->value;
  user.display_name = non_empty(find_string(value, "displayName"));
  user.description = non_empty(find_string(value, "description"));
  if (const auto it = value.find("avatar"); it != value.end()) {
    user.avatar_url = avatar_url(*it, desc.did);
  }
  if (const std::string* created = find_string(value, "createdAt")) {
    user.profile_created_at = parse_timestamp(*created);
  }
  return user;
}

Facets extract_facets(const RawRecord& post) {
  const auto uri = parse_at_uri(post.uri);
  if (!uri) {
    throw ParseError(SkipReason::MalformedUri, post.uri + ": malformed post uri");
  }
  Facets out;
  if (!post.value.is_object()) {
    return out;
  }
  const auto facets = post.value.find("facets");
  if (facets == post.value.end()) {
    return out;
  }
  if (!facets->is_array()) {
    ++out.skipped;
    return out;
  }
  for (const json& facet : *facets) {
    const auto features = facet.is_object() ? facet.find("features") : facet.end();
    if (!facet.is_object() || features == facet.end() || !features->is_array()) {
      ++out.skipped;
      continue;
    }
    for (const json& feature : *features) {
      const std::string* type = find_string(feature, "$type");
      if (type == nullptr) {
        ++out.skipped;
      } else if (*type == kTagFeature) {
        const std::string* tag = find_string(feature, "tag");
        std::string_view name = tag != nullptr ? std::string_view(*tag) : std::string_view{};
        if (name.starts_with('#')) {
          name.remove_prefix(1);
        }
        if (name.empty()) {
          ++out.skipped;
        } else {
          out.tags.push_back(TagRow{uri->authority, uri->rkey, std::string(name)});
        }
      } else if (*type == kLinkFeature) {
        const std::string* link = find_string(feature, "uri");
        if (link == nullptr || !is_absolute_url(*link)) {
          ++out.skipped;
        } else {
          out.links.push_back(LinkRow{uri->authority, uri->rkey, *link});
        }
      } else if (*type == kMentionFeature) {
        const std::string* did = find_string(feature, "did");
        auto mentioned = did != nullptr ? Did::parse(*did) : std::nullopt;
        if (!mentioned) {
          ++out.skipped;
        } else {
          out.mentions.push_back(MentionRow{uri->authority, uri->rkey, std::move(*mentioned)});
        }
      } else {
        ++out.skipped;
      }
    }
  }
  return out;
}

}  // namespace atgraph
