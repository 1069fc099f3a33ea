#include "atgraph/types.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>

namespace atgraph {
namespace {

bool is_method_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
}

bool is_identifier_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
         (c >= '0' && c <= '9') || c == '.' || c == '_' || c == ':' ||
         c == '%' || c == '-';
}

constexpr std::array<Collection, 5> kAllCollections = {
    Collection::Block, Collection::Follow, Collection::Post,
    Collection::Repost, Collection::Profile};

}  // namespace

Did::Did(std::string value) : value_(std::move(value)) {
  if (!is_valid(value_)) {
    throw std::invalid_argument("malformed DID: '" + value_ + "'");
  }
}

bool Did::is_valid(std::string_view value) noexcept {
  constexpr std::string_view kPrefix = "did:";
  if (!value.starts_with(kPrefix)) {
    return false;
  }
  const std::string_view rest = value.substr(kPrefix.size());
  const auto colon = rest.find(':');
  if (colon == std::string_view::npos || colon == 0) {
    return false;
  }
  const std::string_view method = rest.substr(0, colon);
  const std::string_view ident = rest.substr(colon + 1);
  if (ident.empty() || ident.back() == ':') {
    return false;
  }
  return std::all_of(method.begin(), method.end(), is_method_char) &&
         std::all_of(ident.begin(), ident.end(), is_identifier_char);
}

std::optional<Did> Did::parse(std::string_view value) {
  if (!is_valid(value)) {
    return std::nullopt;
  }
  return Did(std::string(value));
}

Cursor::Cursor(std::string value) : value_(std::move(value)) {
  if (value_.empty()) {
    throw std::invalid_argument("cursor must be non-empty");
  }
}

std::string_view nsid(Collection c) noexcept {
  switch (c) {
    case Collection::Block:
      return kBlockNsid;
    case Collection::Follow:
      return kFollowNsid;
    case Collection::Post:
      return kPostNsid;
    case Collection::Repost:
      return kRepostNsid;
    case Collection::Profile:
      return kProfileNsid;
  }
  return kBlockNsid;
}

std::optional<Collection> collection_from_nsid(std::string_view value) noexcept {
  for (Collection c : kAllCollections) {
    if (nsid(c) == value) {
      return c;
    }
  }
  return std::nullopt;
}

std::span<const Collection> all_collections() noexcept {
  return kAllCollections;
}

}  // namespace atgraph
