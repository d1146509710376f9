#pragma once

#include "ocdn/core.hpp"

#include <optional>

namespace ocdn::ring {

inline constexpr unsigned kDefaultVirtualPoints = 64;
inline constexpr unsigned kDefaultReplication = 1;

/// `IP:hostID` where hostID = SHA-256 of the proxy's DER public key.
struct SelfCertifyingId
{
  std::string ip;
  core::Digest host_id{};

  static SelfCertifyingId for_key(std::string ip, const core::PublicKey& key);
  /// Parses "ip:hex". The split is at the last ':' so IPv6 literals work.
  static SelfCertifyingId parse(std::string_view display);

  std::string display() const;

  auto operator<=>(const SelfCertifyingId&) const = default;
};

/// Accept iff SHA-256(public key) equals the id's hostID.
bool verify_member(const SelfCertifyingId& id, const core::PublicKey& key);

/// A point on the 2^256 identifier circle, stored big-endian.
struct RingPosition
{
  core::Digest point{};

  static RingPosition of_bytes(ByteView name) { return {core::sha256(name)}; }

  auto operator<=>(const RingPosition&) const = default;
};

/// SHA-256 of the same encoded message the obfuscated id is computed over.
RingPosition position_of_url(const core::CanonicalUrl& url, std::uint32_t encoding_index);

class InsufficientMembers : public Error
{
public:
  using Error::Error;
};

/// Immutable consistent-hash ring snapshot.
class Ring
{
public:
  Ring() = default;
  explicit Ring(std::vector<SelfCertifyingId> members,
                unsigned virtual_points = kDefaultVirtualPoints,
                unsigned replication = kDefaultReplication);

  /// Ring with caller-placed points; used to pin layouts in tests.
  static Ring with_points(const std::vector<std::pair<SelfCertifyingId, std::vector<RingPosition>>>& placed,
                          unsigned replication = kDefaultReplication);

  /// Position of virtual point `j` of `member`.
  static RingPosition virtual_point(const SelfCertifyingId& member, std::uint32_t j);

  /// First `replication_factor()` distinct members at or clockwise after pos.
  std::vector<SelfCertifyingId> owners_of(const RingPosition& pos) const;
  std::vector<SelfCertifyingId> owners_of(const RingPosition& pos, unsigned replicas) const;

  bool is_owner(const SelfCertifyingId& id, const RingPosition& pos) const;

  Ring with_member(const SelfCertifyingId& id) const;
  Ring without_member(const SelfCertifyingId& id) const;

  const std::vector<SelfCertifyingId>& members() const { return m_members; }
  unsigned virtual_points() const { return m_virtual_points; }
  unsigned replication_factor() const { return m_replication; }
  std::size_t size() const { return m_members.size(); }

private:
  void index_points();

  std::vector<SelfCertifyingId> m_members;
  unsigned m_virtual_points = kDefaultVirtualPoints;
  unsigned m_replication = kDefaultReplication;
  // (point, index into m_members), sorted
  std::vector<std::pair<RingPosition, std::size_t>> m_points;
  bool m_hand_placed = false;
};

/// Positions from `sample` whose owner list differs between the two rings.
std::vector<RingPosition> diff_on_change(const Ring& before, const Ring& after,
                                         std::span<const RingPosition> sample);

// ---------------------------------------------------------------------------
// Roster document

struct RosterEntry
{
  SelfCertifyingId id;
  std::string address;
  core::PublicKey public_key;
};

/// Signed membership list of exit proxies (".roster" files).
///
///   OCDN-ROSTER 1
///   version <n>
///   authority <base64 DER public key>
///   member <ip:hostid> <host:port> <base64 DER public key>
///   signature <base64 signature over every preceding line>
class Roster
{
public:
  std::uint64_t version = 0;
  std::vector<RosterEntry> entries;

  /// Full document, signed by the roster authority.
  std::string sign(const core::KeyPair& authority) const;

  /// Verifies the signature and every member's self-certification. When
  /// `trusted_authority` is given the embedded authority must match it.
  static Roster parse(std::string_view text, const core::PublicKey* trusted_authority = nullptr);

  /// Authority key the last parsed document was signed with.
  const core::PublicKey& authority() const { return m_authority; }

  Ring ring(unsigned virtual_points = kDefaultVirtualPoints,
            unsigned replication = kDefaultReplication) const;

  const RosterEntry* find(const SelfCertifyingId& id) const;
  const RosterEntry* find_address(std::string_view address) const;

  /// Adds or replaces the entry with the same id; bumps the version.
  void upsert(RosterEntry entry);

private:
  std::string body(const core::PublicKey& authority) const;

  core::PublicKey m_authority;
};

} // namespace ocdn::ring
