#include "ocdn/ring.hpp"

#include <algorithm>
#include <sstream>

namespace ocdn::ring {

SelfCertifyingId SelfCertifyingId::for_key(std::string ip, const core::PublicKey& key)
{
  return {std::move(ip), key.fingerprint()};
}

SelfCertifyingId SelfCertifyingId::parse(std::string_view display)
{
  auto colon = display.rfind(':');
  if (colon == std::string_view::npos || colon == 0)
    throw MalformedError("self-certifying id must look like ip:hostid");
  Bytes host = from_hex(display.substr(colon + 1));
  if (host.size() != 32)
    throw MalformedError("hostID must be 32 bytes");
  SelfCertifyingId id;
  id.ip = std::string(display.substr(0, colon));
  std::copy(host.begin(), host.end(), id.host_id.begin());
  return id;
}

std::string SelfCertifyingId::display() const
{
  return ip + ":" + to_hex(host_id);
}

bool verify_member(const SelfCertifyingId& id, const core::PublicKey& key)
{
  if (!key.valid())
    return false;
  return equal_ct(id.host_id, key.fingerprint());
}

RingPosition position_of_url(const core::CanonicalUrl& url, std::uint32_t encoding_index)
{
  return RingPosition::of_bytes(core::encode_url(url, encoding_index));
}

// ---------------------------------------------------------------------------

Ring::Ring(std::vector<SelfCertifyingId> members, unsigned virtual_points, unsigned replication)
  : m_members(std::move(members))
  , m_virtual_points(virtual_points)
  , m_replication(replication)
{
  if (virtual_points == 0)
    throw RangeError("a ring needs at least one virtual point per member");
  if (replication == 0)
    throw RangeError("replication factor must be at least 1");
  std::sort(m_members.begin(), m_members.end());
  m_members.erase(std::unique(m_members.begin(), m_members.end()), m_members.end());
  index_points();
}

Ring Ring::with_points(
  const std::vector<std::pair<SelfCertifyingId, std::vector<RingPosition>>>& placed,
  unsigned replication)
{
  Ring r;
  r.m_replication = replication;
  r.m_hand_placed = true;
  r.m_virtual_points = 0;
  for (const auto& [id, points] : placed) {
    r.m_members.push_back(id);
    for (const auto& p : points)
      r.m_points.emplace_back(p, r.m_members.size() - 1);
    r.m_virtual_points = std::max<unsigned>(r.m_virtual_points, points.size());
  }
  std::sort(r.m_points.begin(), r.m_points.end());
  return r;
}

RingPosition Ring::virtual_point(const SelfCertifyingId& member, std::uint32_t j)
{
  std::string display = member.display();
  Bytes name(display.begin(), display.end());
  name.push_back(0x00);
  put_u32_be(name, j);
  return RingPosition::of_bytes(name);
}

void Ring::index_points()
{
  m_points.clear();
  m_points.reserve(m_members.size() * m_virtual_points);
  for (std::size_t i = 0; i < m_members.size(); ++i)
    for (std::uint32_t j = 0; j < m_virtual_points; ++j)
      m_points.emplace_back(virtual_point(m_members[i], j), i);
  std::sort(m_points.begin(), m_points.end());
}

std::vector<SelfCertifyingId> Ring::owners_of(const RingPosition& pos) const
{
  return owners_of(pos, m_replication);
}

std::vector<SelfCertifyingId> Ring::owners_of(const RingPosition& pos, unsigned replicas) const
{
  if (m_members.size() < replicas || m_points.empty())
    throw InsufficientMembers("ring has " + std::to_string(m_members.size()) +
                              " members, need " + std::to_string(replicas));
  auto start = std::lower_bound(m_points.begin(), m_points.end(), pos,
                                [](const auto& entry, const RingPosition& p) { return entry.first < p; });
  std::size_t first = static_cast<std::size_t>(start - m_points.begin());
  std::vector<SelfCertifyingId> owners;
  std::vector<bool> taken(m_members.size(), false);
  for (std::size_t step = 0; step < m_points.size() && owners.size() < replicas; ++step) {
    std::size_t member = m_points[(first + step) % m_points.size()].second;
    if (!taken[member]) {
      taken[member] = true;
      owners.push_back(m_members[member]);
    }
  }
  if (owners.size() < replicas)
    throw InsufficientMembers("not enough placed members for the replication factor");
  return owners;
}

bool Ring::is_owner(const SelfCertifyingId& id, const RingPosition& pos) const
{
  auto owners = owners_of(pos);
  return std::find(owners.begin(), owners.end(), id) != owners.end();
}

Ring Ring::with_member(const SelfCertifyingId& id) const
{
  if (m_hand_placed)
    throw Error("hand-placed rings cannot be extended");
  auto members = m_members;
  members.push_back(id);
  return Ring(std::move(members), m_virtual_points, m_replication);
}

Ring Ring::without_member(const SelfCertifyingId& id) const
{
  if (m_hand_placed)
    throw Error("hand-placed rings cannot be shrunk");
  auto members = m_members;
  std::erase(members, id);
  return Ring(std::move(members), m_virtual_points, m_replication);
}

std::vector<RingPosition> diff_on_change(const Ring& before, const Ring& after,
                                         std::span<const RingPosition> sample)
{
  std::vector<RingPosition> moved;
  for (const auto& pos : sample)
    if (before.owners_of(pos) != after.owners_of(pos))
      moved.push_back(pos);
  return moved;
}

// ---------------------------------------------------------------------------
// Roster

namespace {

constexpr std::string_view kRosterMagic = "OCDN-ROSTER 1";

std::vector<std::string> split_words(const std::string& line)
{
  std::istringstream in(line);
  std::vector<std::string> words;
  std::string w;
  while (in >> w)
    words.push_back(w);
  return words;
}

} // namespace

std::string Roster::body(const core::PublicKey& authority) const
{
  std::ostringstream out;
  out << kRosterMagic << '\n';
  out << "version " << version << '\n';
  out << "authority " << to_base64(authority.der()) << '\n';
  for (const auto& e : entries)
    out << "member " << e.id.display() << ' ' << e.address << ' ' << to_base64(e.public_key.der())
        << '\n';
  return out.str();
}

std::string Roster::sign(const core::KeyPair& authority) const
{
  std::string text = body(authority.public_key());
  auto sig = core::sign_bytes(authority, as_bytes(text));
  return text + "signature " + to_base64(sig) + '\n';
}

Roster Roster::parse(std::string_view text, const core::PublicKey* trusted_authority)
{
  auto sig_pos = text.rfind("signature ");
  if (sig_pos == std::string_view::npos || (sig_pos > 0 && text[sig_pos - 1] != '\n'))
    throw MalformedError("roster is not signed");
  std::string_view signed_part = text.substr(0, sig_pos);
  std::string sig_line(text.substr(sig_pos));
  auto sig_words = split_words(sig_line);
  if (sig_words.size() != 2)
    throw MalformedError("bad roster signature line");

  Roster roster;
  std::istringstream in{std::string(signed_part)};
  std::string line;
  if (!std::getline(in, line) || line != kRosterMagic)
    throw MalformedError("not a roster document");
  bool have_version = false;
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    auto words = split_words(line);
    if (words[0] == "version" && words.size() == 2) {
      roster.version = std::stoull(words[1]);
      have_version = true;
    }
    else if (words[0] == "authority" && words.size() == 2) {
      roster.m_authority = core::PublicKey::from_der(from_base64(words[1]));
    }
    else if (words[0] == "member" && words.size() == 4) {
      RosterEntry e{SelfCertifyingId::parse(words[1]), words[2],
                    core::PublicKey::from_der(from_base64(words[3]))};
      if (!verify_member(e.id, e.public_key))
        throw MalformedError("roster member " + words[1] + " fails self-certification");
      roster.entries.push_back(std::move(e));
    }
    else {
      throw MalformedError("unknown roster line: " + line);
    }
  }
  if (!have_version || !roster.m_authority.valid())
    throw MalformedError("roster lacks version or authority");
  if (trusted_authority != nullptr && !(*trusted_authority == roster.m_authority))
    throw MalformedError("roster signed by an untrusted authority");
  if (!core::verify_bytes(roster.m_authority, as_bytes(signed_part), from_base64(sig_words[1])))
    throw MalformedError("roster signature does not verify");
  return roster;
}

Ring Roster::ring(unsigned virtual_points, unsigned replication) const
{
  std::vector<SelfCertifyingId> ids;
  for (const auto& e : entries)
    ids.push_back(e.id);
  return Ring(std::move(ids), virtual_points, replication);
}

const RosterEntry* Roster::find(const SelfCertifyingId& id) const
{
  for (const auto& e : entries)
    if (e.id == id)
      return &e;
  return nullptr;
}

const RosterEntry* Roster::find_address(std::string_view address) const
{
  for (const auto& e : entries)
    if (e.address == address)
      return &e;
  return nullptr;
}

void Roster::upsert(RosterEntry entry)
{
  for (auto& e : entries) {
    if (e.id == entry.id) {
      e = std::move(entry);
      ++version;
      return;
    }
  }
  entries.push_back(std::move(entry));
  ++version;
}

} // namespace ocdn::ring
