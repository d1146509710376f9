#include "ocdn/transport.hpp"

#include <sstream>

namespace ocdn::net {

std::string_view to_string(PutStatus s)
{
  switch (s) {
  case PutStatus::Stored:
    return "stored";
  case PutStatus::Unchanged:
    return "unchanged";
  case PutStatus::BadSignature:
    return "bad-signature";
  case PutStatus::OriginMismatch:
    return "origin-mismatch";
  case PutStatus::Untrusted:
    return "untrusted-origin";
  }
  return "unknown";
}

std::string RelayMessage::route_header() const
{
  std::string out;
  for (std::size_t i = 0; i < route.size(); ++i) {
    if (i > 0)
      out.push_back(',');
    out += route[i];
  }
  return out;
}

std::vector<std::string> RelayMessage::parse_route(std::string_view header)
{
  std::vector<std::string> hops;
  std::size_t start = 0;
  while (start <= header.size()) {
    auto comma = header.find(',', start);
    auto hop = header.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                    : comma - start);
    if (hop.empty())
      throw MalformedError("empty hop in route");
    hops.emplace_back(hop);
    if (comma == std::string_view::npos)
      break;
    start = comma + 1;
  }
  return hops;
}

namespace {

constexpr std::string_view kRelayTag = "OCDN-RELAY/1\n";
constexpr std::string_view kDeliverTag = "OCDN-DELIVER/1\n";

// Splits "tag\nname: value\n...\n\nbody" into header values and the body.
std::pair<std::map<std::string, std::string>, ByteView> split_headers(ByteView wire,
                                                                       std::string_view tag)
{
  std::string_view text(reinterpret_cast<const char*>(wire.data()), wire.size());
  if (!text.starts_with(tag))
    throw MalformedError("unexpected message tag");
  auto end = text.find("\n\n", tag.size() - 1);
  if (end == std::string_view::npos)
    throw MalformedError("unterminated message headers");
  std::map<std::string, std::string> headers;
  std::string_view block = text.substr(tag.size(), end + 1 - tag.size());
  while (!block.empty()) {
    auto nl = block.find('\n');
    auto line = block.substr(0, nl);
    auto colon = line.find(": ");
    if (colon == std::string_view::npos)
      throw MalformedError("bad header line");
    headers.emplace(std::string(line.substr(0, colon)), std::string(line.substr(colon + 2)));
    block.remove_prefix(nl + 1);
  }
  return {headers, wire.subspan(end + 2)};
}

const std::string& header(const std::map<std::string, std::string>& h, const std::string& name)
{
  auto it = h.find(name);
  if (it == h.end())
    throw MalformedError("missing header " + name);
  return it->second;
}

RequestId parse_request_id(std::string_view hex)
{
  Bytes raw = from_hex(hex);
  if (raw.size() != 16)
    throw MalformedError("request id must be 16 bytes");
  RequestId id{};
  std::copy(raw.begin(), raw.end(), id.begin());
  return id;
}

} // namespace

Bytes RelayMessage::serialize() const
{
  std::ostringstream head;
  head << kRelayTag << "X-OCDN: " << to_base64(sealed_session_key) << '\n'
       << "X-OCDN-Route: " << route_header() << '\n'
       << "X-OCDN-Req: " << to_hex(request_id) << "\n\n";
  std::string h = head.str();
  Bytes out(h.begin(), h.end());
  append(out, encrypted_url);
  return out;
}

RelayMessage RelayMessage::parse(ByteView wire)
{
  auto [headers, body] = split_headers(wire, kRelayTag);
  RelayMessage msg;
  msg.sealed_session_key = from_base64(header(headers, "X-OCDN"));
  msg.route = parse_route(header(headers, "X-OCDN-Route"));
  msg.request_id = parse_request_id(header(headers, "X-OCDN-Req"));
  msg.encrypted_url.assign(body.begin(), body.end());
  return msg;
}

Bytes DeliverMessage::serialize() const
{
  std::string h = std::string(kDeliverTag) + "X-OCDN-Req: " + to_hex(request_id) + "\n\n";
  Bytes out(h.begin(), h.end());
  append(out, body);
  return out;
}

DeliverMessage DeliverMessage::parse(ByteView wire)
{
  auto [headers, rest] = split_headers(wire, kDeliverTag);
  DeliverMessage msg;
  msg.request_id = parse_request_id(header(headers, "X-OCDN-Req"));
  msg.body.assign(rest.begin(), rest.end());
  return msg;
}

// ---------------------------------------------------------------------------

void LocalNetwork::attach(const std::string& address, RelayHandler* handler)
{
  std::lock_guard lock(m_mutex);
  m_handlers[address] = handler;
}

void LocalNetwork::detach(const std::string& address)
{
  std::lock_guard lock(m_mutex);
  m_handlers.erase(address);
}

RelayHandler* LocalNetwork::lookup(const std::string& address)
{
  std::lock_guard lock(m_mutex);
  auto it = m_handlers.find(address);
  return it == m_handlers.end() ? nullptr : it->second;
}

void LocalNetwork::note(Transmission t)
{
  if (m_observer)
    m_observer(t);
  std::lock_guard lock(m_mutex);
  ++m_count;
  if (m_record)
    m_log.push_back(std::move(t));
}

std::vector<LocalNetwork::Transmission> LocalNetwork::take_wire_log()
{
  std::lock_guard lock(m_mutex);
  return std::exchange(m_log, {});
}

bool LocalNetwork::send_relay(const std::string& from, const std::string& to,
                              const RelayMessage& msg)
{
  Bytes wire = msg.serialize();
  note({Kind::Relay, from, to, wire});
  auto* handler = lookup(to);
  if (handler == nullptr)
    return false;
  // Handlers see the message as decoded from the wire.
  handler->on_relay(RelayMessage::parse(wire), from);
  return true;
}

bool LocalNetwork::send_deliver(const std::string& from, const std::string& to,
                                const DeliverMessage& msg)
{
  Bytes wire = msg.serialize();
  Transmission t{Kind::Deliver, from, to, wire};
  note(t);
  auto* handler = lookup(to);
  if (handler == nullptr)
    return false;
  handler->on_deliver(DeliverMessage::parse(wire), from);
  if (m_after_deliver)
    m_after_deliver(t);
  return true;
}

} // namespace ocdn::net
