#include "ocdn/core.hpp"

#include "core_internal.hpp"

#include <algorithm>
#include <cctype>

namespace ocdn::core {

// ---------------------------------------------------------------------------
// URLs and identifiers

namespace {

bool valid_scheme(std::string_view s)
{
  if (s.empty() || !std::isalpha(static_cast<unsigned char>(s[0])))
    return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '.';
  });
}

std::string lower(std::string_view s)
{
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

} // namespace

CanonicalUrl CanonicalUrl::parse(std::string_view text)
{
  for (char c : text) {
    if (static_cast<unsigned char>(c) <= 0x20 || c == 0x7f)
      throw MalformedError("URL contains whitespace or control characters");
  }
  auto sep = text.find("://");
  if (sep == std::string_view::npos)
    throw MalformedError("URL is not absolute: " + std::string(text));
  auto scheme = text.substr(0, sep);
  if (!valid_scheme(scheme))
    throw MalformedError("invalid URL scheme");
  auto rest = text.substr(sep + 3);
  if (auto hash = rest.find('#'); hash != std::string_view::npos)
    rest = rest.substr(0, hash);
  auto auth_end = rest.find_first_of("/?");
  auto authority = rest.substr(0, auth_end);
  if (authority.empty())
    throw MalformedError("URL has no host");
  std::string tail(auth_end == std::string_view::npos ? std::string_view{} : rest.substr(auth_end));
  if (tail.empty() || tail[0] != '/')
    tail.insert(0, "/");

  CanonicalUrl url;
  url.m_text = lower(scheme) + "://" + lower(authority);
  url.m_origin_len = url.m_text.size();
  url.m_text += tail;
  return url;
}

std::string CanonicalUrl::origin() const
{
  return m_text.substr(0, m_origin_len);
}

ObfuscatedId ObfuscatedId::from_hex(std::string_view hex)
{
  Bytes raw = ocdn::from_hex(hex);
  if (raw.size() != kIdBytes)
    throw MalformedError("obfuscated id must be 32 bytes");
  ObfuscatedId id;
  std::copy(raw.begin(), raw.end(), id.bytes.begin());
  return id;
}

Bytes encode_url(const CanonicalUrl& url, std::uint32_t index)
{
  Bytes msg(url.text().begin(), url.text().end());
  if (index > 0) {
    msg.push_back(0x00);
    msg.push_back(static_cast<std::uint8_t>(index));
  }
  return msg;
}

ObfuscatedId derive_obfuscated_id(const SharedKey& key, const CanonicalUrl& url,
                                  std::uint32_t index, std::uint32_t max_encodings)
{
  if (max_encodings > 256)
    throw RangeError("at most 256 encodings fit the single-byte tweak");
  if (index >= max_encodings)
    throw RangeError("encoding index " + std::to_string(index) + " out of range");
  return ObfuscatedId{hmac_sha256(key.bytes(), encode_url(url, index))};
}

// ---------------------------------------------------------------------------
// Padding ladder

namespace {

constexpr std::uint64_t kMinRung = 1024;
constexpr std::uint64_t kLargeStep = 64 * 1024;

} // namespace

std::uint64_t pad_length(std::uint64_t orig_len)
{
  std::uint64_t need = orig_len + kLengthHeaderBytes;
  if (need <= kLargeStep) {
    std::uint64_t rung = kMinRung;
    while (rung < need)
      rung <<= 1;
    return rung;
  }
  return (need + kLargeStep - 1) / kLargeStep * kLargeStep;
}

bool is_ladder_rung(std::uint64_t len)
{
  if (len < kMinRung)
    return false;
  if (len <= kLargeStep)
    return (len & (len - 1)) == 0;
  return len % kLargeStep == 0;
}

// ---------------------------------------------------------------------------
// Envelope

std::size_t block_plain_size(std::uint64_t padded_len)
{
  return static_cast<std::size_t>(std::min<std::uint64_t>(padded_len, kBlockBytes));
}

namespace {

std::size_t expected_blocks(std::uint64_t padded_len)
{
  return static_cast<std::size_t>((padded_len + kBlockBytes - 1) / kBlockBytes);
}

Bytes envelope_header(const KeyId& key_id, const Salt& salt, std::uint64_t padded_len)
{
  Bytes h(ContentEnvelope::kMagic.begin(), ContentEnvelope::kMagic.end());
  h.push_back(ContentEnvelope::kVersion);
  append(h, key_id);
  append(h, salt);
  put_u64_be(h, padded_len);
  return h;
}

Bytes block_nonce(const KeyId& key_id, const Salt& salt, std::uint32_t index)
{
  Bytes material(key_id.begin(), key_id.end());
  append(material, salt);
  put_u32_be(material, index);
  auto digest = sha256(material);
  return Bytes(digest.begin(), digest.begin() + kNonceBytes);
}

Bytes block_aad(const Bytes& header, std::uint32_t index)
{
  Bytes aad = header;
  put_u32_be(aad, index);
  return aad;
}

} // namespace

std::size_t ContentEnvelope::wire_size() const
{
  std::size_t n = kHeaderBytes;
  for (const auto& b : blocks)
    n += b.size();
  return n;
}

Bytes ContentEnvelope::serialize() const
{
  Bytes out = envelope_header(key_id, salt, padded_len);
  out.reserve(wire_size());
  for (const auto& b : blocks)
    append(out, b);
  return out;
}

ContentEnvelope ContentEnvelope::parse(ByteView wire)
{
  if (wire.size() < kHeaderBytes)
    throw MalformedError("envelope shorter than its header");
  if (!std::equal(kMagic.begin(), kMagic.end(), wire.begin()))
    throw MalformedError("bad envelope magic");
  if (wire[4] != kVersion)
    throw MalformedError("unsupported envelope version");
  ContentEnvelope env;
  std::copy_n(wire.begin() + 5, kKeyIdBytes, env.key_id.begin());
  std::copy_n(wire.begin() + 5 + kKeyIdBytes, kSaltBytes, env.salt.begin());
  env.padded_len = get_u64_be(wire.subspan(5 + kKeyIdBytes + kSaltBytes, 8));
  if (!is_ladder_rung(env.padded_len))
    throw MalformedError("padded length is not a ladder rung");
  std::size_t n_blocks = expected_blocks(env.padded_len);
  std::size_t ct_size = block_plain_size(env.padded_len) + kTagBytes;
  auto body = wire.subspan(kHeaderBytes);
  if (body.size() != n_blocks * ct_size)
    throw MalformedError("envelope body length does not match its padded length");
  env.blocks.reserve(n_blocks);
  for (std::size_t i = 0; i < n_blocks; ++i) {
    auto chunk = body.subspan(i * ct_size, ct_size);
    env.blocks.emplace_back(chunk.begin(), chunk.end());
  }
  return env;
}

ContentEnvelope seal_padded(const SharedKey& key, const Salt& salt, ByteView padded)
{
  if (!is_ladder_rung(padded.size()))
    throw RangeError("padded payload is not a ladder rung");
  ContentEnvelope env;
  env.key_id = key.key_id();
  env.salt = salt;
  env.padded_len = padded.size();

  Bytes header = envelope_header(env.key_id, env.salt, env.padded_len);
  std::size_t bsize = block_plain_size(env.padded_len);
  std::size_t n_blocks = expected_blocks(env.padded_len);
  env.blocks.reserve(n_blocks);
  for (std::size_t i = 0; i < n_blocks; ++i) {
    auto index = static_cast<std::uint32_t>(i);
    env.blocks.push_back(gcm_seal(key.bytes(), block_nonce(env.key_id, env.salt, index),
                                  padded.subspan(i * bsize, bsize), block_aad(header, index)));
  }
  return env;
}

ContentEnvelope seal_content(const SharedKey& key, ByteView plaintext, RandomSource& rng,
                             std::uint64_t max_object_bytes)
{
  if (plaintext.size() > max_object_bytes)
    throw RangeError("object exceeds the maximum object size");
  Salt salt{};
  rng.fill(salt);

  Bytes padded;
  std::uint64_t padded_len = pad_length(plaintext.size());
  padded.reserve(padded_len);
  put_u64_be(padded, plaintext.size());
  append(padded, plaintext);
  padded.resize(padded_len, 0);
  return seal_padded(key, salt, padded);
}

Bytes open_content(const SharedKey& key, const ContentEnvelope& env)
{
  if (!is_ladder_rung(env.padded_len))
    throw MalformedError("padded length is not a ladder rung");
  std::size_t bsize = block_plain_size(env.padded_len);
  if (env.blocks.size() != expected_blocks(env.padded_len))
    throw MalformedError("block count does not match padded length");
  if (!equal_ct(env.key_id, key.key_id()))
    throw TamperError("envelope was sealed under a different key");

  Bytes header = envelope_header(env.key_id, env.salt, env.padded_len);
  Bytes padded;
  padded.reserve(env.padded_len);
  for (std::size_t i = 0; i < env.blocks.size(); ++i) {
    if (env.blocks[i].size() != bsize + kTagBytes)
      throw MalformedError("block has the wrong ciphertext length");
    auto index = static_cast<std::uint32_t>(i);
    append(padded, gcm_open(key.bytes(), block_nonce(env.key_id, env.salt, index), env.blocks[i],
                            block_aad(header, index)));
  }
  std::uint64_t orig_len = get_u64_be(padded);
  if (orig_len > env.padded_len - kLengthHeaderBytes)
    throw MalformedError("length header exceeds padded length");
  auto first = padded.begin() + kLengthHeaderBytes;
  return Bytes(first, first + static_cast<std::ptrdiff_t>(orig_len));
}

// ---------------------------------------------------------------------------
// Session crypto

namespace {

constexpr std::string_view kUrlAad = "ocdn-url-v1";
constexpr std::uint8_t kUrlPadMarker = 0x80;

} // namespace

Bytes encrypt_url(const SessionKey& skey, const CanonicalUrl& url, RandomSource& rng)
{
  Bytes padded(url.text().begin(), url.text().end());
  padded.push_back(kUrlPadMarker);
  std::size_t target = (padded.size() + kUrlPadQuantum - 1) / kUrlPadQuantum * kUrlPadQuantum;
  padded.resize(target, 0);
  return aead_encrypt(skey.bytes, padded, as_bytes(kUrlAad), rng);
}

CanonicalUrl decrypt_url(const SessionKey& skey, ByteView ciphertext)
{
  Bytes padded = aead_decrypt(skey.bytes, ciphertext, as_bytes(kUrlAad));
  while (!padded.empty() && padded.back() == 0)
    padded.pop_back();
  if (padded.empty() || padded.back() != kUrlPadMarker)
    throw MalformedError("URL padding is malformed");
  padded.pop_back();
  return CanonicalUrl::parse(to_string(padded));
}

namespace {

Bytes update_message(const ObfuscatedId& id, const ContentEnvelope& env)
{
  Bytes msg(as_bytes("OCDN-UPDATE-v1").begin(), as_bytes("OCDN-UPDATE-v1").end());
  append(msg, id.bytes);
  append(msg, env.serialize());
  return msg;
}

} // namespace

Bytes sign_update(const KeyPair& origin, const ObfuscatedId& id, const ContentEnvelope& env)
{
  return sign_bytes(origin, update_message(id, env));
}

bool verify_update(const PublicKey& origin_pub, const ObfuscatedId& id,
                   const ContentEnvelope& env, ByteView signature)
{
  return verify_bytes(origin_pub, update_message(id, env), signature);
}

} // namespace ocdn::core
