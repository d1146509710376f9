#pragma once

#include "ocdn/common.hpp"
#include "ocdn/random.hpp"

#include <compare>
#include <memory>
#include <optional>

typedef struct evp_pkey_st EVP_PKEY;

namespace ocdn::core {

inline constexpr std::size_t kKeyBytes = 32;
inline constexpr std::size_t kIdBytes = 32;
inline constexpr std::size_t kKeyIdBytes = 8;
inline constexpr std::size_t kSaltBytes = 16;
inline constexpr std::size_t kTagBytes = 16;
inline constexpr std::size_t kNonceBytes = 12;
inline constexpr std::size_t kBlockBytes = 4096;
inline constexpr std::size_t kLengthHeaderBytes = 8;
inline constexpr std::size_t kUrlPadQuantum = 64;
inline constexpr std::uint32_t kDefaultMaxEncodings = 16;
inline constexpr std::uint64_t kDefaultMaxObjectBytes = 256ull << 20;
inline constexpr std::size_t kRsaBits = 2048;
inline constexpr std::size_t kRsaSealedBytes = kRsaBits / 8;

using Digest = std::array<std::uint8_t, 32>;
using KeyId = std::array<std::uint8_t, kKeyIdBytes>;
using Salt = std::array<std::uint8_t, kSaltBytes>;

Digest sha256(ByteView data);
Digest hmac_sha256(ByteView key, ByteView message);

// ---------------------------------------------------------------------------
// Keys

/// Origin/exit symmetric key. The handle is the first 8 bytes of SHA-256(key).
class SharedKey
{
public:
  /// Throws RangeError unless expires_at > created_at.
  SharedKey(const std::array<std::uint8_t, kKeyBytes>& bytes, std::int64_t created_at,
            std::int64_t expires_at);

  static SharedKey generate(RandomSource& rng, std::int64_t now_s, std::int64_t lifetime_s);
  static SharedKey from_bytes(ByteView bytes, std::int64_t created_at, std::int64_t expires_at);

  const std::array<std::uint8_t, kKeyBytes>& bytes() const { return m_bytes; }
  const KeyId& key_id() const { return m_key_id; }
  std::int64_t created_at() const { return m_created_at; }
  std::int64_t expires_at() const { return m_expires_at; }
  bool expired_at(std::int64_t now_s) const { return now_s >= m_expires_at; }

private:
  std::array<std::uint8_t, kKeyBytes> m_bytes;
  KeyId m_key_id;
  std::int64_t m_created_at;
  std::int64_t m_expires_at;
};

KeyId key_id_of(ByteView key_bytes);

/// Per-request client/exit key.
struct SessionKey
{
  std::array<std::uint8_t, kKeyBytes> bytes{};

  static SessionKey generate(RandomSource& rng);
  static SessionKey from_bytes(ByteView b);
};

/// RSA public key. Immutable, cheap to copy.
class PublicKey
{
public:
  PublicKey() = default;
  explicit PublicKey(std::shared_ptr<EVP_PKEY> key);

  /// Throws MalformedError for anything that is not a 2048-bit RSA SubjectPublicKeyInfo.
  static PublicKey from_der(ByteView der);

  /// Canonical serialization (DER SubjectPublicKeyInfo).
  const Bytes& der() const { return m_der; }
  Digest fingerprint() const { return sha256(m_der); }
  EVP_PKEY* get() const { return m_key.get(); }
  bool valid() const { return m_key != nullptr; }

  friend bool operator==(const PublicKey& a, const PublicKey& b) { return a.m_der == b.m_der; }

private:
  std::shared_ptr<EVP_PKEY> m_key;
  Bytes m_der;
};

/// RSA-2048 key pair.
class KeyPair
{
public:
  /// Deterministic given the generator stream.
  static KeyPair generate(RandomSource& rng);
  static KeyPair from_private_der(ByteView der);

  const PublicKey& public_key() const { return m_public; }
  Bytes private_der() const;
  EVP_PKEY* get() const { return m_key.get(); }

private:
  KeyPair(std::shared_ptr<EVP_PKEY> key);

  std::shared_ptr<EVP_PKEY> m_key;
  PublicKey m_public;
};

/// RSA-OAEP(SHA-256) encryption of a short secret; output is 256 bytes.
Bytes rsa_seal(const PublicKey& pub, ByteView secret);
/// Throws TamperError when the ciphertext was not produced for this key.
Bytes rsa_open(const KeyPair& pair, ByteView sealed);

/// RSASSA-PKCS1-v1_5 over SHA-256. Deterministic.
Bytes sign_bytes(const KeyPair& pair, ByteView message);
bool verify_bytes(const PublicKey& pub, ByteView message, ByteView signature);

/// Ed25519 identity used by peers to sign membership announcements.
class PeerIdentity
{
public:
  static PeerIdentity generate(RandomSource& rng);

  const Bytes& public_raw() const { return m_public; }
  Bytes sign(ByteView message) const;
  static bool verify(ByteView public_raw, ByteView message, ByteView signature);

private:
  std::shared_ptr<EVP_PKEY> m_key;
  Bytes m_public;
};

// ---------------------------------------------------------------------------
// Identifiers

/// Absolute URL with lowercased scheme and host, no fragment, non-empty path.
class CanonicalUrl
{
public:
  /// Throws MalformedError for relative or hostless input.
  static CanonicalUrl parse(std::string_view text);

  const std::string& text() const { return m_text; }
  /// "scheme://host[:port]"
  std::string origin() const;

  auto operator<=>(const CanonicalUrl&) const = default;

private:
  std::string m_text;
  std::size_t m_origin_len = 0;
};

struct ObfuscatedId
{
  std::array<std::uint8_t, kIdBytes> bytes{};

  std::string hex() const { return to_hex(bytes); }
  static ObfuscatedId from_hex(std::string_view hex);

  auto operator<=>(const ObfuscatedId&) const = default;
};

/// Message authenticated for encoding `index`: the URL text, plus 0x00 and the index byte when index > 0.
Bytes encode_url(const CanonicalUrl& url, std::uint32_t index);

/// HMAC-SHA-256 of encode_url(url, index) under the shared key.
/// Throws RangeError if index >= max_encodings or max_encodings > 256.
ObfuscatedId derive_obfuscated_id(const SharedKey& key, const CanonicalUrl& url,
                                  std::uint32_t index,
                                  std::uint32_t max_encodings = kDefaultMaxEncodings);

// ---------------------------------------------------------------------------
// Content envelope

/// Smallest padding rung >= orig_len + 8. Rungs: 1 KiB .. 64 KiB in powers of
/// two, then multiples of 64 KiB.
std::uint64_t pad_length(std::uint64_t orig_len);
bool is_ladder_rung(std::uint64_t len);

struct ContentEnvelope
{
  static constexpr std::array<std::uint8_t, 4> kMagic{'O', 'C', 'D', 'N'};
  static constexpr std::uint8_t kVersion = 1;
  static constexpr std::size_t kHeaderBytes = 4 + 1 + kKeyIdBytes + kSaltBytes + 8;

  KeyId key_id{};
  Salt salt{};
  std::uint64_t padded_len = 0;
  std::vector<Bytes> blocks;

  std::size_t block_count() const { return blocks.size(); }
  std::size_t wire_size() const;

  /// magic | version | key_id | salt | padded_len (u64 BE) | block ciphertexts
  Bytes serialize() const;
  static ContentEnvelope parse(ByteView wire);

  friend bool operator==(const ContentEnvelope&, const ContentEnvelope&) = default;
};

/// Plaintext size of each block for a given padded length.
std::size_t block_plain_size(std::uint64_t padded_len);

ContentEnvelope seal_content(const SharedKey& key, ByteView plaintext, RandomSource& rng,
                             std::uint64_t max_object_bytes = kDefaultMaxObjectBytes);
/// Throws TamperError on any authentication failure, MalformedError on a bad layout.
Bytes open_content(const SharedKey& key, const ContentEnvelope& env);

// ---------------------------------------------------------------------------
// Session crypto

Bytes seal_session_key(const PublicKey& proxy_pub, const SessionKey& skey);
SessionKey open_session_key(const KeyPair& proxy, ByteView sealed);

/// AES-256-GCM with a fresh nonce: nonce | ciphertext | tag.
Bytes aead_encrypt(ByteView key, ByteView plaintext, ByteView aad, RandomSource& rng);
Bytes aead_decrypt(ByteView key, ByteView sealed, ByteView aad);

/// URL padded to a 64-byte multiple before encryption.
Bytes encrypt_url(const SessionKey& skey, const CanonicalUrl& url, RandomSource& rng);
CanonicalUrl decrypt_url(const SessionKey& skey, ByteView ciphertext);

Bytes sign_update(const KeyPair& origin, const ObfuscatedId& id, const ContentEnvelope& env);
bool verify_update(const PublicKey& origin_pub, const ObfuscatedId& id,
                   const ContentEnvelope& env, ByteView signature);

} // namespace ocdn::core
