#include "ocdn/core.hpp"

#include <memory>

#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/sha.h>

namespace ocdn::core {

Digest sha256(ByteView data)
{
  Digest out{};
  SHA256(data.data(), data.size(), out.data());
  return out;
}

Digest hmac_sha256(ByteView key, ByteView message)
{
  Digest out{};
  unsigned int len = 0;
  if (HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), message.data(),
           message.size(), out.data(), &len) == nullptr ||
      len != out.size())
    throw Error("HMAC-SHA-256 failed");
  return out;
}

KeyId key_id_of(ByteView key_bytes)
{
  auto digest = sha256(key_bytes);
  KeyId id{};
  std::copy_n(digest.begin(), id.size(), id.begin());
  return id;
}

SharedKey::SharedKey(const std::array<std::uint8_t, kKeyBytes>& bytes, std::int64_t created_at,
                     std::int64_t expires_at)
  : m_bytes(bytes)
  , m_key_id(key_id_of(bytes))
  , m_created_at(created_at)
  , m_expires_at(expires_at)
{
  if (expires_at <= created_at)
    throw RangeError("shared key must expire after its creation time");
}

SharedKey SharedKey::generate(RandomSource& rng, std::int64_t now_s, std::int64_t lifetime_s)
{
  std::array<std::uint8_t, kKeyBytes> bytes{};
  rng.fill(bytes);
  return SharedKey(bytes, now_s, now_s + lifetime_s);
}

SharedKey SharedKey::from_bytes(ByteView bytes, std::int64_t created_at, std::int64_t expires_at)
{
  if (bytes.size() != kKeyBytes)
    throw RangeError("shared key must be 32 bytes");
  std::array<std::uint8_t, kKeyBytes> arr{};
  std::copy(bytes.begin(), bytes.end(), arr.begin());
  return SharedKey(arr, created_at, expires_at);
}

SessionKey SessionKey::generate(RandomSource& rng)
{
  SessionKey k;
  rng.fill(k.bytes);
  return k;
}

SessionKey SessionKey::from_bytes(ByteView b)
{
  if (b.size() != kKeyBytes)
    throw MalformedError("session key must be 32 bytes");
  SessionKey k;
  std::copy(b.begin(), b.end(), k.bytes.begin());
  return k;
}

namespace {

struct CipherCtxDeleter
{
  void operator()(EVP_CIPHER_CTX* c) const { EVP_CIPHER_CTX_free(c); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter>;

} // namespace

// Shared by content blocks and session payloads.
Bytes gcm_seal(ByteView key, ByteView nonce, ByteView plaintext, ByteView aad)
{
  CipherCtx ctx(EVP_CIPHER_CTX_new());
  if (!ctx || key.size() != kKeyBytes || nonce.size() != kNonceBytes)
    throw Error("AES-GCM setup failed");
  if (EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), nonce.data()) != 1)
    throw Error("AES-GCM init failed");
  int len = 0;
  if (!aad.empty() &&
      EVP_EncryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1)
    throw Error("AES-GCM aad failed");
  Bytes out(plaintext.size() + kTagBytes);
  if (!plaintext.empty() &&
      EVP_EncryptUpdate(ctx.get(), out.data(), &len, plaintext.data(),
                        static_cast<int>(plaintext.size())) != 1)
    throw Error("AES-GCM encrypt failed");
  if (EVP_EncryptFinal_ex(ctx.get(), out.data() + plaintext.size(), &len) != 1)
    throw Error("AES-GCM final failed");
  if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kTagBytes,
                          out.data() + plaintext.size()) != 1)
    throw Error("AES-GCM tag failed");
  return out;
}

Bytes gcm_open(ByteView key, ByteView nonce, ByteView sealed, ByteView aad)
{
  if (sealed.size() < kTagBytes)
    throw TamperError("ciphertext shorter than its tag");
  CipherCtx ctx(EVP_CIPHER_CTX_new());
  if (!ctx || key.size() != kKeyBytes || nonce.size() != kNonceBytes)
    throw Error("AES-GCM setup failed");
  if (EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), nonce.data()) != 1)
    throw Error("AES-GCM init failed");
  int len = 0;
  if (!aad.empty() &&
      EVP_DecryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1)
    throw Error("AES-GCM aad failed");
  std::size_t ct_len = sealed.size() - kTagBytes;
  Bytes out(ct_len);
  if (ct_len > 0 &&
      EVP_DecryptUpdate(ctx.get(), out.data(), &len, sealed.data(), static_cast<int>(ct_len)) != 1)
    throw TamperError("AES-GCM decrypt failed");
  Bytes tag(sealed.begin() + static_cast<std::ptrdiff_t>(ct_len), sealed.end());
  if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kTagBytes, tag.data()) != 1)
    throw Error("AES-GCM tag setup failed");
  if (EVP_DecryptFinal_ex(ctx.get(), out.data() + ct_len, &len) != 1)
    throw TamperError("authentication failed");
  return out;
}

Bytes aead_encrypt(ByteView key, ByteView plaintext, ByteView aad, RandomSource& rng)
{
  Bytes nonce = rng.bytes(kNonceBytes);
  Bytes out = nonce;
  append(out, gcm_seal(key, nonce, plaintext, aad));
  return out;
}

Bytes aead_decrypt(ByteView key, ByteView sealed, ByteView aad)
{
  if (sealed.size() < kNonceBytes + kTagBytes)
    throw TamperError("sealed payload too short");
  return gcm_open(key, sealed.first(kNonceBytes), sealed.subspan(kNonceBytes), aad);
}

} // namespace ocdn::core
