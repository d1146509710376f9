#include "ocdn/core.hpp"

#include <openssl/bn.h>
#include <openssl/core_names.h>
#include <openssl/evp.h>
#include <openssl/param_build.h>
#include <openssl/rsa.h>
#include <openssl/x509.h>

namespace ocdn::core {

namespace {

struct BnDeleter
{
  void operator()(BIGNUM* b) const { BN_clear_free(b); }
};
using Bn = std::unique_ptr<BIGNUM, BnDeleter>;

struct BnCtxDeleter
{
  void operator()(BN_CTX* c) const { BN_CTX_free(c); }
};

struct PkeyCtxDeleter
{
  void operator()(EVP_PKEY_CTX* c) const { EVP_PKEY_CTX_free(c); }
};
using PkeyCtx = std::unique_ptr<EVP_PKEY_CTX, PkeyCtxDeleter>;

struct MdCtxDeleter
{
  void operator()(EVP_MD_CTX* c) const { EVP_MD_CTX_free(c); }
};
using MdCtx = std::unique_ptr<EVP_MD_CTX, MdCtxDeleter>;

std::shared_ptr<EVP_PKEY> wrap(EVP_PKEY* key)
{
  if (key == nullptr)
    throw Error("key construction failed");
  return {key, EVP_PKEY_free};
}

Bn new_bn()
{
  Bn b(BN_secure_new());
  if (!b)
    throw Error("BN allocation failed");
  return b;
}

// Random 1024-bit start with the top two bits set, then the next probable prime
// p with gcd(p - 1, e) = 1. The top bits guarantee a 2048-bit modulus.
Bn find_prime(RandomSource& rng, const BIGNUM* e, BN_CTX* ctx)
{
  Bytes start = rng.bytes(kRsaBits / 16);
  start[0] |= 0xc0;
  start.back() |= 0x01;
  Bn p = new_bn();
  BN_bin2bn(start.data(), static_cast<int>(start.size()), p.get());
  Bn pm1 = new_bn();
  Bn g = new_bn();
  for (;;) {
    if (BN_check_prime(p.get(), ctx, nullptr) == 1) {
      BN_sub(pm1.get(), p.get(), BN_value_one());
      BN_gcd(g.get(), pm1.get(), e, ctx);
      if (BN_is_one(g.get()))
        return p;
    }
    BN_add_word(p.get(), 2);
  }
}

Bytes public_der_of(EVP_PKEY* key)
{
  int len = i2d_PUBKEY(key, nullptr);
  if (len <= 0)
    throw Error("public key serialization failed");
  Bytes der(static_cast<std::size_t>(len));
  unsigned char* p = der.data();
  i2d_PUBKEY(key, &p);
  return der;
}

void require_rsa2048(EVP_PKEY* key)
{
  if (EVP_PKEY_get_base_id(key) != EVP_PKEY_RSA || EVP_PKEY_get_bits(key) != kRsaBits)
    throw MalformedError("expected a 2048-bit RSA key");
}

} // namespace

PublicKey::PublicKey(std::shared_ptr<EVP_PKEY> key)
  : m_key(std::move(key))
  , m_der(public_der_of(m_key.get()))
{
}

PublicKey PublicKey::from_der(ByteView der)
{
  const unsigned char* p = der.data();
  EVP_PKEY* raw = d2i_PUBKEY(nullptr, &p, static_cast<long>(der.size()));
  if (raw == nullptr || p != der.data() + der.size()) {
    EVP_PKEY_free(raw);
    throw MalformedError("malformed public key");
  }
  auto key = wrap(raw);
  require_rsa2048(key.get());
  return PublicKey(std::move(key));
}

KeyPair::KeyPair(std::shared_ptr<EVP_PKEY> key)
  : m_key(std::move(key))
  , m_public(m_key)
{
}

KeyPair KeyPair::generate(RandomSource& rng)
{
  std::unique_ptr<BN_CTX, BnCtxDeleter> ctx(BN_CTX_secure_new());
  Bn e = new_bn();
  BN_set_word(e.get(), RSA_F4);

  Bn p = find_prime(rng, e.get(), ctx.get());
  Bn q = find_prime(rng, e.get(), ctx.get());
  while (BN_cmp(p.get(), q.get()) == 0)
    q = find_prime(rng, e.get(), ctx.get());
  if (BN_cmp(p.get(), q.get()) < 0)
    std::swap(p, q);

  Bn n = new_bn(), pm1 = new_bn(), qm1 = new_bn(), phi = new_bn(), g = new_bn(),
     lambda = new_bn(), d = new_bn(), dmp1 = new_bn(), dmq1 = new_bn(), iqmp = new_bn();
  BN_mul(n.get(), p.get(), q.get(), ctx.get());
  BN_sub(pm1.get(), p.get(), BN_value_one());
  BN_sub(qm1.get(), q.get(), BN_value_one());
  BN_mul(phi.get(), pm1.get(), qm1.get(), ctx.get());
  BN_gcd(g.get(), pm1.get(), qm1.get(), ctx.get());
  BN_div(lambda.get(), nullptr, phi.get(), g.get(), ctx.get());
  if (BN_mod_inverse(d.get(), e.get(), lambda.get(), ctx.get()) == nullptr)
    throw Error("RSA private exponent computation failed");
  BN_mod(dmp1.get(), d.get(), pm1.get(), ctx.get());
  BN_mod(dmq1.get(), d.get(), qm1.get(), ctx.get());
  if (BN_mod_inverse(iqmp.get(), q.get(), p.get(), ctx.get()) == nullptr)
    throw Error("RSA CRT coefficient computation failed");

  OSSL_PARAM_BLD* bld = OSSL_PARAM_BLD_new();
  OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_N, n.get());
  OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_E, e.get());
  OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_D, d.get());
  OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_FACTOR1, p.get());
  OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_FACTOR2, q.get());
  OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_EXPONENT1, dmp1.get());
  OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_EXPONENT2, dmq1.get());
  OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_COEFFICIENT1, iqmp.get());
  OSSL_PARAM* params = OSSL_PARAM_BLD_to_param(bld);
  OSSL_PARAM_BLD_free(bld);

  PkeyCtx pctx(EVP_PKEY_CTX_new_from_name(nullptr, "RSA", nullptr));
  EVP_PKEY* raw = nullptr;
  int ok = pctx && EVP_PKEY_fromdata_init(pctx.get()) == 1 &&
           EVP_PKEY_fromdata(pctx.get(), &raw, EVP_PKEY_KEYPAIR, params) == 1;
  OSSL_PARAM_free(params);
  if (!ok)
    throw Error("RSA key assembly failed");
  return KeyPair(wrap(raw));
}

KeyPair KeyPair::from_private_der(ByteView der)
{
  const unsigned char* p = der.data();
  EVP_PKEY* raw = d2i_AutoPrivateKey(nullptr, &p, static_cast<long>(der.size()));
  if (raw == nullptr)
    throw MalformedError("malformed private key");
  auto key = wrap(raw);
  require_rsa2048(key.get());
  return KeyPair(std::move(key));
}

Bytes KeyPair::private_der() const
{
  int len = i2d_PrivateKey(m_key.get(), nullptr);
  if (len <= 0)
    throw Error("private key serialization failed");
  Bytes der(static_cast<std::size_t>(len));
  unsigned char* p = der.data();
  i2d_PrivateKey(m_key.get(), &p);
  return der;
}

Bytes rsa_seal(const PublicKey& pub, ByteView secret)
{
  if (!pub.valid())
    throw MalformedError("empty public key");
  PkeyCtx ctx(EVP_PKEY_CTX_new(pub.get(), nullptr));
  if (!ctx || EVP_PKEY_encrypt_init(ctx.get()) != 1 ||
      EVP_PKEY_CTX_set_rsa_padding(ctx.get(), RSA_PKCS1_OAEP_PADDING) != 1 ||
      EVP_PKEY_CTX_set_rsa_oaep_md(ctx.get(), EVP_sha256()) != 1 ||
      EVP_PKEY_CTX_set_rsa_mgf1_md(ctx.get(), EVP_sha256()) != 1)
    throw Error("RSA-OAEP setup failed");
  std::size_t len = 0;
  if (EVP_PKEY_encrypt(ctx.get(), nullptr, &len, secret.data(), secret.size()) != 1)
    throw Error("RSA-OAEP sizing failed");
  Bytes out(len);
  if (EVP_PKEY_encrypt(ctx.get(), out.data(), &len, secret.data(), secret.size()) != 1)
    throw Error("RSA-OAEP encryption failed");
  out.resize(len);
  return out;
}

Bytes rsa_open(const KeyPair& pair, ByteView sealed)
{
  PkeyCtx ctx(EVP_PKEY_CTX_new(pair.get(), nullptr));
  if (!ctx || EVP_PKEY_decrypt_init(ctx.get()) != 1 ||
      EVP_PKEY_CTX_set_rsa_padding(ctx.get(), RSA_PKCS1_OAEP_PADDING) != 1 ||
      EVP_PKEY_CTX_set_rsa_oaep_md(ctx.get(), EVP_sha256()) != 1 ||
      EVP_PKEY_CTX_set_rsa_mgf1_md(ctx.get(), EVP_sha256()) != 1)
    throw Error("RSA-OAEP setup failed");
  std::size_t len = 0;
  if (sealed.size() != kRsaSealedBytes ||
      EVP_PKEY_decrypt(ctx.get(), nullptr, &len, sealed.data(), sealed.size()) != 1)
    throw TamperError("sealed secret has the wrong size");
  Bytes out(len);
  if (EVP_PKEY_decrypt(ctx.get(), out.data(), &len, sealed.data(), sealed.size()) != 1)
    throw TamperError("RSA-OAEP decryption failed");
  out.resize(len);
  return out;
}

Bytes sign_bytes(const KeyPair& pair, ByteView message)
{
  MdCtx ctx(EVP_MD_CTX_new());
  EVP_PKEY_CTX* pctx = nullptr;
  if (!ctx || EVP_DigestSignInit(ctx.get(), &pctx, EVP_sha256(), nullptr, pair.get()) != 1 ||
      EVP_PKEY_CTX_set_rsa_padding(pctx, RSA_PKCS1_PADDING) != 1)
    throw Error("signature setup failed");
  std::size_t len = 0;
  if (EVP_DigestSign(ctx.get(), nullptr, &len, message.data(), message.size()) != 1)
    throw Error("signature sizing failed");
  Bytes sig(len);
  if (EVP_DigestSign(ctx.get(), sig.data(), &len, message.data(), message.size()) != 1)
    throw Error("signing failed");
  sig.resize(len);
  return sig;
}

bool verify_bytes(const PublicKey& pub, ByteView message, ByteView signature)
{
  if (!pub.valid())
    return false;
  MdCtx ctx(EVP_MD_CTX_new());
  EVP_PKEY_CTX* pctx = nullptr;
  if (!ctx || EVP_DigestVerifyInit(ctx.get(), &pctx, EVP_sha256(), nullptr, pub.get()) != 1 ||
      EVP_PKEY_CTX_set_rsa_padding(pctx, RSA_PKCS1_PADDING) != 1)
    return false;
  return EVP_DigestVerify(ctx.get(), signature.data(), signature.size(), message.data(),
                          message.size()) == 1;
}

PeerIdentity PeerIdentity::generate(RandomSource& rng)
{
  Bytes seed = rng.bytes(32);
  PeerIdentity id;
  id.m_key = wrap(EVP_PKEY_new_raw_private_key(EVP_PKEY_ED25519, nullptr, seed.data(), seed.size()));
  std::size_t len = 32;
  id.m_public.resize(len);
  if (EVP_PKEY_get_raw_public_key(id.m_key.get(), id.m_public.data(), &len) != 1)
    throw Error("Ed25519 public key extraction failed");
  return id;
}

Bytes PeerIdentity::sign(ByteView message) const
{
  MdCtx ctx(EVP_MD_CTX_new());
  if (!ctx || EVP_DigestSignInit(ctx.get(), nullptr, nullptr, nullptr, m_key.get()) != 1)
    throw Error("Ed25519 setup failed");
  std::size_t len = 64;
  Bytes sig(len);
  if (EVP_DigestSign(ctx.get(), sig.data(), &len, message.data(), message.size()) != 1)
    throw Error("Ed25519 signing failed");
  sig.resize(len);
  return sig;
}

bool PeerIdentity::verify(ByteView public_raw, ByteView message, ByteView signature)
{
  EVP_PKEY* raw = EVP_PKEY_new_raw_public_key(EVP_PKEY_ED25519, nullptr, public_raw.data(),
                                              public_raw.size());
  if (raw == nullptr)
    return false;
  auto key = wrap(raw);
  MdCtx ctx(EVP_MD_CTX_new());
  if (!ctx || EVP_DigestVerifyInit(ctx.get(), nullptr, nullptr, nullptr, key.get()) != 1)
    return false;
  return EVP_DigestVerify(ctx.get(), signature.data(), signature.size(), message.data(),
                          message.size()) == 1;
}

Bytes seal_session_key(const PublicKey& proxy_pub, const SessionKey& skey)
{
  return rsa_seal(proxy_pub, skey.bytes);
}

SessionKey open_session_key(const KeyPair& proxy, ByteView sealed)
{
  Bytes raw = rsa_open(proxy, sealed);
  if (raw.size() != kKeyBytes)
    throw TamperError("sealed session key has the wrong length");
  return SessionKey::from_bytes(raw);
}

} // namespace ocdn::core
