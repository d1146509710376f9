#pragma once

#include "ocdn/core.hpp"

namespace ocdn::core {

// Raw AES-256-GCM with a caller-chosen 12-byte nonce; output is ciphertext | tag.
Bytes gcm_seal(ByteView key, ByteView nonce, ByteView plaintext, ByteView aad);
Bytes gcm_open(ByteView key, ByteView nonce, ByteView sealed, ByteView aad);

// Encrypts an already padded payload (length header included) block by block.
ContentEnvelope seal_padded(const SharedKey& key, const Salt& salt, ByteView padded);

} // namespace ocdn::core
