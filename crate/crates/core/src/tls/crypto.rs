//! Key derivation (TLS 1.2 PRF, TLS 1.3 HKDF schedule) and AEAD record
//! protection.

use ring::aead::{self, Aad, LessSafeKey, Nonce, UnboundKey};
use ring::{digest, hmac};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HashAlg {
    Sha256,
    Sha384,
}

impl HashAlg {
    pub fn output_len(self) -> usize {
        match self {
            HashAlg::Sha256 => 32,
            HashAlg::Sha384 => 48,
        }
    }

    fn hmac_alg(self) -> hmac::Algorithm {
        match self {
            HashAlg::Sha256 => hmac::HMAC_SHA256,
            HashAlg::Sha384 => hmac::HMAC_SHA384,
        }
    }

    fn digest_alg(self) -> &'static digest::Algorithm {
        match self {
            HashAlg::Sha256 => &digest::SHA256,
            HashAlg::Sha384 => &digest::SHA384,
        }
    }

    pub fn hash(self, data: &[u8]) -> Vec<u8> {
        digest::digest(self.digest_alg(), data).as_ref().to_vec()
    }

    pub fn hmac(self, key: &[u8], data: &[&[u8]]) -> Vec<u8> {
        let k = hmac::Key::new(self.hmac_alg(), key);
        let mut ctx = hmac::Context::with_key(&k);
        for d in data {
            ctx.update(d);
        }
        ctx.sign().as_ref().to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AeadKind {
    Aes128Gcm,
    Aes256Gcm,
    ChaCha20Poly1305,
}

impl AeadKind {
    pub fn key_len(self) -> usize {
        match self {
            AeadKind::Aes128Gcm => 16,
            _ => 32,
        }
    }

    fn ring(self) -> &'static aead::Algorithm {
        match self {
            AeadKind::Aes128Gcm => &aead::AES_128_GCM,
            AeadKind::Aes256Gcm => &aead::AES_256_GCM,
            AeadKind::ChaCha20Poly1305 => &aead::CHACHA20_POLY1305,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteParams {
    pub id: u16,
    pub aead: AeadKind,
    pub hash: HashAlg,
    pub tls13: bool,
}

pub fn suite_params(id: u16) -> Option<SuiteParams> {
    use AeadKind::*;
    use HashAlg::*;
    let (aead, hash, tls13) = match id {
        0x1301 => (Aes128Gcm, Sha256, true),
        0x1302 => (Aes256Gcm, Sha384, true),
        0x1303 => (ChaCha20Poly1305, Sha256, true),
        0xc02b | 0xc02f => (Aes128Gcm, Sha256, false),
        0xc02c | 0xc030 => (Aes256Gcm, Sha384, false),
        0xcca8 | 0xcca9 => (ChaCha20Poly1305, Sha256, false),
        _ => return None,
    };
    Some(SuiteParams { id, aead, hash, tls13 })
}

pub fn hkdf_extract(hash: HashAlg, salt: &[u8], ikm: &[u8]) -> Vec<u8> {
    let zeros;
    let salt = if salt.is_empty() {
        zeros = vec![0u8; hash.output_len()];
        &zeros[..]
    } else {
        salt
    };
    hash.hmac(salt, &[ikm])
}

pub fn hkdf_expand(hash: HashAlg, prk: &[u8], info: &[u8], len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len);
    let mut prev: Vec<u8> = Vec::new();
    let mut counter = 1u8;
    while out.len() < len {
        prev = hash.hmac(prk, &[&prev, info, &[counter]]);
        out.extend_from_slice(&prev);
        counter += 1;
    }
    out.truncate(len);
    out
}

pub fn expand_label(hash: HashAlg, secret: &[u8], label: &str, context: &[u8], len: usize) -> Vec<u8> {
    let full = format!("tls13 {label}");
    let mut info = Vec::with_capacity(4 + full.len() + context.len());
    info.extend_from_slice(&(len as u16).to_be_bytes());
    info.push(full.len() as u8);
    info.extend_from_slice(full.as_bytes());
    info.push(context.len() as u8);
    info.extend_from_slice(context);
    hkdf_expand(hash, secret, &info, len)
}

pub fn derive_secret(hash: HashAlg, secret: &[u8], label: &str, transcript_hash: &[u8]) -> Vec<u8> {
    expand_label(hash, secret, label, transcript_hash, hash.output_len())
}

/// The TLS 1.2 PRF (P_hash with the suite hash).
pub fn prf12(hash: HashAlg, secret: &[u8], label: &str, seed: &[u8], len: usize) -> Vec<u8> {
    let mut label_seed = label.as_bytes().to_vec();
    label_seed.extend_from_slice(seed);
    let mut out = Vec::with_capacity(len);
    let mut a = hash.hmac(secret, &[&label_seed]);
    while out.len() < len {
        out.extend_from_slice(&hash.hmac(secret, &[&a, &label_seed]));
        a = hash.hmac(secret, &[&a]);
    }
    out.truncate(len);
    out
}

/// TLS 1.3 key schedule state for one connection.
#[derive(Debug, Clone)]
pub struct Schedule13 {
    pub hash: HashAlg,
    pub early: Vec<u8>,
    pub handshake: Vec<u8>,
    pub master: Vec<u8>,
    pub client_hs: Vec<u8>,
    pub server_hs: Vec<u8>,
}

impl Schedule13 {
    pub fn early_secret(hash: HashAlg, psk: Option<&[u8]>) -> Vec<u8> {
        let zeros = vec![0u8; hash.output_len()];
        hkdf_extract(hash, &[], psk.unwrap_or(&zeros))
    }

    pub fn binder_key(hash: HashAlg, psk: &[u8]) -> Vec<u8> {
        let early = Self::early_secret(hash, Some(psk));
        derive_secret(hash, &early, "res binder", &hash.hash(&[]))
    }

    pub fn new(hash: HashAlg, psk: Option<&[u8]>, shared: &[u8], hello_hash: &[u8]) -> Self {
        let early = Self::early_secret(hash, psk);
        let derived = derive_secret(hash, &early, "derived", &hash.hash(&[]));
        let handshake = hkdf_extract(hash, &derived, shared);
        let client_hs = derive_secret(hash, &handshake, "c hs traffic", hello_hash);
        let server_hs = derive_secret(hash, &handshake, "s hs traffic", hello_hash);
        let derived = derive_secret(hash, &handshake, "derived", &hash.hash(&[]));
        let master = hkdf_extract(hash, &derived, &vec![0u8; hash.output_len()]);
        Schedule13 {
            hash,
            early,
            handshake,
            master,
            client_hs,
            server_hs,
        }
    }

    pub fn finished_mac(&self, base_key: &[u8], transcript_hash: &[u8]) -> Vec<u8> {
        let key = expand_label(self.hash, base_key, "finished", &[], self.hash.output_len());
        self.hash.hmac(&key, &[transcript_hash])
    }
}

pub fn finished_mac(hash: HashAlg, base_key: &[u8], transcript_hash: &[u8]) -> Vec<u8> {
    let key = expand_label(hash, base_key, "finished", &[], hash.output_len());
    hash.hmac(&key, &[transcript_hash])
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("record decryption failed")]
pub struct BadRecordMac;

/// One direction of AEAD record protection.
pub struct RecordCipher {
    key: LessSafeKey,
    iv: [u8; 12],
    tls13: bool,
    /// TLS 1.2 AES-GCM carries an 8-byte explicit nonce per record.
    explicit_nonce: bool,
    seq: u64,
}

impl std::fmt::Debug for RecordCipher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RecordCipher").field("seq", &self.seq).finish()
    }
}

impl RecordCipher {
    pub fn tls13(suite: SuiteParams, traffic_secret: &[u8]) -> Self {
        let key = expand_label(suite.hash, traffic_secret, "key", &[], suite.aead.key_len());
        let iv = expand_label(suite.hash, traffic_secret, "iv", &[], 12);
        Self::build(suite.aead, &key, &iv, true, false)
    }

    /// TLS 1.2: `fixed_iv` is 4 bytes for AES-GCM and 12 for ChaCha20.
    pub fn tls12(suite: SuiteParams, key: &[u8], fixed_iv: &[u8]) -> Self {
        let gcm = suite.aead != AeadKind::ChaCha20Poly1305;
        Self::build(suite.aead, key, fixed_iv, false, gcm)
    }

    fn build(kind: AeadKind, key: &[u8], iv: &[u8], tls13: bool, explicit_nonce: bool) -> Self {
        let unbound = UnboundKey::new(kind.ring(), key).expect("key length matches the suite");
        let mut full = [0u8; 12];
        full[..iv.len()].copy_from_slice(iv);
        RecordCipher {
            key: LessSafeKey::new(unbound),
            iv: full,
            tls13,
            explicit_nonce,
            seq: 0,
        }
    }

    fn nonce(&self, explicit: Option<&[u8]>) -> Nonce {
        let mut n = self.iv;
        match explicit {
            Some(e) => n[4..].copy_from_slice(e),
            None => {
                for (i, b) in self.seq.to_be_bytes().iter().enumerate() {
                    n[4 + i] ^= b;
                }
            }
        }
        Nonce::assume_unique_for_key(n)
    }

    fn aad12(&self, content_type: u8, len: usize) -> [u8; 13] {
        let mut aad = [0u8; 13];
        aad[..8].copy_from_slice(&self.seq.to_be_bytes());
        aad[8] = content_type;
        aad[9] = 3;
        aad[10] = 3;
        aad[11..].copy_from_slice(&(len as u16).to_be_bytes());
        aad
    }

    /// Returns (outer content type, record payload).
    pub fn seal(&mut self, content_type: u8, plaintext: &[u8]) -> (u8, Vec<u8>) {
        let out = if self.tls13 {
            let mut buf = plaintext.to_vec();
            buf.push(content_type);
            let len = buf.len() + 16;
            let aad = [23, 3, 3, (len >> 8) as u8, len as u8];
            self.key
                .seal_in_place_append_tag(self.nonce(None), Aad::from(aad), &mut buf)
                .expect("seal");
            (23, buf)
        } else {
            let aad = self.aad12(content_type, plaintext.len());
            let mut buf = plaintext.to_vec();
            let explicit = self.seq.to_be_bytes();
            let nonce = if self.explicit_nonce {
                self.nonce(Some(&explicit))
            } else {
                self.nonce(None)
            };
            self.key
                .seal_in_place_append_tag(nonce, Aad::from(aad), &mut buf)
                .expect("seal");
            if self.explicit_nonce {
                let mut with = explicit.to_vec();
                with.extend_from_slice(&buf);
                buf = with;
            }
            (content_type, buf)
        };
        self.seq += 1;
        out
    }

    /// Returns (inner content type, plaintext).
    pub fn open(&mut self, outer_type: u8, payload: &[u8]) -> Result<(u8, Vec<u8>), BadRecordMac> {
        let result = if self.tls13 {
            let len = payload.len();
            let aad = [outer_type, 3, 3, (len >> 8) as u8, len as u8];
            let mut buf = payload.to_vec();
            let plain = self
                .key
                .open_in_place(self.nonce(None), Aad::from(aad), &mut buf)
                .map_err(|_| BadRecordMac)?;
            let end = plain.iter().rposition(|b| *b != 0).ok_or(BadRecordMac)?;
            let ct = plain[end];
            (ct, plain[..end].to_vec())
        } else {
            let (nonce, body) = if self.explicit_nonce {
                if payload.len() < 8 + 16 {
                    return Err(BadRecordMac);
                }
                (self.nonce(Some(&payload[..8])), &payload[8..])
            } else {
                (self.nonce(None), payload)
            };
            if body.len() < 16 {
                return Err(BadRecordMac);
            }
            let aad = self.aad12(outer_type, body.len() - 16);
            let mut buf = body.to_vec();
            let plain = self
                .key
                .open_in_place(nonce, Aad::from(aad), &mut buf)
                .map_err(|_| BadRecordMac)?;
            (outer_type, plain.to_vec())
        };
        self.seq += 1;
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unhex(s: &str) -> Vec<u8> {
        hex::decode(s.split_whitespace().collect::<String>()).unwrap()
    }

    // RFC 5869 test case 1
    #[test]
    fn hkdf_rfc5869() {
        let ikm = vec![0x0b; 22];
        let salt = unhex("000102030405060708090a0b0c");
        let info = unhex("f0f1f2f3f4f5f6f7f8f9");
        let prk = hkdf_extract(HashAlg::Sha256, &salt, &ikm);
        assert_eq!(
            prk,
            unhex("077709362c2e32df0ddc3f0dc47bba6390b6c73bb50f9c3122ec844ad7c2b3e5")
        );
        let okm = hkdf_expand(HashAlg::Sha256, &prk, &info, 42);
        assert_eq!(
            okm,
            unhex("3cb25f25faacd57a90434f64d0362f2a2d2d0a90cf1a5a4c5db02d56ecc4c5bf34007208d5b887185865")
        );
    }

    // RFC 8448 simple 1-RTT: early secret and handshake derived secret
    #[test]
    fn tls13_schedule_rfc8448() {
        let early = Schedule13::early_secret(HashAlg::Sha256, None);
        assert_eq!(
            early,
            unhex("33ad0a1c607ec03b09e6cd9893680ce210adf300aa1f2660e1b22e10f170f92a")
        );
        let derived = derive_secret(HashAlg::Sha256, &early, "derived", &HashAlg::Sha256.hash(&[]));
        assert_eq!(
            derived,
            unhex("6f2615a108c702c5678f54fc9dbab69716c076189c48250cebeac3576c3611ba")
        );
        let shared = unhex("8bd4054fb55b9d63fdfbacf9f04b9f0d35e6d63f537563efd46272900f89492d");
        let hs = hkdf_extract(HashAlg::Sha256, &derived, &shared);
        assert_eq!(
            hs,
            unhex("1dc826e93606aa6fdc0aadc12f741b01046aa6b99f691ed221a9f0ca043fbeac")
        );
    }

    #[test]
    fn prf12_known_vector() {
        // Widely published P_SHA256 test vector
        let secret = unhex("9b be 43 6b a9 40 f0 17 b1 76 52 84 9a 71 db 35");
        let seed = unhex("a0 ba 9f 93 6c da 31 18 27 a6 f7 96 ff d5 19 8c");
        let out = prf12(HashAlg::Sha256, &secret, "test label", &seed, 16);
        assert_eq!(out, unhex("e3 f2 29 ba 72 7b e1 7b 8d 12 26 20 55 7c d4 53"));
    }

    #[test]
    fn record_round_trip_all_suites() {
        for id in [0x1301u16, 0x1302, 0x1303, 0xc02b, 0xc030, 0xcca8] {
            let p = suite_params(id).unwrap();
            let (mut a, mut b) = if p.tls13 {
                let secret = vec![3u8; p.hash.output_len()];
                (RecordCipher::tls13(p, &secret), RecordCipher::tls13(p, &secret))
            } else {
                let key = vec![5u8; p.aead.key_len()];
                let iv_len = if p.aead == AeadKind::ChaCha20Poly1305 { 12 } else { 4 };
                let iv = vec![9u8; iv_len];
                (RecordCipher::tls12(p, &key, &iv), RecordCipher::tls12(p, &key, &iv))
            };
            for i in 0..3u8 {
                let (outer, sealed) = a.seal(22, &[i; 40]);
                let (inner, plain) = b.open(outer, &sealed).unwrap();
                assert_eq!(inner, 22);
                assert_eq!(plain, vec![i; 40]);
            }
            let (outer, mut sealed) = a.seal(23, b"x");
            let last = sealed.len() - 1;
            sealed[last] ^= 1;
            assert!(b.open(outer, &sealed).is_err());
        }
    }
}
