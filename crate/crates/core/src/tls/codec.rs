//! TLS wire structures: constants, a byte cursor, ClientHello construction
//! and parsing of the server's handshake messages.

use std::collections::BTreeSet;

pub const CT_CHANGE_CIPHER_SPEC: u8 = 20;
pub const CT_ALERT: u8 = 21;
pub const CT_HANDSHAKE: u8 = 22;
pub const CT_APPLICATION_DATA: u8 = 23;

pub const HT_CLIENT_HELLO: u8 = 1;
pub const HT_SERVER_HELLO: u8 = 2;
pub const HT_NEW_SESSION_TICKET: u8 = 4;
pub const HT_ENCRYPTED_EXTENSIONS: u8 = 8;
pub const HT_CERTIFICATE: u8 = 11;
pub const HT_SERVER_KEY_EXCHANGE: u8 = 12;
pub const HT_CERTIFICATE_REQUEST: u8 = 13;
pub const HT_SERVER_HELLO_DONE: u8 = 14;
pub const HT_CERTIFICATE_VERIFY: u8 = 15;
pub const HT_CLIENT_KEY_EXCHANGE: u8 = 16;
pub const HT_FINISHED: u8 = 20;
pub const HT_CERTIFICATE_STATUS: u8 = 22;
pub const HT_KEY_UPDATE: u8 = 24;

pub const EXT_SERVER_NAME: u16 = 0;
pub const EXT_STATUS_REQUEST: u16 = 5;
pub const EXT_SUPPORTED_GROUPS: u16 = 10;
pub const EXT_EC_POINT_FORMATS: u16 = 11;
pub const EXT_SIGNATURE_ALGORITHMS: u16 = 13;
pub const EXT_ALPN: u16 = 16;
pub const EXT_EXTENDED_MASTER_SECRET: u16 = 23;
pub const EXT_SESSION_TICKET: u16 = 35;
pub const EXT_PRE_SHARED_KEY: u16 = 41;
pub const EXT_SUPPORTED_VERSIONS: u16 = 43;
pub const EXT_PSK_KEY_EXCHANGE_MODES: u16 = 45;
pub const EXT_KEY_SHARE: u16 = 51;
pub const EXT_RENEGOTIATION_INFO: u16 = 0xff01;

pub const GROUP_SECP256R1: u16 = 23;
pub const GROUP_SECP384R1: u16 = 24;
pub const GROUP_X25519: u16 = 29;

pub const VERSION_TLS12: u16 = 0x0303;
pub const VERSION_TLS13: u16 = 0x0304;

/// SHA-256 of "HelloRetryRequest", the fixed ServerHello.random of an HRR.
pub const HRR_RANDOM: [u8; 32] = [
    0xcf, 0x21, 0xad, 0x74, 0xe5, 0x9a, 0x61, 0x11, 0xbe, 0x1d, 0x8c, 0x02, 0x1e, 0x65, 0xb8, 0x91, 0xc2, 0xa2, 0x11,
    0x16, 0x7a, 0xbb, 0x8c, 0x5e, 0x07, 0x9e, 0x09, 0xe2, 0xc8, 0xa8, 0x33, 0x9c,
];

pub const TLS13_SUITES: &[u16] = &[0x1301, 0x1302, 0x1303];

/// ECDHE AEAD suites the client can complete.
pub const TLS12_SUITES: &[u16] = &[0xc02b, 0xc02f, 0xc02c, 0xc030, 0xcca9, 0xcca8];

/// Offered only under the legacy-inclusive policy; the client records the
/// server's choice but cannot complete a handshake with them.
pub const LEGACY_SUITES: &[u16] = &[
    0xc013, 0xc014, 0xc009, 0xc00a, 0x009c, 0x009d, 0x002f, 0x0035, 0x000a, 0x0005, 0x0004,
];

pub const SCSV_RENEGOTIATION: u16 = 0x00ff;

pub const SIGNATURE_SCHEMES: &[u16] = &[
    0x0403, 0x0503, 0x0603, 0x0807, 0x0804, 0x0805, 0x0806, 0x0401, 0x0501, 0x0601, 0x0203, 0x0201,
];

pub fn is_supported_suite(suite: u16) -> bool {
    TLS13_SUITES.contains(&suite) || TLS12_SUITES.contains(&suite)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("decode error: {0}")]
pub struct DecodeError(pub &'static str);

pub struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Cursor { data, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError("truncated"));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, DecodeError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    pub fn u24(&mut self) -> Result<usize, DecodeError> {
        let b = self.take(3)?;
        Ok(((b[0] as usize) << 16) | ((b[1] as usize) << 8) | b[2] as usize)
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn vec8(&mut self) -> Result<&'a [u8], DecodeError> {
        let n = self.u8()? as usize;
        self.take(n)
    }

    pub fn vec16(&mut self) -> Result<&'a [u8], DecodeError> {
        let n = self.u16()? as usize;
        self.take(n)
    }

    pub fn vec24(&mut self) -> Result<&'a [u8], DecodeError> {
        let n = self.u24()?;
        self.take(n)
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let out = &self.data[self.pos..];
        self.pos = self.data.len();
        out
    }
}

pub fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub fn put_u24(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_be_bytes()[1..]);
}

pub fn put_vec8(out: &mut Vec<u8>, v: &[u8]) {
    out.push(v.len() as u8);
    out.extend_from_slice(v);
}

pub fn put_vec16(out: &mut Vec<u8>, v: &[u8]) {
    put_u16(out, v.len() as u16);
    out.extend_from_slice(v);
}

pub fn handshake_message(msg_type: u8, body: &[u8]) -> Vec<u8> {
    let mut out = vec![msg_type];
    put_u24(&mut out, body.len());
    out.extend_from_slice(body);
    out
}

fn extension(out: &mut Vec<u8>, ext_type: u16, body: &[u8]) {
    put_u16(out, ext_type);
    put_vec16(out, body);
}

/// Everything that varies between ClientHellos.
#[derive(Debug, Clone)]
pub struct HelloParams {
    pub random: [u8; 32],
    pub session_id: Vec<u8>,
    pub suites: Vec<u16>,
    pub sni: Option<String>,
    pub offer_tls12: bool,
    pub offer_tls13: bool,
    /// (group, public key) pairs for the TLS 1.3 key_share extension.
    pub key_shares: Vec<(u16, Vec<u8>)>,
    pub alpn: Vec<String>,
    pub status_request: bool,
    /// TLS 1.2 session ticket to present (empty = request a new one).
    pub ticket12: Option<Vec<u8>>,
    /// TLS 1.3 PSK identity and obfuscated age; the binder is filled in
    /// afterwards with [`patch_binder`].
    pub psk: Option<(Vec<u8>, u32, usize)>,
    /// HelloRetryRequest cookie to echo.
    pub cookie: Option<Vec<u8>>,
}

/// Encodes a ClientHello handshake message. With a PSK the binder is left
/// zeroed; returns the offset where the binders list starts.
pub fn client_hello(p: &HelloParams) -> (Vec<u8>, Option<usize>) {
    let mut body = Vec::with_capacity(512);
    put_u16(&mut body, VERSION_TLS12);
    body.extend_from_slice(&p.random);
    put_vec8(&mut body, &p.session_id);
    let mut suites = Vec::new();
    for s in &p.suites {
        put_u16(&mut suites, *s);
    }
    put_vec16(&mut body, &suites);
    put_vec8(&mut body, &[0]);

    let mut ext = Vec::new();
    if let Some(name) = &p.sni {
        let mut list = vec![0u8];
        put_vec16(&mut list, name.as_bytes());
        let mut b = Vec::new();
        put_vec16(&mut b, &list);
        extension(&mut ext, EXT_SERVER_NAME, &b);
    }
    if p.status_request {
        extension(&mut ext, EXT_STATUS_REQUEST, &[1, 0, 0, 0, 0]);
    }
    let mut groups = Vec::new();
    for g in [GROUP_X25519, GROUP_SECP256R1, GROUP_SECP384R1] {
        put_u16(&mut groups, g);
    }
    let mut b = Vec::new();
    put_vec16(&mut b, &groups);
    extension(&mut ext, EXT_SUPPORTED_GROUPS, &b);
    if p.offer_tls12 {
        extension(&mut ext, EXT_EC_POINT_FORMATS, &[1, 0]);
    }
    let mut schemes = Vec::new();
    for s in SIGNATURE_SCHEMES {
        put_u16(&mut schemes, *s);
    }
    let mut b = Vec::new();
    put_vec16(&mut b, &schemes);
    extension(&mut ext, EXT_SIGNATURE_ALGORITHMS, &b);
    if !p.alpn.is_empty() {
        let mut list = Vec::new();
        for proto in &p.alpn {
            put_vec8(&mut list, proto.as_bytes());
        }
        let mut b = Vec::new();
        put_vec16(&mut b, &list);
        extension(&mut ext, EXT_ALPN, &b);
    }
    if p.offer_tls12 {
        extension(&mut ext, EXT_EXTENDED_MASTER_SECRET, &[]);
        extension(&mut ext, EXT_SESSION_TICKET, p.ticket12.as_deref().unwrap_or(&[]));
        extension(&mut ext, EXT_RENEGOTIATION_INFO, &[0]);
    }
    if p.offer_tls13 {
        let mut versions = Vec::new();
        put_u16(&mut versions, VERSION_TLS13);
        if p.offer_tls12 {
            put_u16(&mut versions, VERSION_TLS12);
        }
        let mut b = Vec::new();
        put_vec8(&mut b, &versions);
        extension(&mut ext, EXT_SUPPORTED_VERSIONS, &b);
        if let Some(cookie) = &p.cookie {
            let mut b = Vec::new();
            put_vec16(&mut b, cookie);
            extension(&mut ext, 44, &b);
        }
        let mut shares = Vec::new();
        for (g, pk) in &p.key_shares {
            put_u16(&mut shares, *g);
            put_vec16(&mut shares, pk);
        }
        let mut b = Vec::new();
        put_vec16(&mut b, &shares);
        extension(&mut ext, EXT_KEY_SHARE, &b);
        extension(&mut ext, EXT_PSK_KEY_EXCHANGE_MODES, &[1, 1]);
    }
    let mut binder_offset_in_ext = None;
    if let (true, Some((identity, age, hash_len))) = (p.offer_tls13, &p.psk) {
        let mut ids = Vec::new();
        put_vec16(&mut ids, identity);
        ids.extend_from_slice(&age.to_be_bytes());
        let mut b = Vec::new();
        put_vec16(&mut b, &ids);
        let binders_start = b.len();
        let mut binder = Vec::new();
        put_vec8(&mut binder, &vec![0u8; *hash_len]);
        put_vec16(&mut b, &binder);
        put_u16(&mut ext, EXT_PRE_SHARED_KEY);
        put_u16(&mut ext, b.len() as u16);
        binder_offset_in_ext = Some(ext.len() + binders_start);
        ext.extend_from_slice(&b);
    }
    put_u16(&mut body, ext.len() as u16);
    let ext_start = body.len();
    body.extend_from_slice(&ext);
    let msg = handshake_message(HT_CLIENT_HELLO, &body);
    // 4 bytes of handshake header precede the body
    let binders_at = binder_offset_in_ext.map(|o| 4 + ext_start + o);
    (msg, binders_at)
}

/// Writes the binder value into a ClientHello built with a PSK.
pub fn patch_binder(msg: &mut [u8], binders_at: usize, binder: &[u8]) {
    // binders list: u16 length, then u8 length + binder
    let start = binders_at + 3;
    msg[start..start + binder.len()].copy_from_slice(binder);
}

#[derive(Debug, Clone, Default)]
pub struct ServerHello {
    pub legacy_version: u16,
    pub random: [u8; 32],
    pub session_id: Vec<u8>,
    pub cipher_suite: u16,
    pub compression: u8,
    pub extensions: Vec<(u16, Vec<u8>)>,
}

impl ServerHello {
    pub fn ext(&self, t: u16) -> Option<&[u8]> {
        self.extensions
            .iter()
            .find(|(et, _)| *et == t)
            .map(|(_, b)| b.as_slice())
    }

    pub fn is_hrr(&self) -> bool {
        self.random == HRR_RANDOM
    }

    pub fn selected_version(&self) -> u16 {
        match self.ext(EXT_SUPPORTED_VERSIONS) {
            Some(b) if b.len() == 2 => u16::from_be_bytes([b[0], b[1]]),
            _ => self.legacy_version,
        }
    }

    pub fn key_share(&self) -> Option<(u16, Vec<u8>)> {
        let b = self.ext(EXT_KEY_SHARE)?;
        let mut c = Cursor::new(b);
        let group = c.u16().ok()?;
        if c.is_empty() {
            // HelloRetryRequest form: only the requested group
            return Some((group, Vec::new()));
        }
        Some((group, c.vec16().ok()?.to_vec()))
    }
}

pub fn parse_extensions(data: &[u8]) -> Result<Vec<(u16, Vec<u8>)>, DecodeError> {
    let mut c = Cursor::new(data);
    let mut out = Vec::new();
    while !c.is_empty() {
        let t = c.u16()?;
        let body = c.vec16()?;
        out.push((t, body.to_vec()));
    }
    Ok(out)
}

pub fn parse_server_hello(body: &[u8]) -> Result<ServerHello, DecodeError> {
    let mut c = Cursor::new(body);
    let legacy_version = c.u16()?;
    let mut random = [0u8; 32];
    random.copy_from_slice(c.take(32)?);
    let session_id = c.vec8()?.to_vec();
    let cipher_suite = c.u16()?;
    let compression = c.u8()?;
    let extensions = if c.is_empty() {
        Vec::new()
    } else {
        parse_extensions(c.vec16()?)?
    };
    Ok(ServerHello {
        legacy_version,
        random,
        session_id,
        cipher_suite,
        compression,
        extensions,
    })
}

#[derive(Debug, Clone, Default)]
pub struct CertificateMsg {
    pub chain: Vec<Vec<u8>>,
    /// OCSP response carried in the first entry's status_request extension
    /// (TLS 1.3).
    pub ocsp: Option<Vec<u8>>,
}

pub fn parse_certificate_msg(body: &[u8], tls13: bool) -> Result<CertificateMsg, DecodeError> {
    let mut c = Cursor::new(body);
    if tls13 {
        c.vec8()?;
    }
    let list = c.vec24()?;
    let mut lc = Cursor::new(list);
    let mut out = CertificateMsg::default();
    while !lc.is_empty() {
        let cert = lc.vec24()?.to_vec();
        if tls13 {
            let exts = parse_extensions(lc.vec16()?)?;
            if out.chain.is_empty() {
                if let Some((_, b)) = exts.iter().find(|(t, _)| *t == EXT_STATUS_REQUEST) {
                    out.ocsp = parse_certificate_status(b).ok();
                }
            }
        }
        out.chain.push(cert);
    }
    Ok(out)
}

/// CertificateStatus body: status_type ocsp(1), then a u24-prefixed
/// OCSPResponse.
pub fn parse_certificate_status(body: &[u8]) -> Result<Vec<u8>, DecodeError> {
    let mut c = Cursor::new(body);
    if c.u8()? != 1 {
        return Err(DecodeError("status type is not ocsp"));
    }
    Ok(c.vec24()?.to_vec())
}

#[derive(Debug, Clone)]
pub struct ServerKeyExchange {
    pub group: u16,
    pub public: Vec<u8>,
    pub signature_scheme: Option<u16>,
}

pub fn parse_server_key_exchange(body: &[u8]) -> Result<ServerKeyExchange, DecodeError> {
    let mut c = Cursor::new(body);
    if c.u8()? != 3 {
        return Err(DecodeError("server key exchange is not named_curve ECDHE"));
    }
    let group = c.u16()?;
    let public = c.vec8()?.to_vec();
    let signature_scheme = c.u16().ok();
    Ok(ServerKeyExchange {
        group,
        public,
        signature_scheme,
    })
}

#[derive(Debug, Clone)]
pub struct NewSessionTicket13 {
    pub lifetime: u32,
    pub age_add: u32,
    pub nonce: Vec<u8>,
    pub ticket: Vec<u8>,
}

pub fn parse_new_session_ticket13(body: &[u8]) -> Result<NewSessionTicket13, DecodeError> {
    let mut c = Cursor::new(body);
    let lifetime = c.u32()?;
    let age_add = c.u32()?;
    let nonce = c.vec8()?.to_vec();
    let ticket = c.vec16()?.to_vec();
    Ok(NewSessionTicket13 {
        lifetime,
        age_add,
        nonce,
        ticket,
    })
}

pub fn parse_new_session_ticket12(body: &[u8]) -> Result<(u32, Vec<u8>), DecodeError> {
    let mut c = Cursor::new(body);
    let lifetime = c.u32()?;
    let ticket = c.vec16()?.to_vec();
    Ok((lifetime, ticket))
}

pub fn parse_alpn(body: &[u8]) -> Option<String> {
    let mut c = Cursor::new(body);
    let list = c.vec16().ok()?;
    let mut lc = Cursor::new(list);
    let proto = lc.vec8().ok()?;
    Some(String::from_utf8_lossy(proto).into_owned())
}

/// Suites offered for a configuration, in preference order.
pub fn offered_suites(tls12: bool, tls13: bool, legacy: bool, named: Option<&[u16]>) -> Vec<u16> {
    let mut out = Vec::new();
    match named {
        Some(list) => out.extend_from_slice(list),
        None => {
            if tls13 {
                out.extend_from_slice(TLS13_SUITES);
            }
            if tls12 {
                out.extend_from_slice(TLS12_SUITES);
                if legacy {
                    out.extend_from_slice(LEGACY_SUITES);
                }
            }
        }
    }
    let mut seen = BTreeSet::new();
    out.retain(|s| seen.insert(*s));
    if tls12 {
        out.push(SCSV_RENEGOTIATION);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> HelloParams {
        HelloParams {
            random: [7; 32],
            session_id: vec![1; 32],
            suites: offered_suites(true, true, false, None),
            sni: Some("a.test".into()),
            offer_tls12: true,
            offer_tls13: true,
            key_shares: vec![(GROUP_X25519, vec![9; 32])],
            alpn: vec!["http/1.1".into()],
            status_request: true,
            ticket12: None,
            psk: None,
            cookie: None,
        }
    }

    fn extension_types(msg: &[u8]) -> Vec<u16> {
        let mut c = Cursor::new(&msg[4..]);
        c.take(2 + 32).unwrap();
        c.vec8().unwrap();
        c.vec16().unwrap();
        c.vec8().unwrap();
        parse_extensions(c.vec16().unwrap())
            .unwrap()
            .into_iter()
            .map(|(t, _)| t)
            .collect()
    }

    #[test]
    fn hello_structure() {
        let (msg, binders) = client_hello(&params());
        assert_eq!(msg[0], HT_CLIENT_HELLO);
        assert_eq!(
            msg.len() - 4,
            ((msg[1] as usize) << 16) | ((msg[2] as usize) << 8) | msg[3] as usize
        );
        assert!(binders.is_none());
        let types = extension_types(&msg);
        assert!(types.contains(&EXT_SERVER_NAME));
        assert!(types.contains(&EXT_STATUS_REQUEST));
        assert!(types.contains(&EXT_KEY_SHARE));
    }

    #[test]
    fn no_sni_means_no_extension() {
        let mut p = params();
        p.sni = None;
        p.status_request = false;
        let (msg, _) = client_hello(&p);
        let types = extension_types(&msg);
        assert!(!types.contains(&EXT_SERVER_NAME));
        assert!(!types.contains(&EXT_STATUS_REQUEST));
    }

    #[test]
    fn psk_is_last_and_binder_patchable() {
        let mut p = params();
        p.psk = Some((vec![0xaa; 16], 1234, 32));
        let (mut msg, binders) = client_hello(&p);
        let types = extension_types(&msg);
        assert_eq!(types.last(), Some(&EXT_PRE_SHARED_KEY));
        let at = binders.unwrap();
        assert_eq!(msg.len(), at + 2 + 1 + 32);
        patch_binder(&mut msg, at, &[0x55; 32]);
        assert!(msg.ends_with(&[0x55; 32]));
    }

    #[test]
    fn suite_lists() {
        let s = offered_suites(true, false, true, None);
        assert!(s.contains(&0x000a));
        assert!(!s.contains(&0x1301));
        assert_eq!(s.last(), Some(&SCSV_RENEGOTIATION));
        let s = offered_suites(false, true, false, None);
        assert_eq!(s, TLS13_SUITES.to_vec());
    }
}
