//! The handshake state machine for TLS 1.2 (ECDHE, AEAD suites, ticket and
//! session-id resumption) and TLS 1.3 (ECDHE, PSK-DHE resumption, HRR).

use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::time::Instant;

use ring::agreement::{self, EphemeralPrivateKey, UnparsedPublicKey};
use ring::rand::{SecureRandom, SystemRandom};

use super::codec::{self, *};
use super::crypto::{self, derive_secret, expand_label, prf12, HashAlg, RecordCipher, Schedule13, SuiteParams};
use super::record::{Incoming, IoFail, RecordIo};
use super::{Captured, CipherPolicy, Negotiated, Outcome, ProbeConfig, SessionKind, SessionState, TlsVersion};
use crate::clock::{elapsed_between, Timestamp};

const ALERT_CLOSE_NOTIFY: u8 = 0;
const ALERT_HANDSHAKE_FAILURE: u8 = 40;
const ALERT_DECRYPT_ERROR: u8 = 51;
const HT_MESSAGE_HASH: u8 = 254;
const EXT_COOKIE: u16 = 44;

fn fail(e: IoFail) -> Outcome {
    match e {
        IoFail::Timeout => Outcome::Timeout,
        IoFail::Eof => Outcome::protocol("connection-closed"),
        IoFail::Reset => Outcome::protocol("connection-reset"),
        IoFail::BadMac => Outcome::protocol("bad-record-mac"),
        IoFail::Malformed(_) => Outcome::protocol("malformed-record"),
        IoFail::Other(_) => Outcome::protocol("io-error"),
    }
}

fn decode(_: codec::DecodeError) -> Outcome {
    Outcome::protocol("malformed-handshake")
}

struct KeyShare {
    group: u16,
    private: EphemeralPrivateKey,
    public: Vec<u8>,
}

impl KeyShare {
    fn generate(group: u16, rng: &SystemRandom) -> Option<KeyShare> {
        let alg = match group {
            GROUP_X25519 => &agreement::X25519,
            GROUP_SECP256R1 => &agreement::ECDH_P256,
            GROUP_SECP384R1 => &agreement::ECDH_P384,
            _ => return None,
        };
        let private = EphemeralPrivateKey::generate(alg, rng).ok()?;
        let public = private.compute_public_key().ok()?.as_ref().to_vec();
        Some(KeyShare { group, private, public })
    }

    fn agree(self, peer: &[u8]) -> Option<Vec<u8>> {
        let alg = self.private.algorithm();
        agreement::agree_ephemeral(self.private, &UnparsedPublicKey::new(alg, peer), |k| k.to_vec()).ok()
    }
}

fn random32(rng: &SystemRandom) -> [u8; 32] {
    let mut out = [0u8; 32];
    rng.fill(&mut out).expect("system randomness");
    out
}

struct Hs<'a> {
    cfg: &'a ProbeConfig,
    io: RecordIo,
    cap: Captured,
    transcript: Vec<u8>,
    origin: String,
    now: Timestamp,
    session: Option<SessionState>,
    rng: SystemRandom,
}

enum Msg {
    Hs { msg_type: u8, body: Vec<u8>, raw: Vec<u8> },
    Ccs,
}

impl Hs<'_> {
    /// Next handshake message or CCS; alerts end the handshake.
    fn next(&mut self) -> Result<Msg, Outcome> {
        loop {
            match self.io.next_incoming().map_err(fail)? {
                Incoming::Handshake { msg_type, body, raw } => return Ok(Msg::Hs { msg_type, body, raw }),
                Incoming::ChangeCipherSpec => return Ok(Msg::Ccs),
                // TLS 1.2 warning alerts such as unrecognized_name do not end the handshake
                Incoming::Alert { level: 1, code } if code != ALERT_CLOSE_NOTIFY => continue,
                Incoming::Alert { code, .. } => return Err(Outcome::Alert { code }),
                Incoming::AppData(_) => return Err(Outcome::protocol("unexpected-application-data")),
            }
        }
    }

    /// Next handshake message, skipping compatibility-mode CCS records.
    fn next_hs(&mut self) -> Result<(u8, Vec<u8>, Vec<u8>), Outcome> {
        loop {
            match self.next()? {
                Msg::Hs { msg_type, body, raw } => return Ok((msg_type, body, raw)),
                Msg::Ccs => continue,
            }
        }
    }

    fn send_hs(&mut self, msg: &[u8]) -> Result<(), Outcome> {
        self.transcript.extend_from_slice(msg);
        self.io.write_record(CT_HANDSHAKE, msg).map_err(fail)
    }

    fn send_alert(&mut self, code: u8) {
        let _ = self.io.write_record(CT_ALERT, &[2, code]);
    }

    fn hello_params(&self, random: [u8; 32], session_id: Vec<u8>, shares: &[KeyShare]) -> HelloParams {
        let cfg = self.cfg;
        let offer12 = cfg.offers(TlsVersion::Tls12);
        let offer13 = cfg.offers(TlsVersion::Tls13);
        let (legacy, named) = match &cfg.cipher_policy {
            CipherPolicy::Default => (false, None),
            CipherPolicy::LegacyInclusive => (true, None),
            CipherPolicy::NamedList(l) => (false, Some(l.as_slice())),
        };
        let mut psk = None;
        let mut ticket12 = None;
        if let Some(s) = &self.session {
            match (s.version, s.kind) {
                (TlsVersion::Tls13, SessionKind::Ticket) if offer13 => {
                    let hash = crypto::suite_params(s.cipher_suite)
                        .map(|p| p.hash)
                        .unwrap_or(HashAlg::Sha256);
                    let age = elapsed_between(self.now, s.issued_at).as_millis() as u32;
                    psk = Some((s.opaque_state.clone(), age.wrapping_add(s.age_add), hash.output_len()));
                }
                (TlsVersion::Tls12, SessionKind::Ticket) if offer12 => ticket12 = Some(s.opaque_state.clone()),
                _ => {}
            }
        }
        HelloParams {
            random,
            session_id,
            suites: offered_suites(offer12, offer13, legacy, named),
            sni: cfg.sni.clone(),
            offer_tls12: offer12,
            offer_tls13: offer13,
            key_shares: shares.iter().map(|k| (k.group, k.public.clone())).collect(),
            alpn: cfg.alpn.clone().unwrap_or_default(),
            status_request: cfg.request_stapled_ocsp,
            ticket12,
            psk,
            cookie: None,
        }
    }

    /// Encodes a ClientHello and fills in the PSK binder over the current
    /// transcript plus the truncated hello.
    fn build_hello(&self, params: &HelloParams) -> Vec<u8> {
        let (mut msg, binders_at) = client_hello(params);
        if let (Some(at), Some(s)) = (binders_at, &self.session) {
            let hash = crypto::suite_params(s.cipher_suite)
                .map(|p| p.hash)
                .unwrap_or(HashAlg::Sha256);
            let mut partial = self.transcript.clone();
            partial.extend_from_slice(&msg[..at]);
            let key = Schedule13::binder_key(hash, &s.secret);
            let binder = crypto::finished_mac(hash, &key, &hash.hash(&partial));
            patch_binder(&mut msg, at, &binder);
        }
        msg
    }

    fn run(&mut self) -> Result<Connection, Outcome> {
        let offer13 = self.cfg.offers(TlsVersion::Tls13);
        let random = random32(&self.rng);
        let session_id = match &self.session {
            Some(s) if s.kind == SessionKind::SessionId && s.version == TlsVersion::Tls12 => s.opaque_state.clone(),
            _ => random32(&self.rng).to_vec(),
        };
        let mut shares: Vec<KeyShare> = if offer13 {
            [GROUP_X25519, GROUP_SECP256R1]
                .iter()
                .filter_map(|g| KeyShare::generate(*g, &self.rng))
                .collect()
        } else {
            Vec::new()
        };
        let mut params = self.hello_params(random, session_id.clone(), &shares);
        let hello = self.build_hello(&params);
        self.transcript.extend_from_slice(&hello);
        self.io.write_initial(&hello).map_err(fail)?;

        let mut retried = false;
        loop {
            let (t, body, raw) = self.next_hs()?;
            if t != HT_SERVER_HELLO {
                return Err(Outcome::protocol("unexpected-message"));
            }
            let sh = parse_server_hello(&body).map_err(decode)?;
            if sh.is_hrr() {
                if retried || !offer13 {
                    return Err(Outcome::protocol("unexpected-hello-retry"));
                }
                retried = true;
                let suite = crypto::suite_params(sh.cipher_suite)
                    .filter(|p| p.tls13)
                    .ok_or_else(|| Outcome::protocol("suite-not-offered"))?;
                let ch1_hash = suite.hash.hash(&self.transcript);
                self.transcript = handshake_message(HT_MESSAGE_HASH, &ch1_hash);
                self.transcript.extend_from_slice(&raw);
                if let Some((group, _)) = sh.key_share() {
                    if shares.iter().any(|k| k.group == group) {
                        return Err(Outcome::protocol("hello-retry-same-group"));
                    }
                    let share =
                        KeyShare::generate(group, &self.rng).ok_or_else(|| Outcome::protocol("unsupported-group"))?;
                    shares = vec![share];
                }
                let mut next = self.hello_params(random, session_id.clone(), &shares);
                next.cookie = sh
                    .ext(EXT_COOKIE)
                    .and_then(|b| Cursor::new(b).vec16().ok().map(<[u8]>::to_vec));
                params = next;
                let hello = self.build_hello(&params);
                self.send_hs(&hello)?;
                continue;
            }
            self.transcript.extend_from_slice(&raw);
            return self.after_server_hello(sh, &params, shares);
        }
    }

    fn after_server_hello(
        &mut self,
        sh: ServerHello,
        params: &HelloParams,
        shares: Vec<KeyShare>,
    ) -> Result<Connection, Outcome> {
        let version_wire = sh.selected_version();
        let version = TlsVersion::from_wire(version_wire)
            .filter(|v| self.cfg.offers(*v))
            .ok_or_else(|| Outcome::protocol("version-not-offered"))?;
        if !params.suites.contains(&sh.cipher_suite) || sh.cipher_suite == SCSV_RENEGOTIATION {
            return Err(Outcome::protocol("suite-not-offered"));
        }
        let alpn = sh.ext(EXT_ALPN).and_then(parse_alpn);
        self.cap.negotiated = Some(Negotiated {
            version,
            cipher_suite: sh.cipher_suite,
            extensions: sh.extensions.iter().map(|(t, _)| *t).collect(),
            alpn,
            group: sh.key_share().map(|(g, _)| g),
            extended_master_secret: version == TlsVersion::Tls12 && sh.ext(EXT_EXTENDED_MASTER_SECRET).is_some(),
        });
        let suite = crypto::suite_params(sh.cipher_suite).filter(|p| p.tls13 == (version == TlsVersion::Tls13));
        match version {
            TlsVersion::Tls13 => {
                let suite = suite.ok_or_else(|| Outcome::protocol("client-unsupported-suite"))?;
                self.tls13(sh, suite, shares)
            }
            TlsVersion::Tls12 => self.tls12(sh, suite, &params.session_id, &params.random),
        }
    }

    fn tls12(
        &mut self,
        sh: ServerHello,
        suite: Option<SuiteParams>,
        our_session_id: &[u8],
        client_random: &[u8; 32],
    ) -> Result<Connection, Outcome> {
        let resumable = self
            .session
            .as_ref()
            .filter(|s| s.version == TlsVersion::Tls12)
            .cloned();
        let resumed = resumable.is_some() && !sh.session_id.is_empty() && sh.session_id == our_session_id;
        let mut seed_cs = client_random.to_vec();
        seed_cs.extend_from_slice(&sh.random);
        let mut seed_sc = sh.random.to_vec();
        seed_sc.extend_from_slice(client_random);

        if resumed {
            let session = resumable.expect("checked above");
            let suite = suite.ok_or_else(|| Outcome::protocol("client-unsupported-suite"))?;
            let hash = suite.hash;
            let master = session.secret.clone();
            let (cw, sw) = key_block12(suite, &master, &seed_sc);
            let mut new_ticket = None;
            loop {
                match self.next()? {
                    Msg::Hs {
                        msg_type: HT_NEW_SESSION_TICKET,
                        body,
                        raw,
                    } => {
                        new_ticket = Some(parse_new_session_ticket12(&body).map_err(decode)?);
                        self.transcript.extend_from_slice(&raw);
                    }
                    Msg::Ccs => break,
                    Msg::Hs { .. } => return Err(Outcome::protocol("unexpected-message")),
                }
            }
            self.io.read_cipher = Some(sw);
            self.expect_finished12(hash, &master, "server finished")?;
            self.io.write_record(CT_CHANGE_CIPHER_SPEC, &[1]).map_err(fail)?;
            self.io.write_cipher = Some(cw);
            let verify = prf12(hash, &master, "client finished", &hash.hash(&self.transcript), 12);
            self.send_hs(&handshake_message(HT_FINISHED, &verify))?;
            self.cap.resumed = true;
            let ems = self.cap.negotiated.as_ref().is_some_and(|n| n.extended_master_secret);
            if let Some((lifetime, ticket)) = new_ticket.filter(|(_, t)| !t.is_empty()) {
                self.cap
                    .sessions
                    .push(self.session12(SessionKind::Ticket, ticket, lifetime, suite.id, &master, ems));
            }
            return Ok(self.connection(TlsVersion::Tls12, suite, None));
        }

        let mut ske = None;
        let mut cert_requested = false;
        loop {
            let (t, body, raw) = self.next_hs()?;
            self.transcript.extend_from_slice(&raw);
            match t {
                HT_CERTIFICATE => self.cap.chain = parse_certificate_msg(&body, false).map_err(decode)?.chain,
                HT_CERTIFICATE_STATUS => self.cap.staple = parse_certificate_status(&body).ok(),
                HT_SERVER_KEY_EXCHANGE => ske = Some(body),
                HT_CERTIFICATE_REQUEST => cert_requested = true,
                HT_SERVER_HELLO_DONE => break,
                _ => return Err(Outcome::protocol("unexpected-message")),
            }
        }
        let Some(suite) = suite else {
            self.send_alert(ALERT_HANDSHAKE_FAILURE);
            return Err(Outcome::protocol("client-unsupported-suite"));
        };
        let ske = ske.ok_or_else(|| Outcome::protocol("missing-key-exchange"))?;
        let ske = parse_server_key_exchange(&ske).map_err(decode)?;
        if let Some(n) = self.cap.negotiated.as_mut() {
            n.group = Some(ske.group);
        }
        let share = KeyShare::generate(ske.group, &self.rng).ok_or_else(|| Outcome::protocol("unsupported-group"))?;
        let public = share.public.clone();
        let pms = share
            .agree(&ske.public)
            .ok_or_else(|| Outcome::protocol("bad-key-share"))?;
        if cert_requested {
            self.send_hs(&handshake_message(HT_CERTIFICATE, &[0, 0, 0]))?;
        }
        let mut cke = Vec::new();
        put_vec8(&mut cke, &public);
        self.send_hs(&handshake_message(HT_CLIENT_KEY_EXCHANGE, &cke))?;

        let hash = suite.hash;
        let ems = self.cap.negotiated.as_ref().is_some_and(|n| n.extended_master_secret);
        let master = if ems {
            prf12(hash, &pms, "extended master secret", &hash.hash(&self.transcript), 48)
        } else {
            prf12(hash, &pms, "master secret", &seed_cs, 48)
        };
        let (cw, sw) = key_block12(suite, &master, &seed_sc);
        self.io.write_record(CT_CHANGE_CIPHER_SPEC, &[1]).map_err(fail)?;
        self.io.write_cipher = Some(cw);
        let verify = prf12(hash, &master, "client finished", &hash.hash(&self.transcript), 12);
        self.send_hs(&handshake_message(HT_FINISHED, &verify))?;

        let mut new_ticket = None;
        loop {
            match self.next()? {
                Msg::Hs {
                    msg_type: HT_NEW_SESSION_TICKET,
                    body,
                    raw,
                } => {
                    new_ticket = Some(parse_new_session_ticket12(&body).map_err(decode)?);
                    self.transcript.extend_from_slice(&raw);
                }
                Msg::Ccs => break,
                Msg::Hs { .. } => return Err(Outcome::protocol("unexpected-message")),
            }
        }
        self.io.read_cipher = Some(sw);
        self.expect_finished12(hash, &master, "server finished")?;
        match new_ticket.filter(|(_, t)| !t.is_empty()) {
            Some((lifetime, ticket)) => {
                self.cap
                    .sessions
                    .push(self.session12(SessionKind::Ticket, ticket, lifetime, suite.id, &master, ems));
            }
            None if !sh.session_id.is_empty() => {
                self.cap.sessions.push(self.session12(
                    SessionKind::SessionId,
                    sh.session_id.clone(),
                    0,
                    suite.id,
                    &master,
                    ems,
                ));
            }
            None => {}
        }
        Ok(self.connection(TlsVersion::Tls12, suite, None))
    }

    fn expect_finished12(&mut self, hash: HashAlg, master: &[u8], label: &str) -> Result<(), Outcome> {
        let (t, body, raw) = self.next_hs()?;
        if t != HT_FINISHED {
            return Err(Outcome::protocol("unexpected-message"));
        }
        let expected = prf12(hash, master, label, &hash.hash(&self.transcript), 12);
        if !ring_eq(&expected, &body) {
            self.send_alert(ALERT_DECRYPT_ERROR);
            return Err(Outcome::protocol("bad-finished"));
        }
        self.transcript.extend_from_slice(&raw);
        Ok(())
    }

    fn session12(
        &self,
        kind: SessionKind,
        opaque: Vec<u8>,
        lifetime: u32,
        suite: u16,
        master: &[u8],
        ems: bool,
    ) -> SessionState {
        SessionState {
            kind,
            opaque_state: opaque,
            issued_at: self.now,
            lifetime_hint: lifetime,
            origin_host: self.origin.clone(),
            version: TlsVersion::Tls12,
            cipher_suite: suite,
            secret: master.to_vec(),
            age_add: 0,
            extended_master_secret: ems,
        }
    }

    fn tls13(&mut self, sh: ServerHello, suite: SuiteParams, shares: Vec<KeyShare>) -> Result<Connection, Outcome> {
        let hash = suite.hash;
        let (group, peer) = sh.key_share().ok_or_else(|| Outcome::protocol("missing-key-share"))?;
        let share = shares
            .into_iter()
            .find(|k| k.group == group)
            .ok_or_else(|| Outcome::protocol("unexpected-key-share"))?;
        let shared = share.agree(&peer).ok_or_else(|| Outcome::protocol("bad-key-share"))?;
        let psk = match sh.ext(EXT_PRE_SHARED_KEY) {
            Some([0, 0]) => {
                let s = self
                    .session
                    .as_ref()
                    .ok_or_else(|| Outcome::protocol("unsolicited-psk"))?;
                let session_hash = crypto::suite_params(s.cipher_suite).map(|p| p.hash);
                if session_hash != Some(hash) {
                    return Err(Outcome::protocol("psk-hash-mismatch"));
                }
                Some(s.secret.clone())
            }
            Some(_) => return Err(Outcome::protocol("bad-psk-selection")),
            None => None,
        };
        let sched = Schedule13::new(hash, psk.as_deref(), &shared, &hash.hash(&self.transcript));
        self.io.read_cipher = Some(RecordCipher::tls13(suite, &sched.server_hs));

        let (t, body, raw) = self.next_hs()?;
        if t != HT_ENCRYPTED_EXTENSIONS {
            return Err(Outcome::protocol("unexpected-message"));
        }
        self.transcript.extend_from_slice(&raw);
        let ee = parse_extensions(Cursor::new(&body).vec16().map_err(decode)?).map_err(decode)?;
        if let Some(n) = self.cap.negotiated.as_mut() {
            n.extensions.extend(ee.iter().map(|(t, _)| *t));
            if let Some((_, b)) = ee.iter().find(|(t, _)| *t == EXT_ALPN) {
                n.alpn = parse_alpn(b);
            }
        }

        let mut cert_requested = false;
        loop {
            let (t, body, raw) = self.next_hs()?;
            match t {
                HT_CERTIFICATE_REQUEST => cert_requested = true,
                HT_CERTIFICATE => {
                    let msg = parse_certificate_msg(&body, true).map_err(decode)?;
                    self.cap.chain = msg.chain;
                    self.cap.staple = msg.ocsp;
                }
                HT_CERTIFICATE_VERIFY => {}
                HT_FINISHED => {
                    let expected = sched.finished_mac(&sched.server_hs, &hash.hash(&self.transcript));
                    if !ring_eq(&expected, &body) {
                        self.send_alert(ALERT_DECRYPT_ERROR);
                        return Err(Outcome::protocol("bad-finished"));
                    }
                    self.transcript.extend_from_slice(&raw);
                    break;
                }
                _ => return Err(Outcome::protocol("unexpected-message")),
            }
            self.transcript.extend_from_slice(&raw);
        }
        let app_hash = hash.hash(&self.transcript);
        let c_ap = derive_secret(hash, &sched.master, "c ap traffic", &app_hash);
        let s_ap = derive_secret(hash, &sched.master, "s ap traffic", &app_hash);

        self.io.write_record(CT_CHANGE_CIPHER_SPEC, &[1]).map_err(fail)?;
        self.io.write_cipher = Some(RecordCipher::tls13(suite, &sched.client_hs));
        if cert_requested {
            self.send_hs(&handshake_message(HT_CERTIFICATE, &[0, 0, 0, 0]))?;
        }
        let verify = sched.finished_mac(&sched.client_hs, &hash.hash(&self.transcript));
        self.send_hs(&handshake_message(HT_FINISHED, &verify))?;
        let rms = derive_secret(hash, &sched.master, "res master", &hash.hash(&self.transcript));
        self.io.read_cipher = Some(RecordCipher::tls13(suite, &s_ap));
        self.io.write_cipher = Some(RecordCipher::tls13(suite, &c_ap));
        self.cap.resumed = psk.is_some();
        Ok(self.connection(
            TlsVersion::Tls13,
            suite,
            Some(Tls13Secrets {
                resumption_master: rms,
                server_app: s_ap,
                client_app: c_ap,
            }),
        ))
    }

    fn connection(&mut self, version: TlsVersion, suite: SuiteParams, secrets: Option<Tls13Secrets>) -> Connection {
        Connection {
            version,
            suite,
            secrets,
            origin: self.origin.clone(),
            now: self.now,
        }
    }
}

fn key_block12(suite: SuiteParams, master: &[u8], seed_sc: &[u8]) -> (RecordCipher, RecordCipher) {
    let key_len = suite.aead.key_len();
    let iv_len = if suite.aead == crypto::AeadKind::ChaCha20Poly1305 {
        12
    } else {
        4
    };
    let block = prf12(suite.hash, master, "key expansion", seed_sc, 2 * key_len + 2 * iv_len);
    let (ck, rest) = block.split_at(key_len);
    let (sk, rest) = rest.split_at(key_len);
    let (civ, siv) = rest.split_at(iv_len);
    (RecordCipher::tls12(suite, ck, civ), RecordCipher::tls12(suite, sk, siv))
}

fn ring_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

struct Tls13Secrets {
    resumption_master: Vec<u8>,
    server_app: Vec<u8>,
    client_app: Vec<u8>,
}

struct Connection {
    version: TlsVersion,
    suite: SuiteParams,
    secrets: Option<Tls13Secrets>,
    origin: String,
    now: Timestamp,
}

/// An established connection carrying application data.
pub struct TlsConnection {
    io: RecordIo,
    conn: Connection,
    pending: Vec<u8>,
    closed: bool,
    sessions: Vec<SessionState>,
}

impl std::fmt::Debug for TlsConnection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TlsConnection")
            .field("version", &self.conn.version)
            .field("suite", &self.conn.suite.id)
            .finish()
    }
}

/// Summary of what an established connection negotiated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Established {
    pub version: TlsVersion,
    pub cipher_suite: u16,
}

/// Runs a handshake over `stream`. The captured state is returned whether
/// or not the handshake succeeds.
pub fn establish(
    stream: TcpStream,
    config: &ProbeConfig,
    origin_host: &str,
    now: Timestamp,
    deadline: Option<Instant>,
) -> (Captured, Result<TlsConnection, Outcome>) {
    let mut io = RecordIo::new(stream);
    io.set_deadline(deadline);
    let session = config
        .session_in
        .as_ref()
        .map(|s| s.mutated(&config.mutate_session_bits));
    let mut hs = Hs {
        cfg: config,
        io,
        cap: Captured::default(),
        transcript: Vec::new(),
        origin: origin_host.to_string(),
        now,
        session,
        rng: SystemRandom::new(),
    };
    let result = hs.run();
    let Hs { io, cap, .. } = hs;
    match result {
        Ok(conn) => (
            cap,
            Ok(TlsConnection {
                io,
                conn,
                pending: Vec::new(),
                closed: false,
                sessions: Vec::new(),
            }),
        ),
        Err(outcome) => {
            io.shutdown();
            (cap, Err(outcome))
        }
    }
}

impl TlsConnection {
    pub fn established(&self) -> Established {
        Established {
            version: self.conn.version,
            cipher_suite: self.conn.suite.id,
        }
    }

    pub fn set_deadline(&mut self, deadline: Option<Instant>) {
        self.io.set_deadline(deadline);
    }

    /// Session states issued after the handshake (TLS 1.3 tickets).
    pub fn take_sessions(&mut self) -> Vec<SessionState> {
        std::mem::take(&mut self.sessions)
    }

    fn post_handshake(&mut self, msg_type: u8, body: &[u8]) -> io::Result<()> {
        let Some(secrets) = self.conn.secrets.as_mut() else {
            // TLS 1.2 renegotiation requests are ignored
            return Ok(());
        };
        let hash = self.conn.suite.hash;
        match msg_type {
            HT_NEW_SESSION_TICKET => {
                let t = parse_new_session_ticket13(body).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
                let psk = expand_label(
                    hash,
                    &secrets.resumption_master,
                    "resumption",
                    &t.nonce,
                    hash.output_len(),
                );
                self.sessions.push(SessionState {
                    kind: SessionKind::Ticket,
                    opaque_state: t.ticket,
                    issued_at: self.conn.now,
                    lifetime_hint: t.lifetime,
                    origin_host: self.conn.origin.clone(),
                    version: TlsVersion::Tls13,
                    cipher_suite: self.conn.suite.id,
                    secret: psk,
                    age_add: t.age_add,
                    extended_master_secret: false,
                });
            }
            HT_KEY_UPDATE => {
                secrets.server_app = expand_label(hash, &secrets.server_app, "traffic upd", &[], hash.output_len());
                self.io.read_cipher = Some(RecordCipher::tls13(self.conn.suite, &secrets.server_app));
                if body.first() == Some(&1) {
                    let msg = handshake_message(HT_KEY_UPDATE, &[0]);
                    self.io.write_record(CT_HANDSHAKE, &msg).map_err(to_io)?;
                    secrets.client_app = expand_label(hash, &secrets.client_app, "traffic upd", &[], hash.output_len());
                    self.io.write_cipher = Some(RecordCipher::tls13(self.conn.suite, &secrets.client_app));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Reads the next chunk of application data; Ok(0) at close_notify or EOF.
    fn fill(&mut self) -> io::Result<usize> {
        while self.pending.is_empty() {
            if self.closed {
                return Ok(0);
            }
            match self.io.next_incoming() {
                Ok(Incoming::AppData(d)) => self.pending = d,
                Ok(Incoming::Handshake { msg_type, body, .. }) => self.post_handshake(msg_type, &body)?,
                Ok(Incoming::Alert {
                    code: ALERT_CLOSE_NOTIFY,
                    ..
                }) => self.closed = true,
                Ok(Incoming::Alert { level: 1, .. }) => {}
                Ok(Incoming::Alert { code, .. }) => {
                    self.closed = true;
                    return Err(io::Error::other(format!("tls alert {code}")));
                }
                Ok(Incoming::ChangeCipherSpec) => {}
                Err(IoFail::Eof) | Err(IoFail::Reset) => self.closed = true,
                Err(e) => return Err(to_io(e)),
            }
        }
        Ok(self.pending.len())
    }

    /// Sends close_notify and reads until the peer closes or the deadline
    /// passes, keeping any session tickets that arrive.
    pub fn close_and_drain(&mut self, deadline: Instant) {
        let _ = self.io.write_record(CT_ALERT, &[1, ALERT_CLOSE_NOTIFY]);
        self.io.set_deadline(Some(deadline));
        while !self.closed {
            self.pending.clear();
            if self.fill().is_err() {
                break;
            }
        }
        self.io.shutdown();
    }
}

fn to_io(e: IoFail) -> io::Error {
    match e {
        IoFail::Timeout => io::Error::new(io::ErrorKind::TimedOut, "tls read timed out"),
        IoFail::Eof => io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed"),
        other => io::Error::other(other.to_string()),
    }
}

impl Read for TlsConnection {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.fill()? == 0 {
            return Ok(0);
        }
        let n = buf.len().min(self.pending.len());
        buf[..n].copy_from_slice(&self.pending[..n]);
        self.pending.drain(..n);
        Ok(n)
    }
}

impl Write for TlsConnection {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.io.write_record(CT_APPLICATION_DATA, buf).map_err(to_io)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}
