use std::sync::Arc;
use std::time::Duration;

use pkiscope_core::clock::SystemClock;
use pkiscope_core::encoding::Fingerprint;
use pkiscope_core::redirect::{
    chain_stats, probe_ports, resolve_chain, Mechanism, PortState, RedirectConfig, RedirectError, Termination,
};
use pkiscope_fixtures::{start_named, RunningScenario};

fn fixture() -> RunningScenario {
    start_named("redirects", 5, Arc::new(SystemClock)).unwrap()
}

fn cfg() -> RedirectConfig {
    RedirectConfig {
        timeout: Duration::from_secs(5),
        ..RedirectConfig::default()
    }
}

fn cert_fp(s: &RunningScenario, name: &str) -> Fingerprint {
    Fingerprint::of(&s.pki.as_ref().unwrap().der(name).unwrap())
}

#[test]
fn http_to_https_same_host_is_one_step() {
    let s = fixture();
    let c = resolve_chain(&s.net(), "http://s4.fixture.test/", &cfg()).unwrap();
    // s4 has no port 80 listener
    assert_eq!(
        c.termination,
        Termination::Error {
            class: "connection-refused".into()
        }
    );
    let c = resolve_chain(&s.net(), "http://single.fixture.test/", &cfg()).unwrap();
    assert_eq!(c.termination, Termination::Completed);
    assert_eq!(c.steps.len(), 1);
    assert_eq!(c.steps[0].mechanism, Mechanism::HttpStatus { code: 301 });
    assert_eq!(c.steps[0].cert_fingerprint, Some(cert_fp(&s, "shared-leaf")));
    let st = chain_stats(&c);
    assert_eq!((st.length, st.unique_certs, st.unique_hosts), (1, 1, 2));
    assert_eq!(c.terminal.as_ref().unwrap().status, 200);
}

#[test]
fn apex_to_www_has_two_certificates() {
    let s = fixture();
    let c = resolve_chain(&s.net(), "http://apex.fixture.test/", &cfg()).unwrap();
    assert_eq!(c.termination, Termination::Completed);
    let urls: Vec<&str> = c.steps.iter().map(|s| s.url.as_str()).collect();
    assert_eq!(
        urls,
        vec!["https://apex.fixture.test/", "https://www.apex.fixture.test/"]
    );
    let st = chain_stats(&c);
    assert_eq!(st.unique_certs, 2);
    assert_eq!(c.steps[0].cert_fingerprint, Some(cert_fp(&s, "apex-leaf")));
    assert_eq!(c.steps[1].cert_fingerprint, Some(cert_fp(&s, "www-leaf")));

    let c = resolve_chain(&s.net(), "http://old.fixture.test/", &cfg()).unwrap();
    let st = chain_stats(&c);
    assert_eq!((st.length, st.unique_certs, st.unique_hosts), (2, 2, 3));
}

#[test]
fn one_certificate_across_three_steps() {
    let s = fixture();
    let c = resolve_chain(&s.net(), "https://s1.fixture.test/", &cfg()).unwrap();
    assert_eq!(c.termination, Termination::Completed);
    let st = chain_stats(&c);
    assert_eq!((st.length, st.unique_certs), (3, 1));
    assert!(st.unique_hosts <= 4);
    assert!(c.steps.iter().all(|s| s.tls_used && s.cert_fingerprint.is_some()));
}

#[test]
fn loop_is_detected_on_second_visit() {
    let s = fixture();
    let c = resolve_chain(&s.net(), "http://loop-a.fixture.test/", &cfg()).unwrap();
    assert_eq!(c.termination, Termination::LoopDetected);
    let all: Vec<&str> = std::iter::once(c.origin.as_str())
        .chain(c.steps.iter().map(|s| s.url.as_str()))
        .collect();
    assert_eq!(
        all,
        vec![
            "http://loop-a.fixture.test/",
            "http://loop-b.fixture.test/",
            "http://loop-a.fixture.test/"
        ]
    );
}

#[test]
fn limit_bounds_the_chain() {
    let s = fixture();
    for limit in [1u32, 3, 10] {
        let c = resolve_chain(&s.net(), "http://hop.fixture.test/", &RedirectConfig { limit, ..cfg() }).unwrap();
        assert_eq!(c.termination, Termination::LimitExceeded);
        assert_eq!(c.steps.len(), limit as usize);
    }
    assert_eq!(
        resolve_chain(
            &s.net(),
            "http://hop.fixture.test/",
            &RedirectConfig { limit: 0, ..cfg() }
        ),
        Err(RedirectError::ZeroLimit)
    );
}

#[test]
fn html_meta_refresh_is_followed_only_when_enabled() {
    let s = fixture();
    let c = resolve_chain(&s.net(), "http://meta.fixture.test/", &cfg()).unwrap();
    assert_eq!(c.steps[0].mechanism, Mechanism::HtmlMeta);
    assert_eq!(c.terminal.as_ref().unwrap().url, "https://www.apex.fixture.test/");
    let c = resolve_chain(
        &s.net(),
        "http://meta.fixture.test/",
        &RedirectConfig {
            follow_html: false,
            ..cfg()
        },
    )
    .unwrap();
    assert!(c.steps.is_empty());
    assert_eq!(c.termination, Termination::Completed);
}

#[test]
fn synthetic_hsts_hop_is_labeled() {
    let s = fixture();
    let plain = resolve_chain(&s.net(), "https://hsts.fixture.test/", &cfg()).unwrap();
    assert_eq!(plain.terminal.as_ref().unwrap().url, "http://hsts.fixture.test/page");
    let c = resolve_chain(
        &s.net(),
        "https://hsts.fixture.test/",
        &RedirectConfig {
            emulate_hsts: true,
            ..cfg()
        },
    )
    .unwrap();
    let mech: Vec<Mechanism> = c.steps.iter().map(|s| s.mechanism).collect();
    assert_eq!(
        mech,
        vec![Mechanism::HttpStatus { code: 301 }, Mechanism::SyntheticHsts]
    );
    assert_eq!(c.terminal.as_ref().unwrap().url, "https://hsts.fixture.test/page");
    assert_eq!(chain_stats(&c).length, 1);
}

#[test]
fn errors_keep_the_partial_chain() {
    let s = fixture();
    let c = resolve_chain(&s.net(), "http://broken.fixture.test/", &cfg()).unwrap();
    assert_eq!(
        c.termination,
        Termination::Error {
            class: "tls-alert-40".into()
        }
    );
    assert_eq!(c.steps.len(), 1);
    assert!(c.steps[0].tls_used && c.steps[0].cert_fingerprint.is_none());
    let c = resolve_chain(&s.net(), "http://nowhere.fixture.test/", &cfg()).unwrap();
    assert_eq!(c.termination, Termination::Error { class: "dns".into() });
}

#[test]
fn script_terminal_is_flagged() {
    let s = fixture();
    let c = resolve_chain(&s.net(), "http://script.fixture.test/", &cfg()).unwrap();
    assert_eq!(c.termination, Termination::Completed);
    assert!(c.terminal_script_unexecuted);
}

#[test]
fn port_probing() {
    let s = fixture();
    let t = Duration::from_secs(2);
    let p = probe_ports(&s.net(), "only443.fixture.test", t).unwrap();
    assert_eq!((p.port_80, p.port_443), (PortState::Closed, PortState::Open));
    let p = probe_ports(&s.net(), "apex.fixture.test", t).unwrap();
    assert_eq!((p.port_80, p.port_443), (PortState::Open, PortState::Open));
    assert!(matches!(
        probe_ports(&s.net(), "nowhere.fixture.test", t),
        Err(RedirectError::Unresolved(_))
    ));
}
