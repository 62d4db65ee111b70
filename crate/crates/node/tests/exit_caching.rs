mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use ocdn_node::clientproxy::Mode;
use ocdn_node::clock::Clock;
use ocdn_node::exitproxy::FlashcrowdSettings;

fn cache_gets(s: &Stack) -> u64 {
    s.caches.iter().map(|c| c.get_count()).sum()
}

#[test]
fn flashcrowd_absorbs_a_burst() {
    let s = Stack::new(StackOptions { flashcrowd: FlashcrowdSettings::default(), ..StackOptions::default() });
    let u = url("breaking");
    s.publish(&[(u.clone(), b"everyone wants this".to_vec(), 1)]);
    let base = s.clock.now_ms();
    let before = cache_gets(&s);
    // 100 req/s for 30 s.
    let requests = 3000;
    for i in 0..requests {
        s.clock.set_ms(base + i as f64 * 10.0);
        let c = &s.clients[i % s.clients.len()];
        assert_eq!(c.get(&u, Mode::Direct).unwrap().content, b"everyone wants this");
    }
    let burst_gets = cache_gets(&s) - before;
    // Warm-up: the id turns hot once 500 requests fall in the 10 s window.
    // After that only one refresh per 10 s TTL.
    assert!(burst_gets <= 500 + 3, "{burst_gets}");
    assert!(burst_gets * 5 < requests as u64);
    let hits = s.exits[s.exit_for(&u)].stats().flash_hits.load(std::sync::atomic::Ordering::Relaxed);
    assert_eq!(hits + burst_gets, requests as u64);

    // Quiet period: the entry lapses and the next request goes to a cache node.
    s.clock.set_ms(base + 60_000.0);
    s.clients[0].get(&u, Mode::Direct).unwrap();
    assert_eq!(cache_gets(&s) - before, burst_gets + 1);
}

#[test]
fn low_rates_never_use_the_local_copy() {
    let s = Stack::new(StackOptions { flashcrowd: FlashcrowdSettings::default(), ..StackOptions::default() });
    let u = url("quiet");
    s.publish(&[(u.clone(), b"q".to_vec(), 1)]);
    let before = cache_gets(&s);
    for _ in 0..50 {
        s.clock.advance(1000.0);
        s.clients[0].get(&u, Mode::Direct).unwrap();
    }
    assert_eq!(cache_gets(&s) - before, 50);
}

#[test]
fn cache_failover() {
    let s = Stack::new(StackOptions::default());
    let u = url("ha");
    s.publish(&[(u.clone(), b"still here".to_vec(), 1)]);
    s.net.set_down(&cache_addr(0), true);
    for _ in 0..4 {
        assert_eq!(s.clients[0].get(&u, Mode::Direct).unwrap().content, b"still here");
    }
    s.net.set_down(&cache_addr(1), true);
    match s.clients[0].get(&u, Mode::Direct) {
        Err(ocdn_node::clientproxy::ClientError::Status(ocdn_node::wire::ResponseStatus::Upstream)) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn expired_keys_are_refetched_once_per_proxy_and_url() {
    let lifetime = 3600;
    let s = Stack::new(StackOptions { key_lifetime_secs: lifetime, key_ttl_secs: 7200, ..StackOptions::default() });
    let objects: Vec<_> = (0..8).map(|i| (url(&format!("r{i}")), content(i, 500), (i % 3 + 1) as u8)).collect();
    s.publish(&objects);
    let old_ids: BTreeSet<String> = {
        let st = s.publisher.state();
        let st = st.read().unwrap();
        st.published.values().flat_map(|o| o.ids.iter().map(|i| i.to_hex())).collect()
    };
    for (u, body, _) in &objects {
        assert_eq!(&s.clients[0].get(u, Mode::Direct).unwrap().content, body);
    }
    let before_rotation = s.keydist.query_log().len();
    assert_eq!(before_rotation, objects.len());

    // Jump to the expiry instant; the origin rotates, proxies still hold the old key.
    s.clock.set_ms((lifetime * 1000) as f64);
    let rotated = s.publisher.rotate_expired();
    assert_eq!(rotated.len(), 1);
    assert!(rotated[0].1.is_ok());
    let new_ids: BTreeSet<String> = {
        let st = s.publisher.state();
        let st = st.read().unwrap();
        st.published.values().flat_map(|o| o.ids.iter().map(|i| i.to_hex())).collect()
    };
    assert!(old_ids.is_disjoint(&new_ids));
    assert_eq!(old_ids.len(), new_ids.len());

    let gets_from = s.caches.iter().map(|c| c.dump_log().len()).collect::<Vec<_>>();
    for round in 0..3 {
        for (ci, c) in s.clients.iter().enumerate() {
            for (u, body, _) in &objects {
                let mode = if (round + ci) % 2 == 0 { Mode::Direct } else { Mode::Routed(2) };
                assert_eq!(&c.get(u, mode).unwrap().content, body);
            }
        }
    }
    let mut per_pair: BTreeMap<(String, String), usize> = BTreeMap::new();
    for q in &s.keydist.query_log()[before_rotation..] {
        assert!(q.outcome.is_ok());
        *per_pair.entry((q.proxy_id.clone(), q.url.clone())).or_default() += 1;
    }
    assert_eq!(per_pair.len(), objects.len());
    assert!(per_pair.values().all(|n| *n == 1), "{per_pair:?}");

    // Every GET after the rotation used a fresh id.
    for (c, from) in s.caches.iter().zip(gets_from) {
        for rec in &c.dump_log()[from..] {
            if rec.verb == "GET" {
                assert!(new_ids.contains(&rec.id), "{}", rec.id);
                assert!(!old_ids.contains(&rec.id));
            }
        }
    }
}
