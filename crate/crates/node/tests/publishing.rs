mod common;

use common::*;
use ocdn_node::clientproxy::Mode;
use ocdn_node::publisher::{OriginState, PublishError};

#[test]
fn updates_keep_ids_and_replace_content() {
    let s = Stack::new(StackOptions::default());
    let u = url("live");
    s.publish(&[(u.clone(), b"version one".to_vec(), 2)]);
    let ids_before: Vec<_> = s.caches[0].stored().into_iter().map(|e| e.id).collect();
    assert_eq!(s.clients[0].get(&u, Mode::Direct).unwrap().content, b"version one");
    s.publisher.update_content(&u, b"version two, longer".to_vec()).unwrap();
    let mut ids_after: Vec<_> = s.caches[0].stored().into_iter().map(|e| e.id).collect();
    let mut sorted_before = ids_before.clone();
    sorted_before.sort();
    ids_after.sort();
    assert_eq!(sorted_before, ids_after);
    for _ in 0..4 {
        assert_eq!(s.clients[0].get(&u, Mode::Direct).unwrap().content, b"version two, longer");
    }
}

#[test]
fn envelopes_for_different_encodings_have_equal_length() {
    let s = Stack::new(StackOptions::default());
    s.publish(&[(url("multi"), content(3, 12_345), 8)]);
    let lens: Vec<usize> = s.caches[1].stored().iter().map(|e| e.envelope.len()).collect();
    assert_eq!(lens.len(), 8);
    assert!(lens.iter().all(|l| *l == lens[0]));
}

#[test]
fn partial_rotation_reports_the_missing_target() {
    let s = Stack::new(StackOptions::default());
    let u = url("rot");
    s.publish(&[(u.clone(), b"r".to_vec(), 1)]);
    s.net.set_down(&cache_addr(1), true);
    match s.publisher.rotate_key(PREFIX) {
        Err(PublishError::PartialRotation { unpushed, committed, .. }) => {
            assert_eq!(unpushed, vec![cache_addr(1)]);
            assert!(committed);
        }
        other => panic!("{other:?}"),
    }
    s.net.set_down(&cache_addr(0), true);
    let before = s.publisher.state().read().unwrap().keys[PREFIX].key_id();
    match s.publisher.rotate_key(PREFIX) {
        Err(PublishError::PartialRotation { committed, .. }) => assert!(!committed),
        other => panic!("{other:?}"),
    }
    assert_eq!(s.publisher.state().read().unwrap().keys[PREFIX].key_id(), before);
}

#[test]
fn origin_state_survives_a_restart() {
    let s = Stack::new(StackOptions::default());
    s.publish(&[(url("a"), b"alpha".to_vec(), 3), (url("b"), b"beta".to_vec(), 1)]);
    let dir = tempfile::tempdir().unwrap();
    let state = s.publisher.state().read().unwrap().clone();
    state.save(dir.path()).unwrap();
    let back = OriginState::load(dir.path()).unwrap();
    assert_eq!(back.published, state.published);
    assert_eq!(back.targets, state.targets);
    assert_eq!(back.keys[PREFIX].key_bytes(), state.keys[PREFIX].key_bytes());
    assert_eq!(back.keypair.public_key(), state.keypair.public_key());
    assert_eq!(back.rederive(url("a").as_str()).unwrap(), state.published[url("a").as_str()].ids);
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let mode = std::fs::metadata(OriginState::state_file(dir.path())).unwrap().permissions().mode();
        assert_eq!(mode & 0o777, 0o600);
    }
}

#[test]
fn unreachable_targets_fail_the_publish() {
    let s = Stack::new(StackOptions::default());
    s.net.set_down(&cache_addr(0), true);
    s.net.set_down(&cache_addr(1), true);
    let plan = ocdn_node::publisher::PublishPlan {
        objects: vec![ocdn_node::publisher::PlanObject {
            url: url("x"),
            content: b"x".to_vec(),
            encodings: 1,
            participation: Default::default(),
        }],
        targets: vec![cache_addr(0), cache_addr(1)],
    };
    assert!(matches!(s.publisher.publish(&plan), Err(PublishError::Incomplete(_))));
    assert!(matches!(
        s.publisher.publish(&ocdn_node::publisher::PublishPlan { targets: vec![], ..plan }),
        Err(PublishError::NoTargets)
    ));
}
