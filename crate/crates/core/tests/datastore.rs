// SPDX-License-Identifier: Apache-2.0

use std::io::Write;
use std::process::{Command, Stdio};

use proptest::prelude::*;
use vt_core::{ContentHash, DataStore};

/// SHA-256 from the system's `sha256sum`, or `None` when it is unavailable.
fn system_sha256(bytes: &[u8]) -> Option<String> {
    let mut child = Command::new("sha256sum")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .ok()?;
    child.stdin.take()?.write_all(bytes).ok()?;
    let out = child.wait_with_output().ok()?;
    let text = String::from_utf8(out.stdout).ok()?;
    text.split_whitespace().next().map(str::to_owned)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn put_get_round_trip(blobs in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..2048), 1..8)) {
        let dir = tempfile::tempdir().unwrap();
        let mut store = DataStore::open(dir.path()).unwrap();
        let mut refs = Vec::new();
        for blob in &blobs {
            let r = store.put(blob, None).unwrap();
            prop_assert_eq!(r.size_bytes, blob.len() as u64);
            prop_assert_eq!(r.content_hash.as_str().len(), 64);
            refs.push(r);
        }
        for (blob, r) in blobs.iter().zip(&refs) {
            prop_assert_eq!(&store.get(&r.content_hash).unwrap(), blob);
            prop_assert_eq!(&store.put(blob, None).unwrap(), r);
        }
        let reopened = DataStore::open(dir.path()).unwrap();
        prop_assert_eq!(reopened.refs(), store.refs());
        for i in 0..blobs.len() {
            for j in 0..blobs.len() {
                prop_assert_eq!(blobs[i] == blobs[j], refs[i].content_hash == refs[j].content_hash);
            }
        }
    }

    #[test]
    fn version_chains_walk_back_to_the_start(len in 1usize..12) {
        let dir = tempfile::tempdir().unwrap();
        let mut store = DataStore::open(dir.path()).unwrap();
        let mut chain = vec![store.put(b"v0", Some("series")).unwrap()];
        for i in 1..len {
            let prev = chain.last().unwrap().content_hash.clone();
            let next = store.new_version(&prev, format!("v{i}").as_bytes(), Some("series")).unwrap();
            prop_assert_eq!(next.version_of.as_ref(), Some(&prev));
            chain.push(next);
        }
        let history = store.history(&chain.last().unwrap().content_hash).unwrap();
        let expected: Vec<_> = chain.iter().rev().cloned().collect();
        prop_assert_eq!(history, expected);
        prop_assert!(store.history(&chain[0].content_hash).unwrap()[0].version_of.is_none());
    }
}

#[test]
fn hashes_agree_with_system_digest() {
    let samples: [&[u8]; 4] = [b"", b"abc", b"x\n1\n2\n3\n", &[0u8; 4096]];
    let mut checked = 0;
    for bytes in samples {
        if let Some(expected) = system_sha256(bytes) {
            assert_eq!(ContentHash::of(bytes).as_str(), expected);
            checked += 1;
        }
    }
    // The empty-input digest is also pinned so the test means something on
    // hosts without coreutils.
    assert_eq!(
        ContentHash::of(b"").as_str(),
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    );
    eprintln!("checked {checked} digests against sha256sum");
}

#[test]
fn one_mebibyte_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = DataStore::open(dir.path()).unwrap();
    let blob: Vec<u8> = (0..1u32 << 20).map(|i| (i.wrapping_mul(2_654_435_761) >> 13) as u8).collect();
    let r = store.put(&blob, Some("big.bin")).unwrap();
    assert_eq!(store.get(&r.content_hash).unwrap(), blob);
    let (fan, rest) = r.content_hash.as_str().split_at(2);
    assert!(dir.path().join("objects").join(fan).join(rest).is_file());
}

#[test]
fn unknown_and_conflicting_versions() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = DataStore::open(dir.path()).unwrap();
    let zeros = ContentHash::parse(&"0".repeat(64)).unwrap();
    assert_eq!(store.get(&zeros).unwrap_err().code(), "NOT_FOUND");
    assert_eq!(store.new_version(&zeros, b"x", None).unwrap_err().code(), "NOT_FOUND");

    let base = store.put(b"base", None).unwrap();
    store.new_version(&base.content_hash, b"left", None).unwrap();
    let err = store.new_version(&base.content_hash, b"right", None).unwrap_err();
    assert_eq!(err.code(), "VERSION_CONFLICT");
}
