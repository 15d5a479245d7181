mod common;

use spad::data::{generate_corpus_samples, read_corpus, write_corpus};
use spad::SpadError;

#[test]
fn corpus_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_phantom(7, 3, 32, 3);
    let samples = generate_corpus_samples(&cfg).unwrap();
    let written = write_corpus(&samples, 3, 3, Some(&cfg), dir.path()).unwrap();
    let corpus = read_corpus(dir.path(), true).unwrap();
    assert_eq!(corpus.samples, samples);
    assert_eq!(corpus.manifest, written);
    assert_eq!(corpus.manifest.train_ids.len(), 7);
    assert_eq!(corpus.manifest.test_ids.len(), 3);
    assert_eq!(corpus.manifest.phantom.as_ref(), Some(&cfg));
}

#[test]
fn regeneration_reproduces_the_hash() {
    let cfg = common::tiny_phantom(4, 2, 32, 3);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = write_corpus(&generate_corpus_samples(&cfg).unwrap(), 2, 3, Some(&cfg), a.path()).unwrap();
    let mb = write_corpus(&generate_corpus_samples(&cfg).unwrap(), 2, 3, Some(&cfg), b.path()).unwrap();
    assert_eq!(ma.content_hash, mb.content_hash);
}

#[test]
fn corrupted_label_is_a_hash_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_phantom(3, 1, 32, 3);
    let samples = generate_corpus_samples(&cfg).unwrap();
    write_corpus(&samples, 1, 3, Some(&cfg), dir.path()).unwrap();
    let victim = dir.path().join("labels_train").join(format!("{}.png", samples[1].id));
    let mut bytes = std::fs::read(&victim).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(&victim, bytes).unwrap();
    assert!(matches!(read_corpus(dir.path(), true), Err(SpadError::HashMismatch { .. })));
}

#[test]
fn empty_directory_is_an_empty_corpus() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_corpus(dir.path(), true), Err(SpadError::EmptyCorpus(_))));
    assert!(matches!(write_corpus(&[], 0, 3, None, dir.path()), Err(SpadError::EmptyCorpus(_))));
}

#[test]
fn hostile_sample_ids_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_phantom(2, 1, 32, 3);
    write_corpus(&generate_corpus_samples(&cfg).unwrap(), 1, 3, Some(&cfg), dir.path()).unwrap();
    let path = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replace("phantom_00000", "../escape")).unwrap();
    assert!(read_corpus(dir.path(), false).is_err());
}
