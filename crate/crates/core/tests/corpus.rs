use std::fs;

use detour::corpus::{
    copy_task, encode_documents, load_documents, make_segments, segment_manifest, to_task, CorpusError, Segment, TaskKind, Tokenizer, BOS, BYTE_OFFSET,
    PAD, SEP_TEXT,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SAMPLE: &str = "It was the best of times, it was the worst of times, it was the age of wisdom, \
it was the age of foolishness. Über naïve café: 東京 and 🚀 rockets! \n\n\tIndented line; numbers 12345 67890.\n";

fn trained() -> Tokenizer {
    Tokenizer::train(&SAMPLE.repeat(4), 400).unwrap()
}

#[test]
fn repeated_pair_corpus_round_trips() {
    let tok = Tokenizer::train("abababab", 300).unwrap();
    assert!(tok.vocab_size() <= 300);
    let ids = tok.encode("abab");
    assert_eq!(tok.decode(&ids).unwrap(), "abab");
}

#[test]
fn empty_text_is_empty_ids() {
    let tok = trained();
    assert!(tok.encode("").is_empty());
    assert_eq!(tok.decode(&[]).unwrap(), "");
}

#[test]
fn utf8_paragraph_round_trips() {
    let tok = trained();
    let text = "Ça va? Ünïcödé ✓ — 漢字かな交じり文, emoji 👩‍🔬, tabs\tand\r\nCRLF.";
    assert_eq!(tok.decode(&tok.encode(text)).unwrap(), text);
}

#[test]
fn thousand_random_byte_strings_round_trip() {
    let tok = trained();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let len = rng.random_range(0..200);
        let bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        let ids = tok.encode_bytes(&bytes);
        assert_eq!(tok.decode_bytes(&ids).unwrap(), bytes);
    }
}

#[test]
fn training_is_byte_stable() {
    let a = trained();
    let b = trained();
    assert_eq!(a.to_text(), b.to_text());
    assert_eq!(Tokenizer::from_text(&a.to_text()).unwrap(), a);
}

#[test]
fn empty_corpus_and_small_vocab_are_rejected() {
    assert!(matches!(Tokenizer::train("", 300), Err(CorpusError::EmptyCorpus)));
    assert!(matches!(Tokenizer::train("abc", 258), Err(CorpusError::VocabTooSmall { requested: 258 })));
}

#[test]
fn out_of_range_decode_is_an_error() {
    let tok = trained();
    let v = tok.vocab_size() as u32;
    assert!(matches!(tok.decode(&[BYTE_OFFSET, v]), Err(CorpusError::IdOutOfRange { id, .. }) if id == v));
}

proptest! {
    #[test]
    fn encoding_never_emits_specials(text in ".{0,300}", corpus in "[a-c ]{1,60}") {
        let tok = Tokenizer::train(&corpus, 280).unwrap();
        for id in tok.encode(&text).into_iter().chain(trained().encode(&text)) {
            prop_assert!(id != PAD && id != BOS && id != SEP_TEXT);
        }
    }

    #[test]
    fn arbitrary_bytes_round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        let tok = trained();
        prop_assert_eq!(tok.decode_bytes(&tok.encode_bytes(&bytes)).unwrap(), bytes);
    }
}

fn stream(n: usize) -> Vec<u32> {
    (0..n as u32).map(|i| BYTE_OFFSET + i % 250).collect()
}

#[test]
fn segmentation_is_deterministic_per_seed() {
    let tokens = stream(10_000);
    let (a_train, a_val) = make_segments(&tokens, 64, 100, 20, 7).unwrap();
    let (b_train, b_val) = make_segments(&tokens, 64, 100, 20, 7).unwrap();
    assert_eq!(segment_manifest(&a_train, &a_val), segment_manifest(&b_train, &b_val));
    let (c_train, c_val) = make_segments(&tokens, 64, 100, 20, 8).unwrap();
    assert_ne!(segment_manifest(&a_train, &a_val), segment_manifest(&c_train, &c_val));
}

#[test]
fn splits_share_no_token_index() {
    let tokens = stream(5_000);
    let (train, val) = make_segments(&tokens, 50, 60, 30, 1).unwrap();
    let cover = |segs: &[Segment]| segs.iter().flat_map(|s| s.source_offset..s.source_offset + 50).collect::<std::collections::BTreeSet<_>>();
    let (t, v) = (cover(&train), cover(&val));
    assert_eq!(t.len(), 60 * 50);
    assert_eq!(v.len(), 30 * 50);
    assert!(t.is_disjoint(&v));
    for s in train.iter().chain(&val) {
        assert_eq!(s.tokens, tokens[s.source_offset..s.source_offset + 50]);
    }
}

#[test]
fn insufficient_corpus_reports_both_counts() {
    let tokens = stream(1_000_000);
    let err = make_segments(&tokens, 2000, 500_000, 10_000, 0).unwrap_err();
    match err {
        CorpusError::InsufficientCorpus { required, available } => {
            assert_eq!(required, 510_000 * 2000);
            assert_eq!(available, 1_000_000);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn task_cuts_follow_the_segment_layout() {
    let seg = Segment { tokens: stream(2000), source_offset: 0 };
    let recon = to_task(&seg, TaskKind::Recon, 1000, 0).unwrap();
    assert_eq!(recon.context, seg.tokens[..1000]);
    assert!(recon.continuation.is_empty());

    let lm = to_task(&seg, TaskKind::Lm, 1000, 100).unwrap();
    assert_eq!(lm.context.len(), 1000);
    assert_eq!(lm.tail(), &seg.tokens[900..1000]);
    assert_eq!(lm.continuation, seg.tokens[1000..]);

    let k0 = to_task(&seg, TaskKind::Lm, 1000, 0).unwrap();
    assert!(k0.tail().is_empty());

    assert!(to_task(&seg, TaskKind::Lm, 1000, 1001).is_err());
    assert!(to_task(&seg, TaskKind::Recon, 2001, 0).is_err());
    assert!(to_task(&seg, TaskKind::Recon, 1000, 5).is_err());
    assert!(to_task(&seg, TaskKind::Lm, 2000, 0).is_err());
}

#[test]
fn copy_task_is_seeded_and_in_range() {
    let a = copy_task(64, 32, 512, 3).unwrap();
    assert_eq!(a, copy_task(64, 32, 512, 3).unwrap());
    assert_eq!(a.len(), 512);
    assert!(a.iter().all(|e| e.context.len() == 32 && e.k == 0 && e.continuation.is_empty()));
    assert!(a.iter().flat_map(|e| &e.context).all(|&t| (BYTE_OFFSET..64).contains(&t)));
}

#[test]
fn documents_load_from_text_and_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("b.txt"), "second file").unwrap();
    fs::write(dir.path().join("a.jsonl"), "{\"text\": \"one\"}\n\n{\"text\": \"two\"}\n").unwrap();
    fs::write(dir.path().join("ignored.bin"), [0u8, 1, 2]).unwrap();
    let docs = load_documents(&[dir.path().to_path_buf()]).unwrap();
    assert_eq!(docs, vec!["one", "two", "second file"]);

    let tok = Tokenizer::bytes_only();
    let ids = encode_documents(&tok, &docs);
    assert_eq!(tok.decode(&ids).unwrap(), "onetwosecond file");

    fs::write(dir.path().join("c.jsonl"), "{\"body\": 1}\n").unwrap();
    let err = load_documents(&[dir.path().to_path_buf()]).unwrap_err();
    assert!(matches!(err, CorpusError::Record { line: 1, .. }), "{err:?}");
}
