mod common;

use std::fmt::Write as _;

use common::XorShift;
use crisp_core::corpus::{
    ingest, read_windows, segments, window, window_document, write_windows, HashingTokenizer,
    SourceDocument, SourceTag, Tokenizer, WindowConfig,
};
use proptest::prelude::*;

/// Independent line validator: a JSON object whose `text` is a non-blank
/// string and whose `id`, if present, is an unsigned integer.
fn line_is_valid(line: &str) -> bool {
    let Ok(serde_json::Value::Object(map)) = serde_json::from_str::<serde_json::Value>(line) else {
        return false;
    };
    let text_ok = matches!(map.get("text"), Some(serde_json::Value::String(t)) if !t.trim().is_empty());
    let id_ok = map.get("id").is_none_or(|v| v.is_u64());
    text_ok && id_ok
}

#[test]
fn ingest_counts_match_line_validator() {
    let mut rng = XorShift(0xc0ffee);
    let mut corrupt: Vec<usize> = Vec::new();
    while corrupt.len() < 37 {
        let i = rng.below(10_000) as usize;
        if !corrupt.contains(&i) {
            corrupt.push(i);
        }
    }
    let mut body = String::new();
    for i in 0..10_000 {
        if corrupt.contains(&i) {
            let line = match i % 4 {
                0 => "{\"text\": \"unterminated".to_string(),
                1 => "{\"text\": \"   \"}".to_string(),
                2 => "{\"id\": 5}".to_string(),
                _ => "not json at all".to_string(),
            };
            writeln!(body, "{line}").unwrap();
        } else {
            writeln!(body, "{{\"text\": \"document number {i}\"}}").unwrap();
        }
    }
    let expected = body.lines().filter(|l| line_is_valid(l)).count();
    assert_eq!(expected, 9963);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    std::fs::write(&path, &body).unwrap();
    let got = ingest(&path, SourceTag::Generalist).unwrap();
    assert_eq!(got.documents.len(), expected);
    assert_eq!(got.ledger.malformed.len(), 37);
    assert_eq!(got.ledger.lines, 10_000);
    let ids: Vec<u64> = got.documents.iter().map(|d| d.doc_id).collect();
    assert_eq!(ids, (0..expected as u64).collect::<Vec<_>>());
}

#[test]
fn ingest_small_cases() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    std::fs::write(&path, "{\"text\":\"a\"}\n{\"text\":\"b\"}\n{\"text\":\"c\"}\n").unwrap();
    let ids: Vec<u64> = ingest(&path, SourceTag::Generalist)
        .unwrap()
        .documents
        .iter()
        .map(|d| d.doc_id)
        .collect();
    assert_eq!(ids, [0, 1, 2]);

    let lines: String = (0..200).map(|i| format!("{{\"text\":\"t{i}\"}}\n")).collect();
    std::fs::write(&path, format!("{lines}{{\"text\":\"\"}}\n")).unwrap();
    let got = ingest(&path, SourceTag::Generalist).unwrap();
    assert_eq!(got.ledger.malformed.len(), 1);
    assert_eq!(got.documents.len(), 200);

    std::fs::write(&path, "{\"text\":\"ok\"}\nbroken\n").unwrap();
    assert!(ingest(&path, SourceTag::Generalist).is_err());
    assert!(ingest(&dir.path().join("missing"), SourceTag::Generalist).is_err());
}

/// Reference splitter: walks characters, counting alphanumeric runs and
/// every other non-whitespace character.
fn reference_segment_count(text: &str) -> usize {
    let mut count = 0;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_alphanumeric() {
            if !in_word {
                count += 1;
            }
            in_word = true;
        } else {
            in_word = false;
            if !c.is_whitespace() {
                count += 1;
            }
        }
    }
    count
}

#[test]
fn tokenizer_matches_reference_splitter() {
    let words = ["alpha", "Beta,", "gamma.", "(delta)", "épée", "x-ray", "42", "it's", "naïve;"];
    let mut rng = XorShift(99);
    let paragraph: Vec<&str> = (0..1000).map(|_| words[rng.below(words.len() as u64) as usize]).collect();
    let text = paragraph.join(" ");
    let tokens = HashingTokenizer::default().tokenize(&text);
    assert_eq!(tokens.len(), reference_segment_count(&text));
    assert_eq!(tokens.len(), segments(&text).count());
    assert_eq!(tokens, HashingTokenizer::default().tokenize(&text));
}

#[test]
fn tokenizer_small_cases() {
    let t = HashingTokenizer::default();
    assert!(t.tokenize("").is_empty());
    let a = t.tokenize("a a a");
    assert_eq!(a.len(), 3);
    assert!(a.iter().all(|&x| x == a[0]));
    assert!(t.tokenize("Hello, World!").iter().all(|&x| x < t.vocab_size()));
}

fn reference_window_count(len: usize, size: usize, min: usize) -> usize {
    let full = len / size;
    full + usize::from(len % size >= min)
}

#[test]
fn window_count_matches_counting_script() {
    let cfg = WindowConfig::default();
    let mut rng = XorShift(500);
    let mut expected = 0;
    let mut got = 0;
    for doc in 0..500u64 {
        let len = 1 + rng.below(5000) as usize;
        let tokens: Vec<u32> = (0..len as u32).collect();
        expected += reference_window_count(len, cfg.window_size, cfg.min_window_tokens);
        got += window(doc, &tokens, &cfg).unwrap().len();
    }
    assert_eq!(got, expected);
}

#[test]
fn window_small_cases() {
    let cfg = WindowConfig::default();
    let sizes = |n: usize| -> Vec<usize> {
        window(1, &vec![0; n], &cfg).unwrap().iter().map(|w| w.tokens.len()).collect()
    };
    assert_eq!(sizes(2048), [1024, 1024]);
    assert_eq!(sizes(1040), [1024]);
    assert_eq!(sizes(1060), [1024, 36]);
    assert!(sizes(31).is_empty());
}

#[test]
fn shard_roundtrip_and_stable_ids() {
    let docs: Vec<SourceDocument> = (0..20)
        .map(|i| SourceDocument {
            doc_id: i,
            source_tag: SourceTag::Generalist,
            text: "word ".repeat(40 + 30 * i as usize),
        })
        .collect();
    let cfg = WindowConfig {
        window_size: 64,
        min_window_tokens: 8,
    };
    let tok = HashingTokenizer::default();
    let windows: Vec<_> = docs
        .iter()
        .flat_map(|d| window_document(d, &tok, &cfg).unwrap())
        .collect();
    let again: Vec<_> = docs
        .iter()
        .flat_map(|d| window_document(d, &tok, &cfg).unwrap())
        .collect();
    assert_eq!(windows, again);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.wnd");
    write_windows(&path, windows.iter()).unwrap();
    let back = read_windows(&path).unwrap();
    assert_eq!(back, windows);
}

proptest! {
    #[test]
    fn windows_partition_a_prefix(
        len in 0usize..3000,
        size in 1usize..400,
        min_frac in 0.0f64..1.0,
    ) {
        let min = ((size as f64 * min_frac) as usize).max(1);
        let cfg = WindowConfig { window_size: size, min_window_tokens: min };
        let tokens: Vec<u32> = (0..len as u32).map(|x| x.wrapping_mul(2654435761)).collect();
        let ws = window(3, &tokens, &cfg).unwrap();
        let joined: Vec<u32> = ws.iter().flat_map(|w| w.tokens.iter().copied()).collect();
        prop_assert_eq!(&tokens[..joined.len()], &joined[..]);
        prop_assert!(len - joined.len() < min);
        for (i, w) in ws.iter().enumerate() {
            prop_assert_eq!(w.ordinal as usize, i);
            prop_assert_eq!(w.doc_id, 3);
            prop_assert!(w.tokens.len() >= min && w.tokens.len() <= size);
            if i + 1 < ws.len() {
                prop_assert_eq!(w.tokens.len(), size);
            }
        }
        prop_assert_eq!(ws.len(), reference_window_count(len, size, min));
    }

    #[test]
    fn tokenizer_is_deterministic_and_bounded(text in "\\PC{0,200}", slots in 1u32..5000) {
        let t = HashingTokenizer::new(slots);
        let a = t.tokenize(&text);
        prop_assert_eq!(&a, &t.tokenize(&text));
        prop_assert!(a.iter().all(|&x| x < slots));
        prop_assert_eq!(a.len(), reference_segment_count(&text));
    }
}
