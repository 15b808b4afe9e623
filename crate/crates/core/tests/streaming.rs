//! Readers hold one record at a time: reading 100k records must not grow
//! the resident set anywhere near the file size.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use emodist::io::{read_annotations, read_responses, read_traces};
use emodist::parser::SynonymTable;
use emodist::synth::demo_token_map;
use emodist::EmotionSet;

const N: usize = 100_000;

fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find(|l| l.starts_with("VmHWM:"))?
        .split_whitespace()
        .nth(1)?
        .parse()
        .ok()
}

fn reset_peak() {
    let _ = std::fs::write("/proc/self/clear_refs", "5");
}

fn write_inputs(dir: &Path, set: &EmotionSet) -> u64 {
    let map = demo_token_map(set);
    let logits: Vec<String> = map.subword_tokens().map(|t| format!("\"{t}\":1.5")).collect();
    let logits = logits.join(",");
    let mut traces = BufWriter::new(File::create(dir.join("t.jsonl")).unwrap());
    let mut responses = BufWriter::new(File::create(dir.join("r.jsonl")).unwrap());
    let mut ann = BufWriter::new(File::create(dir.join("a.csv")).unwrap());
    writeln!(ann, "utterance_id,annotator_id,labels").unwrap();
    for u in 0..N {
        writeln!(
            traces,
            r#"{{"utterance_id":"u{u:06}","prompt_id":"p","generated_text":"Anger","steps":[{{"index":1,"token_text":"▁Ang","token_id":1001,"emotion_logits":{{{logits}}}}},{{"index":2,"token_text":"er","token_id":1002,"emotion_logits":{{{logits}}}}}]}}"#
        )
        .unwrap();
        writeln!(responses, r#"{{"utterance_id":"u{u:06}","prompt_id":"p","text":"Anger: 50%, Sadness: 50%"}}"#).unwrap();
        for a in 1..=3 {
            writeln!(ann, "u{u:06},a{a},anger;sadness").unwrap();
        }
    }
    traces.flush().unwrap();
    responses.flush().unwrap();
    ann.flush().unwrap();
    ["t.jsonl", "r.jsonl", "a.csv"]
        .iter()
        .map(|f| std::fs::metadata(dir.join(f)).unwrap().len())
        .sum()
}

#[test]
fn hundred_thousand_records_stream() {
    let dir = tempfile::tempdir().unwrap();
    let set = EmotionSet::default();
    let bytes = write_inputs(dir.path(), &set);
    let map = demo_token_map(&set);

    reset_peak();
    let before = peak_rss_kib();

    let mut n_traces = 0;
    let mut steps = 0;
    for t in read_traces(&dir.path().join("t.jsonl"), &map).unwrap() {
        steps += t.unwrap().steps.len();
        n_traces += 1;
    }
    let n_responses = read_responses(&dir.path().join("r.jsonl")).unwrap().filter(|r| r.is_ok()).count();
    let n_records = read_annotations(&dir.path().join("a.csv"), &set, &SynonymTable::default())
        .unwrap()
        .map(|r| r.unwrap().annotators())
        .filter(|&a| a == 3)
        .count();

    assert_eq!((n_traces, steps, n_responses, n_records), (N, 2 * N, N, N));

    if let (Some(before), Some(after)) = (before, peak_rss_kib()) {
        let grown = after.saturating_sub(before);
        let input_kib = bytes / 1024;
        assert!(
            grown * 8 < input_kib,
            "peak RSS grew by {grown} KiB while reading {input_kib} KiB of input"
        );
    }
}
