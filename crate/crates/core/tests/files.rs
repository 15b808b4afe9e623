use std::path::Path;

use emodist::io::{
    read_annotations, read_responses, read_token_map, read_traces, write_annotations, write_responses,
    write_token_map, write_traces, Approach, CorpusManifest,
};
use emodist::par::Executor;
use emodist::parser::SynonymTable;
use emodist::prompts::export_templates;
use emodist::report::{EvalReport, ExclusionReason, ExclusionStage};
use emodist::run::{evaluate, synthesize, validate, EvalOptions};
use emodist::synth::{demo_token_map, SynthSpec, Synthesizer};
use emodist::{EmotionSet, Error};

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn synthesized_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = Synthesizer::new(SynthSpec::new(30, 40)).unwrap();
    let set = s.set().clone();
    let traces: Vec<_> = (0..s.len()).map(|u| s.trace(u)).collect();
    let responses: Vec<_> = (0..s.len()).map(|u| s.response(u)).collect();
    let records: Vec<_> = (0..s.len()).map(|u| s.annotations(u)).collect();

    let p = dir.path();
    write_traces(&p.join("t.jsonl"), &traces).unwrap();
    write_responses(&p.join("r.jsonl"), &responses).unwrap();
    write_annotations(&p.join("a.csv"), &records, &set).unwrap();
    write_token_map(&p.join("map.json"), s.token_map()).unwrap();

    let map = read_token_map(&p.join("map.json"), &set).unwrap();
    assert_eq!(&map, s.token_map());
    let back: Vec<_> = read_traces(&p.join("t.jsonl"), &map).unwrap().map(Result::unwrap).collect();
    assert_eq!(back, traces);
    let back: Vec<_> = read_responses(&p.join("r.jsonl")).unwrap().map(Result::unwrap).collect();
    assert_eq!(back, responses);
    let back: Vec<_> = read_annotations(&p.join("a.csv"), &set, &SynonymTable::default())
        .unwrap()
        .map(Result::unwrap)
        .collect();
    assert_eq!(back, records);
}

#[test]
fn same_seed_same_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synthesize(SynthSpec::new(31, 300), a.path(), &Executor::sequential()).unwrap();
    synthesize(SynthSpec::new(31, 300), b.path(), &Executor::new(emodist::par::Parallelism::Threads(4)).unwrap())
        .unwrap();
    for f in ["annotations.csv", "traces.jsonl", "responses.jsonl", "token_map.json", "targets.jsonl", "manifest.toml"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn truncated_trace_file_is_reported_by_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = synthesize(SynthSpec::new(32, 10), dir.path(), &Executor::sequential()).unwrap();
    let text = std::fs::read_to_string(&out.traces).unwrap();
    write(&out.traces, &text[..text.len() - 200]);
    let m = CorpusManifest::load(&out.manifest).unwrap();
    let v = validate(&m).unwrap();
    let traces = v.files.iter().find(|f| f.path == out.traces).unwrap();
    assert_eq!((traces.records, traces.errors), (9, 1));
    assert!(traces.messages[0].contains(":10:"), "{}", traces.messages[0]);
}

#[test]
fn strict_mode_stops_on_bad_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = synthesize(SynthSpec::new(33, 20), dir.path(), &Executor::sequential()).unwrap();
    let mut text = std::fs::read_to_string(&out.responses).unwrap();
    text.push_str("{\"utterance_id\": 7}\n");
    write(&out.responses, &text);
    let m = CorpusManifest::load(&out.manifest).unwrap();
    let lenient = EvalOptions {
        approach: Some(Approach::Text),
        ..EvalOptions::default()
    };
    let rep = evaluate(&m, &lenient, &Executor::sequential()).unwrap();
    assert_eq!(rep.corpus.n_evaluated, 20);
    assert!(rep.warnings.iter().any(|w| w.contains(":21:")), "{:?}", rep.warnings);
    let strict = EvalOptions {
        strict: Some(true),
        ..lenient
    };
    match evaluate(&m, &strict, &Executor::sequential()) {
        Err(Error::Record(e)) => assert_eq!(e.line, 21),
        other => panic!("{other:?}"),
    }
}

#[test]
fn hand_written_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write(
        &p.join("manifest.toml"),
        r#"corpus_id = "hand"
annotations = "ann.csv"
responses = ["resp.jsonl"]

[synonyms]
furious = "anger"

[run]
approach = "text"
"#,
    );
    write(
        &p.join("ann.csv"),
        "utterance_id,annotator_id,labels\n\
         u1,a1,anger\nu1,a2,anger\nu1,a3,sadness\n\
         u2,a1,happiness\nu2,a2,neutral\n\
         u3,a1,furious\nu3,a2,Anger\n\
         u4,a1,frustration\nu4,a2,anger\n\
         u5,a1,neutral\n",
    );
    write(
        &p.join("resp.jsonl"),
        r#"{"utterance_id":"u1","prompt_id":"paper-ambiguous-v1","text":"Anger: 70%, Sadness: 30%"}
{"utterance_id":"u2","prompt_id":"paper-ambiguous-v1","text":"Happiness: 50%, Neutral: 50%"}
{"utterance_id":"u3","prompt_id":"paper-ambiguous-v1","text":"I cannot tell."}
{"utterance_id":"u4","prompt_id":"paper-ambiguous-v1","text":"Anger: 100%"}
{"utterance_id":"u9","prompt_id":"paper-ambiguous-v1","text":"Anger: 100%"}
"#,
    );
    let m = CorpusManifest::load(&p.join("manifest.toml")).unwrap();
    let rep = evaluate(&m, &EvalOptions::default(), &Executor::sequential()).unwrap();
    let ids: Vec<&str> = rep.per_utterance.iter().map(|r| r.utterance_id.as_str()).collect();
    // u4 carries an out-of-set label and is dropped with its whole record
    assert_eq!(ids, ["u1", "u2", "u3", "u5"]);
    assert_eq!(rep.corpus.n_total, 4);
    assert_eq!(rep.corpus.n_evaluated, 2);
    assert_eq!(rep.corpus.exclusion_rate, Some(0.5));
    let reason = |id: &str, stage| {
        rep.exclusions
            .iter()
            .find(|e| e.utterance_id == id && e.stage == stage)
            .map(|e| e.reason)
    };
    assert_eq!(reason("u3", ExclusionStage::Distribution), Some(ExclusionReason::Unparseable));
    assert_eq!(reason("u5", ExclusionStage::Distribution), Some(ExclusionReason::MissingPrediction));
    assert_eq!(reason("u2", ExclusionStage::Label), Some(ExclusionReason::NoMajority));
    assert_eq!(rep.corpus.n_label_evaluated, 1);
    assert_eq!(rep.corpus.accuracy, Some(1.0));
    assert!(rep.warnings.iter().any(|w| w.contains("frustration")));
    assert!(rep.warnings.iter().any(|w| w.contains("2 predictions have no ground truth")));

    let path = p.join("report.json");
    rep.write(&path).unwrap();
    assert_eq!(EvalReport::read(&path).unwrap(), rep);
}

#[test]
fn mixed_prompts_need_a_choice() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write(&p.join("m.toml"), "corpus_id = \"c\"\nannotations = \"a.csv\"\nresponses = [\"r.jsonl\"]\n");
    write(&p.join("a.csv"), "utterance_id,annotator_id,labels\nu1,a1,anger\nu2,a1,sadness\n");
    write(
        &p.join("r.jsonl"),
        r#"{"utterance_id":"u1","prompt_id":"paper-ambiguous-v1","text":"Anger: 100%"}
{"utterance_id":"u2","prompt_id":"paper-ambiguous-v1","text":"Sadness: 100%"}
{"utterance_id":"u1","prompt_id":"paper-single-v1","text":"Angry"}
{"utterance_id":"u2","prompt_id":"paper-single-v1","text":"Sadness."}
"#,
    );
    let m = CorpusManifest::load(&p.join("m.toml")).unwrap();
    let err = evaluate(&m, &EvalOptions::default(), &Executor::sequential()).unwrap_err();
    assert!(err.is_input_error() && err.to_string().contains("--prompt-id"), "{err}");

    let single = EvalOptions {
        prompt_id: Some("paper-single-v1".into()),
        ..EvalOptions::default()
    };
    let rep = evaluate(&m, &single, &Executor::sequential()).unwrap();
    assert_eq!(rep.corpus.accuracy, Some(1.0));
    assert_eq!(rep.corpus.mean_kl, None);
    assert_eq!(rep.corpus.exclusion_rate, None);
    assert_eq!(rep.condition, "text:paper-single-v1");
}

#[test]
fn exported_prompts_match_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let written = export_templates(dir.path(), &EmotionSet::default()).unwrap();
    assert_eq!(written.len(), 2);
    for path in written {
        let name = path.file_name().unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(golden.join(name)).unwrap());
    }
}

#[test]
fn token_map_must_cover_the_set() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.json");
    write_token_map(&path, &demo_token_map(&EmotionSet::default())).unwrap();
    let bigger = EmotionSet::new(["anger", "happiness", "neutral", "sadness", "fear"]).unwrap();
    assert!(read_token_map(&path, &bigger).unwrap_err().is_input_error());
}
