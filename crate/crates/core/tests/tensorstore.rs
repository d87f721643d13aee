mod common;

use std::fs;

use common::*;
use conceptlens::pipeline::{capture_runs, export_run, import_views, ExperimentConfig};
use conceptlens::tensorstore::*;
use proptest::prelude::*;
use serde_json::json;

/// Bytes laid out by hand, the way an independent exporter would write them.
fn handmade(header: &str, payload: &[f32]) -> Vec<u8> {
    let mut b = b"ACTB".to_vec();
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&(header.len() as u64).to_le_bytes());
    b.extend_from_slice(header.as_bytes());
    for v in payload {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

#[test]
fn reads_externally_written_files() {
    let header = r#"{"shape": [2, 3], "dtype": "f32", "row_major": true, "axes": ["item", "hidden"], "metadata": {"layer": 4, "source": "exporter"}}"#;
    let payload = [1.5, -0.0, f32::MIN_POSITIVE, 3.0e38, -7.25, 0.1];
    let t = decode(&handmade(header, &payload)).unwrap();
    assert_eq!(t.header.shape, vec![2, 3]);
    assert_eq!(t.header.metadata["layer"], json!(4));
    for (a, b) in t.data.iter().zip(&payload) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    // optional header fields may be absent
    let bare = decode(&handmade(r#"{"dtype":"f32","shape":[1],"row_major":true}"#, &[2.0])).unwrap();
    assert!(bare.header.axes.is_empty());
}

#[test]
fn header_only_read_checks_file_size() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.actb");
    let t = TensorFile::new(TensorHeader::new(vec![3, 2], &["a", "b"]), vec![0.5; 6]).unwrap();
    write_tensor(&p, &t).unwrap();
    assert_eq!(read_header(&p).unwrap(), t.header);
    let mut bytes = fs::read(&p).unwrap();
    bytes.pop();
    fs::write(&p, &bytes).unwrap();
    assert_eq!(read_header(&p).unwrap_err().to_string(), "truncated payload");
    fs::write(&p, b"ACT").unwrap();
    assert_eq!(read_header(&p).unwrap_err().to_string(), "bad magic");
    fs::write(&p, &handmade("{}", &[])[..14]).unwrap();
    assert_eq!(read_header(&p).unwrap_err().to_string(), "truncated header");
}

#[test]
fn rejects_malformed_headers() {
    let cases = [
        (r#"{"dtype":"f64","shape":[1],"row_major":true}"#, "unsupported dtype"),
        (r#"{"dtype":"f32","shape":[1],"row_major":false}"#, "row-major"),
        (r#"{"dtype":"f32","shape":[0],"row_major":true}"#, "positive"),
        (r#"{"dtype":"f32","shape":[1],"row_major":true,"axes":["a","b"]}"#, "axis names"),
        (r#"{"dtype":"f32","shape":"x","row_major":true}"#, "malformed JSON header"),
    ];
    for (h, msg) in cases {
        let err = decode(&handmade(h, &[0.0])).unwrap_err().to_string();
        assert!(err.contains(msg), "{h}: {err}");
    }
}

fn spans(len: usize, list: &[(SpanClass, usize, usize)]) -> PromptSpans {
    PromptSpans { prompt_len: len, spans: list.iter().map(|&(class, start, end)| Span { class, start, end }).collect() }
}

fn manifest_json() -> serde_json::Value {
    json!({
        "run_id": "r0",
        "model_id": "toy",
        "num_demonstrations": 1,
        "seed": 3,
        "layer_ids": [1],
        "concept_ids": ["a", "b"],
        "span_table": [
            {"prompt_len": 6, "spans": [
                {"class": "demo_description", "start": 1, "end": 2},
                {"class": "mapping_delimiter", "start": 2, "end": 3},
                {"class": "demo_label", "start": 3, "end": 4},
                {"class": "query", "start": 4, "end": 5},
                {"class": "final_delimiter", "start": 5, "end": 6}]},
            {"prompt_len": 5, "spans": [{"class": "query", "start": 3, "end": 4}]}
        ],
        "file_index": [{"layer": 1, "kind": "hidden", "path": "h1.actb"}],
        "hidden_dim": 2
    })
}

#[test]
fn manifest_from_foreign_json_validates_and_loads() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("h1.actb"), handmade(r#"{"dtype":"f32","shape":[2,2],"row_major":true}"#, &[1.0, 2.0, 3.0, 4.0]))
        .unwrap();
    let m: RunManifest = serde_json::from_value(manifest_json()).unwrap();
    assert_eq!(m.num_heads, None);
    assert!(!m.post_norm);
    m.validate(dir.path()).unwrap();
    let x = m.load_hidden(dir.path(), 1).unwrap();
    assert_eq!(x.data[(1, 0)], 3.0);
    assert_eq!(x.row_ids.as_deref(), Some(&["a".to_string(), "b".to_string()][..]));
    assert!(!x.centered);

    m.save(dir.path().join("m.json")).unwrap();
    assert_eq!(RunManifest::load(dir.path().join("m.json")).unwrap(), m);
}

#[test]
fn manifest_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("h1.actb"), handmade(r#"{"dtype":"f32","shape":[3,2],"row_major":true}"#, &[0.0; 6])).unwrap();
    let base: RunManifest = serde_json::from_value(manifest_json()).unwrap();
    assert!(base.validate(dir.path()).unwrap_err().to_string().contains("manifest implies"));

    let mut m = base.clone();
    m.concept_ids = vec!["a".into(), "a".into()];
    assert!(m.validate_structure().unwrap_err().to_string().contains("duplicates"));

    let mut m = base.clone();
    m.span_table[1] = spans(5, &[(SpanClass::Query, 1, 3), (SpanClass::FinalDelimiter, 2, 4)]);
    assert!(m.validate_structure().unwrap_err().to_string().contains("overlapping"));

    let mut m = base.clone();
    m.span_table[1] = spans(5, &[(SpanClass::Query, 3, 7)]);
    assert!(m.validate_structure().unwrap_err().to_string().contains("exceeds"));

    let mut m = base.clone();
    m.file_index.push(FileEntry { layer: 1, kind: TensorKind::HeadOutput, path: "x".into() });
    assert!(m.validate_structure().unwrap_err().to_string().contains("num_heads"));

    let mut m = base.clone();
    m.file_index[0].layer = 9;
    assert!(m.validate_structure().is_err());

    let mut m = base;
    m.file_index[0].path = "missing.actb".into();
    assert!(m.validate(dir.path()).unwrap_err().to_string().contains("missing file"));
}

#[test]
fn token_classes_mark_every_span() {
    let s = spans(6, &[(SpanClass::DemoLabel, 1, 3), (SpanClass::Query, 4, 6)]);
    let c = s.token_classes();
    assert_eq!(c, vec![None, Some(SpanClass::DemoLabel), Some(SpanClass::DemoLabel), None, Some(SpanClass::Query), Some(SpanClass::Query)]);
    assert_eq!(s.of_class(SpanClass::Query).count(), 1);
}

#[test]
fn exported_run_round_trips() {
    let (model, task) = (small_model(2, 1), small_task(1));
    let cfg = ExperimentConfig { n_runs: 1, n_demos: 2, per_concept: 2, ..ExperimentConfig::default() };
    let run = capture_runs(&model, &task, &cfg).unwrap().remove(0);
    let dir = tempfile::tempdir().unwrap();
    let m = export_run(dir.path(), &model, &run, "small").unwrap();
    let loaded = RunManifest::load(dir.path().join("manifest.json")).unwrap();
    assert_eq!(loaded, m);
    loaded.validate(dir.path()).unwrap();
    assert_eq!(m.layer_ids, vec![0, 1, 2]);
    for l in 0..=2 {
        let x = m.load_hidden(dir.path(), l).unwrap();
        for i in 0..run.n() {
            for j in 0..16 {
                assert_eq!(x.data[(i, j)], run.traces[i].hidden[l][j] as f32 as f64);
            }
        }
    }
    let heads = m.load_head_outputs(dir.path(), 2).unwrap();
    assert_eq!(heads.len(), 2);
    assert_eq!(heads[1][(3, 5)], run.traces[3].heads[1][1][5] as f32 as f64);
    let views = import_views(&m, dir.path(), &[1, 2]).unwrap();
    assert!(views.iter().all(|v| v.centered && v.is_numerically_centered()));
    // attention rows are zero-padded to the longest prompt and sum to one
    let att = read_tensor(dir.path().join("attn_L1.actb")).unwrap();
    let t = m.max_prompt_len();
    let row: f32 = att.data[..t].iter().sum();
    assert!((row - 1.0).abs() < 1e-5);
}

proptest! {
    #[test]
    fn encode_decode_is_bit_exact(shape in prop::collection::vec(1usize..5, 1..4), bits in prop::collection::vec(any::<u32>(), 64)) {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|i| f32::from_bits(bits[i % bits.len()])).collect();
        let t = TensorFile::new(TensorHeader::new(shape, &[]), data).unwrap();
        prop_assert!(decode(&encode(&t).unwrap()).unwrap().bit_eq(&t));
    }

    #[test]
    fn any_truncation_is_rejected(cut in 1usize..40) {
        let t = TensorFile::new(TensorHeader::new(vec![2, 2], &[]), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode(&t).unwrap();
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(decode(&bytes[..bytes.len() - cut]).is_err());
    }
}
