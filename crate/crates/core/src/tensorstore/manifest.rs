//! Run manifests: one JSON document per run describing the prompts, their
//! span layout, and the ACTB files holding their activations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::actb::{read_header, read_tensor};
use super::activations::LayerActivations;
use crate::error::{ensure, Error, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanClass {
    DemoDescription,
    MappingDelimiter,
    DemoLabel,
    Query,
    FinalDelimiter,
}

impl SpanClass {
    pub const ALL: [SpanClass; 5] = [
        SpanClass::DemoDescription,
        SpanClass::MappingDelimiter,
        SpanClass::DemoLabel,
        SpanClass::Query,
        SpanClass::FinalDelimiter,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SpanClass::DemoDescription => "demo_description",
            SpanClass::MappingDelimiter => "mapping_delimiter",
            SpanClass::DemoLabel => "demo_label",
            SpanClass::Query => "query",
            SpanClass::FinalDelimiter => "final_delimiter",
        }
    }
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub class: SpanClass,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpans {
    pub prompt_len: usize,
    pub spans: Vec<Span>,
}

impl PromptSpans {
    /// Spans must be non-empty, inside the prompt, and pairwise disjoint.
    pub fn validate(&self) -> Result<()> {
        let mut sorted = self.spans.clone();
        sorted.sort_by_key(|s| (s.start, s.end));
        let mut prev_end = 0;
        for s in &sorted {
            ensure!(s.start < s.end, "empty or inverted span {}..{}", s.start, s.end);
            ensure!(
                s.end <= self.prompt_len,
                "span {}..{} exceeds prompt length {}",
                s.start,
                s.end,
                self.prompt_len
            );
            ensure!(s.start >= prev_end, "overlapping spans at token {}", s.start);
            prev_end = s.end;
        }
        Ok(())
    }

    /// Span class of every token, `None` for tokens outside all spans.
    pub fn token_classes(&self) -> Vec<Option<SpanClass>> {
        let mut out = vec![None; self.prompt_len];
        for s in &self.spans {
            for slot in &mut out[s.start..s.end.min(self.prompt_len)] {
                *slot = Some(s.class);
            }
        }
        out
    }

    pub fn of_class(&self, class: SpanClass) -> impl Iterator<Item = &Span> {
        self.spans.iter().filter(move |s| s.class == class)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Hidden,
    HeadOutput,
    Attention,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub layer: usize,
    pub kind: TensorKind,
    /// Relative to the manifest's directory unless absolute.
    pub path: String,
}

/// Expected tensor shapes: hidden `(n, d)`, head_output `(n, K, d)`,
/// attention `(n, K, T)` with `T` the longest prompt (shorter rows zero-padded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub model_id: String,
    pub num_demonstrations: usize,
    pub seed: u64,
    pub layer_ids: Vec<usize>,
    pub concept_ids: Vec<String>,
    pub span_table: Vec<PromptSpans>,
    pub file_index: Vec<FileEntry>,
    pub hidden_dim: usize,
    #[serde(default)]
    pub num_heads: Option<usize>,
    #[serde(default)]
    pub post_norm: bool,
    #[serde(default)]
    pub metadata: BTreeMap<String, Value>,
}

impl RunManifest {
    pub fn n(&self) -> usize {
        self.concept_ids.len()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| Error::validation(format!("malformed manifest: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn resolve(&self, dir: &Path, entry: &FileEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            dir.join(p)
        }
    }

    pub fn entry(&self, layer: usize, kind: TensorKind) -> Option<&FileEntry> {
        self.file_index.iter().find(|e| e.layer == layer && e.kind == kind)
    }

    pub fn max_prompt_len(&self) -> usize {
        self.span_table.iter().map(|s| s.prompt_len).max().unwrap_or(0)
    }

    /// Structural checks that need no file access.
    pub fn validate_structure(&self) -> Result<()> {
        let n = self.n();
        ensure!(n > 0, "manifest lists no concepts");
        let unique: BTreeSet<&String> = self.concept_ids.iter().collect();
        ensure!(unique.len() == n, "concept_ids contains duplicates");
        let layers: BTreeSet<usize> = self.layer_ids.iter().copied().collect();
        ensure!(layers.len() == self.layer_ids.len(), "layer_ids contains duplicates");
        ensure!(self.hidden_dim > 0, "hidden_dim must be positive");
        ensure!(
            self.span_table.len() == n,
            "span_table has {} prompts for {} concepts",
            self.span_table.len(),
            n
        );
        for (i, s) in self.span_table.iter().enumerate() {
            s.validate().map_err(|e| Error::validation(format!("prompt {i}: {e}")))?;
        }
        let mut seen = BTreeSet::new();
        for e in &self.file_index {
            ensure!(layers.contains(&e.layer), "file_index layer {} not in layer_ids", e.layer);
            ensure!(seen.insert((e.layer, e.kind)), "duplicate file_index entry for layer {} {:?}", e.layer, e.kind);
            if e.kind != TensorKind::Hidden {
                ensure!(self.num_heads.is_some(), "{:?} files require num_heads", e.kind);
            }
        }
        Ok(())
    }

    /// Full validation: structure plus every indexed file's header shape.
    pub fn validate(&self, dir: &Path) -> Result<()> {
        self.validate_structure()?;
        let n = self.n();
        for e in &self.file_index {
            let path = self.resolve(dir, e);
            ensure!(path.exists(), "missing file {}", path.display());
            let header = read_header(&path)?;
            let expected = match e.kind {
                TensorKind::Hidden => vec![n, self.hidden_dim],
                TensorKind::HeadOutput => vec![n, self.num_heads.unwrap(), self.hidden_dim],
                TensorKind::Attention => vec![n, self.num_heads.unwrap(), self.max_prompt_len()],
            };
            ensure!(
                header.shape == expected,
                "{} has shape {:?}, manifest implies {:?}",
                path.display(),
                header.shape,
                expected
            );
        }
        Ok(())
    }

    /// Loads the hidden-state matrix of `layer` (uncentered).
    pub fn load_hidden(&self, dir: &Path, layer: usize) -> Result<LayerActivations> {
        let e = self
            .entry(layer, TensorKind::Hidden)
            .ok_or_else(|| Error::validation(format!("no hidden-state file for layer {layer}")))?;
        let t = read_tensor(self.resolve(dir, e))?;
        ensure!(
            t.header.shape == vec![self.n(), self.hidden_dim],
            "hidden file for layer {layer} has shape {:?}",
            t.header.shape
        );
        let m = Mat::from_row_iterator(self.n(), self.hidden_dim, t.data.iter().map(|&v| v as f64));
        let mut x = LayerActivations::new(layer, &self.run_id, m)?;
        x.row_ids = Some(self.concept_ids.clone());
        Ok(x)
    }

    /// Loads `(n, K, d)` head outputs of `layer` as K matrices of shape n×d.
    pub fn load_head_outputs(&self, dir: &Path, layer: usize) -> Result<Vec<Mat>> {
        let e = self
            .entry(layer, TensorKind::HeadOutput)
            .ok_or_else(|| Error::validation(format!("no head-output file for layer {layer}")))?;
        let t = read_tensor(self.resolve(dir, e))?;
        let (n, d) = (self.n(), self.hidden_dim);
        let k = self.num_heads.unwrap_or(0);
        ensure!(t.header.shape == vec![n, k, d], "head-output shape {:?}", t.header.shape);
        Ok((0..k)
            .map(|h| Mat::from_fn(n, d, |i, j| t.data[(i * k + h) * d + j] as f64))
            .collect())
    }
}
