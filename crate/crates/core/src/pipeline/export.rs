use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{ensure, Result};
use crate::tensorstore::{
    center_columns, write_tensor, FileEntry, LayerActivations, RunManifest, TensorFile, TensorHeader, TensorKind,
};
use crate::toymodel::{HookedModel, NoHook};

use super::CapturedRun;

/// Writes hidden states (layers 0..=L), per-head outputs and last-row
/// attention (layers 1..=L) of a run as ACTB files plus `manifest.json`.
pub fn export_run<M: HookedModel + ?Sized>(
    dir: &Path,
    model: &M,
    run: &CapturedRun,
    model_id: &str,
) -> Result<RunManifest> {
    fs::create_dir_all(dir)?;
    let (n, d, k, layers) = (run.n(), model.dim(), model.num_heads(), model.num_layers());
    let spans: Vec<_> = run.run.prompts.iter().map(|p| p.spans()).collect();
    let t_max = spans.iter().map(|s| s.prompt_len).max().unwrap_or(0);
    let attention: Vec<Vec<Vec<Vec<f64>>>> = run
        .run
        .prompts
        .par_iter()
        .map(|p| Ok(model.run(&p.tokens(), &mut NoHook, true)?.attention.expect("attention requested")))
        .collect::<Result<_>>()?;
    let mut file_index = Vec::new();
    let mut write = |layer: usize, kind: TensorKind, header: TensorHeader, data: Vec<f32>| -> Result<()> {
        let name = match kind {
            TensorKind::Hidden => format!("hidden_L{layer}.actb"),
            TensorKind::HeadOutput => format!("heads_L{layer}.actb"),
            TensorKind::Attention => format!("attn_L{layer}.actb"),
        };
        write_tensor(dir.join(&name), &TensorFile::new(header, data)?)?;
        file_index.push(FileEntry { layer, kind, path: name });
        Ok(())
    };
    for l in 0..=layers {
        let data = run.traces.iter().flat_map(|t| t.hidden[l].iter().map(|&v| v as f32)).collect();
        write(l, TensorKind::Hidden, TensorHeader::new(vec![n, d], &["item", "hidden"]), data)?;
        if l == 0 {
            continue;
        }
        let data = run
            .traces
            .iter()
            .flat_map(|t| t.heads[l - 1].iter().flat_map(|a| a.iter().map(|&v| v as f32)))
            .collect();
        write(l, TensorKind::HeadOutput, TensorHeader::new(vec![n, k, d], &["item", "head", "hidden"]), data)?;
        let mut data = Vec::with_capacity(n * k * t_max);
        for att in &attention {
            for row in &att[l - 1] {
                data.extend(row.iter().map(|&v| v as f32));
                data.extend(std::iter::repeat(0.0f32).take(t_max - row.len()));
            }
        }
        write(l, TensorKind::Attention, TensorHeader::new(vec![n, k, t_max], &["item", "head", "key"]), data)?;
    }
    let mut metadata = std::collections::BTreeMap::new();
    metadata.insert("context".to_string(), serde_json::json!(run.run.context));
    metadata.insert("query_concepts".to_string(), serde_json::json!(run.concept_ids));
    metadata.insert(
        "targets".to_string(),
        serde_json::json!(run.run.prompts.iter().map(|p| p.target).collect::<Vec<_>>()),
    );
    let manifest = RunManifest {
        run_id: run.run_id.clone(),
        model_id: model_id.to_string(),
        num_demonstrations: run.run.prompts[0].demos.len(),
        seed: run.run.seed,
        layer_ids: (0..=layers).collect(),
        concept_ids: run.item_ids.clone(),
        span_table: spans,
        file_index,
        hidden_dim: d,
        num_heads: Some(k),
        post_norm: false,
        metadata,
    };
    manifest.validate(dir)?;
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Centered hidden-state views of `layers` from an exported run.
pub fn import_views(manifest: &RunManifest, dir: &Path, layers: &[usize]) -> Result<Vec<LayerActivations>> {
    ensure!(!layers.is_empty(), "no layers requested");
    layers.iter().map(|&l| center_columns(&manifest.load_hidden(dir, l)?)).collect()
}
