//! `conceptlens` command-line front end. Every command reads an optional JSON
//! job config, applies flag overrides, validates, and writes tidy JSON/CSV
//! into the output directory.

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use conceptlens::intervene::{EffectReport, InterventionKind, InterventionSpec};
use conceptlens::pipeline::{
    capture_runs, edit_experiment, export_run, head_cie_experiment, head_metrics_experiment, import_views,
    patch_experiment, prepare_run, span_experiment, transfer_experiment, EditKind, PreparedRun,
};
use conceptlens::subspace::{
    compute_rdm, gcca_fit, gcca_rank_select, principal_angle_overlap, rsa, svd_variance_basis, GccaOptions,
};
use conceptlens::tensorstore::{RunManifest, SpanClass};
use conceptlens::toymodel::{
    evaluate_exact_match, load_checkpoint, save_checkpoint, train, Corruption, EvalItem, HookedModel, Task, ToyModel,
};
use conceptlens::{Error, Result};

use config::JobConfig;
use output::Output;

#[derive(Parser)]
#[command(name = "conceptlens", version, about = "Shared concept subspaces and causal interventions on transformer residual streams")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the toy model or export its activations.
    #[command(subcommand)]
    Toy(ToyCommand),
    /// Subspace analyses over exported runs.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Residual-stream interventions on the toy model.
    #[command(subcommand)]
    Intervene(InterveneCommand),
    /// Attention-head screening and metrics on the toy model.
    #[command(subcommand)]
    Heads(HeadsCommand),
}

#[derive(Args, Clone, Default)]
struct JobArgs {
    /// JSON job config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct ModelArgs {
    /// Toy checkpoint directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Demonstrations per prompt.
    #[arg(long)]
    demos: Option<usize>,
    /// Number of runs.
    #[arg(long)]
    runs: Option<usize>,
    /// GCCA layers, comma separated.
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum ToyCommand {
    Train {
        #[command(flatten)]
        job: JobArgs,
        #[arg(long)]
        demos: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
    Extract {
        #[command(flatten)]
        job: JobArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Export only this run id.
        #[arg(long)]
        run: Option<String>,
    },
}

#[derive(Args, Clone, Default)]
struct ManifestArgs {
    /// Run manifest(s).
    #[arg(long = "manifest")]
    manifests: Vec<PathBuf>,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Per-layer PC counts and layer-by-layer PC-subspace overlap of one run.
    Svd {
        #[command(flatten)]
        job: JobArgs,
        #[command(flatten)]
        src: ManifestArgs,
        #[arg(long)]
        frac: Option<f64>,
    },
    /// GCCA fit with permutation rank selection.
    Gcca {
        #[command(flatten)]
        job: JobArgs,
        #[command(flatten)]
        src: ManifestArgs,
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<usize>>,
        /// "auto" or a fixed rank.
        #[arg(long)]
        rank: Option<String>,
        #[arg(long)]
        perms: Option<usize>,
    },
    /// Pairwise RSA between runs at one layer.
    Rsa {
        #[command(flatten)]
        job: JobArgs,
        #[command(flatten)]
        src: ManifestArgs,
        #[arg(long)]
        layer: usize,
    },
    /// Pairwise PC-subspace overlap between runs at one layer.
    Overlap {
        #[command(flatten)]
        job: JobArgs,
        #[command(flatten)]
        src: ManifestArgs,
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        frac: Option<f64>,
    },
}

#[derive(Args, Clone, Default)]
struct InterveneArgs {
    #[command(flatten)]
    job: JobArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// InterventionSpec JSON; its kind must match the subcommand.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Subcommand)]
enum InterveneCommand {
    Patch {
        #[command(flatten)]
        args: InterveneArgs,
        /// Corruption condition(s); default all three.
        #[arg(long, value_delimiter = ',')]
        condition: Option<Vec<String>>,
    },
    Ablate {
        #[command(flatten)]
        args: InterveneArgs,
    },
    Isolate {
        #[command(flatten)]
        args: InterveneArgs,
    },
    Transfer {
        #[command(flatten)]
        args: InterveneArgs,
        #[arg(long)]
        fit_frac: Option<f64>,
    },
}

#[derive(Subcommand)]
enum HeadsCommand {
    /// Per-head patching CIE with the family-wise sign-flip test.
    Cie {
        #[command(flatten)]
        job: JobArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',')]
        condition: Option<Vec<String>>,
        #[arg(long)]
        perms: Option<usize>,
    },
    /// Attention mass by span class per head.
    Attn {
        #[command(flatten)]
        job: JobArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Head contribution strength and alignment to the shared subspace.
    Metrics {
        #[command(flatten)]
        job: JobArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Toy(ToyCommand::Train { job, demos, steps }) => toy_train(&job, demos, steps),
        Command::Toy(ToyCommand::Extract { job, model, run }) => toy_extract(&job, &model, run.as_deref()),
        Command::Analyze(AnalyzeCommand::Svd { job, src, frac }) => analyze_svd(&job, &src, frac),
        Command::Analyze(AnalyzeCommand::Gcca { job, src, layers, rank, perms }) => {
            analyze_gcca(&job, &src, layers, rank.as_deref(), perms)
        }
        Command::Analyze(AnalyzeCommand::Rsa { job, src, layer }) => analyze_pairwise(&job, &src, layer, None),
        Command::Analyze(AnalyzeCommand::Overlap { job, src, layer, frac }) => {
            analyze_pairwise(&job, &src, layer, Some(frac))
        }
        Command::Intervene(c) => intervene(c),
        Command::Heads(HeadsCommand::Cie { job, model, condition, perms }) => heads_cie(&job, &model, condition, perms),
        Command::Heads(HeadsCommand::Attn { job, model }) => heads_attn(&job, &model),
        Command::Heads(HeadsCommand::Metrics { job, model }) => heads_metrics(&job, &model),
    }
}

fn load_job(job: &JobArgs) -> Result<JobConfig> {
    let mut cfg = match &job.config {
        Some(p) => JobConfig::load(p)?,
        None => JobConfig::default(),
    };
    if let Some(out) = &job.out {
        cfg.output_dir = Some(out.clone());
    }
    if let Some(seed) = job.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn apply_model_args(cfg: &mut JobConfig, m: &ModelArgs) {
    if let Some(c) = &m.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    if let Some(n) = m.demos {
        cfg.experiment.n_demos = n;
    }
    if let Some(n) = m.runs {
        cfg.experiment.n_runs = n;
    }
    if let Some(l) = &m.layers {
        cfg.experiment.layers = Some(l.clone());
    }
}

fn load_model(cfg: &JobConfig) -> Result<(ToyModel, Task)> {
    let dir = cfg.checkpoint.as_ref().ok_or_else(|| Error::validation("no checkpoint given (--checkpoint)"))?;
    let (model, task_cfg) = load_checkpoint(dir)?;
    Ok((model, Task::new(task_cfg)?))
}

fn parse_conditions(names: &Option<Vec<String>>, default: &[Corruption]) -> Result<Vec<Corruption>> {
    match names {
        None => Ok(default.to_vec()),
        Some(v) => v
            .iter()
            .map(|n| {
                Corruption::ALL
                    .into_iter()
                    .find(|c| c.name() == n.as_str())
                    .ok_or_else(|| Error::validation(format!("unknown corruption condition {n:?}")))
            })
            .collect(),
    }
}

fn toy_train(job: &JobArgs, demos: Option<usize>, steps: Option<usize>) -> Result<()> {
    let mut cfg = load_job(job)?;
    if let Some(n) = demos {
        cfg.task.max_demos = n;
        cfg.train.max_demos = n;
    }
    if let Some(s) = steps {
        cfg.train.steps = s;
    }
    cfg.validate()?;
    let out = Output::new(&cfg)?;
    let task = Task::new(cfg.task.clone())?;
    let (model, report) = train(&cfg.model, &task, &cfg.train)?;
    save_checkpoint(&out.path("checkpoint"), &model, &task.config)?;
    let mut eval = Vec::new();
    for n in [1usize, 2, 4, 8].into_iter().filter(|&n| n <= cfg.task.max_demos) {
        let mut acc = Vec::new();
        for r in 0..cfg.experiment.n_runs as u64 {
            let run = task.sample_run(conceptlens::rng::substream_seed(cfg.experiment.seed, r), n, 2)?;
            let items: Vec<EvalItem> = run
                .prompts
                .iter()
                .map(|p| EvalItem { tokens: p.tokens(), gold: vec![p.target], synonyms: vec![] })
                .collect();
            acc.push(evaluate_exact_match(&model, &items, 4)?.accuracy);
        }
        eval.push(serde_json::json!({ "n_demos": n, "accuracy_per_run": acc, "accuracy": conceptlens::stats::mean(&acc) }));
    }
    let prov = out.provenance(&cfg)?;
    out.json("train_metrics.json", &serde_json::json!({ "report": report, "exact_match": eval, "provenance": prov }))?;
    out.finish(&prov)
}

fn toy_extract(job: &JobArgs, m: &ModelArgs, only: Option<&str>) -> Result<()> {
    let mut cfg = load_job(job)?;
    apply_model_args(&mut cfg, m);
    cfg.validate()?;
    let out = Output::new(&cfg)?;
    let (model, task) = load_model(&cfg)?;
    let runs = capture_runs(&model, &task, &cfg.experiment)?;
    if let Some(id) = only {
        if !runs.iter().any(|r| r.run_id == id) {
            return Err(Error::validation(format!("unknown run {id:?}; runs are run0..run{}", runs.len() - 1)));
        }
    }
    let model_id = format!("toy-{}", &conceptlens::provenance::config_hash(&model.config)?[..12]);
    for run in runs.iter().filter(|r| only.map_or(true, |id| r.run_id == id)) {
        export_run(&out.path(&run.run_id), &model, run, &model_id)?;
    }
    out.finish(&out.provenance(&cfg)?)
}

fn manifests(cfg: &JobConfig, src: &ManifestArgs) -> Result<Vec<(PathBuf, RunManifest)>> {
    let paths = if src.manifests.is_empty() { cfg.manifests.clone() } else { src.manifests.clone() };
    if paths.is_empty() {
        return Err(Error::validation("no manifest given (--manifest)"));
    }
    paths
        .into_iter()
        .map(|p| {
            let m = RunManifest::load(&p)?;
            let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
            m.validate(&dir)?;
            Ok((dir, m))
        })
        .collect()
}

fn analyze_svd(job: &JobArgs, src: &ManifestArgs, frac: Option<f64>) -> Result<()> {
    let mut cfg = load_job(job)?;
    if let Some(f) = frac {
        cfg.analysis.variance_frac = f;
    }
    cfg.validate()?;
    let out = Output::new(&cfg)?;
    let ms = manifests(&cfg, src)?;
    let (dir, m) = &ms[0];
    let layers = cfg.analysis.layers.clone().unwrap_or_else(|| m.layer_ids.iter().copied().filter(|&l| l > 0).collect());
    let views = import_views(m, dir, &layers)?;
    let bases = views
        .iter()
        .map(|v| svd_variance_basis(v, cfg.analysis.variance_frac))
        .collect::<Result<Vec<_>>>()?;
    let pcs: Vec<_> = bases
        .iter()
        .map(|b| output::PcRow { layer: b.layer, k: b.k, explained_fraction: b.explained_fraction })
        .collect();
    let mut rows = Vec::new();
    for a in &bases {
        for b in &bases {
            rows.push(output::OverlapRow { a: a.layer.to_string(), b: b.layer.to_string(), value: principal_angle_overlap(&a.basis, &b.basis)? });
        }
    }
    out.csv("svd_pcs.csv", &pcs)?;
    out.csv("svd_overlap.csv", &rows)?;
    let prov = out.provenance(&cfg)?.with_run_ids([m.run_id.clone()]);
    out.json("svd.json", &serde_json::json!({ "pcs": pcs, "overlap": rows, "provenance": prov }))?;
    out.finish(&prov)
}

fn analyze_gcca(
    job: &JobArgs,
    src: &ManifestArgs,
    layers: Option<Vec<usize>>,
    rank: Option<&str>,
    perms: Option<usize>,
) -> Result<()> {
    let mut cfg = load_job(job)?;
    if let Some(l) = layers {
        cfg.analysis.layers = Some(l);
    }
    if let Some(r) = rank {
        cfg.analysis.rank = match r {
            "auto" => None,
            n => Some(n.parse().map_err(|_| Error::validation(format!("--rank must be \"auto\" or an integer, got {n:?}")))?),
        };
    }
    if let Some(p) = perms {
        cfg.analysis.permutations = p;
    }
    cfg.validate()?;
    let out = Output::new(&cfg)?;
    let ms = manifests(&cfg, src)?;
    let (dir, m) = &ms[0];
    let layers = cfg.analysis.layers.clone().unwrap_or_else(|| m.layer_ids.iter().copied().filter(|&l| l > 0).collect());
    let views = import_views(m, dir, &layers)?;
    let a = &cfg.analysis;
    let options = GccaOptions { ridge: a.ridge, scaling: a.scaling };
    let (selection, r) = match a.rank {
        Some(r) => (None, r),
        None => {
            let d = m.hidden_dim;
            let r_max = a.r_max.unwrap_or(d / 4).clamp(1, m.n().min(d));
            let sel = gcca_rank_select(&views, r_max, a.permutations, a.alpha, a.seed, options)?;
            let r = sel.r_hat.max(1);
            (Some(sel), r)
        }
    };
    let fit = gcca_fit(&views, r, options)?;
    let prov = out.provenance(&cfg)?.with_run_ids([m.run_id.clone()]);
    let eig: Vec<_> = fit
        .spectrum
        .iter()
        .enumerate()
        .map(|(i, &v)| output::EigenRow {
            component: i + 1,
            eigenvalue: v,
            threshold: selection.as_ref().and_then(|s| s.thresholds.get(i).copied()),
        })
        .collect();
    out.csv("gcca_eigenvalues.csv", &eig)?;
    out.json(
        "gcca.json",
        &serde_json::json!({
            "layers": fit.layers,
            "rank": fit.rank,
            "eigenvalues": fit.eigenvalues,
            "rank_selection": selection,
            "provenance": prov,
        }),
    )?;
    out.finish(&prov)
}

fn analyze_pairwise(job: &JobArgs, src: &ManifestArgs, layer: usize, overlap: Option<Option<f64>>) -> Result<()> {
    let mut cfg = load_job(job)?;
    if let Some(Some(f)) = overlap {
        cfg.analysis.variance_frac = f;
    }
    cfg.validate()?;
    let out = Output::new(&cfg)?;
    let ms = manifests(&cfg, src)?;
    let ids = &ms[0].1.concept_ids;
    for (_, m) in &ms {
        if &m.concept_ids != ids {
            return Err(Error::validation(format!("run {} lists different items than {}", m.run_id, ms[0].1.run_id)));
        }
    }
    let views = ms
        .iter()
        .map(|(dir, m)| Ok(import_views(m, dir, &[layer])?.remove(0)))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let name = if overlap.is_some() { "overlap" } else { "rsa" };
    if overlap.is_some() {
        let bases = views
            .iter()
            .map(|v| svd_variance_basis(v, cfg.analysis.variance_frac))
            .collect::<Result<Vec<_>>>()?;
        for (i, a) in bases.iter().enumerate() {
            for (j, b) in bases.iter().enumerate() {
                let value = principal_angle_overlap(&a.basis, &b.basis)?;
                rows.push(output::OverlapRow { a: ms[i].1.run_id.clone(), b: ms[j].1.run_id.clone(), value });
            }
        }
    } else {
        let rdms = views.iter().map(|v| compute_rdm(&v.data)).collect::<Result<Vec<_>>>()?;
        for (i, a) in rdms.iter().enumerate() {
            for (j, b) in rdms.iter().enumerate() {
                rows.push(output::OverlapRow { a: ms[i].1.run_id.clone(), b: ms[j].1.run_id.clone(), value: rsa(a, b)? });
            }
        }
    }
    let prov = out.provenance(&cfg)?.with_run_ids(ms.iter().map(|(_, m)| m.run_id.clone()));
    out.csv(&format!("{name}.csv"), &rows)?;
    out.json(&format!("{name}.json"), &serde_json::json!({ "layer": layer, name: rows, "provenance": prov }))?;
    out.finish(&prov)
}

/// Prepared runs for intervention commands, restricted to the spec's layers.
fn prepared(cfg: &JobConfig, model: &ToyModel, task: &Task, spec: Option<&InterventionSpec>) -> Result<Vec<PreparedRun>> {
    let mut runs = capture_runs(model, task, &cfg.experiment)?
        .into_iter()
        .map(|c| prepare_run(c, &cfg.experiment, model.num_layers()))
        .collect::<Result<Vec<_>>>()?;
    if let Some(s) = spec {
        for r in &mut runs {
            r.restrict_to(&s.layers)?;
        }
    }
    Ok(runs)
}

fn write_report(out: &Output, stem: &str, reports: &[&EffectReport]) -> Result<()> {
    let rows: Vec<_> = reports.iter().flat_map(|r| r.rows()).collect();
    out.csv(&format!("{stem}.csv"), &rows)?;
    out.json(&format!("{stem}.json"), &reports)
}

fn intervene(command: InterveneCommand) -> Result<()> {
    let (args, kind) = match &command {
        InterveneCommand::Patch { args, .. } => (args, InterventionKind::Patch),
        InterveneCommand::Ablate { args } => (args, InterventionKind::Ablate),
        InterveneCommand::Isolate { args } => (args, InterventionKind::Isolate),
        InterveneCommand::Transfer { args, .. } => (args, InterventionKind::Transfer),
    };
    let mut cfg = load_job(&args.job)?;
    apply_model_args(&mut cfg, &args.model);
    if let InterveneCommand::Transfer { fit_frac: Some(f), .. } = &command {
        cfg.experiment.fit_frac = *f;
    }
    let spec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            let s: InterventionSpec =
                serde_json::from_str(&text).map_err(|e| Error::validation(format!("malformed intervention spec: {e}")))?;
            s.validate()?;
            if s.kind != kind {
                return Err(Error::validation(format!("spec kind {:?} does not match the {kind:?} command", s.kind)));
            }
            Some(s)
        }
        None => None,
    };
    cfg.validate()?;
    let out = Output::new(&cfg)?;
    let (model, task) = load_model(&cfg)?;
    let runs = prepared(&cfg, &model, &task, spec.as_ref())?;
    match command {
        InterveneCommand::Patch { condition, .. } => {
            let default: Vec<Corruption> = match spec.as_ref().and_then(|s| s.corruption.to_task()) {
                Some(c) => vec![c],
                None => Corruption::ALL.to_vec(),
            };
            let conditions = parse_conditions(&condition, &default)?;
            let reports = conditions
                .iter()
                .map(|&c| patch_experiment(&model, &task, &runs, &cfg.experiment, c))
                .collect::<Result<Vec<_>>>()?;
            write_report(&out, "patch", &reports.iter().collect::<Vec<_>>())?;
        }
        InterveneCommand::Ablate { .. } => {
            write_report(&out, "ablate", &[&edit_experiment(&model, &runs, &cfg.experiment, EditKind::Ablate)?])?
        }
        InterveneCommand::Isolate { .. } => {
            write_report(&out, "isolate", &[&edit_experiment(&model, &runs, &cfg.experiment, EditKind::Isolate)?])?
        }
        InterveneCommand::Transfer { .. } => {
            let t = transfer_experiment(&model, &task, &runs, &cfg.experiment)?;
            write_report(&out, "transfer", &[&t.cross_context, &t.same_context])?;
            out.json("transfer_pairs.json", &t.run_pairs)?;
        }
    }
    let prov = out.provenance(&cfg)?.with_run_ids(runs.iter().map(|r| r.run_id.clone()));
    out.finish(&prov)
}

fn heads_setup(mut cfg: JobConfig, m: &ModelArgs) -> Result<(JobConfig, Output, ToyModel, Task)> {
    apply_model_args(&mut cfg, m);
    cfg.validate()?;
    let out = Output::new(&cfg)?;
    let (model, task) = load_model(&cfg)?;
    Ok((cfg, out, model, task))
}

fn heads_cie(job: &JobArgs, m: &ModelArgs, condition: Option<Vec<String>>, perms: Option<usize>) -> Result<()> {
    let mut cfg = load_job(job)?;
    if let Some(p) = perms {
        cfg.heads.permutations = p;
    }
    let conditions = parse_conditions(&condition, &cfg.heads.conditions.clone())?;
    cfg.heads.conditions = conditions.clone();
    let (cfg, out, model, task) = heads_setup(cfg, m)?;
    let runs = prepared(&cfg, &model, &task, None)?;
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for c in conditions {
        let o = head_cie_experiment(&model, &task, &runs, &cfg.experiment, c, cfg.heads.permutations, cfg.heads.alpha)?;
        for (l, row) in o.matrix.cie.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                rows.push(output::HeadCieRow {
                    condition: c.name().to_string(),
                    layer: l + 1,
                    head: k,
                    cie: v,
                    significant: o.matrix.significant[l][k],
                    threshold: o.matrix.threshold,
                });
            }
        }
        outcomes.push(o);
    }
    out.csv("heads_cie.csv", &rows)?;
    out.csv("heads_cie_ci.csv", &outcomes.iter().flat_map(|o| o.report.rows()).collect::<Vec<_>>())?;
    out.json("heads_cie.json", &outcomes)?;
    out.finish(&out.provenance(&cfg)?.with_run_ids(runs.iter().map(|r| r.run_id.clone())))
}

fn heads_attn(job: &JobArgs, m: &ModelArgs) -> Result<()> {
    let (cfg, out, model, task) = heads_setup(load_job(job)?, m)?;
    let runs = capture_runs(&model, &task, &cfg.experiment)?;
    let mut rows = Vec::new();
    for run in &runs {
        for a in span_experiment(&model, run, &cfg.experiment)? {
            for class in SpanClass::ALL {
                rows.push(output::SpanRow { run: run.run_id.clone(), layer: a.head.layer, head: a.head.head, span: class.name().to_string(), mass: a.of(class) });
            }
            rows.push(output::SpanRow { run: run.run_id.clone(), layer: a.head.layer, head: a.head.head, span: "other".to_string(), mass: a.other });
        }
    }
    out.csv("heads_attn.csv", &rows)?;
    let prov = out.provenance(&cfg)?.with_run_ids(runs.iter().map(|r| r.run_id.clone()));
    out.json("heads_attn.json", &serde_json::json!({ "rows": rows, "provenance": prov }))?;
    out.finish(&prov)
}

fn heads_metrics(job: &JobArgs, m: &ModelArgs) -> Result<()> {
    let (cfg, out, model, task) = heads_setup(load_job(job)?, m)?;
    let runs = prepared(&cfg, &model, &task, None)?;
    let mut rows = Vec::new();
    for run in &runs {
        for h in head_metrics_experiment(&model, run)? {
            rows.push(output::HeadMetricRow {
                run: run.run_id.clone(),
                layer: h.head.layer,
                head: h.head.head,
                alpha: h.alpha,
                align: h.align,
                reference_layer: h.reference_layer,
                alpha_denominator: "subspace energy of the reference layer".to_string(),
            });
        }
    }
    out.csv("heads_metrics.csv", &rows)?;
    let prov = out.provenance(&cfg)?.with_run_ids(runs.iter().map(|r| r.run_id.clone()));
    out.json("heads_metrics.json", &serde_json::json!({ "rows": rows, "provenance": prov }))?;
    out.finish(&prov)
}
