use std::path::PathBuf;

use serde::Serialize;

use hyps_core::adapters::{trainable_params, write_adapter_checkpoint, AdapterSpec, Variant};
use hyps_core::autodiff::{history_csv, TrainConfig};
use hyps_core::classify::{
    classification_report, cross_validate, read_subjects, synthetic_cohort, write_subjects, CohortSpec,
    DiagnosisTask, SvmParams,
};
use hyps_core::experiment::{
    evaluate, finetune, finetune_data, pretrain, FinetuneConfig, HeldoutReport, PretrainConfig, Seeds,
};
use hyps_core::metrics::{
    evaluate_batch, filter_small_components, label_components, measure_volume, read_mask, read_volume, rows_to_csv,
    write_mask, write_volume,
};
use hyps_core::model::{generate_dataset, read_model, write_model, SynthTask, TaskId, ToyModel, ToyModelConfig};
use hyps_core::{Error, Exec, Result};

use crate::args::*;
use crate::manifest::Run;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::RankSweep(a) => cmd_rank_sweep(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Postprocess(a) => cmd_postprocess(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Synth(SynthCommand::Volumes(a)) => cmd_synth_volumes(a),
        Command::Synth(SynthCommand::Cohort(a)) => cmd_synth_cohort(a),
    }
}

fn exec(sequential: bool) -> Exec {
    if sequential {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

fn pretrain_config(o: &PretrainOpts, default_dim: usize) -> PretrainConfig {
    let mut pc = PretrainConfig::default();
    pc.model = ToyModelConfig::default().with_embed_dim(o.embed_dim.unwrap_or(default_dim));
    pc.samples = o.pretrain_n;
    pc.train.epochs = o.pretrain_epochs;
    pc.train.lr0 = o.pretrain_lr;
    pc
}

fn finetune_config(o: &FinetuneOpts) -> FinetuneConfig {
    FinetuneConfig {
        train_n: o.train_n,
        heldout_n: o.heldout_n,
        train: TrainConfig {
            epochs: o.epochs,
            lr0: o.lr,
            ..TrainConfig::default()
        },
    }
}

/// Rank bounds of `spec` against every registry layer `config` would build.
fn validate_spec(config: &ToyModelConfig, spec: &AdapterSpec) -> Result<()> {
    config.validate()?;
    let d = config.embed_dim;
    let h = config.mlp_ratio * d;
    for b in 0..config.blocks() {
        for (role, m, n) in [("q", d, d), ("k", d, d), ("v", d, d), ("o", d, d), ("mlp1", h, d), ("mlp2", d, h)] {
            spec.validate_for(&format!("enc.{b}.{role}"), m, n)?;
        }
    }
    Ok(())
}

/// Loads `--base` or pretrains a fresh model, writing its artifacts.
fn obtain_base(o: &FinetuneOpts, default_dim: usize, seeds: Seeds, exec: Exec, run: &mut Run) -> Result<ToyModel> {
    if let Some(p) = &o.base {
        run.input(p);
        return read_model(p);
    }
    if !o.pretrain {
        return Err(Error::Config("either --base <checkpoint> or --pretrain is required".into()));
    }
    let pc = pretrain_config(&o.pretrain_opts, default_dim);
    let (model, history) = pretrain(&pc, seeds, exec)?;
    let p = run.path("base.ckpt");
    write_model(&model, &p)?;
    run.output(p);
    run.write("pretrain_history.csv", history_csv(&history))?;
    Ok(model)
}

#[derive(Serialize)]
struct PretrainSnapshot<'a> {
    pretrain: &'a PretrainConfig,
}

fn cmd_pretrain(a: PretrainArgs) -> Result<()> {
    let pc = pretrain_config(&a.opts, ToyModelConfig::default().embed_dim);
    pc.model.validate()?;
    let mut run = Run::start("pretrain", PretrainSnapshot { pretrain: &pc }, Some(a.common.seed), &a.common.out)?;
    let seeds = Seeds::from_run_seed(a.common.seed);
    let (model, history) = pretrain(&pc, seeds, exec(a.common.sequential))?;
    let p = run.path("base.ckpt");
    write_model(&model, &p)?;
    run.output(p);
    run.write("history.csv", history_csv(&history))?;
    run.finish()
}

#[derive(Serialize)]
struct FinetuneReport<'a> {
    variant: Variant,
    rank: usize,
    encoder_trainable_params: usize,
    trainable_params: usize,
    heldout: &'a HeldoutReport,
}

fn heldout_text(variant: Variant, rank: usize, params: usize, r: &HeldoutReport) -> String {
    let hd = r.mean_hd95.map_or("n/a".to_string(), |h| format!("{h:.3}"));
    format!(
        "Method\tRank\tParams\tDice\tHD95\n{variant}\t{rank}\t{params}\t{:.2}\t{hd}\n\nsubjects: {}, HD95 undefined (empty mask): {}\n",
        r.mean_dice,
        r.subjects.len(),
        r.hd95_undefined
    )
}

#[derive(Serialize)]
struct FinetuneSnapshot<'a> {
    variant: Variant,
    rank: usize,
    base: &'a Option<PathBuf>,
    pretrain: Option<PretrainConfig>,
    finetune: &'a FinetuneConfig,
}

fn cmd_finetune(a: FinetuneArgs) -> Result<()> {
    let variant: Variant = a.variant.parse()?;
    let spec = AdapterSpec::new(variant, a.rank);
    let default_dim = ToyModelConfig::default().embed_dim;
    let fc = finetune_config(&a.opts);
    fc.train.validate()?;
    if a.opts.base.is_none() {
        validate_spec(&pretrain_config(&a.opts.pretrain_opts, default_dim).model, &spec)?;
    }
    let snapshot = FinetuneSnapshot {
        variant,
        rank: a.rank,
        base: &a.opts.base,
        pretrain: a.opts.pretrain.then(|| pretrain_config(&a.opts.pretrain_opts, default_dim)),
        finetune: &fc,
    };
    let mut run = Run::start("finetune", snapshot, Some(a.common.seed), &a.common.out)?;
    let seeds = Seeds::from_run_seed(a.common.seed);
    let ex = exec(a.common.sequential);
    let base = obtain_base(&a.opts, default_dim, seeds, ex, &mut run)?;
    validate_spec(&base.config, &spec)?;
    let (train, heldout) = finetune_data(&fc, seeds)?;
    let ft = finetune(&base, &spec, &train, &fc.train, seeds, ex)?;
    run.write("history.csv", history_csv(&ft.history))?;
    let p = run.path("model.ckpt");
    write_model(&ft.model, &p)?;
    run.output(p);
    let layers: Vec<_> = ft
        .model
        .registry()
        .entries
        .iter()
        .zip(ft.model.blocks.iter().flat_map(|b| hyps_core::model::Role::ALL.map(|r| b.layer(r).clone())))
        .map(|(e, l)| (e.name.clone(), l))
        .collect();
    let p = run.path("adapters.ckpt");
    write_adapter_checkpoint(&layers, &ft.model.blocks[0].q.spec, &p)?;
    run.output(p);
    let models = if ft.snapshots.len() == 4 {
        ft.snapshots.clone()
    } else {
        vec![ft.model.clone()]
    };
    let report = evaluate(&models, &heldout, ex)?;
    let encoder = ft.trainable_scalars - ft.model.decoder_param_count();
    let full = FinetuneReport {
        variant,
        rank: a.rank,
        encoder_trainable_params: encoder,
        trainable_params: ft.trainable_scalars,
        heldout: &report,
    };
    run.write("report.json", serde_json::to_string_pretty(&full).expect("report serializes") + "\n")?;
    let text = heldout_text(variant, a.rank, ft.trainable_scalars, &report);
    print!("{text}");
    run.write("report.txt", text)?;
    run.finish()
}

#[derive(Debug, Serialize)]
struct SweepRow {
    variant: Variant,
    rank: usize,
    dice: f64,
    hd95: Option<f64>,
    /// Closed-form adapter count over the registry layers.
    params: usize,
    /// All trainable scalars, decoder included.
    trainable_total: usize,
}

#[derive(Serialize)]
struct SweepSnapshot<'a> {
    variants: Vec<Variant>,
    ranks: &'a [usize],
    base: &'a Option<PathBuf>,
    pretrain: Option<PretrainConfig>,
    finetune: &'a FinetuneConfig,
}

/// Rank sweeps default to a wider model so that rank 32 fits every layer.
const SWEEP_EMBED_DIM: usize = 32;

fn cmd_rank_sweep(a: RankSweepArgs) -> Result<()> {
    let variants = a.variants.iter().map(|v| v.parse()).collect::<Result<Vec<Variant>>>()?;
    if variants.is_empty() || a.ranks.is_empty() {
        return Err(Error::Config("rank sweep needs at least one variant and one rank".into()));
    }
    let fc = finetune_config(&a.opts);
    fc.train.validate()?;
    if a.opts.base.is_none() {
        let mc = pretrain_config(&a.opts.pretrain_opts, SWEEP_EMBED_DIM).model;
        for &v in &variants {
            for &r in &a.ranks {
                validate_spec(&mc, &AdapterSpec::new(v, r))?;
            }
        }
    }
    let snapshot = SweepSnapshot {
        variants: variants.clone(),
        ranks: &a.ranks,
        base: &a.opts.base,
        pretrain: a.opts.pretrain.then(|| pretrain_config(&a.opts.pretrain_opts, SWEEP_EMBED_DIM)),
        finetune: &fc,
    };
    let mut run = Run::start("rank-sweep", snapshot, Some(a.common.seed), &a.common.out)?;
    let seeds = Seeds::from_run_seed(a.common.seed);
    let ex = exec(a.common.sequential);
    let base = obtain_base(&a.opts, SWEEP_EMBED_DIM, seeds, ex, &mut run)?;
    let (train, heldout) = finetune_data(&fc, seeds)?;
    let shapes = base.registry().shapes();
    let mut rows = Vec::new();
    for &v in &variants {
        for &r in &a.ranks {
            let spec = AdapterSpec::new(v, r);
            validate_spec(&base.config, &spec)?;
            log::info!("sweep {v} r={r}");
            let ft = finetune(&base, &spec, &train, &fc.train, seeds, ex)?;
            let models = if ft.snapshots.len() == 4 { ft.snapshots } else { vec![ft.model] };
            let rep = evaluate(&models, &heldout, ex)?;
            rows.push(SweepRow {
                variant: v,
                rank: r,
                dice: rep.mean_dice,
                hd95: rep.mean_hd95,
                params: trainable_params(&shapes, &spec),
                trainable_total: ft.trainable_scalars,
            });
        }
    }
    let mut csv = String::from("variant,rank,dice,hd95,params,trainable_total\n");
    for r in &rows {
        let hd = r.hd95.map_or(String::new(), |h| format!("{h:.4}"));
        csv.push_str(&format!(
            "{},{},{:.4},{hd},{},{}\n",
            r.variant, r.rank, r.dice, r.params, r.trainable_total
        ));
    }
    run.write("sweep.csv", &csv)?;
    // Table layout: one line per variant, Dice/HD95/Params per rank
    let mut table = String::from("Method");
    for r in &a.ranks {
        table.push_str(&format!("\tr={r} Dice\tHD95\tParams"));
    }
    table.push('\n');
    for &v in &variants {
        table.push_str(v.name());
        for row in rows.iter().filter(|row| row.variant == v) {
            let hd = row.hd95.map_or("n/a".to_string(), |h| format!("{h:.3}"));
            table.push_str(&format!("\t{:.2}\t{hd}\t{}", row.dice, row.params));
        }
        table.push('\n');
    }
    print!("{table}");
    run.write("sweep.txt", table)?;
    run.finish()
}

/// Files named by `paths`; directories expand to their sorted file entries.
fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            entries.retain(|e| e.is_file());
            entries.sort();
            out.extend(entries);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct EvalSummary {
    subjects: usize,
    filter_cc: Option<usize>,
    mean_dice: f64,
    /// Over subjects with a defined HD95.
    mean_hd95: Option<f64>,
    hd95_undefined: usize,
    mean_left_volume_cm3: f64,
    mean_right_volume_cm3: f64,
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let preds = expand(&a.pred)?;
    let gts = expand(&a.gt)?;
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::Config(format!(
            "{} prediction files but {} reference files",
            preds.len(),
            gts.len()
        )));
    }
    #[derive(Serialize)]
    struct Snap {
        filter_cc: Option<usize>,
    }
    let mut run = Run::start("eval", Snap { filter_cc: a.filter_cc }, None, &a.out)?;
    let mut subjects = Vec::with_capacity(preds.len());
    for (p, g) in preds.iter().zip(&gts) {
        run.input(p);
        run.input(g);
        let id = p
            .file_stem()
            .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
        subjects.push((id, read_volume(p)?, read_volume(g)?));
    }
    let rows = evaluate_batch(&subjects, a.filter_cc, exec(a.sequential))?;
    run.write("metrics.csv", rows_to_csv(&rows))?;
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&hyps_core::metrics::SubjectRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let hd: Vec<f64> = rows.iter().filter_map(|r| r.hd95).collect();
    let summary = EvalSummary {
        subjects: rows.len(),
        filter_cc: a.filter_cc,
        mean_dice: mean(&|r| r.dice),
        mean_hd95: (!hd.is_empty()).then(|| hd.iter().sum::<f64>() / hd.len() as f64),
        hd95_undefined: rows.len() - hd.len(),
        mean_left_volume_cm3: mean(&|r| r.left_volume_cm3),
        mean_right_volume_cm3: mean(&|r| r.right_volume_cm3),
    };
    println!(
        "subjects {}  mean dice {:.2}  mean hd95 {}  hd95 undefined {}",
        summary.subjects,
        summary.mean_dice,
        summary.mean_hd95.map_or("n/a".to_string(), |h| format!("{h:.3}")),
        summary.hd95_undefined
    );
    run.write("summary.json", serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    run.finish()
}

#[derive(Serialize)]
struct PostprocessSummary {
    min_voxels: usize,
    components_before: usize,
    components_after: usize,
    voxels_before: usize,
    voxels_after: usize,
    volume_before_cm3: f64,
    volume_after_cm3: f64,
}

fn cmd_postprocess(a: PostprocessArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Snap {
        min_voxels: usize,
    }
    let mut run = Run::start("postprocess", Snap { min_voxels: a.min_voxels }, None, &a.out)?;
    run.input(&a.input);
    let mask = read_mask(&a.input)?;
    let filtered = filter_small_components(&mask, a.min_voxels);
    let p = run.path("mask.hvol");
    write_mask(&filtered, &p)?;
    run.output(p);
    let s = PostprocessSummary {
        min_voxels: a.min_voxels,
        components_before: label_components(&mask).components(),
        components_after: label_components(&filtered).components(),
        voxels_before: mask.count(),
        voxels_after: filtered.count(),
        volume_before_cm3: measure_volume(&mask),
        volume_after_cm3: measure_volume(&filtered),
    };
    run.write("summary.json", serde_json::to_string_pretty(&s).expect("summary serializes") + "\n")?;
    run.finish()
}

fn cmd_classify(a: ClassifyArgs) -> Result<()> {
    let task: DiagnosisTask = a.task.parse()?;
    #[derive(Serialize)]
    struct Snap<'a> {
        task: DiagnosisTask,
        folds: usize,
        svm: &'a SvmParams,
    }
    let params = SvmParams::default();
    let snap = Snap {
        task,
        folds: a.folds,
        svm: &params,
    };
    let mut run = Run::start("classify", snap, Some(a.common.seed), &a.common.out)?;
    run.input(&a.subjects);
    let records = read_subjects(std::fs::File::open(&a.subjects)?)?;
    let pooled = cross_validate(&records, task, a.folds, a.common.seed, &params, exec(a.common.sequential))?;
    let scores: Vec<f64> = pooled.iter().map(|p| p.score).collect();
    let labels: Vec<f64> = pooled.iter().map(|p| p.label).collect();
    let report = classification_report(&scores, &labels)?;
    let mut csv = String::from("id,fold,score,label\n");
    for p in &pooled {
        csv.push_str(&format!("{},{},{:.17e},{}\n", p.id, p.fold, p.score, p.label));
    }
    run.write("predictions.csv", csv)?;
    run.write("report.json", serde_json::to_string_pretty(&report).expect("report serializes") + "\n")?;
    let label = match task {
        DiagnosisTask::AdVsCn => "SVM (AD vs. CN)",
        DiagnosisTask::EmciVsLmci => "SVM (EMCI vs. LMCI)",
    };
    let text = report.to_table(label);
    print!("{text}");
    run.write("report.txt", text)?;
    run.finish()
}

fn cmd_synth_volumes(a: SynthVolumesArgs) -> Result<()> {
    let id: TaskId = a.task.parse()?;
    let task = SynthTask::new(id, a.common.seed);
    let mut run = Run::start("synth volumes", &task, Some(a.common.seed), &a.common.out)?;
    for (i, s) in generate_dataset(&task, a.n)?.iter().enumerate() {
        let p = run.path(&format!("image_{i:03}.hvol"));
        write_volume(&s.image, &p)?;
        run.output(p);
        let p = run.path(&format!("label_{i:03}.hvol"));
        write_mask(&s.label, &p)?;
        run.output(p);
    }
    run.finish()
}

fn cmd_synth_cohort(a: SynthCohortArgs) -> Result<()> {
    let spec = CohortSpec {
        task: a.task.parse()?,
        per_class: a.per_class,
        positive_mean: a.positive_mean,
        negative_mean: a.negative_mean,
        std: a.std,
        permute_labels: a.permute,
        seed: a.common.seed,
    };
    let mut run = Run::start("synth cohort", &spec, Some(a.common.seed), &a.common.out)?;
    run.write("subjects.csv", write_subjects(&synthetic_cohort(&spec)))?;
    run.finish()
}

