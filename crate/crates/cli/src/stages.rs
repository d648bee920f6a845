//! Stage implementations. Every stage takes (config, output layout),
//! checks its prerequisites, does its work under a directory lock, and
//! writes a run manifest capturing the config snapshot, seed, and content
//! hashes of its inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thermopose::cycaug::{translate, train_cyclegan_with, CoverKind};
use thermopose::data::{
    gen_phantoms, load_dataset, load_generator_checkpoint, load_labeled_pool,
    load_pose_checkpoint, save_generator_checkpoint, save_gray_png8, save_pose_checkpoint,
    FrameLabel, JointsFile, Split,
};
use thermopose::distill::distill;
use thermopose::error::Error;
use thermopose::eval::{evaluate_model, render_per_joint, render_table, PCKhReport};
use thermopose::extreme::extreme_aug_indexed;
use thermopose::pose::{train_pose, MixWeights, PoseNet};
use thermopose::types::{DomainTag, Sample};

use crate::config::{OutLayout, PipelineConfig};

/// Holds `run.lock` in the output directory for the duration of a stage.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(layout: &OutLayout) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&layout.root)?;
        let path = layout.lock_file();
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(anyhow::anyhow!(
                "output directory {} is locked by another running stage (remove {} if stale)",
                layout.root.display(),
                path.display()
            )),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        std::fs::remove_file(&self.path).ok();
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    stage: String,
    seed: u64,
    config: PipelineConfig,
    /// FNV-64 content hashes of input artifacts.
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

fn fnv_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path)?;
    let mut h = 0xcbf29ce484222325u64;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    Ok(format!("{h:016x}"))
}

fn hash_tree(root: &Path) -> anyhow::Result<String> {
    // combined hash over sorted relative paths and file hashes
    let mut files = Vec::new();
    collect_files(root, &mut files)?;
    files.sort();
    let mut h = 0xcbf29ce484222325u64;
    let mut eat = |s: &str| {
        for b in s.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    for f in &files {
        eat(&f.strip_prefix(root).unwrap_or(f).to_string_lossy());
        eat(&fnv_file(f)?);
    }
    Ok(format!("{h:016x}"))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn write_manifest(
    layout: &OutLayout,
    stage: &str,
    cfg: &PipelineConfig,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
) -> anyhow::Result<()> {
    let manifest = RunManifest {
        stage: stage.into(),
        seed: cfg.seed,
        config: cfg.clone(),
        inputs,
        outputs,
    };
    let path = layout.manifest(stage);
    std::fs::create_dir_all(path.parent().unwrap())?;
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    // resolved config snapshot for the run directory
    cfg.save(&layout.root.join("config.json"))?;
    Ok(())
}

fn require(path: &Path, hint: &str) -> Result<(), Error> {
    if !path.exists() {
        return Err(Error::MissingPrerequisite(format!(
            "{} not found; run {hint} first",
            path.display()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------
// synth-gen
// ---------------------------------------------------------------------

pub fn synth_gen(cfg: &PipelineConfig, layout: &OutLayout) -> anyhow::Result<()> {
    let _lock = DirLock::acquire(layout)?;
    let dataset = layout.dataset();
    gen_phantoms(&cfg.phantom, &dataset)?;
    let manifest = load_dataset(&dataset)?;
    for split in Split::ALL {
        println!(
            "{}: {} subjects, {} frames",
            split.dir_name(),
            manifest.subject_count(split),
            manifest.frame_count(split)
        );
    }
    let mut inputs = BTreeMap::new();
    inputs.insert("phantom_config".into(), thermopose::data::hash_config(&cfg.phantom));
    write_manifest(layout, "synth-gen", cfg, inputs, vec![dataset.display().to_string()])?;
    Ok(())
}

// ---------------------------------------------------------------------
// cycaug-train
// ---------------------------------------------------------------------

pub fn cycaug_train(cfg: &PipelineConfig, layout: &OutLayout) -> anyhow::Result<()> {
    let _lock = DirLock::acquire(layout)?;
    let dataset_dir = layout.dataset();
    require(&dataset_dir, "synth-gen")?;
    let manifest = load_dataset(&dataset_dir)?;

    let source: Vec<_> = manifest
        .load_samples(Split::TrainSource, cfg.normalize)?
        .into_iter()
        .map(|s| s.image)
        .collect();

    for (kind, split, seed_shift) in [
        (CoverKind::Thin, Split::TrainThin, 0u64),
        (CoverKind::Thick, Split::TrainThick, 1u64),
    ] {
        let target: Vec<_> = manifest
            .load_samples(split, cfg.normalize)?
            .into_iter()
            .map(|s| s.image)
            .collect();
        let mut train_cfg = cfg.cycaug.clone();
        train_cfg.seed = cfg.cycaug.seed.wrapping_add(seed_shift);
        let dir = layout.cycaug_dir(kind.as_str());
        std::fs::create_dir_all(&dir)?;

        println!("training {} translator: {} iterations", kind.as_str(), train_cfg.iterations);
        let seed = train_cfg.seed;
        let outcome = train_cyclegan_with(&source, &target, kind, &train_cfg, |epoch, g, f| {
            let gb = dir.join(format!("epoch_{epoch:04}_g"));
            let fb = dir.join(format!("epoch_{epoch:04}_f"));
            save_generator_checkpoint(&gb, g, seed, epoch, 0)?;
            save_generator_checkpoint(&fb, f, seed, epoch, 0)?;
            Ok(())
        })?;

        let iterations = outcome.history.len();
        save_generator_checkpoint(&layout.generator_base(kind.as_str()), &outcome.g, seed, 0, iterations)?;
        save_generator_checkpoint(&dir.join(format!("f_{}", kind.as_str())), &outcome.f, seed, 0, iterations)?;
        std::fs::write(dir.join("history.json"), serde_json::to_string_pretty(&outcome.history)?)?;
        let first = outcome.history.first().map(|p| p.total).unwrap_or(f64::NAN);
        let last = outcome.history.last().map(|p| p.total).unwrap_or(f64::NAN);
        println!("  total loss {first:.4} -> {last:.4}");
    }

    let mut inputs = BTreeMap::new();
    inputs.insert("dataset".into(), hash_tree(&dataset_dir)?);
    write_manifest(
        layout,
        "cycaug-train",
        cfg,
        inputs,
        vec![layout.cycaug_dir("thin").display().to_string(), layout.cycaug_dir("thick").display().to_string()],
    )?;
    Ok(())
}

// ---------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------

pub fn augment(cfg: &PipelineConfig, layout: &OutLayout) -> anyhow::Result<()> {
    let _lock = DirLock::acquire(layout)?;
    let dataset_dir = layout.dataset();
    require(&dataset_dir, "synth-gen")?;
    for kind in ["thin", "thick"] {
        require(&layout.generator_base(kind).with_extension("ckpt"), "cycaug-train")?;
    }
    let manifest = load_dataset(&dataset_dir)?;
    let source = manifest.load_samples(Split::TrainSource, cfg.normalize)?;

    let (g_thin, _) = load_generator_checkpoint(&layout.generator_base("thin"))?;
    let (g_thick, _) = load_generator_checkpoint(&layout.generator_base("thick"))?;

    // translated pools, labels carried over unchanged
    let mut translated: BTreeMap<&str, Vec<Sample>> = BTreeMap::new();
    for (pool, gen) in [("gen_thin", &g_thin), ("gen_thick", &g_thick)] {
        let images: Vec<_> = source.iter().map(|s| s.image.clone()).collect();
        let rendered = translate(gen, &images)?;
        let tag = if pool == "gen_thin" { DomainTag::GenThin } else { DomainTag::GenThick };
        let samples: Vec<Sample> = source
            .iter()
            .zip(rendered)
            .map(|(s, image)| Sample {
                image,
                keypoints: s.keypoints.clone(),
                domain: tag,
                subject_id: s.subject_id.clone(),
                frame_id: s.frame_id.clone(),
            })
            .collect();
        write_pool(&layout.augmented(pool), &samples)?;
        translated.insert(pool, samples);
    }

    // occlusion-heavy pool from the translated covers (alternating source)
    let thin_pool = &translated["gen_thin"];
    let thick_pool = &translated["gen_thick"];
    let mut extreme_samples = Vec::with_capacity(thin_pool.len());
    for (i, (a, b)) in thin_pool.iter().zip(thick_pool.iter()).enumerate() {
        let base = if i % 2 == 0 { a } else { b };
        let image = extreme_aug_indexed(&base.image, &cfg.extreme, i as u64)?;
        extreme_samples.push(Sample {
            image,
            keypoints: base.keypoints.clone(),
            domain: DomainTag::ExtremeAug,
            subject_id: base.subject_id.clone(),
            frame_id: base.frame_id.clone(),
        });
    }
    write_pool(&layout.augmented("extreme_aug"), &extreme_samples)?;

    println!(
        "augmented pools: gen_thin {}, gen_thick {}, extreme_aug {}",
        thin_pool.len(),
        thick_pool.len(),
        extreme_samples.len()
    );

    let mut inputs = BTreeMap::new();
    inputs.insert("dataset".into(), hash_tree(&dataset_dir)?);
    for kind in ["thin", "thick"] {
        inputs.insert(
            format!("generator_{kind}"),
            fnv_file(&layout.generator_base(kind).with_extension("ckpt"))?,
        );
    }
    write_manifest(
        layout,
        "augment",
        cfg,
        inputs,
        vec![layout.augmented("gen_thin").display().to_string(),
             layout.augmented("gen_thick").display().to_string(),
             layout.augmented("extreme_aug").display().to_string()],
    )?;
    Ok(())
}

fn write_pool(dir: &Path, samples: &[Sample]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut by_subject: BTreeMap<&str, Vec<&Sample>> = BTreeMap::new();
    for s in samples {
        by_subject.entry(&s.subject_id).or_default().push(s);
    }
    for (subject, frames) in by_subject {
        let sdir = dir.join(subject);
        std::fs::create_dir_all(&sdir)?;
        let mut jf = JointsFile::default();
        for s in frames {
            save_gray_png8(&s.image, &sdir.join(&s.frame_id))?;
            let kps = s.keypoints.as_ref().expect("augmented pools are labeled");
            jf.frames.insert(s.frame_id.clone(), FrameLabel::labeled(kps, Some(s.domain.as_str().into())));
        }
        jf.write(&sdir.join("joints.json"))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------
// pose-train
// ---------------------------------------------------------------------

/// Which augmentation rows enter training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum VariantSet {
    /// Uncovered source frames only.
    Source,
    /// Source + translated covers.
    Cycaug,
    /// Source + translated covers + occlusion-heavy frames.
    CycaugExtreme,
}

impl VariantSet {
    pub fn default_label(self) -> &'static str {
        match self {
            VariantSet::Source => "source_only",
            VariantSet::Cycaug => "cycaug",
            VariantSet::CycaugExtreme => "cycaug_extreme",
        }
    }

    fn mix(self) -> MixWeights {
        match self {
            VariantSet::Source => MixWeights::source_only(),
            VariantSet::Cycaug => MixWeights {
                source: 1.0 / 3.0,
                gen_thin: 1.0 / 3.0,
                gen_thick: 1.0 / 3.0,
                extreme: 0.0,
            },
            VariantSet::CycaugExtreme => MixWeights::default(),
        }
    }
}

pub fn pose_train(
    cfg: &PipelineConfig,
    layout: &OutLayout,
    variants: VariantSet,
    label: &str,
) -> anyhow::Result<()> {
    let _lock = DirLock::acquire(layout)?;
    let dataset_dir = layout.dataset();
    require(&dataset_dir, "synth-gen")?;
    let manifest = load_dataset(&dataset_dir)?;
    let mut train = manifest.load_samples(Split::TrainSource, cfg.normalize)?;

    let mut inputs = BTreeMap::new();
    inputs.insert("dataset".into(), hash_tree(&dataset_dir)?);

    if variants != VariantSet::Source {
        let mut pools = vec![
            ("gen_thin", DomainTag::GenThin),
            ("gen_thick", DomainTag::GenThick),
        ];
        if variants == VariantSet::CycaugExtreme {
            pools.push(("extreme_aug", DomainTag::ExtremeAug));
        }
        for (pool, tag) in pools {
            let dir = layout.augmented(pool);
            require(&dir, "augment")?;
            train.extend(load_labeled_pool(&dir, tag, cfg.normalize)?);
            inputs.insert(format!("pool_{pool}"), hash_tree(&dir)?);
        }
    }

    // hold out ~10% of source subjects (at least one) for validation
    let mut subjects: Vec<String> = manifest
        .subjects(Split::TrainSource)
        .iter()
        .map(|s| s.subject_id.clone())
        .collect();
    subjects.sort();
    let n_val = (subjects.len() / 10).max(1);
    let val_subjects: Vec<String> = subjects[subjects.len() - n_val..].to_vec();
    let (train, val): (Vec<Sample>, Vec<Sample>) = train
        .into_iter()
        .partition(|s| !val_subjects.contains(&s.subject_id));
    let val: Vec<Sample> = val
        .into_iter()
        .filter(|s| s.domain == DomainTag::SourceUncover)
        .collect();

    let mut train_cfg = cfg.pose_train.clone();
    train_cfg.mix = variants.mix();
    train_cfg.val_threshold = cfg.eval_threshold;

    let mut net = PoseNet::new(&cfg.pose_net, cfg.seed)?;
    println!(
        "training pose net ({label}): {} samples, {} val, {} params",
        train.len(),
        val.len(),
        net.param_count()
    );
    let outcome = train_pose(&mut net, &train, &train_cfg, &val)?;
    println!(
        "  best epoch {} val PCKh {:.2}",
        outcome.best_epoch, outcome.best_val_pckh
    );

    let base = layout.pose_base(label);
    save_pose_checkpoint(
        &base,
        &net,
        train_cfg.seed,
        outcome.best_epoch,
        json!({
            "val_pckh": outcome.best_val_pckh,
            "variants": label,
            "config_hash": thermopose::data::hash_config(&cfg.pose_net),
        }),
    )?;
    std::fs::write(
        layout.pose_base(&format!("{label}_log")).with_extension("json"),
        serde_json::to_string_pretty(&outcome.log)?,
    )?;
    write_manifest(layout, &format!("pose-train-{label}"), cfg, inputs, vec![base.display().to_string()])?;
    Ok(())
}

// ---------------------------------------------------------------------
// distill
// ---------------------------------------------------------------------

pub fn distill_stage(cfg: &PipelineConfig, layout: &OutLayout, teacher_base: &Path) -> anyhow::Result<()> {
    let _lock = DirLock::acquire(layout)?;
    require(&teacher_base.with_extension("ckpt"), "pose-train")?;
    let dataset_dir = layout.dataset();
    require(&dataset_dir, "synth-gen")?;

    let (teacher, _meta) = load_pose_checkpoint(teacher_base)?;
    let manifest = load_dataset(&dataset_dir)?;
    let mut targets = manifest.load_samples(Split::TrainThin, cfg.normalize)?;
    targets.extend(manifest.load_samples(Split::TrainThick, cfg.normalize)?);

    println!("distilling on {} unlabeled covered frames", targets.len());
    let outcome = distill(&teacher, &targets, &cfg.distill)?;
    println!(
        "  kd loss {:.6} -> {:.6}, teacher hash stable: {}",
        outcome.log.first().map(|e| e.mean_kd_loss).unwrap_or(f64::NAN),
        outcome.log.last().map(|e| e.mean_kd_loss).unwrap_or(f64::NAN),
        outcome.teacher_hash.0 == outcome.teacher_hash.1
    );

    let base = layout.distill_base();
    save_pose_checkpoint(
        &base,
        &outcome.student,
        cfg.distill.seed,
        cfg.distill.epochs,
        json!({"teacher": teacher_base.display().to_string()}),
    )?;
    std::fs::write(
        base.with_file_name("distill_log.json"),
        serde_json::to_string_pretty(&outcome.log)?,
    )?;

    let mut inputs = BTreeMap::new();
    inputs.insert("teacher".into(), fnv_file(&teacher_base.with_extension("ckpt"))?);
    inputs.insert("dataset".into(), hash_tree(&dataset_dir)?);
    write_manifest(layout, "distill", cfg, inputs, vec![base.display().to_string()])?;
    Ok(())
}

// ---------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------

/// On-disk report schema (the spec'd external interface plus the sweep
/// used for threshold curves).
#[derive(Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub method: String,
    /// Row position in the ablation table.
    pub order: usize,
    pub backbone: String,
    pub threshold: f64,
    pub aggregate: f64,
    pub per_joint: Vec<f64>,
    pub per_domain: BTreeMap<String, f64>,
    pub n_samples: usize,
    pub excluded: usize,
    /// (threshold, aggregate) pairs for the PCKh-vs-threshold curve.
    pub sweep: Vec<(f64, f64)>,
}

impl ReportFile {
    pub fn to_pckh_report(&self) -> PCKhReport {
        PCKhReport {
            per_joint: self.per_joint.clone(),
            aggregate: self.aggregate,
            threshold: self.threshold,
            n_samples: self.n_samples,
            excluded: self.excluded,
            counted_joints: 0,
            per_domain: self
                .per_domain
                .iter()
                .map(|(k, v)| {
                    let tag = match k.as_str() {
                        "thin" => DomainTag::TargetThin.as_str().to_string(),
                        "thick" => DomainTag::TargetThick.as_str().to_string(),
                        other => other.to_string(),
                    };
                    (tag, *v)
                })
                .collect(),
        }
    }
}

pub fn eval_stage(
    cfg: &PipelineConfig,
    layout: &OutLayout,
    ckpt_base: &Path,
    label: &str,
    order: usize,
) -> anyhow::Result<()> {
    let _lock = DirLock::acquire(layout)?;
    require(&ckpt_base.with_extension("ckpt"), "pose-train (or distill)")?;
    let dataset_dir = layout.dataset();
    require(&dataset_dir, "synth-gen")?;

    let (net, _meta) = load_pose_checkpoint(ckpt_base)?;
    let manifest = load_dataset(&dataset_dir)?;
    let test = manifest.load_samples(Split::Test, cfg.normalize)?;

    let report = evaluate_model(&net, &test, cfg.eval_threshold)?;
    let sweep: Vec<(f64, f64)> = [0.1, 0.2, 0.3, 0.4, 0.5, 0.75, 1.0, 1.5, 2.0]
        .iter()
        .map(|&t| evaluate_model(&net, &test, t).map(|r| (t, r.aggregate)))
        .collect::<Result<_, _>>()?;

    let file = ReportFile {
        method: label.into(),
        order,
        backbone: format!("{:?}", net.cfg.backbone),
        threshold: cfg.eval_threshold,
        aggregate: report.aggregate,
        per_joint: report.per_joint.clone(),
        per_domain: report
            .per_domain
            .iter()
            .map(|(k, v)| {
                let short = match k.as_str() {
                    "target_thin" => "thin".to_string(),
                    "target_thick" => "thick".to_string(),
                    other => other.to_string(),
                };
                (short, *v)
            })
            .collect(),
        n_samples: report.n_samples,
        excluded: report.excluded,
        sweep,
    };

    std::fs::create_dir_all(layout.eval_dir())?;
    std::fs::write(layout.report_json(label), serde_json::to_string_pretty(&file)?)?;
    let text = format!(
        "method: {label}\nPCKh@{:.2} = {:.2} over {} samples ({} excluded)\n\n{}",
        cfg.eval_threshold,
        report.aggregate,
        report.n_samples,
        report.excluded,
        render_per_joint(&report)
    );
    std::fs::write(layout.eval_dir().join(format!("{label}.report.txt")), &text)?;
    println!("{label}: PCKh@{:.2} = {:.2}", cfg.eval_threshold, report.aggregate);

    rebuild_table(layout)?;

    let mut inputs = BTreeMap::new();
    inputs.insert("checkpoint".into(), fnv_file(&ckpt_base.with_extension("ckpt"))?);
    inputs.insert("dataset".into(), hash_tree(&dataset_dir)?);
    write_manifest(
        layout,
        &format!("eval-{label}"),
        cfg,
        inputs,
        vec![layout.report_json(label).display().to_string()],
    )?;
    Ok(())
}

/// Reads every report in the eval dir and rewrites the ablation table.
pub fn rebuild_table(layout: &OutLayout) -> anyhow::Result<Vec<ReportFile>> {
    let mut reports = load_reports(layout)?;
    reports.sort_by_key(|r| r.order);
    let pckh: Vec<(String, PCKhReport)> = reports
        .iter()
        .map(|r| (r.method.clone(), r.to_pckh_report()))
        .collect();
    let rows: Vec<(String, &PCKhReport)> = pckh.iter().map(|(m, r)| (m.clone(), r)).collect();
    let table = render_table(&rows);
    std::fs::write(layout.eval_dir().join("ablation_table.txt"), &table)?;
    Ok(reports)
}

pub fn load_reports(layout: &OutLayout) -> anyhow::Result<Vec<ReportFile>> {
    let dir = layout.eval_dir();
    let mut reports = Vec::new();
    if dir.is_dir() {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".report.json"))
            .collect();
        paths.sort();
        for p in paths {
            let text = std::fs::read_to_string(&p)?;
            reports.push(serde_json::from_str(&text)?);
        }
    }
    Ok(reports)
}

// ---------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------

pub fn plot_stage(cfg: &PipelineConfig, layout: &OutLayout) -> anyhow::Result<()> {
    let _lock = DirLock::acquire(layout)?;
    let mut reports = load_reports(layout)?;
    if reports.is_empty() {
        return Err(Error::invalid("no evaluation reports found; run eval first").into());
    }
    reports.sort_by_key(|r| r.order);
    std::fs::create_dir_all(layout.plots_dir())?;
    let files = crate::plots::emit_plots(&reports, &layout.plots_dir())?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    let mut inputs = BTreeMap::new();
    for r in &reports {
        inputs.insert(format!("report_{}", r.method), fnv_file(&layout.report_json(&r.method))?);
    }
    write_manifest(
        layout,
        "plot",
        cfg,
        inputs,
        files.iter().map(|f| f.display().to_string()).collect(),
    )?;
    Ok(())
}
