//! Stage orchestration: each command loads its upstream artifacts, runs the
//! corresponding library operation, and writes its outputs plus a
//! `<stage>.stage.json` log carrying the seed, the config hash, the dataset
//! hash, loss curves, wall time and artifact hashes.
//!
//! A stage whose log and artifact hashes match the current config is
//! "complete": rerunning with `--resume` is a no-op, rerunning without
//! flags is refused, and `--force` redoes it from scratch.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};

use adaseg_core::data::{
    read_label_map, read_volume, write_label_map, znorm, CaseRecord, DatasetIndex, Split,
};
use adaseg_core::dualnorm::{DomainSet, DualDomainSegNet, SegNetConfig, SegTrainConfig, TrainCase};
use adaseg_core::jointtrain::{infer, init_segmentor_from_generator, train_final_segmentor, JointTrainConfig};
use adaseg_core::metrics::{assd, dice_score};
use adaseg_core::pseudolabel::{build_records, load_record, save_record, train_generator, FilterConfig};
use adaseg_core::seeds::{stream_rng, substream_seed};
use adaseg_core::translate::{
    cdda_augment, load_translator_set, save_translator_set, train_cyclegan, train::slice_pool, CycleGanConfig,
};
use adaseg_core::volume::{DomainTag, LabelMap, Volume3D};
use adaseg_core::Error as CoreError;

use crate::config::PipelineConfig;
use crate::hash::{fnv1a, hash_file, hash_stem};
use crate::paths::Layout;
use crate::report::{write_dice_plot_svg, write_metrics_csv, MetricRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    Skipped,
}

#[derive(Debug, Clone)]
pub struct StageContext {
    pub layout: Layout,
    pub config: PipelineConfig,
    pub resume: bool,
    pub force: bool,
}

impl StageContext {
    pub fn new(workdir: &Path, config: PipelineConfig, resume: bool, force: bool) -> Self {
        Self {
            layout: Layout::new(workdir),
            config,
            resume,
            force,
        }
    }

    fn config_hash(&self) -> String {
        format!("{:016x}", fnv1a(self.config.to_toml().as_bytes()))
    }

    fn dataset_hash(&self) -> anyhow::Result<String> {
        let index_path = self.layout.index_path();
        let bytes = std::fs::read(&index_path).map_err(|_| CoreError::MissingStage {
            stage: "synth".into(),
            path: index_path.clone(),
        })?;
        let mut combined = fnv1a(&bytes).to_le_bytes().to_vec();
        let index = DatasetIndex::load(&index_path)?;
        for record in &index.records {
            combined.extend_from_slice(&hash_stem(&record.volume)?.to_le_bytes());
            if let Some(label) = &record.label {
                combined.extend_from_slice(&hash_stem(label)?.to_le_bytes());
            }
        }
        Ok(format!("{:016x}", fnv1a(&combined)))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: String,
    pub seed: u64,
    pub config_hash: String,
    pub dataset_hash: Option<String>,
    pub wall_time_s: f64,
    pub losses: serde_json::Value,
    pub artifacts: Vec<ArtifactHash>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ArtifactHash {
    pub path: PathBuf,
    pub hash: String,
}

fn hash_artifacts(paths: &[PathBuf]) -> anyhow::Result<Vec<ArtifactHash>> {
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        out.push(ArtifactHash {
            path: p.clone(),
            hash: format!("{:016x}", hash_file(p)?),
        });
    }
    Ok(out)
}

fn stage_complete(ctx: &StageContext, name: &str) -> bool {
    let log_path = ctx.layout.stage_log(name);
    let Ok(bytes) = std::fs::read(&log_path) else {
        return false;
    };
    let Ok(log) = serde_json::from_slice::<StageLog>(&bytes) else {
        return false;
    };
    if log.config_hash != ctx.config_hash() {
        return false;
    }
    log.artifacts.iter().all(|a| {
        hash_file(&a.path)
            .map(|h| format!("{h:016x}") == a.hash)
            .unwrap_or(false)
    })
}

/// Stage driver: resume/force policy, timing, artifact hashing, logging.
fn drive_stage(
    ctx: &StageContext,
    name: &str,
    dataset_hash: Option<String>,
    body: impl FnOnce() -> anyhow::Result<(serde_json::Value, Vec<PathBuf>)>,
) -> anyhow::Result<StageOutcome> {
    let log_path = ctx.layout.stage_log(name);
    if stage_complete(ctx, name) {
        if ctx.resume {
            println!("[{name}] complete, skipping (--resume)");
            return Ok(StageOutcome::Skipped);
        }
        if !ctx.force {
            bail!("stage `{name}` already complete in {}; pass --resume to skip or --force to redo", ctx.layout.workdir.display());
        }
    } else if log_path.exists() && !ctx.force && !ctx.resume {
        bail!("stage `{name}` has stale artifacts; pass --force to redo");
    }
    println!("[{name}] running (seed {})", ctx.config.seed);
    let start = Instant::now();
    let (losses, artifacts) = body().with_context(|| format!("stage `{name}`"))?;
    let log = StageLog {
        stage: name.to_string(),
        seed: ctx.config.seed,
        config_hash: ctx.config_hash(),
        dataset_hash,
        wall_time_s: start.elapsed().as_secs_f64(),
        losses,
        artifacts: hash_artifacts(&artifacts)?,
    };
    std::fs::create_dir_all(ctx.layout.logs_dir())?;
    std::fs::write(&log_path, serde_json::to_string_pretty(&log)?)?;
    println!("[{name}] done in {:.1}s ({} artifacts)", log.wall_time_s, log.artifacts.len());
    Ok(StageOutcome::Ran)
}

fn read_stage_log(layout: &Layout, name: &str) -> anyhow::Result<StageLog> {
    let path = layout.stage_log(name);
    let bytes = std::fs::read(&path).map_err(|_| CoreError::MissingStage {
        stage: name.into(),
        path: path.clone(),
    })?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn stem_files(stem: &Path) -> [PathBuf; 2] {
    let mut json = stem.as_os_str().to_owned();
    json.push(".json");
    let mut raw = stem.as_os_str().to_owned();
    raw.push(".raw");
    [PathBuf::from(json), PathBuf::from(raw)]
}

fn parse_split(s: &str) -> anyhow::Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => bail!("unknown split `{other}` (expected train|val|test)"),
    }
}

fn load_index(ctx: &StageContext) -> anyhow::Result<DatasetIndex> {
    let path = ctx.layout.index_path();
    if !path.exists() {
        return Err(CoreError::MissingStage {
            stage: "synth".into(),
            path,
        }
        .into());
    }
    Ok(DatasetIndex::load(&path)?)
}

/// Loads a case volume with per-volume intensity normalization, the way
/// every network input is prepared.
fn load_normalized(stem: &Path) -> anyhow::Result<Volume3D<f32>> {
    Ok(znorm(&read_volume(stem)?))
}

fn load_labeled_cases(records: &[&CaseRecord], num_classes: usize) -> anyhow::Result<Vec<TrainCase>> {
    records
        .iter()
        .map(|r| {
            let label_stem = r
                .label
                .as_ref()
                .ok_or_else(|| anyhow!("case `{}` has no label", r.case_id))?;
            Ok(TrainCase {
                case_id: r.case_id.clone(),
                volume: load_normalized(&r.volume)?,
                labels: read_label_map(label_stem, Some(num_classes))?,
                weights: None,
            })
        })
        .collect()
}

// ------------------------------------------------------------------ stages

pub fn cmd_synth(ctx: &StageContext) -> anyhow::Result<StageOutcome> {
    let dataset_dir = ctx.layout.dataset_dir();
    if dataset_dir.exists()
        && std::fs::read_dir(&dataset_dir)?.next().is_some()
        && !ctx.force
        && !stage_complete(ctx, "synth")
    {
        bail!(
            "output directory {} is not empty; pass --force to overwrite",
            dataset_dir.display()
        );
    }
    drive_stage(ctx, "synth", None, || {
        if ctx.force && dataset_dir.exists() {
            std::fs::remove_dir_all(&dataset_dir)?;
        }
        let spec = ctx
            .config
            .stage
            .synth
            .to_spec(substream_seed(ctx.config.seed, "synth"));
        let index = adaseg_core::data::generate_synthetic(&spec, &dataset_dir)?;
        index.save(&ctx.layout.index_path())?;
        let mut artifacts = vec![ctx.layout.index_path()];
        for r in &index.records {
            artifacts.extend(stem_files(&r.volume));
            if let Some(l) = &r.label {
                artifacts.extend(stem_files(l));
            }
        }
        // Ground-truth labels exist on disk for target-train cases too,
        // even though the index hides them from training.
        for r in index.records.iter().filter(|r| r.label.is_none()) {
            artifacts.extend(stem_files(&adaseg_core::data::synth::ground_truth_stem(
                &dataset_dir,
                &r.case_id,
            )));
        }
        let losses = serde_json::json!({
            "cases": index.records.len(),
            "train_per_domain": spec.train_per_domain,
        });
        Ok((losses, artifacts))
    })
}

pub fn cmd_translate(ctx: &StageContext) -> anyhow::Result<StageOutcome> {
    let dataset_hash = ctx.dataset_hash()?;
    drive_stage(ctx, "translate", Some(dataset_hash), || {
        let index = load_index(ctx)?;
        let source_train = index.select(DomainTag::Source, Split::Train);
        let target_train = index.select(DomainTag::Target, Split::Train);
        if source_train.is_empty() || target_train.is_empty() {
            bail!("translate needs non-empty source and target training sets");
        }
        let src_volumes: Vec<_> = source_train
            .iter()
            .map(|r| load_normalized(&r.volume))
            .collect::<anyhow::Result<_>>()?;
        let tgt_volumes: Vec<_> = target_train
            .iter()
            .map(|r| load_normalized(&r.volume))
            .collect::<anyhow::Result<_>>()?;
        let (src_pool, hw) = slice_pool(&src_volumes)?;
        let (tgt_pool, _) = slice_pool(&tgt_volumes)?;

        let tc = &ctx.config.stage.translate;
        let gan_cfg = CycleGanConfig {
            epochs: tc.epochs,
            lambda_cyc: tc.lambda_cyc,
            lr: tc.lr,
            batch_slices: tc.batch_slices,
            steps_per_epoch: tc.steps_per_epoch,
            translator_width: tc.translator_width,
            discriminator_width: tc.discriminator_width,
            variant: tc.gan,
            d_lr_scale: tc.d_lr_scale,
            d_every: tc.d_every,
        };
        let mut rng = stream_rng(ctx.config.seed, "translate");
        let (set, history) = train_cyclegan(&src_pool, &tgt_pool, hw, &gan_cfg, &mut rng)?;
        for h in &history {
            println!(
                "[translate] epoch {:>3}: d {:.4}  g_adv {:.4}  cycle {:.4}",
                h.epoch, h.d_loss, h.g_adv, h.cycle
            );
        }
        let translate_dir = ctx.layout.translate_dir();
        save_translator_set(&set, &translate_dir)?;

        let source_owned: Vec<CaseRecord> = source_train.into_iter().cloned().collect();
        let augmented = cdda_augment(&source_owned, &set, &ctx.layout.augmented_dir())?;
        save_record_list(&augmented.ss, &ctx.layout.index_ss_path())?;
        save_record_list(&augmented.st, &ctx.layout.index_st_path())?;

        let mut artifacts = vec![ctx.layout.index_ss_path(), ctx.layout.index_st_path()];
        for stem in ["t_s", "t_t", "t_at", "d_s", "d_t"] {
            artifacts.extend(stem_files(&translate_dir.join(stem)));
        }
        for r in augmented.ss.iter().chain(&augmented.st) {
            // Originals in ss live in the dataset dir and are synth artifacts.
            if r.volume.starts_with(ctx.layout.augmented_dir()) {
                artifacts.extend(stem_files(&r.volume));
            }
        }
        let losses = serde_json::json!({
            "epochs": history,
            "t_at_epoch": set.t_at_epoch,
            "ss_cases": augmented.ss.len(),
            "st_cases": augmented.st.len(),
        });
        Ok((losses, artifacts))
    })
}

fn save_record_list(records: &[CaseRecord], path: &Path) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(records)?)?;
    Ok(())
}

fn load_record_list(path: &Path, upstream: &str) -> anyhow::Result<Vec<CaseRecord>> {
    let bytes = std::fs::read(path).map_err(|_| CoreError::MissingStage {
        stage: upstream.into(),
        path: path.to_path_buf(),
    })?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn cmd_train_generator(ctx: &StageContext) -> anyhow::Result<StageOutcome> {
    let dataset_hash = ctx.dataset_hash()?;
    drive_stage(ctx, "train-generator", Some(dataset_hash), || {
        let ss_records = load_record_list(&ctx.layout.index_ss_path(), "translate")?;
        let st_records = load_record_list(&ctx.layout.index_st_path(), "translate")?;
        let num_classes = ctx.config.num_classes;
        let ss = DomainSet {
            domain: DomainTag::Source,
            cases: load_labeled_cases(&ss_records.iter().collect::<Vec<_>>(), num_classes)?,
        };
        let st = DomainSet {
            domain: DomainTag::Target,
            cases: load_labeled_cases(&st_records.iter().collect::<Vec<_>>(), num_classes)?,
        };
        let gc = &ctx.config.stage.train_generator;
        let net_cfg = SegNetConfig {
            in_channels: 1,
            base_width: gc.base_width,
            num_classes,
            dropout_rate: gc.dropout_rate,
        };
        let train_cfg = SegTrainConfig {
            epochs: gc.epochs,
            lr: gc.lr,
            batch_per_domain: gc.batch_per_domain,
            patch: ctx.config.patch(),
        };
        let mut rng = stream_rng(ctx.config.seed, "train-generator");
        let (net, history) = train_generator(&ss, &st, net_cfg, &train_cfg, &mut rng)?;
        for h in &history {
            println!(
                "[train-generator] epoch {:>3}: source {:.4}  target {:.4}  total {:.4}",
                h.epoch, h.term_a, h.term_b, h.total
            );
        }
        net.save(&ctx.layout.generator_stem())?;
        let artifacts = stem_files(&ctx.layout.generator_stem()).to_vec();
        Ok((serde_json::json!({ "epochs": history }), artifacts))
    })
}

pub fn cmd_build_records(ctx: &StageContext) -> anyhow::Result<StageOutcome> {
    let dataset_hash = ctx.dataset_hash()?;
    drive_stage(ctx, "build-records", Some(dataset_hash), || {
        let index = load_index(ctx)?;
        let generator_stem = ctx.layout.generator_stem();
        if !stem_files(&generator_stem)[0].exists() {
            return Err(CoreError::MissingStage {
                stage: "train-generator".into(),
                path: generator_stem,
            }
            .into());
        }
        let generator = DualDomainSegNet::<f32>::load(&generator_stem)?;
        let set = load_translator_set::<f32>(&ctx.layout.translate_dir())?;
        let target_train = index.select(DomainTag::Target, Split::Train);
        if target_train.is_empty() {
            bail!("build-records needs target training cases");
        }
        let mut cases = Vec::with_capacity(target_train.len());
        let mut spacing = (1.0f32, 1.0, 1.0);
        for r in &target_train {
            let v = load_normalized(&r.volume)?;
            spacing = v.spacing();
            cases.push((r.case_id.clone(), v));
        }
        let rc = &ctx.config.stage.build_records;
        let filter_cfg = FilterConfig { k: rc.k, e: rc.e };
        let records = build_records(
            &cases,
            &generator,
            &set.t_s,
            &filter_cfg,
            ctx.config.patch(),
            substream_seed(ctx.config.seed, "build-records"),
        )?;
        let records_dir = ctx.layout.records_dir();
        let mut artifacts = Vec::new();
        let mut summary = Vec::new();
        for record in &records {
            save_record(record, &records_dir, spacing, &filter_cfg)?;
            let dir = adaseg_core::pseudolabel::record_dir(&records_dir, &record.case_id);
            artifacts.push(dir.join("meta.json"));
            artifacts.extend(stem_files(&dir.join("pseudo_label")));
            artifacts.extend(stem_files(&dir.join("A")));
            for c in 0..ctx.config.num_classes {
                artifacts.extend(stem_files(&dir.join(format!("pbar_c{c}"))));
            }
            println!(
                "[build-records] {}: v {:.4}  eta {}  u {:.6}  w {:.4}",
                record.case_id, record.v, record.eta, record.u, record.w
            );
            summary.push(serde_json::json!({
                "case_id": record.case_id,
                "v": record.v,
                "eta": record.eta,
                "u": record.u,
                "w": record.w,
            }));
        }
        Ok((serde_json::json!({ "records": summary }), artifacts))
    })
}

pub fn cmd_train_segmentor(ctx: &StageContext) -> anyhow::Result<StageOutcome> {
    let dataset_hash = ctx.dataset_hash()?;
    drive_stage(ctx, "train-segmentor", Some(dataset_hash), || {
        let index = load_index(ctx)?;
        let num_classes = ctx.config.num_classes;
        let source = DomainSet {
            domain: DomainTag::Source,
            cases: load_labeled_cases(&index.select(DomainTag::Source, Split::Train), num_classes)?,
        };
        let target_train = index.select(DomainTag::Target, Split::Train);
        let mut target_cases = Vec::with_capacity(target_train.len());
        for r in &target_train {
            let stored = load_record(&ctx.layout.records_dir(), &r.case_id, num_classes)?;
            target_cases.push(TrainCase {
                case_id: r.case_id.clone(),
                volume: load_normalized(&r.volume)?,
                labels: stored.pseudo_label,
                weights: Some(stored.combined),
            });
        }
        let target = DomainSet {
            domain: DomainTag::Target,
            cases: target_cases,
        };

        let sc = &ctx.config.stage.train_segmentor;
        let gc = &ctx.config.stage.train_generator;
        let net_cfg = SegNetConfig {
            in_channels: 1,
            base_width: gc.base_width,
            num_classes,
            dropout_rate: gc.dropout_rate,
        };
        let joint_cfg = JointTrainConfig {
            epochs: ctx.config.segmentor_epochs(),
            lr: sc.lr,
            batch_per_domain: sc.batch_per_domain,
            patch: ctx.config.patch().into(),
            init_from_generator: sc.init_from_generator,
        };
        joint_cfg.validate_against_generator(gc.epochs)?;
        let mut rng = stream_rng(ctx.config.seed, "train-segmentor");
        let mut segmentor = if sc.init_from_generator {
            init_segmentor_from_generator(&ctx.layout.generator_stem(), &net_cfg)?
        } else {
            DualDomainSegNet::<f32>::new(net_cfg, &mut rng)
        };
        let history = train_final_segmentor(&mut segmentor, &source, &target, &joint_cfg, &mut rng)?;
        for h in &history {
            println!(
                "[train-segmentor] epoch {:>3}: source {:.4}  target {:.4}  total {:.4}",
                h.epoch, h.term_a, h.term_b, h.total
            );
        }
        segmentor.save(&ctx.layout.segmentor_stem())?;
        let artifacts = stem_files(&ctx.layout.segmentor_stem()).to_vec();
        Ok((serde_json::json!({ "epochs": history }), artifacts))
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CaseReport {
    case_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    dice: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    assd_mm: Option<f64>,
}

/// Mean over foreground classes.
fn foreground_mean(
    pred: &LabelMap,
    gt: &LabelMap,
    spacing: (f32, f32, f32),
) -> anyhow::Result<(f64, f64)> {
    let c = pred.num_classes();
    let mut dice_sum = 0.0;
    let mut assd_sum = 0.0;
    for class in 1..c {
        dice_sum += dice_score(pred, gt, class)?;
        assd_sum += assd(pred, gt, class, spacing)?;
    }
    let fg = (c - 1) as f64;
    Ok((dice_sum / fg, assd_sum / fg))
}

pub fn cmd_infer(ctx: &StageContext) -> anyhow::Result<StageOutcome> {
    let dataset_hash = ctx.dataset_hash()?;
    drive_stage(ctx, "infer", Some(dataset_hash), || {
        let segmentor_stem = ctx.layout.segmentor_stem();
        if !stem_files(&segmentor_stem)[0].exists() {
            return Err(CoreError::MissingStage {
                stage: "train-segmentor".into(),
                path: segmentor_stem,
            }
            .into());
        }
        let net = DualDomainSegNet::<f32>::load(&segmentor_stem)?;
        let index = load_index(ctx)?;
        let split = parse_split(&ctx.config.stage.infer.split)?;
        let cases = index.select(DomainTag::Target, split);
        if cases.is_empty() {
            bail!("no target cases in split `{}`", ctx.config.stage.infer.split);
        }
        let infer_dir = ctx.layout.infer_dir();
        std::fs::create_dir_all(&infer_dir)?;
        let mut artifacts = Vec::new();
        for r in cases {
            let volume = load_normalized(&r.volume)?;
            let prediction = infer(&net, &volume, ctx.config.patch())?;
            let pred_stem = infer_dir.join(format!("{}_pred", r.case_id));
            write_label_map(&prediction, volume.spacing(), &pred_stem)?;
            let report = if let Some(label_stem) = &r.label {
                let gt = read_label_map(label_stem, Some(ctx.config.num_classes))?;
                let (dice, assd_mm) = foreground_mean(&prediction, &gt, volume.spacing())?;
                println!("[infer] {}: dice {dice:.4}  assd {assd_mm:.3} mm", r.case_id);
                CaseReport {
                    case_id: r.case_id.clone(),
                    dice: Some(dice),
                    assd_mm: Some(assd_mm),
                }
            } else {
                CaseReport {
                    case_id: r.case_id.clone(),
                    dice: None,
                    assd_mm: None,
                }
            };
            let report_path = infer_dir.join(format!("{}.json", r.case_id));
            std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
            artifacts.extend(stem_files(&pred_stem));
            artifacts.push(report_path);
        }
        Ok((serde_json::json!({ "cases": artifacts.len() / 3 }), artifacts))
    })
}

pub fn cmd_eval(ctx: &StageContext) -> anyhow::Result<StageOutcome> {
    let dataset_hash = ctx.dataset_hash()?;
    // Refuse to compare runs across different datasets.
    let infer_log = read_stage_log(&ctx.layout, "infer")?;
    if infer_log.dataset_hash.as_deref() != Some(dataset_hash.as_str()) {
        bail!(
            "dataset hash mismatch: infer ran on {:?}, current dataset is {}",
            infer_log.dataset_hash,
            dataset_hash
        );
    }
    drive_stage(ctx, "eval", Some(dataset_hash), || {
        let index = load_index(ctx)?;
        let split = parse_split(&ctx.config.stage.eval.split)?;
        let cases = index.select(DomainTag::Target, split);
        let num_classes = ctx.config.num_classes;
        let mut rows = Vec::new();
        let mut per_case_fg = Vec::new();
        let mut class_sums = vec![(0.0f64, 0.0f64); num_classes];
        let mut counted = 0usize;
        for r in &cases {
            let label_stem = r
                .label
                .as_ref()
                .ok_or_else(|| anyhow!("eval split case `{}` has no ground truth", r.case_id))?;
            let gt = read_label_map(label_stem, Some(num_classes))?;
            let pred_stem = ctx.layout.infer_dir().join(format!("{}_pred", r.case_id));
            if !stem_files(&pred_stem)[0].exists() {
                return Err(CoreError::MissingStage {
                    stage: "infer".into(),
                    path: pred_stem,
                }
                .into());
            }
            let pred = read_label_map(&pred_stem, Some(num_classes))?;
            let spacing = read_volume(&r.volume)?.spacing();
            let mut fg_dice = 0.0;
            for class in 1..num_classes {
                let d = dice_score(&pred, &gt, class)?;
                let a = assd(&pred, &gt, class, spacing)?;
                rows.push(MetricRow {
                    case_id: r.case_id.clone(),
                    class,
                    dice: d,
                    assd_mm: a,
                });
                class_sums[class].0 += d;
                class_sums[class].1 += a;
                fg_dice += d;
            }
            per_case_fg.push((r.case_id.clone(), fg_dice / (num_classes - 1) as f64));
            counted += 1;
        }
        if counted == 0 {
            bail!("no evaluable cases in split `{}`", ctx.config.stage.eval.split);
        }
        for class in 1..num_classes {
            rows.push(MetricRow {
                case_id: "mean".into(),
                class,
                dice: class_sums[class].0 / counted as f64,
                assd_mm: class_sums[class].1 / counted as f64,
            });
        }
        let eval_dir = ctx.layout.eval_dir();
        let csv_path = eval_dir.join("metrics.csv");
        let svg_path = eval_dir.join("dice_plot.svg");
        write_metrics_csv(&rows, &csv_path)?;
        write_dice_plot_svg(&per_case_fg, &svg_path)?;
        let mean_fg: f64 = per_case_fg.iter().map(|(_, d)| d).sum::<f64>() / counted as f64;
        println!("[eval] cohort mean foreground dice {mean_fg:.4} over {counted} cases");
        let losses = serde_json::json!({
            "mean_foreground_dice": mean_fg,
            "cases": counted,
        });
        Ok((losses, vec![csv_path, svg_path]))
    })
}
