//! Per-case pseudo-label records: built once after the generator is
//! trained, persisted to disk, and immutable afterwards.

use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::format::{read_label_map, read_volume, write_label_map, write_volume};
use crate::dualnorm::{mc_dropout_predict, predict_volume, DualDomainSegNet};
use crate::error::{Error, Result};
use crate::seeds::stream_rng;
use crate::translate::nets::SliceTranslator;
use crate::translate::translate_volume;
use crate::volume::{Dims, DomainTag, LabelMap, ProbabilityMap, Volume3D, WeightMap};

use super::filter::{
    combined_weight_map, consensus_map, image_uncertainty, image_uncertainty_raw, image_weights, mean_probability,
    uncertain_region_size, variance_map, FilterConfig,
};

/// Everything the filtering stage derives for one target-domain case.
#[derive(Debug, Clone)]
pub struct PseudoLabelRecord {
    pub case_id: String,
    /// Argmax of the mean probability map.
    pub pseudo_label: LabelMap,
    pub pbar: ProbabilityMap<f32>,
    pub variance: WeightMap<f32>,
    /// Summed variance (naive image-level uncertainty).
    pub v: f64,
    /// High-entropy voxel count (estimated uncertain-region size).
    pub eta: usize,
    /// Size-aware image-level uncertainty.
    pub u: f64,
    /// Image-level weight in [0, 1].
    pub w: f64,
    /// Dual-domain consensus map, 0/1 per voxel.
    pub consensus: WeightMap<f32>,
    /// Combined weight map `A = M * w`.
    pub combined: WeightMap<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordMeta {
    v: f64,
    eta: usize,
    u: f64,
    w: f64,
    #[serde(rename = "K")]
    k: usize,
    e: f64,
}

/// Builds the whole cohort of records: K Monte Carlo passes and the
/// deterministic consensus passes per case, then the cohort-wide weight
/// normalization. Deterministic given the seed; cases use named substreams
/// so ordering cannot change results.
pub fn build_records(
    cases: &[(String, Volume3D<f32>)],
    generator: &DualDomainSegNet<f32>,
    t_s: &impl SliceTranslator<f32>,
    cfg: &FilterConfig,
    patch: Dims,
    seed: u64,
) -> Result<Vec<PseudoLabelRecord>> {
    cfg.validate()?;
    let mut partial = Vec::with_capacity(cases.len());
    for (case_id, volume) in cases {
        let build = || -> Result<_> {
            let mut rng: ChaCha8Rng = stream_rng(seed, &format!("records/{case_id}"));
            let mc = mc_dropout_predict(generator, volume, DomainTag::Target, patch, cfg.k, &mut rng)?;
            let pbar = mean_probability(&mc)?;
            let variance = variance_map(&mc)?;
            let v = image_uncertainty_raw(&variance);
            let eta = uncertain_region_size(&pbar, cfg.e);
            let pseudo_label = pbar.argmax();
            // Consensus passes are deterministic: dropout off for both.
            let back_translated = translate_volume(t_s, volume);
            let probs_ts = predict_volume(generator, &back_translated, DomainTag::Source, patch, None)?;
            let consensus = consensus_map(&pseudo_label, &probs_ts.argmax())?;
            Ok((pseudo_label, pbar, variance, v, eta, consensus))
        };
        let built = build().map_err(|e| Error::invalid(format!("record build failed for case `{case_id}`: {e}")))?;
        partial.push((case_id.clone(), built));
    }

    let cohort: Vec<(f64, usize)> = partial.iter().map(|(_, p)| (p.3, p.4)).collect();
    let us = image_uncertainty(&cohort);
    let ws = image_weights(&us);

    Ok(partial
        .into_iter()
        .zip(us.into_iter().zip(ws))
        .map(|((case_id, (pseudo_label, pbar, variance, v, eta, consensus)), (u, w))| {
            let combined = combined_weight_map(&consensus, w);
            PseudoLabelRecord {
                case_id,
                pseudo_label,
                pbar,
                variance,
                v,
                eta,
                u,
                w,
                consensus,
                combined,
            }
        })
        .collect())
}

pub fn record_dir(base: &Path, case_id: &str) -> PathBuf {
    base.join(format!("{case_id}.plrec"))
}

/// Persists one record under `<base>/<case_id>.plrec/`: the pseudo label,
/// per-class mean probability volumes, the combined weight map and a meta
/// file with the image-level scalars.
pub fn save_record(record: &PseudoLabelRecord, base: &Path, spacing: (f32, f32, f32), cfg: &FilterConfig) -> Result<()> {
    let dir = record_dir(base, &record.case_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_label_map(&record.pseudo_label, spacing, &dir.join("pseudo_label"))?;
    let n = record.pbar.num_voxels();
    for c in 0..record.pbar.num_classes() {
        let channel = Volume3D::new(record.pbar.dims(), spacing, record.pbar.data()[c * n..(c + 1) * n].to_vec())?;
        write_volume(&channel, &dir.join(format!("pbar_c{c}")))?;
    }
    let a_vol = Volume3D::new(record.combined.dims(), spacing, record.combined.data().to_vec())?;
    write_volume(&a_vol, &dir.join("A"))?;
    let meta = RecordMeta {
        v: record.v,
        eta: record.eta,
        u: record.u,
        w: record.w,
        k: cfg.k,
        e: cfg.e,
    };
    let meta_path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Json {
        path: meta_path.clone(),
        message: e.to_string(),
    })?;
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
    Ok(())
}

/// The subset of a persisted record joint training needs.
#[derive(Debug, Clone)]
pub struct StoredRecord {
    pub case_id: String,
    pub pseudo_label: LabelMap,
    pub combined: WeightMap<f32>,
    pub w: f64,
    pub v: f64,
    pub eta: usize,
    pub u: f64,
}

pub fn load_record(base: &Path, case_id: &str, num_classes: usize) -> Result<StoredRecord> {
    let dir = record_dir(base, case_id);
    if !dir.is_dir() {
        return Err(Error::MissingStage {
            stage: "build-records".into(),
            path: dir,
        });
    }
    let pseudo_label = read_label_map(&dir.join("pseudo_label"), Some(num_classes))?;
    let a_vol = read_volume(&dir.join("A"))?;
    let combined = WeightMap::new(a_vol.dims(), a_vol.data().to_vec())?;
    let meta_path = dir.join("meta.json");
    let bytes = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: RecordMeta = serde_json::from_slice(&bytes).map_err(|e| Error::Json {
        path: meta_path,
        message: e.to_string(),
    })?;
    Ok(StoredRecord {
        case_id: case_id.to_string(),
        pseudo_label,
        combined,
        w: meta.w,
        v: meta.v,
        eta: meta.eta,
        u: meta.u,
    })
}
