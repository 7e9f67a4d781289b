//! Slice-wise volume translation and cross-domain data augmentation.
//!
//! Every labeled source case yields four augmented volumes: two pseudo
//! target-domain images (through the main and auxiliary target translators)
//! and two pseudo source-domain images (those translated back). All five
//! share the origin case's label file untouched.

use std::path::Path;

use crate::data::format::{read_volume, write_volume};
use crate::data::index::CaseRecord;
use crate::data::preprocess::{pad_reflect_to, znorm};
use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::scalar::Real;
use crate::volume::Volume3D;

use super::nets::SliceTranslator;
use super::train::TranslatorSet;

/// How many z slices go through the translator per forward.
const SLICE_CHUNK: usize = 8;

/// Applies a slice translator to every axial slice independently and
/// restacks. Dims and spacing are preserved; in-plane extents that are not
/// multiples of 4 are reflect-padded for the network and cropped back.
pub fn translate_volume<T: Real>(t: &impl SliceTranslator<T>, v: &Volume3D<T>) -> Volume3D<T> {
    let (d, h, w) = v.dims();
    let ph = h.div_ceil(4) * 4;
    let pw = w.div_ceil(4) * 4;
    let (padded, offset) = pad_reflect_to(v, (d, ph, pw));
    let (pd, eh, ew) = padded.dims();
    let mut out = vec![T::zero(); pd * eh * ew];
    let mut z = 0usize;
    while z < pd {
        let n = SLICE_CHUNK.min(pd - z);
        let mut data = Vec::with_capacity(n * eh * ew);
        for zi in z..z + n {
            data.extend_from_slice(padded.slice_z(zi));
        }
        let batch = Tensor::new(vec![n, 1, eh, ew], data);
        let translated = t.translate_batch(&batch);
        debug_assert_eq!(translated.shape(), batch.shape());
        out[z * eh * ew..(z + n) * eh * ew].copy_from_slice(translated.data());
        z += n;
    }
    let full = Volume3D::new((pd, eh, ew), v.spacing(), out).expect("translator output finite");
    if (pd, eh, ew) == (d, h, w) {
        return full;
    }
    let mut cropped = Vec::with_capacity(d * h * w);
    for z in 0..d {
        for y in 0..h {
            let base = ((z + offset.0) * eh + (y + offset.1)) * ew + offset.2;
            cropped.extend_from_slice(&full.data()[base..base + w]);
        }
    }
    Volume3D::new((d, h, w), v.spacing(), cropped).expect("crop preserves finiteness")
}

/// The two augmented training sets produced from one labeled source set.
#[derive(Debug, Clone)]
pub struct CddaOutput {
    /// Source-style set: the original cases plus both back-translations,
    /// 3N records.
    pub ss: Vec<CaseRecord>,
    /// Pseudo-target set: both forward translations, 2N records.
    pub st: Vec<CaseRecord>,
}

/// Runs CDDA over labeled source records, writing augmented volumes under
/// `out_dir` with provenance suffixes `_s2t`, `_s2at`, `_sp`, `_spp`.
pub fn cdda_augment(records: &[CaseRecord], set: &TranslatorSet<f32>, out_dir: &Path) -> Result<CddaOutput> {
    set.validate()?;
    let mut ss = Vec::with_capacity(3 * records.len());
    let mut st = Vec::with_capacity(2 * records.len());
    for record in records {
        let label = record.label.clone().ok_or_else(|| {
            Error::invalid(format!("cdda_augment: record `{}` has no label", record.case_id))
        })?;
        let raw = read_volume(&record.volume)?;
        let x = znorm(&raw);
        let s2t = translate_volume(&set.t_t, &x);
        let s2at = translate_volume(&set.t_at, &x);
        let sp = translate_volume(&set.t_s, &s2t);
        let spp = translate_volume(&set.t_s, &s2at);

        let emit = |suffix: &str, volume: &Volume3D<f32>, bucket: &mut Vec<CaseRecord>, domain| -> Result<()> {
            let case_id = format!("{}_{suffix}", record.case_id);
            let stem = out_dir.join(format!("{case_id}_vol"));
            write_volume(volume, &stem)?;
            bucket.push(CaseRecord {
                case_id,
                volume: stem,
                label: Some(label.clone()),
                domain,
                split: record.split,
            });
            Ok(())
        };

        ss.push(record.clone());
        emit("sp", &sp, &mut ss, crate::volume::DomainTag::Source)?;
        emit("spp", &spp, &mut ss, crate::volume::DomainTag::Source)?;
        emit("s2t", &s2t, &mut st, crate::volume::DomainTag::Target)?;
        emit("s2at", &s2at, &mut st, crate::volume::DomainTag::Target)?;
    }
    Ok(CddaOutput { ss, st })
}
