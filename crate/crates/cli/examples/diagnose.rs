//! Inspection harness for a benchmark workdir: pseudo-label quality against
//! the on-disk ground truth, translator contrast behavior, and generator
//! skill per branch.

use std::path::PathBuf;

use adaseg_core::data::{read_label_map, read_volume, znorm, DatasetIndex, Split};
use adaseg_core::dualnorm::{predict_volume, DualDomainSegNet};
use adaseg_core::metrics::dice_score;
use adaseg_core::translate::{load_translator_set, translate_volume};
use adaseg_core::volume::DomainTag;

fn main() -> anyhow::Result<()> {
    let workdir = PathBuf::from(std::env::args().nth(1).expect("usage: diagnose <workdir>"));
    let layout = adaseg_cli::Layout::new(&workdir);
    let index = DatasetIndex::load(&layout.index_path())?;
    let patch = (16, 16, 16);

    let set = load_translator_set::<f32>(&layout.translate_dir())?;
    let generator = DualDomainSegNet::<f32>::load(&layout.generator_stem())?;

    // 1. Pseudo-label quality on target-train (GT exists on disk).
    let mut pl_dice = 0.0;
    let mut n = 0;
    for r in index.select(DomainTag::Target, Split::Train) {
        let gt_stem = adaseg_core::data::synth::ground_truth_stem(&layout.dataset_dir(), &r.case_id);
        let gt = read_label_map(&gt_stem, Some(2))?;
        let rec_dir = adaseg_core::pseudolabel::record_dir(&layout.records_dir(), &r.case_id);
        let pl = read_label_map(&rec_dir.join("pseudo_label"), Some(2))?;
        let d = dice_score(&pl, &gt, 1)?;
        pl_dice += d;
        n += 1;
        if n <= 5 {
            println!("pseudo label {}: dice {:.4} (fg voxels pl {} gt {})", r.case_id, d, pl.class_count(1), gt.class_count(1));
        }
    }
    println!("mean pseudo-label dice over {} target-train cases: {:.4}\n", n, pl_dice / n as f64);

    // 2. Generator skill: source branch on source-test, target branch on
    //    translated source-test (where GT is known).
    let mut src_dice = 0.0;
    let mut s2t_dice = 0.0;
    let mut m = 0;
    for r in index.select(DomainTag::Source, Split::Test) {
        let vol = znorm(&read_volume(&r.volume)?);
        let gt = read_label_map(r.label.as_ref().unwrap(), Some(2))?;
        let pred_s = predict_volume(&generator, &vol, DomainTag::Source, patch, None)?.argmax();
        src_dice += dice_score(&pred_s, &gt, 1)?;
        let translated = translate_volume(&set.t_t, &vol);
        let pred_t = predict_volume(&generator, &translated, DomainTag::Target, patch, None)?.argmax();
        s2t_dice += dice_score(&pred_t, &gt, 1)?;
        m += 1;
    }
    println!("generator source-branch dice on source-test:        {:.4}", src_dice / m as f64);
    println!("generator target-branch dice on T_t(source-test):   {:.4}\n", s2t_dice / m as f64);

    // 3. Translator contrast behavior: mean intensity inside the lesion
    //    region before/after translation (znormed units).
    for r in index.select(DomainTag::Source, Split::Test).iter().take(3) {
        let vol = znorm(&read_volume(&r.volume)?);
        let gt = read_label_map(r.label.as_ref().unwrap(), Some(2))?;
        let translated = translate_volume(&set.t_t, &vol);
        let lesion_mean = |v: &adaseg_core::Volume3D32| -> f64 {
            let mut s = 0.0;
            let mut c = 0usize;
            for (val, &l) in v.data().iter().zip(gt.labels()) {
                if l == 1 {
                    s += *val as f64;
                    c += 1;
                }
            }
            s / c.max(1) as f64
        };
        println!(
            "{}: lesion mean before {:+.3} -> after T_t {:+.3}",
            r.case_id,
            lesion_mean(&vol),
            lesion_mean(&translated)
        );
    }

    // 4. Real target cases: how does the target branch behave on them?
    let mut tgt_dice = 0.0;
    let mut t = 0;
    for r in index.select(DomainTag::Target, Split::Test) {
        let vol = znorm(&read_volume(&r.volume)?);
        let gt = read_label_map(r.label.as_ref().unwrap(), Some(2))?;
        let pred = predict_volume(&generator, &vol, DomainTag::Target, patch, None)?.argmax();
        tgt_dice += dice_score(&pred, &gt, 1)?;
        t += 1;
    }
    println!("\ngenerator target-branch dice on real target-test:   {:.4}", tgt_dice / t as f64);

    Ok(())
}
