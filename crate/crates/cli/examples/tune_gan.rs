//! Grid harness for the translate stage: trains the slice translators under
//! different settings and reports reconstruction quality and lesion
//! contrast after translation (target lesions should come out dark).

use std::path::PathBuf;
use std::time::Instant;

use adaseg_core::data::{read_label_map, read_volume, znorm, DatasetIndex, Split};
use adaseg_core::seeds::stream_rng;
use adaseg_core::translate::train::slice_pool;
use adaseg_core::translate::{train_cyclegan, translate_volume, CycleGanConfig, GanVariant};
use adaseg_core::volume::DomainTag;

fn main() -> anyhow::Result<()> {
    let workdir = PathBuf::from(std::env::args().nth(1).expect("usage: tune_gan <workdir>"));
    let layout = adaseg_cli::Layout::new(&workdir);
    let index = DatasetIndex::load(&layout.index_path())?;

    let src_train: Vec<_> = index
        .select(DomainTag::Source, Split::Train)
        .iter()
        .map(|r| znorm(&read_volume(&r.volume).unwrap()))
        .collect();
    let tgt_train: Vec<_> = index
        .select(DomainTag::Target, Split::Train)
        .iter()
        .map(|r| znorm(&read_volume(&r.volume).unwrap()))
        .collect();
    let (src_pool, hw) = slice_pool(&src_train)?;
    let (tgt_pool, _) = slice_pool(&tgt_train)?;

    let probes: Vec<_> = index
        .select(DomainTag::Source, Split::Test)
        .iter()
        .take(4)
        .map(|r| {
            (
                znorm(&read_volume(&r.volume).unwrap()),
                read_label_map(r.label.as_ref().unwrap(), Some(2)).unwrap(),
            )
        })
        .collect();

    let grid: Vec<(&str, CycleGanConfig)> = std::env::args()
        .nth(2)
        .map(|s| s.split(',').map(|x| x.to_string()).collect::<Vec<_>>())
        .unwrap_or_else(|| vec!["a".into(), "b".into(), "c".into(), "d".into()])
        .into_iter()
        .map(|name| {
            let cfg = match name.as_str() {
                // longer log-variant training
                "a" => CycleGanConfig {
                    epochs: 30,
                    steps_per_epoch: 100,
                    batch_slices: 2,
                    lambda_cyc: 10.0,
                    lr: 2e-4,
                    translator_width: 8,
                    discriminator_width: 8,
                    variant: GanVariant::Log,
                    ..Default::default()
                },
                // least squares
                "b" => CycleGanConfig {
                    epochs: 30,
                    steps_per_epoch: 100,
                    batch_slices: 2,
                    lambda_cyc: 10.0,
                    lr: 2e-4,
                    translator_width: 8,
                    discriminator_width: 8,
                    variant: GanVariant::Lsgan,
                    ..Default::default()
                },
                // least squares, lighter cycle anchor
                "c" => CycleGanConfig {
                    epochs: 30,
                    steps_per_epoch: 100,
                    batch_slices: 2,
                    lambda_cyc: 3.0,
                    lr: 2e-4,
                    translator_width: 8,
                    discriminator_width: 8,
                    variant: GanVariant::Lsgan,
                    ..Default::default()
                },
                // log, higher lr
                "d" => CycleGanConfig {
                    epochs: 30,
                    steps_per_epoch: 100,
                    batch_slices: 2,
                    lambda_cyc: 10.0,
                    lr: 5e-4,
                    translator_width: 8,
                    discriminator_width: 8,
                    variant: GanVariant::Log,
                    ..Default::default()
                },
                // least squares, fast lr
                "e" => CycleGanConfig {
                    epochs: 30,
                    steps_per_epoch: 100,
                    batch_slices: 2,
                    lambda_cyc: 10.0,
                    lr: 1e-3,
                    translator_width: 8,
                    discriminator_width: 8,
                    variant: GanVariant::Lsgan,
                    ..Default::default()
                },
                // least squares, fast lr, light cycle anchor
                "f" => CycleGanConfig {
                    epochs: 30,
                    steps_per_epoch: 100,
                    batch_slices: 2,
                    lambda_cyc: 3.0,
                    lr: 1e-3,
                    translator_width: 8,
                    discriminator_width: 8,
                    variant: GanVariant::Lsgan,
                    ..Default::default()
                },
                // reconstruction probe: cycle term dominates entirely
                "g" => CycleGanConfig {
                    epochs: 10,
                    steps_per_epoch: 100,
                    batch_slices: 2,
                    lambda_cyc: 1000.0,
                    lr: 1e-3,
                    translator_width: 8,
                    discriminator_width: 8,
                    variant: GanVariant::Lsgan,
                    ..Default::default()
                },
                // throttled discriminator, light anchor
                "i" => CycleGanConfig {
                    epochs: 30,
                    steps_per_epoch: 100,
                    batch_slices: 2,
                    lambda_cyc: 3.0,
                    lr: 1e-3,
                    translator_width: 8,
                    discriminator_width: 8,
                    variant: GanVariant::Lsgan,
                    d_lr_scale: 0.2,
                    ..Default::default()
                },
                // throttled discriminator, standard anchor
                "j" => CycleGanConfig {
                    epochs: 30,
                    steps_per_epoch: 100,
                    batch_slices: 2,
                    lambda_cyc: 10.0,
                    lr: 1e-3,
                    translator_width: 8,
                    discriminator_width: 8,
                    variant: GanVariant::Lsgan,
                    d_lr_scale: 0.2,
                    ..Default::default()
                },
                // weak anchor, throttled discriminator
                "k" => CycleGanConfig {
                    epochs: 30,
                    steps_per_epoch: 100,
                    batch_slices: 2,
                    lambda_cyc: 1.0,
                    lr: 1e-3,
                    translator_width: 8,
                    discriminator_width: 8,
                    variant: GanVariant::Lsgan,
                    d_lr_scale: 0.2,
                    ..Default::default()
                },
                // weakest anchor, throttled discriminator
                "l" => CycleGanConfig {
                    epochs: 30,
                    steps_per_epoch: 100,
                    batch_slices: 2,
                    lambda_cyc: 0.5,
                    lr: 1e-3,
                    translator_width: 8,
                    discriminator_width: 8,
                    variant: GanVariant::Lsgan,
                    d_lr_scale: 0.2,
                    ..Default::default()
                },
                // weak anchor, full-speed discriminator
                "m" => CycleGanConfig {
                    epochs: 30,
                    steps_per_epoch: 100,
                    batch_slices: 2,
                    lambda_cyc: 1.0,
                    lr: 1e-3,
                    translator_width: 8,
                    discriminator_width: 8,
                    variant: GanVariant::Lsgan,
                    ..Default::default()
                },
                // weak anchor, throttled discriminator, log objective
                "n" => CycleGanConfig {
                    epochs: 30,
                    steps_per_epoch: 100,
                    batch_slices: 2,
                    lambda_cyc: 1.0,
                    lr: 1e-3,
                    translator_width: 8,
                    discriminator_width: 8,
                    variant: GanVariant::Log,
                    d_lr_scale: 0.2,
                    ..Default::default()
                },
                // pure adversarial probe: no cycle anchor at all
                "z" => CycleGanConfig {
                    epochs: 10,
                    steps_per_epoch: 100,
                    batch_slices: 2,
                    lambda_cyc: 0.0,
                    lr: 1e-3,
                    translator_width: 8,
                    discriminator_width: 8,
                    variant: GanVariant::Lsgan,
                    ..Default::default()
                },
                // log objective, fast lr, light anchor
                "h" => CycleGanConfig {
                    epochs: 30,
                    steps_per_epoch: 100,
                    batch_slices: 2,
                    lambda_cyc: 3.0,
                    lr: 1e-3,
                    translator_width: 8,
                    discriminator_width: 8,
                    variant: GanVariant::Log,
                    ..Default::default()
                },
                other => panic!("unknown grid point {other}"),
            };
            (Box::leak(name.into_boxed_str()) as &str, cfg)
        })
        .collect();

    for (name, cfg) in grid {
        let started = Instant::now();
        let mut rng = stream_rng(0, "translate");
        let (set, history) = train_cyclegan(&src_pool, &tgt_pool, hw, &cfg, &mut rng)?;
        let last = history.last().unwrap();
        let mut pre = 0.0;
        let mut post = 0.0;
        let mut back = 0.0;
        for (vol, gt) in &probes {
            let translated = translate_volume(&set.t_t, vol);
            let recovered = translate_volume(&set.t_s, &translated);
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
            pre += lesion_mean(vol);
            post += lesion_mean(&translated);
            let diff: f64 = recovered
                .data()
                .iter()
                .zip(vol.data())
                .map(|(a, b)| (a - b).abs() as f64)
                .sum::<f64>()
                / vol.len() as f64;
            back += diff;
        }
        let k = probes.len() as f64;
        println!(
            "grid {name}: {:.0}s  cycle {:.3}  d {:.3}  g_adv {:.3}  lesion {:+.2} -> {:+.2}  recon_l1 {:.3}",
            started.elapsed().as_secs_f64(),
            last.cycle,
            last.d_loss,
            last.g_adv,
            pre / k,
            post / k,
            back / k
        );
    }
    Ok(())
}
