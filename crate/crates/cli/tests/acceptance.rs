//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured values. Criterion 6 runs the full synthetic benchmark once
//! (shared via OnceLock) and the other pipeline-level checks piggyback on
//! its artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use adaseg_cli::config::PipelineConfig;
use adaseg_cli::stages::{
    cmd_build_records, cmd_eval, cmd_infer, cmd_synth, cmd_train_generator, cmd_train_segmentor, cmd_translate,
    StageContext, StageLog,
};
use adaseg_core::data::{read_label_map, read_volume, znorm, DatasetIndex, Split};
use adaseg_core::dualnorm::{
    predict_volume, DomainSet, DualBn, DualDomainSegNet, SegNetConfig, TrainCase,
};
use adaseg_core::jointtrain::{infer, train_pseudo_only, train_source_only, JointTrainConfig};
use adaseg_core::losses::{soft_dice_loss, soft_dice_with_grad_raw, weighted_dice_loss, weighted_dice_with_grad_raw};
use adaseg_core::metrics::{assd, dice_score};
use adaseg_core::pseudolabel::{
    combined_weight_map, consensus_map, image_uncertainty, image_uncertainty_raw, image_weights, load_record,
    mean_probability, uncertain_region_size, variance_map,
};
use adaseg_core::seeds::stream_rng;
use adaseg_core::translate::nets::test_maps::Shift;
use adaseg_core::translate::{cycle_loss, train_cyclegan, CycleGanConfig};
use adaseg_core::volume::{DomainTag, LabelMap, ProbabilityMap, Volume3D, WeightMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("adaseg-accept-{}-{tag}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

// =====================================================================
// Criterion 1: filter math vs an independent naive-loop oracle
// =====================================================================

/// Naive reimplementation of the filtering pipeline, straight loops only.
mod oracle {
    use super::*;

    pub struct CaseInput {
        pub stack: Vec<ProbabilityMap<f32>>,
        pub other_prediction: LabelMap,
    }

    pub struct CaseOutput {
        pub v: f64,
        pub eta: usize,
        pub u: f64,
        pub w: f64,
        pub consensus: Vec<f32>,
        pub combined: Vec<f32>,
    }

    pub fn run(cases: &[CaseInput], e: f64) -> Vec<CaseOutput> {
        let mut vs = Vec::new();
        let mut etas = Vec::new();
        let mut pbars: Vec<Vec<f64>> = Vec::new();
        for case in cases {
            let k = case.stack.len();
            let c = case.stack[0].num_classes();
            let n = case.stack[0].num_voxels();
            // mean probability
            let mut pbar = vec![0.0f64; c * n];
            for i in 0..c * n {
                let mut s = 0.0f64;
                for m in &case.stack {
                    s += m.data()[i] as f64;
                }
                pbar[i] = s / k as f64;
            }
            // round through f32 the way the artifact stores it
            let pbar32: Vec<f64> = pbar.iter().map(|&x| x as f32 as f64).collect();
            // per-voxel variance of foreground probability, mean over fg classes
            let mut v = 0.0f64;
            for o in 0..n {
                let mut acc = 0.0f64;
                for ci in 1..c {
                    let mut mean = 0.0f64;
                    for m in &case.stack {
                        mean += m.data()[ci * n + o] as f64;
                    }
                    mean /= k as f64;
                    let mut var = 0.0f64;
                    for m in &case.stack {
                        let d = m.data()[ci * n + o] as f64 - mean;
                        var += d * d;
                    }
                    acc += var / k as f64;
                }
                let voxel_variance = (acc / (c - 1) as f64) as f32;
                v += voxel_variance as f64;
            }
            // uncertain region size from normalized entropy of pbar
            let mut eta = 0usize;
            for o in 0..n {
                let mut h = 0.0f64;
                for ci in 0..c {
                    let p = pbar32[ci * n + o];
                    if p > 0.0 {
                        h -= p * p.ln();
                    }
                }
                if h / (c as f64).ln() > e {
                    eta += 1;
                }
            }
            vs.push(v);
            etas.push(eta);
            pbars.push(pbar32);
        }
        // cohort pass for u and w
        let mut u_star = f64::NEG_INFINITY;
        for i in 0..cases.len() {
            if etas[i] > 0 {
                let r = vs[i] / etas[i] as f64;
                if r > u_star {
                    u_star = r;
                }
            }
        }
        let us: Vec<f64> = if u_star == f64::NEG_INFINITY {
            vec![0.0; cases.len()]
        } else {
            (0..cases.len())
                .map(|i| if etas[i] > 0 { vs[i] / etas[i] as f64 } else { u_star })
                .collect()
        };
        let u_max = us.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let u_min = us.iter().cloned().fold(f64::INFINITY, f64::min);
        let ws: Vec<f64> = if u_max == u_min {
            vec![1.0; cases.len()]
        } else {
            us.iter().map(|u| (u_max - u) / (u_max - u_min)).collect()
        };

        (0..cases.len())
            .map(|i| {
                let c = cases[i].stack[0].num_classes();
                let n = cases[i].stack[0].num_voxels();
                // argmax of pbar, ties to the lowest class
                let mut pseudo = vec![0u8; n];
                for o in 0..n {
                    let mut best = pbars[i][o];
                    let mut best_c = 0usize;
                    for ci in 1..c {
                        if pbars[i][ci * n + o] > best {
                            best = pbars[i][ci * n + o];
                            best_c = ci;
                        }
                    }
                    pseudo[o] = best_c as u8;
                }
                let mut consensus = vec![0.0f32; n];
                let mut combined = vec![0.0f32; n];
                for o in 0..n {
                    let m = if pseudo[o] == cases[i].other_prediction.labels()[o] {
                        1.0f32
                    } else {
                        0.0
                    };
                    consensus[o] = m;
                    combined[o] = ((m as f64) * ws[i]) as f32;
                }
                CaseOutput {
                    v: vs[i],
                    eta: etas[i],
                    u: us[i],
                    w: ws[i],
                    consensus,
                    combined,
                }
            })
            .collect()
    }
}

fn random_stack(dims: (usize, usize, usize), c: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<ProbabilityMap<f32>> {
    let n = dims.0 * dims.1 * dims.2;
    (0..k)
        .map(|_| {
            let mut data = vec![0.0f32; c * n];
            for o in 0..n {
                let logits: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..3.0)).collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                for ci in 0..c {
                    data[ci * n + o] = (exps[ci] / sum) as f32;
                }
            }
            ProbabilityMap::new(dims, c, data).unwrap()
        })
        .collect()
}

#[test]
fn criterion_1_filter_math_oracle() {
    let start = Instant::now();
    let dims = (8, 8, 8);
    let e = 0.2;
    for cohort_seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + cohort_seed);
        let c = if cohort_seed % 2 == 0 { 2 } else { 3 };
        let n_cases = rng.random_range(2..=8);
        let cases: Vec<oracle::CaseInput> = (0..n_cases)
            .map(|_| {
                let stack = random_stack(dims, c, 5, &mut rng);
                let labels: Vec<u8> = (0..512).map(|_| rng.random_range(0..c as u8)).collect();
                oracle::CaseInput {
                    stack,
                    other_prediction: LabelMap::new(dims, c, labels).unwrap(),
                }
            })
            .collect();

        let expected = oracle::run(&cases, e);

        // Module path.
        let mut raw = Vec::new();
        let mut pbars = Vec::new();
        for case in &cases {
            let pbar = mean_probability(&case.stack).unwrap();
            let variance = variance_map(&case.stack).unwrap();
            let v = image_uncertainty_raw(&variance);
            let eta = uncertain_region_size(&pbar, e);
            raw.push((v, eta));
            pbars.push(pbar);
        }
        let us = image_uncertainty(&raw);
        let ws = image_weights(&us);

        for (i, exp) in expected.iter().enumerate() {
            assert!((raw[i].0 - exp.v).abs() < 1e-6, "cohort {cohort_seed} case {i}: v {} vs {}", raw[i].0, exp.v);
            assert_eq!(raw[i].1, exp.eta, "cohort {cohort_seed} case {i}: eta");
            assert!((us[i] - exp.u).abs() < 1e-6, "cohort {cohort_seed} case {i}: u {} vs {}", us[i], exp.u);
            assert!((ws[i] - exp.w).abs() < 1e-6, "cohort {cohort_seed} case {i}: w {} vs {}", ws[i], exp.w);
            let m = consensus_map(&pbars[i].argmax(), &cases[i].other_prediction).unwrap();
            let a = combined_weight_map(&m, ws[i]);
            for o in 0..512 {
                assert!((m.data()[o] - exp.consensus[o]).abs() < 1e-6);
                assert!((a.data()[o] - exp.combined[o]).abs() < 1e-6);
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "criterion 1 runtime {elapsed:?} exceeds 1 min");
    println!("ACCEPTANCE 1 (filter-math oracle, 20 cohorts): PASS in {elapsed:?}");
}

// =====================================================================
// Criterion 2: weighted-Dice reductions and gradient
// =====================================================================

fn random_probs64(dims: (usize, usize, usize), c: usize, seed: u64) -> ProbabilityMap<f64> {
    let n = dims.0 * dims.1 * dims.2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0f64; n * c];
    for o in 0..n {
        let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        for (ci, r) in raw.iter().enumerate() {
            data[ci * n + o] = r / s;
        }
    }
    ProbabilityMap::new(dims, c, data).unwrap()
}

fn random_onehot64(dims: (usize, usize, usize), c: usize, seed: u64) -> ProbabilityMap<f64> {
    let n = dims.0 * dims.1 * dims.2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..c as u8)).collect();
    ProbabilityMap::one_hot(&LabelMap::new(dims, c, labels).unwrap())
}

#[test]
fn criterion_2_weighted_dice_reductions() {
    let start = Instant::now();
    let dims = (8, 8, 8);

    // A == 1 equals soft Dice to 1e-7.
    for seed in 0..10u64 {
        let pred = random_probs64(dims, 2, seed);
        let target = random_onehot64(dims, 2, 100 + seed);
        let ones = WeightMap::filled(dims, 1.0).unwrap();
        let wd: f64 = weighted_dice_loss(&pred, &target, &ones).unwrap();
        let sd: f64 = soft_dice_loss(&pred, &target).unwrap();
        assert!((wd - sd).abs() < 1e-7, "reduction: {wd} vs {sd}");
    }

    // A == 0 yields exactly 1.0.
    let pred = random_probs64(dims, 2, 41);
    let target = random_onehot64(dims, 2, 42);
    let zeros = WeightMap::filled(dims, 0.0).unwrap();
    assert_eq!(weighted_dice_loss(&pred, &target, &zeros).unwrap(), 1.0);

    // Constant-A invariance to 1e-7.
    for c_val in [0.25, 0.5, 0.9] {
        let const_a = WeightMap::filled(dims, c_val).unwrap();
        let ones = WeightMap::filled(dims, 1.0).unwrap();
        let a: f64 = weighted_dice_loss(&pred, &target, &const_a).unwrap();
        let b: f64 = weighted_dice_loss(&pred, &target, &ones).unwrap();
        assert!((a - b).abs() < 1e-7, "constant {c_val}: {a} vs {b}");
    }

    // Gradient vs central differences, 4^3 inputs, 64-bit, rel err < 1e-4.
    let small = (4, 4, 4);
    let n = 64;
    let pred4 = random_probs64(small, 2, 51);
    let ps4 = random_onehot64(small, 2, 52);
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let a4: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
    let (_, grad) = weighted_dice_with_grad_raw(pred4.data(), ps4.data(), &a4, n, 2);
    let (_, sgrad) = soft_dice_with_grad_raw(pred4.data(), ps4.data(), n, 2);
    let h = 1e-4;
    for idx in 0..2 * n {
        let mut plus = pred4.data().to_vec();
        plus[idx] += h;
        let mut minus = pred4.data().to_vec();
        minus[idx] -= h;
        let fd_w = (weighted_dice_with_grad_raw(&plus, ps4.data(), &a4, n, 2).0
            - weighted_dice_with_grad_raw(&minus, ps4.data(), &a4, n, 2).0)
            / (2.0 * h);
        let denom = fd_w.abs().max(grad[idx].abs()).max(1e-12);
        if denom > 1e-12 {
            assert!((fd_w - grad[idx]).abs() / denom < 1e-4, "weighted idx {idx}: {fd_w} vs {}", grad[idx]);
        }
        let fd_s = (soft_dice_with_grad_raw(&plus, ps4.data(), n, 2).0
            - soft_dice_with_grad_raw(&minus, ps4.data(), n, 2).0)
            / (2.0 * h);
        let denom_s = fd_s.abs().max(sgrad[idx].abs()).max(1e-12);
        assert!((fd_s - sgrad[idx]).abs() / denom_s < 1e-4, "soft idx {idx}: {fd_s} vs {}", sgrad[idx]);
    }

    // A = 0 voxels contribute zero gradient.
    let a_gate: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 0.0 } else { 1.0 }).collect();
    let (_, gate_grad) = weighted_dice_with_grad_raw(pred4.data(), ps4.data(), &a_gate, n, 2);
    for o in (0..n).step_by(3) {
        assert_eq!(gate_grad[n + o], 0.0, "gated voxel {o} leaked gradient");
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60);
    println!("ACCEPTANCE 2 (weighted-Dice reductions + gradient): PASS in {elapsed:?}");
}

// =====================================================================
// Criterion 3: dual-BN contract
// =====================================================================

#[test]
fn criterion_3_dual_bn_contract() {
    let start = Instant::now();

    // Closed-form EMA on the layer itself, k <= 100.
    let mut bn = DualBn::<f64>::new("bn", 1);
    let x = adaseg_core::nn::Tensor::new(vec![2, 1, 2], vec![1.0, 3.0, 1.0, 3.0]); // mean 2
    for k in 1..=100 {
        bn.forward_train(&x, DomainTag::Source).unwrap();
        let expected = 2.0 * (1.0 - 0.9f64.powi(k));
        assert!(
            (bn.running_mean_s[0] - expected).abs() < 1e-6,
            "EMA k={k}: {} vs {expected}",
            bn.running_mean_s[0]
        );
    }
    // Target side untouched bit for bit by 100 source batches.
    assert_eq!(bn.running_mean_t[0].to_bits(), 0.0f64.to_bits());
    assert_eq!(bn.running_var_t[0].to_bits(), 1.0f64.to_bits());

    // Constant batch -> output == beta_d.
    let mut bn2 = DualBn::<f64>::new("bn", 2);
    bn2.beta_t.w = vec![0.3, -0.8];
    let constant = adaseg_core::nn::Tensor::new(vec![2, 2, 3], vec![7.0; 12]);
    let (y, _) = bn2.forward_train(&constant, DomainTag::Target).unwrap();
    for ni in 0..2 {
        for ci in 0..2 {
            for i in 0..3 {
                assert!((y.data()[(ni * 2 + ci) * 3 + i] - bn2.beta_t.w[ci]).abs() < 1e-9);
            }
        }
    }

    // Whole-network statistics isolation, both directions, plus shared-
    // parameter coupling.
    let toy = |domain: DomainTag, seed: u64| -> DomainSet {
        let mut cases = Vec::new();
        for i in 0..4 {
            let mut rng = stream_rng(seed, &format!("case{i}"));
            let n = 512;
            let data: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            cases.push(TrainCase {
                case_id: format!("c{i}"),
                volume: Volume3D::new((8, 8, 8), (1.0, 1.0, 1.0), data).unwrap(),
                labels: LabelMap::new((8, 8, 8), 2, labels).unwrap(),
                weights: None,
            });
        }
        DomainSet { domain, cases }
    };
    let net_cfg = SegNetConfig {
        base_width: 4,
        ..Default::default()
    };
    let cfg = JointTrainConfig {
        epochs: 2,
        lr: 1e-3,
        batch_per_domain: 2,
        patch: (8, 8, 8),
        init_from_generator: false,
    };

    // Source-only training leaves the target branch bit-identical.
    let mut rng = stream_rng(31, "net");
    let mut net = DualDomainSegNet::<f32>::new(net_cfg, &mut rng);
    let before = net.target_branch_fingerprint();
    let probe = adaseg_core::nn::Tensor::new(
        vec![1, 1, 8, 8, 8],
        (0..512).map(|i| ((i % 23) as f32) / 23.0 - 0.5).collect(),
    );
    let target_out_before = net.forward_eval(&probe, DomainTag::Target, None).unwrap();
    let mut train_rng = stream_rng(31, "train");
    train_source_only(&mut net, &toy(DomainTag::Source, 31), &cfg, &mut train_rng).unwrap();
    let after = net.target_branch_fingerprint();
    assert_eq!(
        before.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        after.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        "target branch changed during source-only training"
    );
    // Shared-theta coupling: the same frozen target statistics now produce
    // a different output because theta moved.
    let target_out_after = net.forward_eval(&probe, DomainTag::Target, None).unwrap();
    assert_ne!(target_out_before.data(), target_out_after.data());

    // And the reverse direction.
    let mut rng = stream_rng(32, "net");
    let mut net = DualDomainSegNet::<f32>::new(net_cfg, &mut rng);
    let before = net.source_branch_fingerprint();
    let mut train_rng = stream_rng(32, "train");
    train_pseudo_only(&mut net, &toy(DomainTag::Target, 32), &cfg, &mut train_rng).unwrap();
    let after = net.source_branch_fingerprint();
    assert_eq!(
        before.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        after.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        "source branch changed during target-only training"
    );

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60);
    println!("ACCEPTANCE 3 (dual-BN contract): PASS in {elapsed:?}");
}

// =====================================================================
// Criterion 4: metric oracles
// =====================================================================

mod metric_oracle {
    use super::*;

    pub fn dice(pred: &LabelMap, gt: &LabelMap, class: usize) -> f64 {
        let mut inter = 0usize;
        let mut p = 0usize;
        let mut g = 0usize;
        for i in 0..pred.labels().len() {
            let a = pred.labels()[i] as usize == class;
            let b = gt.labels()[i] as usize == class;
            if a {
                p += 1;
            }
            if b {
                g += 1;
            }
            if a && b {
                inter += 1;
            }
        }
        if p == 0 && g == 0 {
            1.0
        } else {
            2.0 * inter as f64 / (p + g) as f64
        }
    }

    fn surface(mask: &[bool], dims: (usize, usize, usize)) -> Vec<(usize, usize, usize)> {
        let (d, h, w) = dims;
        let mut out = Vec::new();
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    if !mask[(z * h + y) * w + x] {
                        continue;
                    }
                    let neighbors = [
                        (z.wrapping_sub(1), y, x),
                        (z + 1, y, x),
                        (z, y.wrapping_sub(1), x),
                        (z, y + 1, x),
                        (z, y, x.wrapping_sub(1)),
                        (z, y, x + 1),
                    ];
                    let mut exposed = false;
                    for (nz, ny, nx) in neighbors {
                        if nz >= d || ny >= h || nx >= w {
                            exposed = true;
                        } else if !mask[(nz * h + ny) * w + nx] {
                            exposed = true;
                        }
                    }
                    if exposed {
                        out.push((z, y, x));
                    }
                }
            }
        }
        out
    }

    pub fn assd(pred: &LabelMap, gt: &LabelMap, class: usize, spacing: (f32, f32, f32)) -> f64 {
        let dims = pred.dims();
        let pm: Vec<bool> = pred.labels().iter().map(|&l| l as usize == class).collect();
        let gm: Vec<bool> = gt.labels().iter().map(|&l| l as usize == class).collect();
        let p_any = pm.iter().any(|&b| b);
        let g_any = gm.iter().any(|&b| b);
        let bbox_diag = |m: &[bool]| -> f64 {
            let (d, h, w) = dims;
            let mut min = (usize::MAX, usize::MAX, usize::MAX);
            let mut max = (0usize, 0usize, 0usize);
            for z in 0..d {
                for y in 0..h {
                    for x in 0..w {
                        if m[(z * h + y) * w + x] {
                            min = (min.0.min(z), min.1.min(y), min.2.min(x));
                            max = (max.0.max(z), max.1.max(y), max.2.max(x));
                        }
                    }
                }
            }
            let dz = (max.0 - min.0) as f64 * spacing.0 as f64;
            let dy = (max.1 - min.1) as f64 * spacing.1 as f64;
            let dx = (max.2 - min.2) as f64 * spacing.2 as f64;
            (dz * dz + dy * dy + dx * dx).sqrt()
        };
        match (p_any, g_any) {
            (false, false) => return 0.0,
            (false, true) => return bbox_diag(&gm),
            (true, false) => return bbox_diag(&pm),
            _ => {}
        }
        let ps = surface(&pm, dims);
        let gs = surface(&gm, dims);
        let dir = |from: &[(usize, usize, usize)], to: &[(usize, usize, usize)]| -> f64 {
            let mut total = 0.0;
            for &(az, ay, ax) in from {
                let mut best = f64::INFINITY;
                for &(bz, by, bx) in to {
                    let dz = (az as f64 - bz as f64) * spacing.0 as f64;
                    let dy = (ay as f64 - by as f64) * spacing.1 as f64;
                    let dx = (ax as f64 - bx as f64) * spacing.2 as f64;
                    let d = (dz * dz + dy * dy + dx * dx).sqrt();
                    if d < best {
                        best = d;
                    }
                }
                total += best;
            }
            total / from.len() as f64
        };
        0.5 * (dir(&ps, &gs) + dir(&gs, &ps))
    }
}

#[test]
fn criterion_4_metric_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4000);
    for pair in 0..50 {
        let dims = (
            rng.random_range(3..=12),
            rng.random_range(3..=12),
            rng.random_range(3..=12),
        );
        let n = dims.0 * dims.1 * dims.2;
        let spacing = (
            rng.random_range(0.5..2.0f32),
            rng.random_range(0.5..2.0f32),
            rng.random_range(0.5..2.0f32),
        );
        // Mix in empty masks to hit the degenerate rules.
        let density = match pair % 5 {
            0 => 0.0,
            1 => 0.05,
            _ => 0.3,
        };
        let mk = |rng: &mut ChaCha8Rng, density: f64| -> LabelMap {
            let labels: Vec<u8> = (0..n).map(|_| if rng.random_bool(density) { 1 } else { 0 }).collect();
            LabelMap::new(dims, 2, labels).unwrap()
        };
        let pred = mk(&mut rng, density);
        let gt = mk(&mut rng, if pair % 7 == 0 { 0.0 } else { 0.3 });

        let d_impl = dice_score(&pred, &gt, 1).unwrap();
        let d_oracle = metric_oracle::dice(&pred, &gt, 1);
        assert_eq!(d_impl, d_oracle, "pair {pair}: dice mismatch");

        let a_impl = assd(&pred, &gt, 1, spacing).unwrap();
        let a_oracle = metric_oracle::assd(&pred, &gt, 1, spacing);
        assert_eq!(a_impl, a_oracle, "pair {pair}: assd mismatch");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 120, "criterion 4 runtime {elapsed:?} exceeds 2 min");
    println!("ACCEPTANCE 4 (metric oracles, 50 pairs): PASS in {elapsed:?}");
}

// =====================================================================
// Criterion 5: CDDA contract
// =====================================================================

#[test]
fn criterion_5_cdda_contract() {
    let start = Instant::now();
    let dir = tmp_dir("cdda");

    // Small dataset on disk.
    let spec = adaseg_core::data::SyntheticSpec {
        train_per_domain: 5,
        val_per_domain: 0,
        test_per_domain: 0,
        dims: [16, 16, 16],
        seed: 55,
        ..Default::default()
    };
    let index = adaseg_core::data::generate_synthetic(&spec, &dir.join("dataset")).unwrap();
    let source_records: Vec<_> = index
        .select(DomainTag::Source, Split::Train)
        .into_iter()
        .cloned()
        .collect();
    let n = source_records.len();

    // A real (briefly trained) translator set.
    let volumes: Vec<_> = source_records
        .iter()
        .map(|r| znorm(&read_volume(&r.volume).unwrap()))
        .collect();
    let (pool, hw) = adaseg_core::translate::train::slice_pool(&volumes).unwrap();
    let gan_cfg = CycleGanConfig {
        epochs: 3,
        steps_per_epoch: 2,
        batch_slices: 2,
        translator_width: 2,
        discriminator_width: 2,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(56);
    let (set, _) = train_cyclegan(&pool, &pool, hw, &gan_cfg, &mut rng).unwrap();
    assert_eq!(set.t_at_epoch, 2);

    let out = adaseg_core::translate::cdda_augment(&source_records, &set, &dir.join("augmented")).unwrap();
    assert_eq!(out.ss.len(), 3 * n, "|D_ss| must be 3N");
    assert_eq!(out.st.len(), 2 * n, "|D_st| must be 2N");

    // Label bytes preserved for every augmented record.
    for record in out.ss.iter().chain(&out.st) {
        let origin_id = record
            .case_id
            .trim_end_matches("_sp")
            .trim_end_matches("_spp")
            .trim_end_matches("_s2t")
            .trim_end_matches("_s2at");
        let origin = source_records.iter().find(|r| r.case_id == origin_id).unwrap();
        let got = read_label_map(record.label.as_ref().unwrap(), Some(2)).unwrap();
        let want = read_label_map(origin.label.as_ref().unwrap(), Some(2)).unwrap();
        assert_eq!(got.labels(), want.labels(), "labels differ for {}", record.case_id);
    }

    // Hand values of the cycle loss.
    let x = adaseg_core::nn::Tensor::<f64>::new(vec![1, 1, 4, 4], (0..16).map(|i| i as f64 / 7.0).collect());
    assert_eq!(cycle_loss(&Shift(0.0), &Shift(0.0), &x, &x), 0.0);
    let four = cycle_loss(&Shift(1.0), &Shift(1.0), &x, &x);
    assert!((four - 4.0).abs() < 1e-12, "shift construction: {four}");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60);
    println!("ACCEPTANCE 5 (CDDA contract, N={n}): PASS in {elapsed:?}");
}

// =====================================================================
// Criterion 6: end-to-end synthetic benchmark (+ criterion 7 artifacts)
// =====================================================================

struct BenchOutcome {
    wo_da: f64,
    fpl: f64,
    unfiltered: f64,
    wall_minutes: f64,
    workdir: PathBuf,
    config: PipelineConfig,
}

fn bench_config(seed: u64) -> PipelineConfig {
    let toml = format!(
        r#"
seed = {seed}

[stage.synth]
train_per_domain = 32
test_per_domain = 8
dims = [32, 32, 32]

[stage.translate]
epochs = 30
steps_per_epoch = 100
batch_slices = 2
translator_width = 8
discriminator_width = 8
lambda_cyc = 1.0
lr = 1e-3
gan = "lsgan"
d_lr_scale = 0.2

[stage.train_generator]
epochs = 20
batch_per_domain = 2
patch = [16, 16, 16]
base_width = 8

[stage.train_segmentor]
epochs = 10
"#
    );
    toml::from_str(&toml).expect("benchmark config parses")
}

fn mean_fg_dice(preds: &[(String, LabelMap)], gts: &BTreeMap<String, LabelMap>, spacing: (f32, f32, f32)) -> f64 {
    let mut total = 0.0;
    for (case_id, pred) in preds {
        let gt = &gts[case_id];
        let c = pred.num_classes();
        let mut fg = 0.0;
        for class in 1..c {
            fg += dice_score(pred, gt, class).unwrap();
        }
        total += fg / (c - 1) as f64;
        let _ = spacing;
    }
    total / preds.len() as f64
}

fn run_benchmark() -> BenchOutcome {
    let started = Instant::now();
    let workdir = tmp_dir("bench");
    let config = bench_config(0);
    let ctx = StageContext::new(&workdir, config.clone(), true, false);

    cmd_synth(&ctx).expect("synth");
    cmd_translate(&ctx).expect("translate");
    cmd_train_generator(&ctx).expect("train-generator");
    cmd_build_records(&ctx).expect("build-records");

    // Record hashes now; the segmentor must not modify them.
    let record_log = read_stage_log(&workdir, "build-records");
    cmd_train_segmentor(&ctx).expect("train-segmentor");
    for artifact in &record_log.artifacts {
        let now = adaseg_cli::hash::hash_file(&artifact.path).expect("record artifact readable");
        assert_eq!(
            format!("{now:016x}"),
            artifact.hash,
            "record file {} changed during segmentor training",
            artifact.path.display()
        );
    }

    cmd_infer(&ctx).expect("infer");
    cmd_eval(&ctx).expect("eval");
    let eval_log = read_stage_log(&workdir, "eval");
    let fpl = eval_log.losses["mean_foreground_dice"].as_f64().expect("eval metric");

    // Eq. decomposition of the joint loss at every logged epoch.
    let seg_log = read_stage_log(&workdir, "train-segmentor");
    for epoch in seg_log.losses["epochs"].as_array().expect("epoch history") {
        let a = epoch["term_a"].as_f64().unwrap();
        let b = epoch["term_b"].as_f64().unwrap();
        let total = epoch["total"].as_f64().unwrap();
        assert!((total - (a + b)).abs() < 1e-7, "loss decomposition violated: {total} vs {a}+{b}");
    }

    // Shared data for the baseline arms.
    let layout = adaseg_cli::Layout::new(&workdir);
    let index = DatasetIndex::load(&layout.index_path()).unwrap();
    let num_classes = config.num_classes;
    let patch = config.patch();
    let load_norm = |stem: &Path| znorm(&read_volume(stem).unwrap());

    let source_set = DomainSet {
        domain: DomainTag::Source,
        cases: index
            .select(DomainTag::Source, Split::Train)
            .iter()
            .map(|r| TrainCase {
                case_id: r.case_id.clone(),
                volume: load_norm(&r.volume),
                labels: read_label_map(r.label.as_ref().unwrap(), Some(num_classes)).unwrap(),
                weights: None,
            })
            .collect(),
    };
    let pseudo_set = DomainSet {
        domain: DomainTag::Target,
        cases: index
            .select(DomainTag::Target, Split::Train)
            .iter()
            .map(|r| {
                let stored = load_record(&layout.records_dir(), &r.case_id, num_classes).unwrap();
                TrainCase {
                    case_id: r.case_id.clone(),
                    volume: load_norm(&r.volume),
                    labels: stored.pseudo_label,
                    weights: None, // unit weights: the unfiltered arm
                }
            })
            .collect(),
    };
    let test_cases: Vec<_> = index
        .select(DomainTag::Target, Split::Test)
        .iter()
        .map(|r| {
            (
                r.case_id.clone(),
                load_norm(&r.volume),
                read_label_map(r.label.as_ref().unwrap(), Some(num_classes)).unwrap(),
            )
        })
        .collect();
    let gts: BTreeMap<String, LabelMap> = test_cases
        .iter()
        .map(|(id, _, gt)| (id.clone(), gt.clone()))
        .collect();

    let net_cfg = SegNetConfig {
        in_channels: 1,
        base_width: config.stage.train_generator.base_width,
        num_classes,
        dropout_rate: config.stage.train_generator.dropout_rate,
    };

    // Arm (a): source-only training, applied directly to the target domain.
    let wo_da = {
        let mut rng = stream_rng(config.seed, "arm-wo-da");
        let mut net = DualDomainSegNet::<f32>::new(net_cfg, &mut rng);
        let arm_cfg = JointTrainConfig {
            epochs: config.stage.train_generator.epochs,
            lr: config.stage.train_generator.lr,
            batch_per_domain: config.stage.train_generator.batch_per_domain,
            patch,
            init_from_generator: false,
        };
        train_source_only(&mut net, &source_set, &arm_cfg, &mut rng).expect("w/o-DA arm");
        let preds: Vec<(String, LabelMap)> = test_cases
            .iter()
            .map(|(id, vol, _)| {
                let probs = predict_volume(&net, vol, DomainTag::Source, patch, None).unwrap();
                (id.clone(), probs.argmax())
            })
            .collect();
        mean_fg_dice(&preds, &gts, (1.0, 1.0, 1.0))
    };

    // Arm (c): unfiltered pseudo-label training from scratch.
    let unfiltered = {
        let mut rng = stream_rng(config.seed, "arm-unfiltered");
        let mut net = DualDomainSegNet::<f32>::new(net_cfg, &mut rng);
        let arm_cfg = JointTrainConfig {
            epochs: config.segmentor_epochs(),
            lr: config.stage.train_segmentor.lr,
            batch_per_domain: config.stage.train_segmentor.batch_per_domain,
            patch,
            init_from_generator: false,
        };
        train_pseudo_only(&mut net, &pseudo_set, &arm_cfg, &mut rng).expect("unfiltered arm");
        let preds: Vec<(String, LabelMap)> = test_cases
            .iter()
            .map(|(id, vol, _)| (id.clone(), infer(&net, vol, patch).unwrap()))
            .collect();
        mean_fg_dice(&preds, &gts, (1.0, 1.0, 1.0))
    };

    BenchOutcome {
        wo_da,
        fpl,
        unfiltered,
        wall_minutes: started.elapsed().as_secs_f64() / 60.0,
        workdir,
        config,
    }
}

fn read_stage_log(workdir: &Path, stage: &str) -> StageLog {
    let path = adaseg_cli::Layout::new(workdir).stage_log(stage);
    serde_json::from_slice(&std::fs::read(&path).expect("stage log exists")).expect("stage log parses")
}

fn bench() -> &'static BenchOutcome {
    static CELL: OnceLock<BenchOutcome> = OnceLock::new();
    CELL.get_or_init(run_benchmark)
}

#[test]
fn criterion_6_end_to_end_benchmark() {
    let outcome = bench();
    println!(
        "ACCEPTANCE 6 measurements: w/o-DA {:.4}, FPL+ {:.4}, unfiltered {:.4}, wall {:.1} min",
        outcome.wo_da, outcome.fpl, outcome.unfiltered, outcome.wall_minutes
    );
    assert!(
        outcome.wall_minutes <= 60.0,
        "benchmark exceeded the 60-minute budget: {:.1} min",
        outcome.wall_minutes
    );
    assert!(
        outcome.wo_da <= 0.35,
        "(a) w/o-DA baseline should fail on the shifted domain: dice {:.4} > 0.35",
        outcome.wo_da
    );
    assert!(
        outcome.fpl >= outcome.wo_da + 0.15,
        "(b) adapted pipeline must beat w/o-DA by 0.15: {:.4} vs {:.4}",
        outcome.fpl,
        outcome.wo_da
    );
    assert!(
        outcome.fpl >= outcome.unfiltered + 0.02,
        "(c) filtering + joint training must beat unfiltered pseudo labels by 0.02: {:.4} vs {:.4}",
        outcome.fpl,
        outcome.unfiltered
    );
    println!("ACCEPTANCE 6 (end-to-end synthetic benchmark): PASS");
}

#[test]
fn criterion_6b_inference_contracts_on_trained_segmentor() {
    let outcome = bench();
    let layout = adaseg_cli::Layout::new(&outcome.workdir);
    let net = DualDomainSegNet::<f32>::load(&layout.segmentor_stem()).unwrap();
    let index = DatasetIndex::load(&layout.index_path()).unwrap();
    let test_record = index.select(DomainTag::Target, Split::Test)[0];
    let volume = znorm(&read_volume(&test_record.volume).unwrap());
    let patch = outcome.config.patch();

    // Deterministic: same input twice gives identical labels.
    let a = infer(&net, &volume, patch).unwrap();
    let b = infer(&net, &volume, patch).unwrap();
    assert_eq!(a.labels(), b.labels(), "inference must be deterministic");

    // Tiled vs whole-volume forward agree on >= 99% of voxels.
    let whole = predict_volume(&net, &volume, DomainTag::Target, volume.dims(), None)
        .unwrap()
        .argmax();
    let agree = a
        .labels()
        .iter()
        .zip(whole.labels())
        .filter(|(x, y)| x == y)
        .count();
    let fraction = agree as f64 / a.labels().len() as f64;
    assert!(fraction >= 0.99, "tiled vs whole-volume agreement {fraction:.4} < 0.99");

    // Target inference depends only on the target branch: wiping the source
    // BN branch changes nothing.
    let mut wiped = net.clone();
    wiped.corrupt_source_branch();
    let c = infer(&wiped, &volume, patch).unwrap();
    assert_eq!(a.labels(), c.labels(), "target inference leaked source-branch statistics");

    println!("ACCEPTANCE 6b (inference contracts on the trained segmentor): PASS");
}

// =====================================================================
// Criterion 7: per-stage determinism
// =====================================================================

fn tiny_config(seed: u64) -> PipelineConfig {
    toml::from_str(&format!(
        r#"
seed = {seed}

[stage.synth]
train_per_domain = 4
test_per_domain = 2
dims = [16, 16, 16]

[stage.translate]
epochs = 3
steps_per_epoch = 4
batch_slices = 2
translator_width = 2
discriminator_width = 2

[stage.train_generator]
epochs = 3
batch_per_domain = 2
patch = [16, 16, 16]
base_width = 2

[stage.build_records]
k = 3

[stage.train_segmentor]
epochs = 2
"#
    ))
    .expect("tiny config parses")
}

const ALL_STAGES: [&str; 7] = [
    "synth",
    "translate",
    "train-generator",
    "build-records",
    "train-segmentor",
    "infer",
    "eval",
];

fn run_tiny_pipeline(ctx: &StageContext) {
    cmd_synth(ctx).unwrap();
    cmd_translate(ctx).unwrap();
    cmd_train_generator(ctx).unwrap();
    cmd_build_records(ctx).unwrap();
    cmd_train_segmentor(ctx).unwrap();
    cmd_infer(ctx).unwrap();
    cmd_eval(ctx).unwrap();
}

fn stage_hashes(workdir: &Path) -> BTreeMap<String, BTreeMap<String, String>> {
    let mut stages = BTreeMap::new();
    for stage in ALL_STAGES {
        let log = read_stage_log(workdir, stage);
        let mut hashes = BTreeMap::new();
        for artifact in log.artifacts {
            hashes.insert(artifact.path.to_string_lossy().to_string(), artifact.hash);
        }
        stages.insert(stage.to_string(), hashes);
    }
    stages
}

#[test]
fn criterion_7_stage_determinism() {
    let start = Instant::now();
    let workdir = tmp_dir("det");
    run_tiny_pipeline(&StageContext::new(&workdir, tiny_config(99), false, false));
    let first = stage_hashes(&workdir);
    // Forced in-place rerun of every stage with the same seed.
    run_tiny_pipeline(&StageContext::new(&workdir, tiny_config(99), false, true));
    let second = stage_hashes(&workdir);
    for (stage, hashes_a) in &first {
        let hashes_b = &second[stage];
        assert_eq!(hashes_a.len(), hashes_b.len(), "stage {stage}: artifact counts differ");
        for (path, hash_a) in hashes_a {
            let hash_b = hashes_b
                .get(path)
                .unwrap_or_else(|| panic!("stage {stage}: {path} missing in rerun"));
            assert_eq!(hash_a, hash_b, "stage {stage}: {path} hash changed across reruns");
        }
    }
    println!(
        "ACCEPTANCE 7 (determinism across {} stages): PASS in {:?}",
        first.len(),
        start.elapsed()
    );
}

// =====================================================================
// Criterion 8: ranking sanity under injected MC spread
// =====================================================================

#[test]
fn criterion_8_ranking_sanity() {
    let start = Instant::now();
    let dims = (8, 8, 8);
    let n = 512;
    let k = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(8000);

    // Build stacks whose per-pass foreground probabilities are mean +/- a
    // symmetric spread, so the mean map (and hence eta) is unchanged when
    // the spread is inflated.
    let spreads = [0.02f64, 0.03, 0.04, 0.05];
    let build_stack = |rng: &mut ChaCha8Rng, spread: f64| -> Vec<ProbabilityMap<f32>> {
        let means: Vec<f64> = (0..n).map(|_| rng.random_range(0.25..0.75)).collect();
        let offsets: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];
        (0..k)
            .map(|ki| {
                let mut data = vec![0.0f32; 2 * n];
                for o in 0..n {
                    let p = (means[o] + offsets[ki] * spread).clamp(0.0, 1.0);
                    data[n + o] = p as f32;
                    data[o] = (1.0 - p) as f32;
                }
                ProbabilityMap::new(dims, 2, data).unwrap()
            })
            .collect()
    };

    let stacks: Vec<Vec<ProbabilityMap<f32>>> = spreads.iter().map(|&s| build_stack(&mut rng, s)).collect();
    let stats = |stacks: &[Vec<ProbabilityMap<f32>>]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let raw: Vec<(f64, usize)> = stacks
            .iter()
            .map(|stack| {
                let pbar = mean_probability(stack).unwrap();
                let variance = variance_map(stack).unwrap();
                (image_uncertainty_raw(&variance), uncertain_region_size(&pbar, 0.2))
            })
            .collect();
        let us = image_uncertainty(&raw);
        let ws = image_weights(&us);
        (raw.iter().map(|(v, _)| *v).collect(), us, ws)
    };

    let (v_before, u_before, w_before) = stats(&stacks);

    // Inflate case 0's spread by 2x around the same means: same pbar
    // support, strictly larger variance.
    let mut rng2 = ChaCha8Rng::seed_from_u64(8000);
    let inflated_stacks: Vec<Vec<ProbabilityMap<f32>>> = spreads
        .iter()
        .enumerate()
        .map(|(i, &s)| build_stack(&mut rng2, if i == 0 { 2.0 * s } else { s }))
        .collect();
    let (v_after, u_after, w_after) = stats(&inflated_stacks);

    assert!(
        v_after[0] > v_before[0],
        "injected spread must strictly increase v: {} vs {}",
        v_after[0],
        v_before[0]
    );
    assert!(
        u_after[0] > u_before[0],
        "u must strictly increase with eta fixed: {} vs {}",
        u_after[0],
        u_before[0]
    );
    assert!(
        w_after[0] <= w_before[0] + 1e-12,
        "w must weakly decrease: {} vs {}",
        w_after[0],
        w_before[0]
    );
    // Untouched cases keep their v.
    for i in 1..spreads.len() {
        assert!((v_after[i] - v_before[i]).abs() < 1e-9);
    }
    // Cohort weight range: min 0, max 1 whenever u spreads.
    let min_w = w_after.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_w = w_after.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(min_w, 0.0);
    assert_eq!(max_w, 1.0);

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60);
    println!("ACCEPTANCE 8 (ranking sanity): PASS in {elapsed:?}");
}
