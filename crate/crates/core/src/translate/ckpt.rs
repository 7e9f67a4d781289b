//! Checkpoint persistence for translator sets: one manifest + blob pair per
//! component (T_s, T_t, T_at, D_s, D_t).

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_state, save_state, ParamKind, StateEntry};
use crate::scalar::Real;
use crate::seeds::stream_rng;

use super::nets::{DiscriminatorNet, TranslatorNet};
use super::train::TranslatorSet;

fn entries<'a, T: Real>(params: Vec<&'a crate::nn::param::Param<T>>) -> Vec<StateEntry<'a, T>> {
    params
        .into_iter()
        .map(|p| StateEntry {
            name: p.name.clone(),
            kind: ParamKind::Shared,
            shape: p.shape.clone(),
            data: &p.w,
        })
        .collect()
}

fn manifest(component: &str, epoch: usize, base_width: usize) -> serde_json::Map<String, serde_json::Value> {
    let mut extra = serde_json::Map::new();
    extra.insert("component".into(), component.into());
    extra.insert("epoch".into(), epoch.into());
    extra.insert("base_width".into(), base_width.into());
    extra
}

fn load_width_epoch(stem: &Path, expect_component: &str) -> Result<(crate::nn::checkpoint::LoadedState, usize, usize)> {
    let loaded = load_state(stem)?;
    let component = loaded.manifest.extra.get("component").and_then(|v| v.as_str());
    if component != Some(expect_component) {
        return Err(Error::Incompatible {
            fields: vec![format!("component: {component:?} != {expect_component:?}")],
        });
    }
    let width = loaded
        .manifest
        .extra
        .get("base_width")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Incompatible {
            fields: vec!["missing base_width".into()],
        })? as usize;
    let epoch = loaded.manifest.extra.get("epoch").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
    Ok((loaded, width, epoch))
}

pub fn save_translator<T: Real>(net: &TranslatorNet<T>, component: &str, epoch: usize, stem: &Path) -> Result<()> {
    save_state(stem, manifest(component, epoch, net.base_width), &entries(net.params()))
}

pub fn load_translator<T: Real>(stem: &Path, component: &str, name: &str) -> Result<(TranslatorNet<T>, usize)> {
    let (loaded, width, epoch) = load_width_epoch(stem, component)?;
    let mut rng = stream_rng(0, "translator-load");
    let mut net = TranslatorNet::<T>::new(name, width, &mut rng);
    for p in net.params_mut() {
        let ckpt_name = p.name.clone();
        loaded.copy_into(&ckpt_name, &mut p.w)?;
    }
    Ok((net, epoch))
}

pub fn save_discriminator<T: Real>(net: &DiscriminatorNet<T>, component: &str, epoch: usize, stem: &Path) -> Result<()> {
    save_state(stem, manifest(component, epoch, net.base_width), &entries(net.params()))
}

pub fn load_discriminator<T: Real>(stem: &Path, component: &str, name: &str) -> Result<(DiscriminatorNet<T>, usize)> {
    let (loaded, width, epoch) = load_width_epoch(stem, component)?;
    let mut rng = stream_rng(0, "discriminator-load");
    let mut net = DiscriminatorNet::<T>::new(name, width, &mut rng);
    for p in net.params_mut() {
        let ckpt_name = p.name.clone();
        loaded.copy_into(&ckpt_name, &mut p.w)?;
    }
    Ok((net, epoch))
}

/// Writes the five component checkpoints under `dir`.
pub fn save_translator_set<T: Real>(set: &TranslatorSet<T>, dir: &Path) -> Result<()> {
    set.validate()?;
    save_translator(&set.t_s, "T_s", set.final_epoch, &dir.join("t_s"))?;
    save_translator(&set.t_t, "T_t", set.final_epoch, &dir.join("t_t"))?;
    save_translator(&set.t_at, "T_at", set.t_at_epoch, &dir.join("t_at"))?;
    save_discriminator(&set.d_s, "D_s", set.final_epoch, &dir.join("d_s"))?;
    save_discriminator(&set.d_t, "D_t", set.final_epoch, &dir.join("d_t"))?;
    Ok(())
}

pub fn load_translator_set<T: Real>(dir: &Path) -> Result<TranslatorSet<T>> {
    let (t_s, final_epoch) = load_translator(&dir.join("t_s"), "T_s", "T_s")?;
    let (t_t, _) = load_translator(&dir.join("t_t"), "T_t", "T_t")?;
    let (t_at, t_at_epoch) = load_translator(&dir.join("t_at"), "T_at", "T_t")?;
    let (d_s, _) = load_discriminator(&dir.join("d_s"), "D_s", "D_s")?;
    let (d_t, _) = load_discriminator(&dir.join("d_t"), "D_t", "D_t")?;
    let set = TranslatorSet {
        t_s,
        t_t,
        t_at,
        d_s,
        d_t,
        t_at_epoch,
        final_epoch,
    };
    set.validate()?;
    Ok(set)
}
