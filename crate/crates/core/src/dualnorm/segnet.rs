//! Dual-domain segmentation network: a 4-level 3D encoder-decoder whose
//! normalization layers keep per-domain statistics while every convolution
//! is shared. The two shallow levels use flat (1x3x3) kernels, the deeper
//! levels full 3x3x3 ones. Dropout sits on the two deepest encoder and two
//! deepest decoder blocks.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_state, save_state, LoadedState, ParamKind, StateEntry};
use crate::nn::conv3d::{Conv3d, Conv3dCtx};
use crate::nn::ops;
use crate::nn::param::Param;
use crate::nn::tensor::Tensor;
use crate::scalar::Real;
use crate::volume::DomainTag;

use super::bn::{DualBn, DualBnCtx};

/// Total downsampling factor along each axis.
pub const DOWNSAMPLE_FACTOR: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegNetConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            base_width: 8,
            num_classes: 2,
            dropout_rate: 0.3,
        }
    }
}

// ------------------------------------------------------------------ blocks

#[derive(Debug, Clone)]
struct ConvBlock<T: Real> {
    conv1: Conv3d<T>,
    bn1: DualBn<T>,
    conv2: Conv3d<T>,
    bn2: DualBn<T>,
    dropout_rate: f64,
}

struct ConvBlockCtx<T: Real> {
    c1: Conv3dCtx<T>,
    b1: DualBnCtx<T>,
    r1: Vec<bool>,
    c2: Conv3dCtx<T>,
    b2: DualBnCtx<T>,
    r2: Vec<bool>,
    drop: Option<Vec<T>>,
}

impl<T: Real> ConvBlock<T> {
    fn new<R: rand::Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        flat: bool,
        dropout_rate: f64,
        rng: &mut R,
    ) -> Self {
        let k = if flat { (1, 3, 3) } else { (3, 3, 3) };
        Self {
            conv1: Conv3d::he_init(&format!("{name}.conv1"), in_ch, out_ch, k, false, rng),
            bn1: DualBn::new(&format!("{name}.bn1"), out_ch),
            conv2: Conv3d::he_init(&format!("{name}.conv2"), out_ch, out_ch, k, false, rng),
            bn2: DualBn::new(&format!("{name}.bn2"), out_ch),
            dropout_rate,
        }
    }

    fn forward_train(
        &mut self,
        x: &Tensor<T>,
        domain: DomainTag,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor<T>, ConvBlockCtx<T>)> {
        let (y, c1) = self.conv1.forward_train(x);
        let (y, b1) = self.bn1.forward_train(&y, domain)?;
        let (y, r1) = ops::relu(&y);
        let (y, c2) = self.conv2.forward_train(&y);
        let (y, b2) = self.bn2.forward_train(&y, domain)?;
        let (y, r2) = ops::relu(&y);
        let (y, drop) = if self.dropout_rate > 0.0 {
            let (y, mask) = ops::dropout(&y, self.dropout_rate, rng);
            (y, Some(mask))
        } else {
            (y, None)
        };
        Ok((
            y,
            ConvBlockCtx {
                c1,
                b1,
                r1,
                c2,
                b2,
                r2,
                drop,
            },
        ))
    }

    /// Inference path: running BN statistics; dropout only when an RNG is
    /// supplied (Monte Carlo sampling).
    fn forward_eval(&self, x: &Tensor<T>, domain: DomainTag, mc_rng: &mut Option<&mut ChaCha8Rng>) -> Tensor<T> {
        let y = self.conv1.forward(x);
        let y = self.bn1.forward_eval(&y, domain);
        let (y, _) = ops::relu(&y);
        let y = self.conv2.forward(&y);
        let y = self.bn2.forward_eval(&y, domain);
        let (y, _) = ops::relu(&y);
        if self.dropout_rate > 0.0 {
            if let Some(rng) = mc_rng.as_deref_mut() {
                return ops::dropout(&y, self.dropout_rate, rng).0;
            }
        }
        y
    }

    fn backward(&mut self, ctx: &ConvBlockCtx<T>, dy: &Tensor<T>) -> Tensor<T> {
        let dy = match &ctx.drop {
            Some(mask) => ops::dropout_backward(mask, dy),
            None => dy.clone(),
        };
        let dy = ops::relu_backward(&ctx.r2, &dy);
        let dy = self.bn2.backward(&ctx.b2, &dy);
        let dy = self.conv2.backward(&ctx.c2, &dy);
        let dy = ops::relu_backward(&ctx.r1, &dy);
        let dy = self.bn1.backward(&ctx.b1, &dy);
        self.conv1.backward(&ctx.c1, &dy)
    }

}

#[derive(Debug, Clone)]
struct UpBlock<T: Real> {
    conv: Conv3d<T>,
    bn: DualBn<T>,
}

struct UpBlockCtx<T: Real> {
    c: Conv3dCtx<T>,
    b: DualBnCtx<T>,
    r: Vec<bool>,
}

impl<T: Real> UpBlock<T> {
    fn new<R: rand::Rng>(name: &str, in_ch: usize, out_ch: usize, flat: bool, rng: &mut R) -> Self {
        let k = if flat { (1, 3, 3) } else { (3, 3, 3) };
        Self {
            conv: Conv3d::he_init(&format!("{name}.conv"), in_ch, out_ch, k, false, rng),
            bn: DualBn::new(&format!("{name}.bn"), out_ch),
        }
    }

    fn forward_train(&mut self, x: &Tensor<T>, domain: DomainTag) -> Result<(Tensor<T>, UpBlockCtx<T>)> {
        let up = ops::upsample2x_3d(x);
        let (y, c) = self.conv.forward_train(&up);
        let (y, b) = self.bn.forward_train(&y, domain)?;
        let (y, r) = ops::relu(&y);
        Ok((y, UpBlockCtx { c, b, r }))
    }

    fn forward_eval(&self, x: &Tensor<T>, domain: DomainTag) -> Tensor<T> {
        let up = ops::upsample2x_3d(x);
        let y = self.conv.forward(&up);
        let y = self.bn.forward_eval(&y, domain);
        ops::relu(&y).0
    }

    fn backward(&mut self, ctx: &UpBlockCtx<T>, dy: &Tensor<T>) -> Tensor<T> {
        let dy = ops::relu_backward(&ctx.r, dy);
        let dy = self.bn.backward(&ctx.b, &dy);
        let dy = self.conv.backward(&ctx.c, &dy);
        ops::upsample2x_3d_backward(&dy)
    }
}

// ------------------------------------------------------------------ network

#[derive(Debug, Clone)]
pub struct DualDomainSegNet<T: Real> {
    pub cfg: SegNetConfig,
    enc1: ConvBlock<T>,
    enc2: ConvBlock<T>,
    enc3: ConvBlock<T>,
    enc4: ConvBlock<T>,
    up3: UpBlock<T>,
    dec3: ConvBlock<T>,
    up2: UpBlock<T>,
    dec2: ConvBlock<T>,
    up1: UpBlock<T>,
    dec1: ConvBlock<T>,
    head: Conv3d<T>,
}

pub struct SegNetCtx<T: Real> {
    enc1: ConvBlockCtx<T>,
    pool1: (Vec<u32>, Vec<usize>),
    enc2: ConvBlockCtx<T>,
    pool2: (Vec<u32>, Vec<usize>),
    enc3: ConvBlockCtx<T>,
    pool3: (Vec<u32>, Vec<usize>),
    enc4: ConvBlockCtx<T>,
    up3: UpBlockCtx<T>,
    dec3: ConvBlockCtx<T>,
    up2: UpBlockCtx<T>,
    dec2: ConvBlockCtx<T>,
    up1: UpBlockCtx<T>,
    dec1: ConvBlockCtx<T>,
    head: Conv3dCtx<T>,
    /// Softmax output, needed to turn dL/dprobs into dL/dlogits.
    pub probs: Tensor<T>,
}

impl<T: Real> DualDomainSegNet<T> {
    pub fn new<R: rand::Rng>(cfg: SegNetConfig, rng: &mut R) -> Self {
        let b = cfg.base_width;
        let p = cfg.dropout_rate;
        Self {
            enc1: ConvBlock::new("enc1", cfg.in_channels, b, true, 0.0, rng),
            enc2: ConvBlock::new("enc2", b, 2 * b, true, 0.0, rng),
            enc3: ConvBlock::new("enc3", 2 * b, 4 * b, false, p, rng),
            enc4: ConvBlock::new("enc4", 4 * b, 8 * b, false, p, rng),
            up3: UpBlock::new("up3", 8 * b, 4 * b, false, rng),
            dec3: ConvBlock::new("dec3", 8 * b, 4 * b, false, p, rng),
            up2: UpBlock::new("up2", 4 * b, 2 * b, true, rng),
            dec2: ConvBlock::new("dec2", 4 * b, 2 * b, true, p, rng),
            up1: UpBlock::new("up1", 2 * b, b, true, rng),
            dec1: ConvBlock::new("dec1", 2 * b, b, true, 0.0, rng),
            head: Conv3d::he_init("head", b, cfg.num_classes, (1, 1, 1), true, rng),
            cfg,
        }
    }

    pub fn check_patch_dims(&self, dims: (usize, usize, usize)) -> Result<()> {
        for (axis, extent) in [("z", dims.0), ("y", dims.1), ("x", dims.2)] {
            if extent % DOWNSAMPLE_FACTOR != 0 {
                return Err(Error::shape(
                    "segnet input",
                    format!("{axis} divisible by {DOWNSAMPLE_FACTOR}"),
                    format!("{axis} = {extent}"),
                ));
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != 5 || x.dim(1) != self.cfg.in_channels {
            return Err(Error::shape(
                "segnet input",
                format!("(N, {}, D, H, W)", self.cfg.in_channels),
                format!("{:?}", x.shape()),
            ));
        }
        self.check_patch_dims((x.dim(2), x.dim(3), x.dim(4)))
    }

    /// Training forward: batch BN statistics (updating the running stats of
    /// `domain`), dropout on. Returns per-voxel class probabilities.
    pub fn forward_train(
        &mut self,
        x: &Tensor<T>,
        domain: DomainTag,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor<T>, SegNetCtx<T>)> {
        self.check_input(x)?;
        let (e1, enc1) = self.enc1.forward_train(x, domain, rng)?;
        let (p1, arg1) = ops::maxpool2x_3d(&e1);
        let (e2, enc2) = self.enc2.forward_train(&p1, domain, rng)?;
        let (p2, arg2) = ops::maxpool2x_3d(&e2);
        let (e3, enc3) = self.enc3.forward_train(&p2, domain, rng)?;
        let (p3, arg3) = ops::maxpool2x_3d(&e3);
        let (e4, enc4) = self.enc4.forward_train(&p3, domain, rng)?;

        let (u3, up3) = self.up3.forward_train(&e4, domain)?;
        let cat3 = ops::concat_channels(&u3, &e3);
        let (d3, dec3) = self.dec3.forward_train(&cat3, domain, rng)?;
        let (u2, up2) = self.up2.forward_train(&d3, domain)?;
        let cat2 = ops::concat_channels(&u2, &e2);
        let (d2, dec2) = self.dec2.forward_train(&cat2, domain, rng)?;
        let (u1, up1) = self.up1.forward_train(&d2, domain)?;
        let cat1 = ops::concat_channels(&u1, &e1);
        let (d1, dec1) = self.dec1.forward_train(&cat1, domain, rng)?;
        let (logits, head) = self.head.forward_train(&d1);
        let probs = ops::softmax_channels(&logits);
        let ctx = SegNetCtx {
            enc1,
            pool1: (arg1, e1.shape().to_vec()),
            enc2,
            pool2: (arg2, e2.shape().to_vec()),
            enc3,
            pool3: (arg3, e3.shape().to_vec()),
            enc4,
            up3,
            dec3,
            up2,
            dec2,
            up1,
            dec1,
            head,
            probs: probs.clone(),
        };
        Ok((probs, ctx))
    }

    /// Inference forward on frozen statistics. `mc_rng` switches the
    /// dropout sites on for Monte Carlo sampling while normalization keeps
    /// using the running statistics.
    pub fn forward_eval(
        &self,
        x: &Tensor<T>,
        domain: DomainTag,
        mut mc_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let e1 = self.enc1.forward_eval(x, domain, &mut mc_rng);
        let (p1, _) = ops::maxpool2x_3d(&e1);
        let e2 = self.enc2.forward_eval(&p1, domain, &mut mc_rng);
        let (p2, _) = ops::maxpool2x_3d(&e2);
        let e3 = self.enc3.forward_eval(&p2, domain, &mut mc_rng);
        let (p3, _) = ops::maxpool2x_3d(&e3);
        let e4 = self.enc4.forward_eval(&p3, domain, &mut mc_rng);
        let u3 = self.up3.forward_eval(&e4, domain);
        let d3 = self.dec3.forward_eval(&ops::concat_channels(&u3, &e3), domain, &mut mc_rng);
        let u2 = self.up2.forward_eval(&d3, domain);
        let d2 = self.dec2.forward_eval(&ops::concat_channels(&u2, &e2), domain, &mut mc_rng);
        let u1 = self.up1.forward_eval(&d2, domain);
        let d1 = self.dec1.forward_eval(&ops::concat_channels(&u1, &e1), domain, &mut mc_rng);
        let logits = self.head.forward(&d1);
        Ok(ops::softmax_channels(&logits))
    }

    /// Backward from dL/dprobs; accumulates parameter gradients.
    pub fn backward(&mut self, ctx: &SegNetCtx<T>, dldp: &Tensor<T>) {
        let b = self.cfg.base_width;
        let dlogits = ops::softmax_backward(&ctx.probs, dldp);
        let dy = self.head.backward(&ctx.head, &dlogits);
        let dy = self.dec1.backward(&ctx.dec1, &dy);
        let (du1, de1_skip) = ops::concat_channels_backward(&dy, b, b);
        let dy = self.up1.backward(&ctx.up1, &du1);
        let dy = self.dec2.backward(&ctx.dec2, &dy);
        let (du2, de2_skip) = ops::concat_channels_backward(&dy, 2 * b, 2 * b);
        let dy = self.up2.backward(&ctx.up2, &du2);
        let dy = self.dec3.backward(&ctx.dec3, &dy);
        let (du3, de3_skip) = ops::concat_channels_backward(&dy, 4 * b, 4 * b);
        let dy = self.up3.backward(&ctx.up3, &du3);
        let dy = self.enc4.backward(&ctx.enc4, &dy);
        let mut dp3 = ops::maxpool2x_3d_backward(&ctx.pool3.0, &dy, &ctx.pool3.1);
        add_into(&mut dp3, &de3_skip);
        let dy = self.enc3.backward(&ctx.enc3, &dp3);
        let mut dp2 = ops::maxpool2x_3d_backward(&ctx.pool2.0, &dy, &ctx.pool2.1);
        add_into(&mut dp2, &de2_skip);
        let dy = self.enc2.backward(&ctx.enc2, &dp2);
        let mut dp1 = ops::maxpool2x_3d_backward(&ctx.pool1.0, &dy, &ctx.pool1.1);
        add_into(&mut dp1, &de1_skip);
        let _ = self.enc1.backward(&ctx.enc1, &dp1);
    }

    /// Shared weights plus the BN affine of one domain: the parameter group
    /// an optimizer step touches after a batch routed to `domain`.
    pub fn step_params_mut(&mut self, domain: DomainTag) -> Vec<&mut Param<T>> {
        let mut params: Vec<&mut Param<T>> = Vec::new();
        let blocks = [
            &mut self.enc1,
            &mut self.enc2,
            &mut self.enc3,
            &mut self.enc4,
            &mut self.dec3,
            &mut self.dec2,
            &mut self.dec1,
        ];
        for block in blocks {
            params.extend(block.conv1.params_mut());
            params.extend(block.bn1.domain_params_mut(domain));
            params.extend(block.conv2.params_mut());
            params.extend(block.bn2.domain_params_mut(domain));
        }
        for up in [&mut self.up3, &mut self.up2, &mut self.up1] {
            params.extend(up.conv.params_mut());
            params.extend(up.bn.domain_params_mut(domain));
        }
        params.extend(self.head.params_mut());
        params
    }

    /// Every learnable parameter: shared weights plus both BN branches.
    pub fn all_params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut params: Vec<&mut Param<T>> = Vec::new();
        let blocks = [
            &mut self.enc1,
            &mut self.enc2,
            &mut self.enc3,
            &mut self.enc4,
            &mut self.dec3,
            &mut self.dec2,
            &mut self.dec1,
        ];
        for block in blocks {
            params.extend(block.conv1.params_mut());
            params.extend(block.bn1.all_params_mut());
            params.extend(block.conv2.params_mut());
            params.extend(block.bn2.all_params_mut());
        }
        for up in [&mut self.up3, &mut self.up2, &mut self.up1] {
            params.extend(up.conv.params_mut());
            params.extend(up.bn.all_params_mut());
        }
        params.extend(self.head.params_mut());
        params
    }

    pub fn zero_grads(&mut self) {
        self.all_params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    // -------------------------------------------------------- checkpoints

    fn bns(&self) -> Vec<&DualBn<T>> {
        vec![
            &self.enc1.bn1,
            &self.enc1.bn2,
            &self.enc2.bn1,
            &self.enc2.bn2,
            &self.enc3.bn1,
            &self.enc3.bn2,
            &self.enc4.bn1,
            &self.enc4.bn2,
            &self.up3.bn,
            &self.dec3.bn1,
            &self.dec3.bn2,
            &self.up2.bn,
            &self.dec2.bn1,
            &self.dec2.bn2,
            &self.up1.bn,
            &self.dec1.bn1,
            &self.dec1.bn2,
        ]
    }

    fn convs(&self) -> Vec<&Conv3d<T>> {
        vec![
            &self.enc1.conv1,
            &self.enc1.conv2,
            &self.enc2.conv1,
            &self.enc2.conv2,
            &self.enc3.conv1,
            &self.enc3.conv2,
            &self.enc4.conv1,
            &self.enc4.conv2,
            &self.up3.conv,
            &self.dec3.conv1,
            &self.dec3.conv2,
            &self.up2.conv,
            &self.dec2.conv1,
            &self.dec2.conv2,
            &self.up1.conv,
            &self.dec1.conv1,
            &self.dec1.conv2,
            &self.head,
        ]
    }

    pub fn bn_site_names(&self) -> Vec<String> {
        self.bns().iter().map(|bn| bn.name.clone()).collect()
    }

    fn state_entries(&self) -> Vec<StateEntry<'_, T>> {
        let mut entries = Vec::new();
        for conv in self.convs() {
            for p in conv.params() {
                entries.push(StateEntry {
                    name: p.name.clone(),
                    kind: ParamKind::Shared,
                    shape: p.shape.clone(),
                    data: &p.w,
                });
            }
        }
        for bn in self.bns() {
            let c = bn.channels;
            entries.push(StateEntry {
                name: bn.gamma_s.name.clone(),
                kind: ParamKind::BnSource,
                shape: vec![c],
                data: &bn.gamma_s.w,
            });
            entries.push(StateEntry {
                name: bn.beta_s.name.clone(),
                kind: ParamKind::BnSource,
                shape: vec![c],
                data: &bn.beta_s.w,
            });
            entries.push(StateEntry {
                name: bn.gamma_t.name.clone(),
                kind: ParamKind::BnTarget,
                shape: vec![c],
                data: &bn.gamma_t.w,
            });
            entries.push(StateEntry {
                name: bn.beta_t.name.clone(),
                kind: ParamKind::BnTarget,
                shape: vec![c],
                data: &bn.beta_t.w,
            });
            entries.push(StateEntry {
                name: format!("{}.running_mean_s", bn.name),
                kind: ParamKind::BufferSource,
                shape: vec![c],
                data: &bn.running_mean_s,
            });
            entries.push(StateEntry {
                name: format!("{}.running_var_s", bn.name),
                kind: ParamKind::BufferSource,
                shape: vec![c],
                data: &bn.running_var_s,
            });
            entries.push(StateEntry {
                name: format!("{}.running_mean_t", bn.name),
                kind: ParamKind::BufferTarget,
                shape: vec![c],
                data: &bn.running_mean_t,
            });
            entries.push(StateEntry {
                name: format!("{}.running_var_t", bn.name),
                kind: ParamKind::BufferTarget,
                shape: vec![c],
                data: &bn.running_var_t,
            });
        }
        entries
    }

    pub fn manifest_extra(&self) -> serde_json::Map<String, serde_json::Value> {
        let mut extra = serde_json::Map::new();
        extra.insert(
            "arch".into(),
            serde_json::json!({
                "kind": "dual_bn_unet3d",
                "in_channels": self.cfg.in_channels,
                "base_width": self.cfg.base_width,
                "levels": 4,
                "flat_levels": 2,
                "dropout_rate": self.cfg.dropout_rate,
            }),
        );
        extra.insert("num_classes".into(), self.cfg.num_classes.into());
        extra.insert(
            "bn_sites".into(),
            serde_json::Value::Array(self.bn_site_names().into_iter().map(Into::into).collect()),
        );
        extra
    }

    pub fn save(&self, stem: &std::path::Path) -> Result<()> {
        save_state(stem, self.manifest_extra(), &self.state_entries())
    }

    /// Loads a checkpoint into a freshly built network of the same
    /// architecture described by the manifest.
    pub fn load(stem: &std::path::Path) -> Result<Self> {
        let loaded = load_state(stem)?;
        let cfg = Self::config_from_manifest(&loaded)?;
        // Weight values are overwritten below; the seed only shapes the
        // temporary init.
        let mut rng = crate::seeds::stream_rng(0, "segnet-load");
        let mut net = Self::new(cfg, &mut rng);
        net.copy_from(&loaded)?;
        Ok(net)
    }

    pub fn config_from_manifest(loaded: &LoadedState) -> Result<SegNetConfig> {
        let extra = &loaded.manifest.extra;
        let arch = extra.get("arch").ok_or_else(|| Error::Incompatible {
            fields: vec!["missing `arch`".into()],
        })?;
        let get = |v: &serde_json::Value, key: &str| -> Result<u64> {
            v.get(key)
                .and_then(|x| x.as_u64())
                .ok_or_else(|| Error::Incompatible {
                    fields: vec![format!("missing arch field `{key}`")],
                })
        };
        let num_classes = extra
            .get("num_classes")
            .and_then(|x| x.as_u64())
            .ok_or_else(|| Error::Incompatible {
                fields: vec!["missing `num_classes`".into()],
            })?;
        Ok(SegNetConfig {
            in_channels: get(arch, "in_channels")? as usize,
            base_width: get(arch, "base_width")? as usize,
            num_classes: num_classes as usize,
            dropout_rate: arch.get("dropout_rate").and_then(|x| x.as_f64()).unwrap_or(0.3),
        })
    }

    fn copy_from(&mut self, loaded: &LoadedState) -> Result<()> {
        for conv in self.convs_mut() {
            for p in conv.params_mut() {
                let name = p.name.clone();
                loaded.copy_into(&name, &mut p.w)?;
            }
        }
        for bn in self.bns_mut() {
            let name = bn.name.clone();
            loaded.copy_into(&format!("{name}.gamma_s"), &mut bn.gamma_s.w)?;
            loaded.copy_into(&format!("{name}.beta_s"), &mut bn.beta_s.w)?;
            loaded.copy_into(&format!("{name}.gamma_t"), &mut bn.gamma_t.w)?;
            loaded.copy_into(&format!("{name}.beta_t"), &mut bn.beta_t.w)?;
            loaded.copy_into(&format!("{name}.running_mean_s"), &mut bn.running_mean_s)?;
            loaded.copy_into(&format!("{name}.running_var_s"), &mut bn.running_var_s)?;
            loaded.copy_into(&format!("{name}.running_mean_t"), &mut bn.running_mean_t)?;
            loaded.copy_into(&format!("{name}.running_var_t"), &mut bn.running_var_t)?;
        }
        Ok(())
    }

    fn convs_mut(&mut self) -> [&mut Conv3d<T>; 18] {
        [
            &mut self.enc1.conv1,
            &mut self.enc1.conv2,
            &mut self.enc2.conv1,
            &mut self.enc2.conv2,
            &mut self.enc3.conv1,
            &mut self.enc3.conv2,
            &mut self.enc4.conv1,
            &mut self.enc4.conv2,
            &mut self.up3.conv,
            &mut self.dec3.conv1,
            &mut self.dec3.conv2,
            &mut self.up2.conv,
            &mut self.dec2.conv1,
            &mut self.dec2.conv2,
            &mut self.up1.conv,
            &mut self.dec1.conv1,
            &mut self.dec1.conv2,
            &mut self.head,
        ]
    }

    fn bns_mut(&mut self) -> [&mut DualBn<T>; 17] {
        [
            &mut self.enc1.bn1,
            &mut self.enc1.bn2,
            &mut self.enc2.bn1,
            &mut self.enc2.bn2,
            &mut self.enc3.bn1,
            &mut self.enc3.bn2,
            &mut self.enc4.bn1,
            &mut self.enc4.bn2,
            &mut self.up3.bn,
            &mut self.dec3.bn1,
            &mut self.dec3.bn2,
            &mut self.up2.bn,
            &mut self.dec2.bn1,
            &mut self.dec2.bn2,
            &mut self.up1.bn,
            &mut self.dec1.bn1,
            &mut self.dec1.bn2,
        ]
    }

    /// Snapshot of the target-branch statistics, for isolation checks.
    pub fn target_branch_fingerprint(&self) -> Vec<T> {
        let mut out = Vec::new();
        for bn in self.bns() {
            out.extend_from_slice(&bn.gamma_t.w);
            out.extend_from_slice(&bn.beta_t.w);
            out.extend_from_slice(&bn.running_mean_t);
            out.extend_from_slice(&bn.running_var_t);
        }
        out
    }

    /// Snapshot of the source-branch statistics.
    pub fn source_branch_fingerprint(&self) -> Vec<T> {
        let mut out = Vec::new();
        for bn in self.bns() {
            out.extend_from_slice(&bn.gamma_s.w);
            out.extend_from_slice(&bn.beta_s.w);
            out.extend_from_slice(&bn.running_mean_s);
            out.extend_from_slice(&bn.running_var_s);
        }
        out
    }

    /// Zeroes the source-branch BN affine (for routing-isolation checks).
    pub fn corrupt_source_branch(&mut self) {
        for bn in self.bns_mut() {
            bn.gamma_s.w.iter_mut().for_each(|v| *v = T::zero());
            bn.beta_s.w.iter_mut().for_each(|v| *v = T::zero());
            bn.running_mean_s.iter_mut().for_each(|v| *v = T::zero());
            bn.running_var_s.iter_mut().for_each(|v| *v = T::one());
        }
    }
}

fn add_into<T: Real>(acc: &mut Tensor<T>, other: &Tensor<T>) {
    debug_assert_eq!(acc.shape(), other.shape());
    for (a, &b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
}

/// Compares two checkpoint manifests field by field; lists what differs.
pub fn verify_manifest_compatible(a: &LoadedState, b: &LoadedState) -> Result<()> {
    let mut fields = Vec::new();
    for key in ["arch", "num_classes", "bn_sites"] {
        let va = a.manifest.extra.get(key);
        let vb = b.manifest.extra.get(key);
        if va != vb {
            fields.push(format!("{key}: {va:?} != {vb:?}"));
        }
    }
    if a.manifest.param_shapes.len() != b.manifest.param_shapes.len() {
        fields.push(format!(
            "param count: {} != {}",
            a.manifest.param_shapes.len(),
            b.manifest.param_shapes.len()
        ));
    }
    if fields.is_empty() {
        Ok(())
    } else {
        Err(Error::Incompatible { fields })
    }
}
