//! Slice translator (encoder - residual blocks - decoder, instance norm)
//! and patch discriminator.

use crate::nn::conv2d::{Conv2d, Conv2dCtx, Pad2d};
use crate::nn::norm2d::{InstanceNorm2d, InstanceNorm2dCtx};
use crate::nn::ops;
use crate::nn::param::Param;
use crate::nn::tensor::Tensor;
use crate::scalar::Real;

const LRELU_SLOPE: f64 = 0.2;

/// Anything that maps a batch of slices (N, 1, H, W) to a batch of the same
/// shape. Implemented by [`TranslatorNet`]; analytic maps implement it in
/// tests.
pub trait SliceTranslator<T: Real>: Sync {
    fn translate_batch(&self, x: &Tensor<T>) -> Tensor<T>;
}

/// Anything that maps a batch of slices to a map of raw (pre-sigmoid)
/// realness scores.
pub trait SliceScorer<T: Real>: Sync {
    fn score_batch(&self, x: &Tensor<T>) -> Tensor<T>;
}

#[derive(Debug, Clone)]
struct ConvIn<T: Real> {
    conv: Conv2d<T>,
    norm: InstanceNorm2d<T>,
}

struct ConvInCtx<T: Real> {
    c: Conv2dCtx<T>,
    n: InstanceNorm2dCtx<T>,
    r: Vec<bool>,
}

impl<T: Real> ConvIn<T> {
    fn new<R: rand::Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        pad_mode: Pad2d,
        rng: &mut R,
    ) -> Self {
        Self {
            conv: Conv2d::gan_init(name, in_ch, out_ch, k, stride, pad, pad_mode, false, rng),
            norm: InstanceNorm2d::new(&format!("{name}.in"), out_ch),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.conv.forward(x);
        let y = self.norm.forward(&y);
        ops::relu(&y).0
    }

    fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, ConvInCtx<T>) {
        let (y, c) = self.conv.forward_train(x);
        let (y, n) = self.norm.forward_train(&y);
        let (y, r) = ops::relu(&y);
        (y, ConvInCtx { c, n, r })
    }

    fn backward(&mut self, ctx: &ConvInCtx<T>, dy: &Tensor<T>) -> Tensor<T> {
        let dy = ops::relu_backward(&ctx.r, dy);
        let dy = self.norm.backward(&ctx.n, &dy);
        self.conv.backward(&ctx.c, &dy)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.conv.params_mut().chain(self.norm.params_mut())
    }

    fn params(&self) -> impl Iterator<Item = &Param<T>> {
        self.conv.params().chain(self.norm.params())
    }
}

#[derive(Debug, Clone)]
struct ResBlock<T: Real> {
    conv1: Conv2d<T>,
    norm1: InstanceNorm2d<T>,
    conv2: Conv2d<T>,
    norm2: InstanceNorm2d<T>,
}

struct ResBlockCtx<T: Real> {
    c1: Conv2dCtx<T>,
    n1: InstanceNorm2dCtx<T>,
    r1: Vec<bool>,
    c2: Conv2dCtx<T>,
    n2: InstanceNorm2dCtx<T>,
}

impl<T: Real> ResBlock<T> {
    fn new<R: rand::Rng>(name: &str, ch: usize, rng: &mut R) -> Self {
        Self {
            conv1: Conv2d::gan_init(&format!("{name}.conv1"), ch, ch, 3, 1, 1, Pad2d::Reflect, false, rng),
            norm1: InstanceNorm2d::new(&format!("{name}.in1"), ch),
            conv2: Conv2d::gan_init(&format!("{name}.conv2"), ch, ch, 3, 1, 1, Pad2d::Reflect, false, rng),
            norm2: InstanceNorm2d::new(&format!("{name}.in2"), ch),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.conv1.forward(x);
        let y = self.norm1.forward(&y);
        let (y, _) = ops::relu(&y);
        let y = self.conv2.forward(&y);
        let y = self.norm2.forward(&y);
        add(&y, x)
    }

    fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, ResBlockCtx<T>) {
        let (y, c1) = self.conv1.forward_train(x);
        let (y, n1) = self.norm1.forward_train(&y);
        let (y, r1) = ops::relu(&y);
        let (y, c2) = self.conv2.forward_train(&y);
        let (y, n2) = self.norm2.forward_train(&y);
        (add(&y, x), ResBlockCtx { c1, n1, r1, c2, n2 })
    }

    fn backward(&mut self, ctx: &ResBlockCtx<T>, dy: &Tensor<T>) -> Tensor<T> {
        let d = self.norm2.backward(&ctx.n2, dy);
        let d = self.conv2.backward(&ctx.c2, &d);
        let d = ops::relu_backward(&ctx.r1, &d);
        let d = self.norm1.backward(&ctx.n1, &d);
        let d = self.conv1.backward(&ctx.c1, &d);
        add(&d, dy) // skip connection
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.conv1
            .params_mut()
            .chain(self.norm1.params_mut())
            .chain(self.conv2.params_mut())
            .chain(self.norm2.params_mut())
    }

    fn params(&self) -> impl Iterator<Item = &Param<T>> {
        self.conv1
            .params()
            .chain(self.norm1.params())
            .chain(self.conv2.params())
            .chain(self.norm2.params())
    }
}

fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// 2D image-to-image translator: one channel in, one out, same spatial size.
/// Two downsampling stages, four residual blocks, two upsampling stages,
/// and a global skip from input to output: the stages learn the style
/// delta. Instance norm erases per-slice intensity statistics inside the
/// stages, so without the skip a slice's absolute intensity could never be
/// reconstructed.
#[derive(Debug, Clone)]
pub struct TranslatorNet<T: Real> {
    stem: ConvIn<T>,
    down1: ConvIn<T>,
    down2: ConvIn<T>,
    res: Vec<ResBlock<T>>,
    up1: ConvIn<T>,
    up2: ConvIn<T>,
    out: Conv2d<T>,
    pub base_width: usize,
}

pub struct TranslatorCtx<T: Real> {
    stem: ConvInCtx<T>,
    down1: ConvInCtx<T>,
    down2: ConvInCtx<T>,
    res: Vec<ResBlockCtx<T>>,
    up1: ConvInCtx<T>,
    up2: ConvInCtx<T>,
    out: Conv2dCtx<T>,
}

pub const TRANSLATOR_RES_BLOCKS: usize = 4;

impl<T: Real> TranslatorNet<T> {
    pub fn new<R: rand::Rng>(name: &str, base_width: usize, rng: &mut R) -> Self {
        let b = base_width;
        Self {
            stem: ConvIn::new(&format!("{name}.stem"), 1, b, 7, 1, 3, Pad2d::Reflect, rng),
            down1: ConvIn::new(&format!("{name}.down1"), b, 2 * b, 3, 2, 1, Pad2d::Zeros, rng),
            down2: ConvIn::new(&format!("{name}.down2"), 2 * b, 4 * b, 3, 2, 1, Pad2d::Zeros, rng),
            res: (0..TRANSLATOR_RES_BLOCKS)
                .map(|i| ResBlock::new(&format!("{name}.res{i}"), 4 * b, rng))
                .collect(),
            up1: ConvIn::new(&format!("{name}.up1"), 4 * b, 2 * b, 3, 1, 1, Pad2d::Zeros, rng),
            up2: ConvIn::new(&format!("{name}.up2"), 2 * b, b, 3, 1, 1, Pad2d::Zeros, rng),
            out: Conv2d::gan_init(&format!("{name}.out"), b, 1, 7, 1, 3, Pad2d::Reflect, true, rng),
            base_width,
        }
    }

    /// Inference on a batch of slices (N, 1, H, W); H and W must be
    /// divisible by 4 (two downsampling stages).
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.stem.forward(x);
        let y = self.down1.forward(&y);
        let mut y = self.down2.forward(&y);
        for r in &self.res {
            y = r.forward(&y);
        }
        let y = self.up1.forward(&ops::upsample2x_2d(&y));
        let y = self.up2.forward(&ops::upsample2x_2d(&y));
        add(&self.out.forward(&y), x)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, TranslatorCtx<T>) {
        let (y, stem) = self.stem.forward_train(x);
        let (y, down1) = self.down1.forward_train(&y);
        let (mut y, down2) = self.down2.forward_train(&y);
        let mut res = Vec::with_capacity(self.res.len());
        for r in &self.res {
            let (ny, ctx) = r.forward_train(&y);
            y = ny;
            res.push(ctx);
        }
        let (y, up1) = self.up1.forward_train(&ops::upsample2x_2d(&y));
        let (y, up2) = self.up2.forward_train(&ops::upsample2x_2d(&y));
        let (y, out) = self.out.forward_train(&y);
        (
            add(&y, x),
            TranslatorCtx {
                stem,
                down1,
                down2,
                res,
                up1,
                up2,
                out,
            },
        )
    }

    pub fn backward(&mut self, ctx: &TranslatorCtx<T>, dy: &Tensor<T>) -> Tensor<T> {
        let dstages = self.out.backward(&ctx.out, dy);
        let dstages = self.up2.backward(&ctx.up2, &dstages);
        let dstages = ops::upsample2x_2d_backward(&dstages);
        let dstages = self.up1.backward(&ctx.up1, &dstages);
        let mut dstages = ops::upsample2x_2d_backward(&dstages);
        for (r, rctx) in self.res.iter_mut().zip(&ctx.res).rev() {
            dstages = r.backward(rctx, &dstages);
        }
        let dstages = self.down2.backward(&ctx.down2, &dstages);
        let dstages = self.down1.backward(&ctx.down1, &dstages);
        let dx = self.stem.backward(&ctx.stem, &dstages);
        // Global skip: gradient reaches the input directly as well.
        add(&dx, dy)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p: Vec<&mut Param<T>> = Vec::new();
        p.extend(self.stem.params_mut());
        p.extend(self.down1.params_mut());
        p.extend(self.down2.params_mut());
        for r in &mut self.res {
            p.extend(r.params_mut());
        }
        p.extend(self.up1.params_mut());
        p.extend(self.up2.params_mut());
        p.extend(self.out.params_mut());
        p
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut p: Vec<&Param<T>> = Vec::new();
        p.extend(self.stem.params());
        p.extend(self.down1.params());
        p.extend(self.down2.params());
        for r in &self.res {
            p.extend(r.params());
        }
        p.extend(self.up1.params());
        p.extend(self.up2.params());
        p.extend(self.out.params());
        p
    }

    pub fn zero_grads(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }
}

/// Patch discriminator producing a map of raw (pre-sigmoid) scores.
#[derive(Debug, Clone)]
pub struct DiscriminatorNet<T: Real> {
    c1: Conv2d<T>,
    c2: Conv2d<T>,
    n2: InstanceNorm2d<T>,
    c3: Conv2d<T>,
    n3: InstanceNorm2d<T>,
    head: Conv2d<T>,
    pub base_width: usize,
}

pub struct DiscriminatorCtx<T: Real> {
    c1: Conv2dCtx<T>,
    r1: Vec<bool>,
    c2: Conv2dCtx<T>,
    n2: InstanceNorm2dCtx<T>,
    r2: Vec<bool>,
    c3: Conv2dCtx<T>,
    n3: InstanceNorm2dCtx<T>,
    r3: Vec<bool>,
    head: Conv2dCtx<T>,
}

impl<T: Real> DiscriminatorNet<T> {
    pub fn new<R: rand::Rng>(name: &str, base_width: usize, rng: &mut R) -> Self {
        let b = base_width;
        Self {
            c1: Conv2d::gan_init(&format!("{name}.c1"), 1, b, 4, 2, 1, Pad2d::Zeros, true, rng),
            c2: Conv2d::gan_init(&format!("{name}.c2"), b, 2 * b, 4, 2, 1, Pad2d::Zeros, false, rng),
            n2: InstanceNorm2d::new(&format!("{name}.in2"), 2 * b),
            c3: Conv2d::gan_init(&format!("{name}.c3"), 2 * b, 4 * b, 4, 1, 1, Pad2d::Zeros, false, rng),
            n3: InstanceNorm2d::new(&format!("{name}.in3"), 4 * b),
            head: Conv2d::gan_init(&format!("{name}.head"), 4 * b, 1, 4, 1, 1, Pad2d::Zeros, true, rng),
            base_width,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let (y, _) = ops::leaky_relu(&self.c1.forward(x), LRELU_SLOPE);
        let y = self.c2.forward(&y);
        let (y, _) = ops::leaky_relu(&self.n2.forward(&y), LRELU_SLOPE);
        let y = self.c3.forward(&y);
        let (y, _) = ops::leaky_relu(&self.n3.forward(&y), LRELU_SLOPE);
        self.head.forward(&y)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, DiscriminatorCtx<T>) {
        let (y, c1) = self.c1.forward_train(x);
        let (y, r1) = ops::leaky_relu(&y, LRELU_SLOPE);
        let (y, c2) = self.c2.forward_train(&y);
        let (y, n2) = self.n2.forward_train(&y);
        let (y, r2) = ops::leaky_relu(&y, LRELU_SLOPE);
        let (y, c3) = self.c3.forward_train(&y);
        let (y, n3) = self.n3.forward_train(&y);
        let (y, r3) = ops::leaky_relu(&y, LRELU_SLOPE);
        let (y, head) = self.head.forward_train(&y);
        (
            y,
            DiscriminatorCtx {
                c1,
                r1,
                c2,
                n2,
                r2,
                c3,
                n3,
                r3,
                head,
            },
        )
    }

    pub fn backward(&mut self, ctx: &DiscriminatorCtx<T>, dy: &Tensor<T>) -> Tensor<T> {
        let dy = self.head.backward(&ctx.head, dy);
        let dy = ops::leaky_relu_backward(&ctx.r3, LRELU_SLOPE, &dy);
        let dy = self.n3.backward(&ctx.n3, &dy);
        let dy = self.c3.backward(&ctx.c3, &dy);
        let dy = ops::leaky_relu_backward(&ctx.r2, LRELU_SLOPE, &dy);
        let dy = self.n2.backward(&ctx.n2, &dy);
        let dy = self.c2.backward(&ctx.c2, &dy);
        let dy = ops::leaky_relu_backward(&ctx.r1, LRELU_SLOPE, &dy);
        self.c1.backward(&ctx.c1, &dy)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p: Vec<&mut Param<T>> = Vec::new();
        p.extend(self.c1.params_mut());
        p.extend(self.c2.params_mut());
        p.extend(self.n2.params_mut());
        p.extend(self.c3.params_mut());
        p.extend(self.n3.params_mut());
        p.extend(self.head.params_mut());
        p
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut p: Vec<&Param<T>> = Vec::new();
        p.extend(self.c1.params());
        p.extend(self.c2.params());
        p.extend(self.n2.params());
        p.extend(self.c3.params());
        p.extend(self.n3.params());
        p.extend(self.head.params());
        p
    }

    pub fn zero_grads(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }
}

impl<T: Real> SliceTranslator<T> for TranslatorNet<T> {
    fn translate_batch(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward(x)
    }
}

impl<T: Real> SliceScorer<T> for DiscriminatorNet<T> {
    fn score_batch(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward(x)
    }
}

/// Exact analytic maps for exercising loss and augmentation contracts.
pub mod test_maps {
    use super::*;
    use crate::scalar::real;

    /// Adds a constant to every pixel. `Shift(0.0)` is the identity.
    #[derive(Debug, Clone, Copy)]
    pub struct Shift(pub f64);

    impl<T: Real> SliceTranslator<T> for Shift {
        fn translate_batch(&self, x: &Tensor<T>) -> Tensor<T> {
            let c: T = real(self.0);
            x.map(|v| v + c)
        }
    }

    /// Scores every input at a fixed probability, or reads the sign of each
    /// pixel (positive pixels look real).
    #[derive(Debug, Clone, Copy)]
    pub struct ConstScorer {
        logit: f64,
        sign_reader: bool,
    }

    impl ConstScorer {
        pub fn probability(p: f64) -> Self {
            Self {
                logit: (p / (1.0 - p)).ln(),
                sign_reader: false,
            }
        }

        /// Maps positive pixels to probability `p` and non-positive pixels
        /// to `1 - p`.
        pub fn sign_reader(p: f64) -> Self {
            Self {
                logit: (p / (1.0 - p)).ln(),
                sign_reader: true,
            }
        }
    }

    impl<T: Real> SliceScorer<T> for ConstScorer {
        fn score_batch(&self, x: &Tensor<T>) -> Tensor<T> {
            let l: T = real(self.logit);
            if self.sign_reader {
                x.map(|v| if v > T::zero() { l } else { -l })
            } else {
                x.map(|_| l)
            }
        }
    }
}
