use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{
    col2im, conv_backward, conv_forward, dense_backward, dense_forward, global_avg_pool,
    global_avg_pool_backward, im2col, silu, silu_backward, ConvGeom,
};
use super::loss::{logits_grad, sample_cross_entropy, softmax, one_hot};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::features::{N_FRAMES, N_MELS};

/// Layer widths and input size of a [`CompactResNet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub input_h: usize,
    pub input_w: usize,
    pub stem: usize,
    /// (output channels, stride) per residual block.
    pub blocks: Vec<(usize, usize)>,
    pub classes: usize,
}

impl ArchSpec {
    /// 1×128×98 input, stem 8, blocks 16/32/64/64 with stride 2 in the first three.
    pub fn standard(classes: usize) -> Self {
        Self {
            input_h: N_MELS,
            input_w: N_FRAMES,
            stem: 8,
            blocks: vec![(16, 2), (32, 2), (64, 2), (64, 1)],
            classes,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_h * self.input_w
    }

    fn validate(&self) -> Result<()> {
        if self.input_h == 0 || self.input_w == 0 || self.stem == 0 || self.classes == 0 {
            return Err(Error::InvalidParameter(format!("degenerate architecture {self}")));
        }
        if self.blocks.iter().any(|&(c, s)| c == 0 || s == 0) {
            return Err(Error::InvalidParameter(format!("degenerate block in {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let blocks: Vec<String> = self.blocks.iter().map(|(c, s)| format!("{c}/{s}")).collect();
        write!(
            f,
            "input={}x{};stem={};blocks={};classes={}",
            self.input_h,
            self.input_w,
            self.stem,
            blocks.join(","),
            self.classes
        )
    }
}

impl FromStr for ArchSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("architecture string {s:?}"));
        let num = |v: &str| v.trim().parse::<usize>().map_err(|_| bad());
        let (mut input, mut stem, mut blocks, mut classes) = (None, None, None, None);
        for part in s.split(';') {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            match k.trim() {
                "input" => {
                    let (h, w) = v.split_once('x').ok_or_else(bad)?;
                    input = Some((num(h)?, num(w)?));
                }
                "stem" => stem = Some(num(v)?),
                "blocks" => {
                    let mut out = Vec::new();
                    for b in v.split(',').filter(|b| !b.trim().is_empty()) {
                        let (c, st) = b.split_once('/').ok_or_else(bad)?;
                        out.push((num(c)?, num(st)?));
                    }
                    blocks = Some(out);
                }
                "classes" => classes = Some(num(v)?),
                _ => return Err(bad()),
            }
        }
        let (input_h, input_w) = input.ok_or_else(bad)?;
        let spec = ArchSpec {
            input_h,
            input_w,
            stem: stem.ok_or_else(bad)?,
            blocks: blocks.ok_or_else(bad)?,
            classes: classes.ok_or_else(bad)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Named region of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamTensor {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamTensor {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone)]
struct ConvSlot {
    geom: ConvGeom,
    /// Weights at `offset`, bias right after them.
    offset: usize,
}

impl ConvSlot {
    fn weight<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.offset..self.offset + self.geom.weight_len()]
    }

    fn bias<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        let w = self.offset + self.geom.weight_len();
        &p[w..w + self.geom.out_c]
    }

    fn grads<'a>(&self, g: &'a mut [f64]) -> (&'a mut [f64], &'a mut [f64]) {
        let wl = self.geom.weight_len();
        g[self.offset..self.offset + wl + self.geom.out_c].split_at_mut(wl)
    }
}

#[derive(Debug, Clone)]
struct BlockSlot {
    main: ConvSlot,
    shortcut: Option<ConvSlot>,
}

/// Activation capture points, in forward order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tap {
    Stem,
    Block1,
    Block2,
    Block3,
    Block4,
    Pool,
    Fc,
}

impl Tap {
    pub const ALL: [Tap; 7] = [
        Tap::Stem,
        Tap::Block1,
        Tap::Block2,
        Tap::Block3,
        Tap::Block4,
        Tap::Pool,
        Tap::Fc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Tap::Stem => "stem",
            Tap::Block1 => "block1",
            Tap::Block2 => "block2",
            Tap::Block3 => "block3",
            Tap::Block4 => "block4",
            Tap::Pool => "pool",
            Tap::Fc => "fc",
        }
    }
}

/// Per-example intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    stem_col: Vec<f64>,
    stem_z: Vec<f64>,
    stem_a: Vec<f64>,
    blocks: Vec<BlockTrace>,
    pool: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone)]
struct BlockTrace {
    col: Vec<f64>,
    shortcut_col: Option<Vec<f64>>,
    z: Vec<f64>,
    a: Vec<f64>,
}

/// Small residual CNN: conv stem, residual blocks (one 3×3 conv plus a
/// shortcut, 1×1 projection when the shape changes), global average pool
/// and a linear head. SiLU activations throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactResNet {
    pub arch: ArchSpec,
    pub params: Vec<f64>,
    tensors: Vec<ParamTensor>,
}

#[derive(Debug, Clone)]
struct Layout {
    stem: ConvSlot,
    blocks: Vec<BlockSlot>,
    fc_offset: usize,
    fc_in: usize,
    tensors: Vec<ParamTensor>,
    n_params: usize,
}

fn layout(arch: &ArchSpec) -> Layout {
    let mut tensors = Vec::new();
    let mut offset = 0;
    let mut conv = |name: &str, geom: ConvGeom, tensors: &mut Vec<ParamTensor>| {
        let slot = ConvSlot { geom, offset };
        tensors.push(ParamTensor {
            name: format!("{name}.weight"),
            offset,
            shape: vec![geom.out_c, geom.in_c, geom.k, geom.k],
        });
        offset += geom.weight_len();
        tensors.push(ParamTensor {
            name: format!("{name}.bias"),
            offset,
            shape: vec![geom.out_c],
        });
        offset += geom.out_c;
        slot
    };
    let stem_geom = ConvGeom {
        in_c: 1,
        in_h: arch.input_h,
        in_w: arch.input_w,
        out_c: arch.stem,
        k: 3,
        stride: 2,
        pad: 1,
    };
    let stem = conv("stem", stem_geom, &mut tensors);
    let (mut c, mut h, mut w) = (arch.stem, stem_geom.out_h(), stem_geom.out_w());
    let mut blocks = Vec::new();
    for (i, &(out_c, stride)) in arch.blocks.iter().enumerate() {
        let g = ConvGeom {
            in_c: c,
            in_h: h,
            in_w: w,
            out_c,
            k: 3,
            stride,
            pad: 1,
        };
        let main = conv(&format!("block{}.conv", i + 1), g, &mut tensors);
        let shortcut = if out_c != c || stride != 1 {
            let sg = ConvGeom { k: 1, pad: 0, ..g };
            Some(conv(&format!("block{}.shortcut", i + 1), sg, &mut tensors))
        } else {
            None
        };
        blocks.push(BlockSlot { main, shortcut });
        c = out_c;
        h = g.out_h();
        w = g.out_w();
    }
    let fc_offset = offset;
    tensors.push(ParamTensor {
        name: "fc.weight".into(),
        offset,
        shape: vec![arch.classes, c],
    });
    offset += arch.classes * c;
    tensors.push(ParamTensor {
        name: "fc.bias".into(),
        offset,
        shape: vec![arch.classes],
    });
    offset += arch.classes;
    Layout {
        stem,
        blocks,
        fc_offset,
        fc_in: c,
        tensors,
        n_params: offset,
    }
}

impl CompactResNet {
    /// He-uniform weights (bound sqrt(6 / fan_in)) and zero biases.
    pub fn new(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let lay = layout(&arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; lay.n_params];
        for t in &lay.tensors {
            if t.name.ends_with(".weight") {
                let fan_in: usize = t.shape[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                for p in &mut params[t.range()] {
                    *p = rng.gen_range(-bound..bound);
                }
            }
        }
        Ok(Self {
            arch,
            params,
            tensors: lay.tensors,
        })
    }

    /// Rebuilds a model from a flat parameter vector laid out as [`Self::tensors`].
    pub fn from_params(arch: ArchSpec, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let lay = layout(&arch);
        if params.len() != lay.n_params {
            return Err(Error::ShapeMismatch {
                expected: vec![lay.n_params],
                got: vec![params.len()],
            });
        }
        Ok(Self {
            arch,
            params,
            tensors: lay.tensors,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Sets the linear head (weights and bias) to zero.
    pub fn zero_head(&mut self) {
        for t in self.tensors.clone() {
            if t.name.starts_with("fc.") {
                self.params[t.range()].fill(0.0);
            }
        }
    }

    fn layout(&self) -> Layout {
        layout(&self.arch)
    }

    /// Shapes of each tap for one example: (C, H, W) for conv taps,
    /// (features,) for pool and fc.
    pub fn tap_shapes(&self) -> Vec<(Tap, Vec<usize>)> {
        let lay = self.layout();
        let g = lay.stem.geom;
        let mut out = vec![(Tap::Stem, vec![g.out_c, g.out_h(), g.out_w()])];
        let taps = [Tap::Block1, Tap::Block2, Tap::Block3, Tap::Block4];
        for (i, b) in lay.blocks.iter().enumerate() {
            let g = b.main.geom;
            if let Some(&tap) = taps.get(i) {
                out.push((tap, vec![g.out_c, g.out_h(), g.out_w()]));
            }
        }
        out.push((Tap::Pool, vec![lay.fc_in]));
        out.push((Tap::Fc, vec![self.arch.classes]));
        out
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_len() {
            return Err(Error::ShapeMismatch {
                expected: vec![1, self.arch.input_h, self.arch.input_w],
                got: vec![x.len()],
            });
        }
        Ok(())
    }

    /// Forward pass of one example, keeping everything backward needs.
    pub fn forward_one(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let lay = self.layout();
        let p = &self.params;
        let stem_col = im2col(&lay.stem.geom, x);
        let stem_z = conv_forward(&lay.stem.geom, lay.stem.weight(p), lay.stem.bias(p), &stem_col);
        let stem_a = silu(&stem_z);
        let mut blocks: Vec<BlockTrace> = Vec::with_capacity(lay.blocks.len());
        for b in &lay.blocks {
            let input = blocks.last().map(|t| &t.a).unwrap_or(&stem_a);
            let col = im2col(&b.main.geom, input);
            let mut z = conv_forward(&b.main.geom, b.main.weight(p), b.main.bias(p), &col);
            let shortcut_col = match &b.shortcut {
                Some(sc) => {
                    let scol = im2col(&sc.geom, input);
                    let s = conv_forward(&sc.geom, sc.weight(p), sc.bias(p), &scol);
                    for (zi, si) in z.iter_mut().zip(&s) {
                        *zi += si;
                    }
                    Some(scol)
                }
                None => {
                    for (zi, si) in z.iter_mut().zip(input) {
                        *zi += si;
                    }
                    None
                }
            };
            let a = silu(&z);
            blocks.push(BlockTrace {
                col,
                shortcut_col,
                z,
                a,
            });
        }
        let last = blocks.last().map(|t| &t.a).unwrap_or(&stem_a);
        let pool = global_avg_pool(last, lay.fc_in);
        let fc_w = &p[lay.fc_offset..lay.fc_offset + self.arch.classes * lay.fc_in];
        let fc_b = &p[lay.fc_offset + fc_w.len()..lay.fc_offset + fc_w.len() + self.arch.classes];
        let logits = dense_forward(fc_w, fc_b, &pool);
        Ok(Trace {
            stem_col,
            stem_z,
            stem_a,
            blocks,
            pool,
            logits,
        })
    }

    /// Accumulates parameter gradients for one example into `grads`,
    /// given dL/dlogits.
    pub fn backward_one(&self, trace: &Trace, dlogits: &[f64], grads: &mut [f64]) {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size");
        let lay = self.layout();
        let p = &self.params;
        let nc = self.arch.classes;
        let fc_w = &p[lay.fc_offset..lay.fc_offset + nc * lay.fc_in];
        let (gw, gb) = grads[lay.fc_offset..lay.fc_offset + nc * lay.fc_in + nc]
            .split_at_mut(nc * lay.fc_in);
        let dpool = dense_backward(fc_w, &trace.pool, dlogits, gw, gb);
        let last_positions = match lay.blocks.last() {
            Some(b) => b.main.geom.positions(),
            None => lay.stem.geom.positions(),
        };
        let mut da = global_avg_pool_backward(&dpool, last_positions);
        for (i, b) in lay.blocks.iter().enumerate().rev() {
            let t = &trace.blocks[i];
            let dz = silu_backward(&t.z, &da);
            let main_w = b.main.weight(p);
            let (dw, db) = b.main.grads(grads);
            let dcol = conv_backward(&b.main.geom, main_w, &t.col, &dz, dw, db, true)
                .expect("input gradient requested");
            let mut dx = col2im(&b.main.geom, &dcol);
            match (&b.shortcut, &t.shortcut_col) {
                (Some(sc), Some(scol)) => {
                    let sw = sc.weight(p);
                    let (dw, db) = sc.grads(grads);
                    let dscol = conv_backward(&sc.geom, sw, scol, &dz, dw, db, true)
                        .expect("input gradient requested");
                    for (d, s) in dx.iter_mut().zip(col2im(&sc.geom, &dscol)) {
                        *d += s;
                    }
                }
                _ => {
                    for (d, s) in dx.iter_mut().zip(&dz) {
                        *d += s;
                    }
                }
            }
            da = dx;
        }
        let dz = silu_backward(&trace.stem_z, &da);
        let stem_w = lay.stem.weight(p);
        let (dw, db) = lay.stem.grads(grads);
        conv_backward(&lay.stem.geom, stem_w, &trace.stem_col, &dz, dw, db, false);
    }

    /// Mean cross-entropy of a batch and its gradient w.r.t. every parameter.
    /// Per-example gradients are summed in index order.
    pub fn loss_and_grad(&self, xs: &[&[f64]], ys: &[usize]) -> Result<(f64, Vec<f64>)> {
        if xs.len() != ys.len() || xs.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "batch of {} inputs with {} labels",
                xs.len(),
                ys.len()
            )));
        }
        let n = xs.len();
        let mut grads = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            if y >= self.arch.classes {
                return Err(Error::InvalidParameter(format!("label {y} out of range")));
            }
            let trace = self.forward_one(x)?;
            let probs = softmax(&trace.logits);
            loss += sample_cross_entropy(&probs, &one_hot(y, self.arch.classes));
            self.backward_one(&trace, &logits_grad(&probs, y, n), &mut grads);
        }
        Ok((loss / n as f64, grads))
    }

    /// Mean cross-entropy of a batch without gradients.
    pub fn loss(&self, xs: &[&[f64]], ys: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let probs = softmax(&self.forward_one(x)?.logits);
            total += sample_cross_entropy(&probs, &one_hot(y, self.arch.classes));
        }
        Ok(total / xs.len().max(1) as f64)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_one(x)?.logits)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(super::loss::argmax(&self.logits(x)?))
    }

    /// Batched forward over a (B, 1, H, W) tensor. Returns (B, C) logits and,
    /// when requested, one (B, ...) tensor per tap.
    pub fn forward(&self, batch: &Tensor, with_taps: bool) -> Result<ForwardOutput> {
        let expected = [1, self.arch.input_h, self.arch.input_w];
        if batch.shape.len() != 4 || batch.shape[1..] != expected {
            let mut want = vec![batch.shape.first().copied().unwrap_or(0)];
            want.extend_from_slice(&expected);
            return Err(Error::ShapeMismatch {
                expected: want,
                got: batch.shape.clone(),
            });
        }
        let b = batch.shape[0];
        let per = self.arch.input_len();
        let shapes = self.tap_shapes();
        let mut logits = Vec::with_capacity(b * self.arch.classes);
        let mut taps: Vec<Vec<f64>> = vec![Vec::new(); shapes.len()];
        for i in 0..b {
            let trace = self.forward_one(&batch.data[i * per..(i + 1) * per])?;
            logits.extend_from_slice(&trace.logits);
            if with_taps {
                for (slot, values) in taps.iter_mut().zip(trace.tap_values()) {
                    slot.extend_from_slice(values);
                }
            }
        }
        let taps = with_taps.then(|| {
            shapes
                .into_iter()
                .zip(taps)
                .map(|((tap, shape), data)| {
                    let mut full = vec![b];
                    full.extend(shape);
                    (tap, Tensor { shape: full, data })
                })
                .collect()
        });
        Ok(ForwardOutput {
            logits: Tensor {
                shape: vec![b, self.arch.classes],
                data: logits,
            },
            taps,
        })
    }
}

impl Trace {
    /// Activations in tap order: stem, each block, pool, logits.
    pub fn tap_values(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.stem_a];
        v.extend(self.blocks.iter().take(4).map(|b| b.a.as_slice()));
        v.push(&self.pool);
        v.push(&self.logits);
        v
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub taps: Option<Vec<(Tap, Tensor)>>,
}
