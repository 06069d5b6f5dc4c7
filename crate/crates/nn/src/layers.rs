use std::rc::Rc;

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::mask::AttentionMask;
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::Mat;
use crate::{NnError, Result};

/// Dense layer `x @ w + b` with `w: [d_in, d_out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        Self::with_std(store, name, d_in, d_out, bias, 1.0 / (d_in as f64).sqrt(), rng)
    }

    pub fn with_std(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, std: f64, rng: &mut impl Rng) -> Self {
        let w = store.add_init(format!("{name}.w"), d_in, d_out, Init::Normal(std), rng);
        let b = bias.then(|| store.add_init(format!("{name}.b"), 1, d_out, Init::Zeros, rng));
        Linear { w, b, d_in, d_out }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        g.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut impl Rng) -> Self {
        LayerNorm {
            gamma: store.add_init(format!("{name}.gamma"), 1, d, Init::Ones, rng),
            beta: store.add_init(format!("{name}.beta"), 1, d, Init::Zeros, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, gamma, beta)
    }
}

/// Two-layer GELU MLP with hidden width `4 * d`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut impl Rng) -> Self {
        Mlp {
            fc1: Linear::new(store, &format!("{name}.fc1"), d, 4 * d, true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), 4 * d, d, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.fc1.forward(g, x);
        let h = g.gelu(h);
        self.fc2.forward(g, h)
    }
}

/// Multi-head attention with separate query/key/value/output projections.
/// Keys and values come from `context` when given (cross-attention).
#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(heads > 0 && d.is_multiple_of(heads), "width {d} not divisible by {heads} heads");
        Attention {
            q: Linear::new(store, &format!("{name}.q"), d, d, true, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, true, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, true, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, true, rng),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, context: Option<Var>, mask: Option<Rc<AttentionMask>>) -> Var {
        let src = context.unwrap_or(x);
        let q = self.q.forward(g, x);
        let k = self.k.forward(g, src);
        let v = self.v.forward(g, src);
        let a = g.attention(q, k, v, self.heads, mask);
        self.o.forward(g, a)
    }
}

/// Pre-norm transformer block: masked self-attention, optional
/// cross-attention into a context sequence, then an MLP, each residual.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub d: usize,
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub cross: Option<(LayerNorm, Attention)>,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, with_cross: bool, rng: &mut impl Rng) -> Self {
        let ln1 = LayerNorm::new(store, &format!("{name}.ln1"), d, rng);
        let attn = Attention::new(store, &format!("{name}.attn"), d, heads, rng);
        let cross = with_cross.then(|| {
            (
                LayerNorm::new(store, &format!("{name}.ln_cross"), d, rng),
                Attention::new(store, &format!("{name}.cross"), d, heads, rng),
            )
        });
        let ln2 = LayerNorm::new(store, &format!("{name}.ln2"), d, rng);
        let mlp = Mlp::new(store, &format!("{name}.mlp"), d, rng);
        TransformerBlock { d, ln1, attn, cross, ln2, mlp }
    }

    /// `cross_context` is attended only if the block was built with
    /// cross-attention; passing one to a block without it is an error.
    pub fn forward(&self, g: &mut Graph, x: Var, mask: Option<Rc<AttentionMask>>, cross_context: Option<Var>) -> Result<Var> {
        let (s, d) = g.value(x).shape();
        if d != self.d {
            return Err(NnError::Shape(format!("block width {} got input width {d}", self.d)));
        }
        if let Some(m) = &mask {
            if (m.queries(), m.keys()) != (s, s) {
                return Err(NnError::Shape(format!("mask {}x{} for sequence of {s}", m.queries(), m.keys())));
            }
        }
        if let Some(c) = cross_context {
            if self.cross.is_none() {
                return Err(NnError::Shape("cross context given to a block without cross-attention".into()));
            }
            if g.value(c).cols() != self.d || g.value(c).rows() == 0 {
                return Err(NnError::Shape(format!("cross context shape {:?}", g.value(c).shape())));
            }
        }
        let h = self.ln1.forward(g, x);
        let a = self.attn.forward(g, h, None, mask);
        let mut x = g.add(x, a);
        if let (Some((ln, cross)), Some(ctx)) = (&self.cross, cross_context) {
            let h = ln.forward(g, x);
            let c = cross.forward(g, h, Some(ctx), None);
            x = g.add(x, c);
        }
        let h = self.ln2.forward(g, x);
        let m = self.mlp.forward(g, h);
        Ok(g.add(x, m))
    }
}

/// Splits an `[h, w, c]` image (row-major, channel-last) into
/// `(h/p)·(w/p)` patch rows of length `p·p·c`, row-major over patches and,
/// within a patch, over `(row, col, channel)`.
pub fn patchify(image: &[f64], h: usize, w: usize, c: usize, p: usize) -> Result<Mat> {
    if p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) || h == 0 || w == 0 {
        return Err(NnError::Shape(format!("{h}x{w} image not divisible into {p}x{p} patches")));
    }
    if image.len() != h * w * c {
        return Err(NnError::Shape(format!("image buffer {} != {h}x{w}x{c}", image.len())));
    }
    let (gh, gw) = (h / p, w / p);
    let dim = p * p * c;
    let mut out = Mat::zeros(gh * gw, dim);
    for pi in 0..gh {
        for pj in 0..gw {
            let row = out.row_mut(pi * gw + pj);
            for di in 0..p {
                let src = ((pi * p + di) * w + pj * p) * c;
                row[di * p * c..(di + 1) * p * c].copy_from_slice(&image[src..src + p * c]);
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`patchify`].
pub fn unpatchify(tokens: &Mat, h: usize, w: usize, c: usize, p: usize) -> Result<Vec<f64>> {
    if p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) {
        return Err(NnError::Shape(format!("{h}x{w} image not divisible into {p}x{p} patches")));
    }
    let (gh, gw) = (h / p, w / p);
    if tokens.shape() != (gh * gw, p * p * c) {
        return Err(NnError::Shape(format!("token grid {:?} for {h}x{w}x{c} at patch {p}", tokens.shape())));
    }
    let mut image = vec![0.0; h * w * c];
    for pi in 0..gh {
        for pj in 0..gw {
            let row = tokens.row(pi * gw + pj);
            for di in 0..p {
                let dst = ((pi * p + di) * w + pj * p) * c;
                image[dst..dst + p * c].copy_from_slice(&row[di * p * c..(di + 1) * p * c]);
            }
        }
    }
    Ok(image)
}

/// Learned linear patch embedding `[h, w, c] -> [(h/p)·(w/p), d]`.
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    pub proj: Linear,
    pub patch: usize,
    pub channels: usize,
}

impl PatchEmbed {
    pub fn new(store: &mut ParamStore, name: &str, patch: usize, channels: usize, d: usize, rng: &mut impl Rng) -> Self {
        PatchEmbed { proj: Linear::new(store, name, patch * patch * channels, d, true, rng), patch, channels }
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn embed(&self, g: &mut Graph, image: &[f64], h: usize, w: usize) -> Result<Var> {
        let patches = patchify(image, h, w, self.channels, self.patch)?;
        let x = g.constant(patches);
        Ok(self.proj.forward(g, x))
    }
}

/// Sinusoidal embedding of a scalar (e.g. a noise level in `[0, 1]`, scaled
/// by 1000 so that low frequencies still resolve it).
pub fn sinusoidal_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10_000f64).ln() * k as f64 / half.max(1) as f64).exp();
        let a = 1000.0 * t * freq;
        out[k] = a.sin();
        out[half + k] = a.cos();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_params, rel_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
        Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identical_keys_get_identical_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let q = g.constant(random_mat(3, 4, &mut rng));
        let mut km = random_mat(3, 4, &mut rng);
        let r0 = km.row(0).to_vec();
        km.row_mut(2).copy_from_slice(&r0);
        let k = g.constant(km);
        // One-hot values expose the attention weights directly.
        let mut vm = Mat::zeros(3, 4);
        vm.set(0, 0, 1.0);
        vm.set(2, 1, 1.0);
        let v = g.constant(vm);
        let out = g.attention(q, k, v, 1, None);
        for i in 0..3 {
            assert_eq!(g.value(out).get(i, 0), g.value(out).get(i, 1));
        }
    }

    #[test]
    fn self_only_mask_ignores_other_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let block = TransformerBlock::new(&mut store, "b", 8, 2, false, &mut rng);
        let mask = Rc::new(AttentionMask::from_fn(4, 4, |q, k| q == k));
        let x0 = random_mat(4, 8, &mut rng);
        let mut x1 = x0.clone();
        for i in [0, 2, 3] {
            x1.row_mut(i).iter_mut().for_each(|v| *v += 5.0);
        }
        let run = |x: Mat| {
            let mut g = Graph::new(&store);
            let x = g.constant(x);
            let y = block.forward(&mut g, x, Some(mask.clone()), None).unwrap();
            g.value(y).row(1).to_vec()
        };
        assert_eq!(run(x0), run(x1));
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let block = TransformerBlock::new(&mut store, "b", 8, 2, true, &mut rng);
        let x = random_mat(5, 8, &mut rng);
        let ctx = random_mat(3, 8, &mut rng);
        let probe = random_mat(5, 8, &mut rng);
        let mask = Rc::new(AttentionMask::causal(5));
        let loss = |s: &ParamStore| {
            let mut g = Graph::new(s);
            let xv = g.constant(x.clone());
            let cv = g.constant(ctx.clone());
            let y = block.forward(&mut g, xv, Some(mask.clone()), Some(cv)).unwrap();
            let l = g.dot_const(y, probe.clone());
            (g.value(l).item(), g.backward(l))
        };
        let report = check_params(&mut store, 60, 1e-5, &mut rng, loss);
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn rel_error_floor() {
        assert_eq!(rel_error(1.0, 1.0), 0.0);
        assert!((rel_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }

    #[test]
    fn block_rejects_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let block = TransformerBlock::new(&mut store, "b", 8, 2, false, &mut rng);
        let mut g = Graph::new(&store);
        let x = g.constant(Mat::zeros(3, 6));
        assert!(block.forward(&mut g, x, None, None).is_err());
        let x = g.constant(Mat::zeros(3, 8));
        let ctx = g.constant(Mat::zeros(2, 8));
        assert!(block.forward(&mut g, x, None, Some(ctx)).is_err());
        assert!(block.forward(&mut g, x, Some(Rc::new(AttentionMask::causal(4))), None).is_err());
    }

    #[test]
    fn patch_counts_and_zero_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let pe = PatchEmbed::new(&mut store, "pe", 4, 3, 16, &mut rng);
        let bias = Mat::from_fn(1, 16, |_, j| j as f64 * 0.1);
        *store.value_mut(pe.proj.b.unwrap()) = bias.clone();
        let mut g = Graph::new(&store);
        let t = pe.embed(&mut g, &vec![0.0; 32 * 32 * 3], 32, 32).unwrap();
        assert_eq!(g.value(t).rows(), 64);
        for i in 0..64 {
            assert_eq!(g.value(t).row(i), bias.row(0));
        }
        assert!(pe.embed(&mut g, &vec![0.0; 30 * 30 * 3], 30, 30).is_err());
    }

    #[test]
    fn orthonormal_projection_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (h, w, c, p) = (8, 8, 3, 2);
        let dim = p * p * c;
        // Random orthonormal basis via Gram-Schmidt.
        let mut basis: Vec<Vec<f64>> = Vec::new();
        while basis.len() < dim {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-3 {
                basis.push(v.into_iter().map(|x| x / n).collect());
            }
        }
        let q = Mat::from_fn(dim, dim, |i, j| basis[j][i]);
        let image: Vec<f64> = (0..h * w * c).map(|_| rng.random_range(0.0..1.0)).collect();
        let tokens = patchify(&image, h, w, c, p).unwrap().matmul(&q);
        let back = unpatchify(&tokens.matmul(&q.transpose()), h, w, c, p).unwrap();
        let err = image.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn sinusoidal_is_bounded_and_distinct() {
        let a = sinusoidal_embedding(0.0, 8);
        let b = sinusoidal_embedding(0.5, 8);
        assert_eq!(&a[4..], &[1.0; 4]);
        assert!(a != b);
        assert!(b.iter().all(|v| v.abs() <= 1.0));
    }
}
