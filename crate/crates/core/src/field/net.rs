use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hash::{HashEncoding, HashEncodingConfig};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::scalar::{sigmoid, softplus, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Softplus,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Self::Identity => x,
            Self::Relu => x.max(0.0),
            Self::Softplus => softplus(x),
            Self::Sigmoid => sigmoid(x),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Softplus => sigmoid(x),
            Self::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub encoding: HashEncodingConfig,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    /// Hash table entries start uniform in `±table_init`.
    pub table_init: f64,
}

impl FieldConfig {
    /// SDF network: 2 hidden layers of 32, identity output.
    pub fn geometry(max_resolution: u32, table_size: usize) -> Self {
        Self {
            encoding: HashEncodingConfig {
                levels: 16,
                min_resolution: 16,
                max_resolution,
                table_size,
                features_per_entry: 2,
            },
            hidden: vec![32, 32],
            output_dim: 1,
            hidden_activation: Activation::Softplus,
            output_activation: Activation::Identity,
            table_init: 1e-4,
        }
    }

    /// Albedo network: 1 hidden layer of 32, sigmoid RGB output.
    pub fn color(max_resolution: u32, table_size: usize) -> Self {
        Self {
            hidden: vec![32],
            output_dim: 3,
            output_activation: Activation::Sigmoid,
            ..Self::geometry(max_resolution, table_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoding.validate()?;
        if self.output_dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("network layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Which part of the network a flat parameter index belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamClass {
    HashTable,
    Weight,
    Bias,
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs × inputs` weights followed by `outputs` biases.
    offset: usize,
}

impl Layer {
    fn bias_offset(&self) -> usize {
        self.offset + self.inputs * self.outputs
    }

    fn len(&self) -> usize {
        (self.inputs + 1) * self.outputs
    }
}

/// Forward outputs for a batch, tagged with the parameter version they were
/// computed from.
#[derive(Debug, Clone)]
pub struct FieldCache {
    version: u64,
    points: Vec<[f64; 3]>,
    clamped: Vec<bool>,
    pub outputs: Vec<f64>,
}

impl FieldCache {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Hash-grid encoding followed by a small MLP, with flat parameter and
/// gradient buffers (tables first, then each layer's weights and biases).
#[derive(Debug, Clone)]
pub struct FieldNet<T> {
    config: FieldConfig,
    encoding: HashEncoding,
    layers: Vec<Layer>,
    params: Vec<T>,
    grads: Vec<f64>,
    version: u64,
}

/// Per-worker buffers for a batch of points.
#[derive(Default)]
struct Batch {
    feats: Vec<f64>,
    /// Per layer, `n × outputs` row-major.
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    grad: Vec<f64>,
    gin: Vec<f64>,
}

const CHUNK: usize = 256;

/// `c ← a·b + beta·c` for strided row/column layouts.
#[allow(clippy::too_many_arguments)]
fn gemm(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, cc: usize, rs: usize, cs: usize| (r - 1) * rs + (cc - 1) * cs;
    assert!(k == 0 || last(m, k, rsa, csa) < a.len());
    assert!(k == 0 || last(k, n, rsb, csb) < b.len());
    assert!(last(m, n, rsc, csc) < c.len());
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

impl<T: Real> FieldNet<T> {
    pub fn new<R: Rng + ?Sized>(config: FieldConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let encoding = HashEncoding::new(&config.encoding);
        let n_table = encoding.total_entries * config.encoding.features_per_entry;
        let mut layers = Vec::new();
        let mut offset = n_table;
        let mut inputs = encoding.output_dim();
        for &w in config.hidden.iter().chain(std::iter::once(&config.output_dim)) {
            let l = Layer { inputs, outputs: w, offset };
            offset += l.len();
            layers.push(l);
            inputs = w;
        }
        let mut params = Vec::with_capacity(offset);
        for _ in 0..n_table {
            params.push(T::lit(rng.random_range(-config.table_init..=config.table_init)));
        }
        for l in &layers {
            let bound = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
            for _ in 0..l.inputs * l.outputs {
                params.push(T::lit(rng.random_range(-bound..=bound)));
            }
            params.extend(std::iter::repeat_n(T::zero(), l.outputs));
        }
        let n = params.len();
        Ok(Self { config, encoding, layers, params, grads: vec![0.0; n], version: 0 })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Number of leading parameters that belong to the hash tables.
    pub fn num_table_params(&self) -> usize {
        self.layers[0].offset
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    /// Mutable access bumps the version, invalidating outstanding caches.
    pub fn params_mut(&mut self) -> &mut [T] {
        self.version += 1;
        &mut self.params
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Split borrow for optimizers.
    pub fn params_and_grads_mut(&mut self) -> (&mut [T], &mut [f64]) {
        self.version += 1;
        (&mut self.params, &mut self.grads)
    }

    pub fn param_class(&self, i: usize) -> ParamClass {
        if i < self.num_table_params() {
            return ParamClass::HashTable;
        }
        match self.layers.iter().find(|l| i < l.offset + l.len()) {
            Some(l) if i >= l.bias_offset() => ParamClass::Bias,
            _ => ParamClass::Weight,
        }
    }

    /// Index of the final layer's first bias.
    pub fn output_bias_offset(&self) -> usize {
        self.layers.last().unwrap().bias_offset()
    }

    fn clamp(p: Vec3<T>) -> ([f64; 3], bool) {
        let raw = p.to_f64();
        let c = raw.map(|x| x.clamp(-0.5, 0.5));
        (c, c != raw)
    }

    #[inline]
    fn param(&self, i: usize) -> f64 {
        self.params[i].as_f64()
    }

    /// MLP parameters widened to f64, indexed from the first layer's offset.
    fn mlp_weights(&self) -> Vec<f64> {
        self.params[self.num_table_params()..].iter().map(|w| w.as_f64()).collect()
    }

    /// Encoded features for a batch, level by level so each table stays hot.
    fn encode(&self, pts: &[[f64; 3]], feats: &mut Vec<f64>) {
        let f = self.config.encoding.features_per_entry;
        let dim = self.encoding.output_dim();
        feats.clear();
        feats.resize(pts.len() * dim, 0.0);
        for l in 0..self.encoding.levels.len() {
            for (k, &p) in pts.iter().enumerate() {
                let (entry, weight) = self.encoding.lookup_weights(l, p);
                let out = &mut feats[k * dim + l * f..k * dim + (l + 1) * f];
                for c in 0..8 {
                    let base = entry[c] * f;
                    for (j, o) in out.iter_mut().enumerate() {
                        *o += weight[c] * self.param(base + j);
                    }
                }
            }
        }
    }

    fn run_mlp(&self, w: &[f64], n: usize, b: &mut Batch) {
        let n_table = self.num_table_params();
        let nl = self.layers.len();
        b.pre.resize_with(nl, Vec::new);
        b.post.resize_with(nl, Vec::new);
        for (li, layer) in self.layers.iter().enumerate() {
            let act = if li + 1 == nl { self.config.output_activation } else { self.config.hidden_activation };
            let (done, rest) = b.post.split_at_mut(li);
            let input: &[f64] = if li == 0 { &b.feats } else { &done[li - 1] };
            let (ni, no) = (layer.inputs, layer.outputs);
            let pre = &mut b.pre[li];
            pre.clear();
            pre.resize(n * no, 0.0);
            gemm((n, ni, no), input, (ni, 1), &w[layer.offset - n_table..], (1, ni), 0.0, pre, (no, 1));
            let bias = &w[layer.bias_offset() - n_table..layer.bias_offset() - n_table + no];
            let post = &mut rest[0];
            post.clear();
            post.reserve(n * no);
            for row in pre.chunks_exact_mut(no) {
                for (z, &bo) in row.iter_mut().zip(bias) {
                    *z += bo;
                    post.push(act.apply(*z));
                }
            }
        }
    }

    fn forward_f64(&self, points: &[Vec3<T>]) -> (Vec<[f64; 3]>, Vec<bool>, Vec<f64>) {
        let clamped: Vec<([f64; 3], bool)> = points.iter().map(|&p| Self::clamp(p)).collect();
        if clamped.iter().any(|c| c.1) {
            log::warn!("field query outside [-0.5, 0.5]^3 clamped");
        }
        let (pts, flags): (Vec<[f64; 3]>, Vec<bool>) = clamped.into_iter().unzip();
        let w = self.mlp_weights();
        let outputs: Vec<f64> = pts
            .par_chunks(CHUNK)
            .flat_map_iter(|chunk| {
                let mut b = Batch::default();
                self.encode(chunk, &mut b.feats);
                self.run_mlp(&w, chunk.len(), &mut b);
                b.post.pop().unwrap_or_default()
            })
            .collect();
        (pts, flags, outputs)
    }

    /// Outputs for every point, `output_dim` values per point.
    pub fn forward(&self, points: &[Vec3<T>]) -> Vec<T> {
        self.forward_f64(points).2.into_iter().map(T::lit).collect()
    }

    pub fn forward_cached(&self, points: &[Vec3<T>]) -> FieldCache {
        let (points, clamped, outputs) = self.forward_f64(points);
        FieldCache { version: self.version, points, clamped, outputs }
    }

    /// Accumulate `∂outputs/∂params · upstream` into the gradient buffer and
    /// return `∂outputs/∂points · upstream` per point.
    pub fn backward(&mut self, cache: &FieldCache, upstream: &[T]) -> Result<Vec<Vec3<T>>> {
        if cache.version != self.version {
            return Err(Error::StaleCache { cache: cache.version, params: self.version });
        }
        let d = self.config.output_dim;
        if upstream.len() != cache.len() * d {
            return Err(Error::LengthMismatch { expected: cache.len() * d, actual: upstream.len() });
        }
        let n_table = self.num_table_params();
        let n_mlp = self.params.len() - n_table;
        let w = self.mlp_weights();
        let mut input_grads = Vec::with_capacity(cache.len());
        let chunks = cache.points.chunks(CHUNK).zip(cache.clamped.chunks(CHUNK)).zip(upstream.chunks(CHUNK * d));
        if rayon::current_num_threads() == 1 {
            // same reduction order as the parallel path, without staging
            let mut grads = std::mem::take(&mut self.grads);
            let mut b = Batch::default();
            for ((pts, flags), up) in chunks {
                let mut mlp = vec![0.0; n_mlp];
                self.backward_chunk(&w, pts, flags, up, &mut b, &mut mlp, &mut |i, v| grads[i] += v, &mut input_grads);
                for (g, v) in grads[n_table..].iter_mut().zip(mlp) {
                    *g += v;
                }
            }
            self.grads = grads;
            return Ok(input_grads);
        }
        let this = &*self;
        let chunks: Vec<_> = chunks.collect();
        let partials: Vec<(Vec<(usize, f64)>, Vec<f64>, Vec<Vec3<T>>)> = chunks
            .into_par_iter()
            .map(|((pts, flags), up)| {
                let mut b = Batch::default();
                let mut table = Vec::new();
                let mut mlp = vec![0.0; n_mlp];
                let mut dx = Vec::with_capacity(pts.len());
                this.backward_chunk(&w, pts, flags, up, &mut b, &mut mlp, &mut |i, v| table.push((i, v)), &mut dx);
                (table, mlp, dx)
            })
            .collect();
        for (table, mlp, dx) in partials {
            for (i, v) in table {
                self.grads[i] += v;
            }
            for (g, v) in self.grads[n_table..].iter_mut().zip(mlp) {
                *g += v;
            }
            input_grads.extend(dx);
        }
        Ok(input_grads)
    }

    /// Backward for one chunk; only points with nonzero upstream are evaluated.
    #[allow(clippy::too_many_arguments)]
    fn backward_chunk(
        &self,
        w: &[f64],
        pts: &[[f64; 3]],
        flags: &[bool],
        up: &[T],
        b: &mut Batch,
        mlp: &mut [f64],
        table: &mut impl FnMut(usize, f64),
        dx: &mut Vec<Vec3<T>>,
    ) {
        let d = self.config.output_dim;
        let n_table = self.num_table_params();
        let f = self.config.encoding.features_per_entry;
        let dim = self.encoding.output_dim();
        let nl = self.layers.len();
        let active: Vec<usize> =
            (0..pts.len()).filter(|&k| up[k * d..(k + 1) * d].iter().any(|&x| x != T::zero())).collect();
        let start = dx.len();
        dx.extend(std::iter::repeat_n(Vec3::zero(), pts.len()));
        if active.is_empty() {
            return;
        }
        let n = active.len();
        let apts: Vec<[f64; 3]> = active.iter().map(|&k| pts[k]).collect();
        self.encode(&apts, &mut b.feats);
        self.run_mlp(w, n, b);

        b.grad.clear();
        for (a, &k) in active.iter().enumerate() {
            let z = &b.pre[nl - 1][a * d..(a + 1) * d];
            for (&u, &z) in up[k * d..(k + 1) * d].iter().zip(z) {
                b.grad.push(u.as_f64() * self.config.output_activation.derivative(z));
            }
        }
        for li in (0..nl).rev() {
            let layer = self.layers[li];
            let (ni, no) = (layer.inputs, layer.outputs);
            let input: &[f64] = if li == 0 { &b.feats } else { &b.post[li - 1] };
            let wo = layer.offset - n_table;
            gemm((no, n, ni), &b.grad, (1, no), input, (ni, 1), 1.0, &mut mlp[wo..wo + no * ni], (ni, 1));
            let bo = layer.bias_offset() - n_table;
            for row in b.grad.chunks_exact(no) {
                for (g, &v) in mlp[bo..bo + no].iter_mut().zip(row) {
                    *g += v;
                }
            }
            b.gin.clear();
            b.gin.resize(n * ni, 0.0);
            gemm((n, no, ni), &b.grad, (no, 1), &w[wo..], (ni, 1), 0.0, &mut b.gin, (ni, 1));
            if li > 0 {
                for (gi, &z) in b.gin.iter_mut().zip(&b.pre[li - 1]) {
                    *gi *= self.config.hidden_activation.derivative(z);
                }
            }
            std::mem::swap(&mut b.grad, &mut b.gin);
        }

        let g = &b.grad;
        let mut grad_p = vec![[0.0; 3]; n];
        for l in 0..self.encoding.levels.len() {
            for (a, &p) in apts.iter().enumerate() {
                let lk = self.encoding.lookup(l, p);
                let gf = &g[a * dim + l * f..a * dim + (l + 1) * f];
                for c in 0..8 {
                    let base = lk.entry[c] * f;
                    let mut dotp = 0.0;
                    for (j, &gj) in gf.iter().enumerate() {
                        table(base + j, lk.weight[c] * gj);
                        dotp += self.param(base + j) * gj;
                    }
                    for ax in 0..3 {
                        grad_p[a][ax] += lk.dweight[c][ax] * dotp;
                    }
                }
            }
        }
        for (a, &k) in active.iter().enumerate() {
            let mut gp = grad_p[a];
            if flags[k] {
                // clamped axes are flat
                for ax in 0..3 {
                    if pts[k][ax].abs() >= 0.5 {
                        gp[ax] = 0.0;
                    }
                }
            }
            dx[start + k] = Vec3::from_f64(gp);
        }
    }

    /// Replace all parameters, e.g. when restoring a checkpoint.
    pub fn set_params(&mut self, params: Vec<T>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        self.version += 1;
        Ok(())
    }
}
