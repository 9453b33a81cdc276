//! Graph-convolution branch.
//!
//! Each block is a graph convolution `relu(A · H · W)` over the joint graph
//! followed by a depthwise temporal convolution with a residual connection.
//! `A` is either the symmetric-normalized skeleton adjacency (static) or that
//! matrix plus a learned, input-dependent refinement computed once per sample
//! (channel-refined) or once per frame (temporal-dependent).

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, Array3, Array4, Array5, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{he_uniform, relu, Network};
use crate::skeleton::Topology;

/// `D^{-1/2} (A + I) D^{-1/2}` with `D` the row sums of `A + I`.
pub fn normalized_adjacency(topo: &Topology) -> Array2<f64> {
    let v = topo.num_joints();
    let mut a = Array2::<f64>::eye(v);
    for &(i, j) in topo.edges() {
        a[[i, j]] = 1.0;
        a[[j, i]] = 1.0;
    }
    let inv_sqrt: Vec<f64> = a.rows().into_iter().map(|r| 1.0 / r.sum().sqrt()).collect();
    for i in 0..v {
        for j in 0..v {
            a[[i, j]] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    a
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencyMode {
    #[default]
    Static,
    ChannelRefined,
    TemporalDependent,
}

impl fmt::Display for AdjacencyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdjacencyMode::Static => "static",
            AdjacencyMode::ChannelRefined => "channel_refined",
            AdjacencyMode::TemporalDependent => "temporal_dependent",
        })
    }
}

impl FromStr for AdjacencyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "static" => Ok(AdjacencyMode::Static),
            "channel_refined" | "ctr" => Ok(AdjacencyMode::ChannelRefined),
            "temporal_dependent" | "td" => Ok(AdjacencyMode::TemporalDependent),
            _ => Err(Error::Config(format!("unknown adjacency mode `{s}`"))),
        }
    }
}

/// Per-joint scalar projection `phi` and refinement scale `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineParams {
    pub proj: Array1<f64>,
    /// Single-element array so it can be visited like any other tensor.
    pub scale: Array1<f64>,
}

impl RefineParams {
    pub fn new(proj: Array1<f64>, scale: f64) -> Self {
        RefineParams {
            proj,
            scale: Array1::from_elem(1, scale),
        }
    }

    pub fn tau(&self) -> f64 {
        self.scale[0]
    }
}

/// Depthwise kernel `[channels, k]` and per-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalConv {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl TemporalConv {
    pub fn kernel(&self) -> usize {
        self.weight.ncols()
    }

    fn check(&self, channels: usize) -> Result<()> {
        let k = self.kernel();
        if k % 2 == 0 {
            return Err(Error::Config(format!("temporal kernel must be odd, got {k}")));
        }
        if self.weight.nrows() != channels || self.bias.len() != channels {
            return Err(Error::Dimension(format!(
                "temporal conv for {} channels applied to {channels}",
                self.weight.nrows()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayerParams {
    pub weight: Array2<f64>,
    pub mode: AdjacencyMode,
    pub refine: Option<RefineParams>,
    pub temporal: TemporalConv,
}

/// Adjacency operator, either shared or one matrix per sample / per frame.
#[derive(Debug, Clone)]
enum Adjacency {
    Shared(Array2<f64>),
    PerSample(Array3<f64>),
    PerFrame(Array4<f64>),
}

impl Adjacency {
    fn at(&self, n: usize, t: usize) -> ArrayView2<'_, f64> {
        match self {
            Adjacency::Shared(a) => a.view(),
            Adjacency::PerSample(a) => a.index_axis(Axis(0), n),
            Adjacency::PerFrame(a) => a.slice(s![n, t, .., ..]),
        }
    }
}

fn check_square(a: &Array2<f64>, v: usize) -> Result<()> {
    if a.dim() != (v, v) {
        return Err(Error::Dimension(format!(
            "adjacency is {:?}, expected [{v}, {v}]",
            a.dim()
        )));
    }
    Ok(())
}

/// `out[n, t] = A_{n,t} · z[n, t]` for every sample/frame slice.
fn propagate(adj: &Adjacency, z: &Array4<f64>) -> Array4<f64> {
    let (n_b, t_n, v, c) = z.dim();
    let zs = z.as_slice().expect("standard layout");
    let mut out = Array4::<f64>::zeros(z.raw_dim());
    let os = out.as_slice_mut().unwrap();
    let slab = v * c;
    for n in 0..n_b {
        for t in 0..t_n {
            let a = adj.at(n, t);
            let base = (n * t_n + t) * slab;
            let zsl = &zs[base..base + slab];
            let osl = &mut os[base..base + slab];
            for i in 0..v {
                let orow = &mut osl[i * c..(i + 1) * c];
                for j in 0..v {
                    let aij = a[[i, j]];
                    if aij == 0.0 {
                        continue;
                    }
                    let zrow = &zsl[j * c..(j + 1) * c];
                    for (o, &x) in orow.iter_mut().zip(zrow) {
                        *o += aij * x;
                    }
                }
            }
        }
    }
    out
}

fn matmul_channels(h: &Array4<f64>, w: &Array2<f64>) -> Result<Array4<f64>> {
    let (b, t, v, c) = h.dim();
    if w.nrows() != c {
        return Err(Error::Dimension(format!(
            "input has {c} channels, weight expects {}",
            w.nrows()
        )));
    }
    let flat = h
        .view()
        .into_shape_with_order((b * t * v, c))
        .expect("standard layout");
    let z = flat.dot(w);
    Ok(z.into_shape_with_order((b, t, v, w.ncols())).unwrap())
}

/// `relu(A_norm · H · W)` applied per batch/frame slice.
pub fn graph_conv_forward(
    h: &Array4<f64>,
    a_norm: &Array2<f64>,
    w: &Array2<f64>,
) -> Result<Array4<f64>> {
    check_square(a_norm, h.dim().2)?;
    let z = matmul_channels(&h.as_standard_layout().into_owned(), w)?;
    Ok(propagate(&Adjacency::Shared(a_norm.clone()), &z).mapv(relu))
}

/// `A + tau · tanh(p_i - p_j)`; also returns the tanh matrix.
fn refine_matrix(p: &[f64], a_norm: &Array2<f64>, tau: f64) -> (Array2<f64>, Array2<f64>) {
    let v = p.len();
    let r = Array2::from_shape_fn((v, v), |(i, j)| (p[i] - p[j]).tanh());
    let mut a = a_norm.clone();
    a.zip_mut_with(&r, |a, &r| *a += tau * r);
    (a, r)
}

fn check_refine(h: &Array4<f64>, a_norm: &Array2<f64>, refine: &RefineParams) -> Result<()> {
    check_square(a_norm, h.dim().2)?;
    if refine.proj.len() != h.dim().3 {
        return Err(Error::Dimension(format!(
            "refinement projection has {} inputs, features have {} channels",
            refine.proj.len(),
            h.dim().3
        )));
    }
    Ok(())
}

/// Per-joint projection of `[.., V, C]` features: `p[.., i] = h[.., i, :] · proj`.
fn project_joints(h: ArrayView2<'_, f64>, proj: &Array1<f64>) -> Vec<f64> {
    h.dot(proj).to_vec()
}

/// One refined adjacency per sample, from temporally averaged features.
/// Returns `[B, V, V]`.
pub fn channel_refined_adjacency(
    h: &Array4<f64>,
    a_norm: &Array2<f64>,
    refine: &RefineParams,
) -> Result<Array3<f64>> {
    check_refine(h, a_norm, refine)?;
    let (b, _, v, _) = h.dim();
    let mut out = Array3::zeros((b, v, v));
    for n in 0..b {
        let mean = h.index_axis(Axis(0), n).mean_axis(Axis(0)).unwrap();
        let p = project_joints(mean.view(), &refine.proj);
        let (a, _) = refine_matrix(&p, a_norm, refine.tau());
        out.index_axis_mut(Axis(0), n).assign(&a);
    }
    Ok(out)
}

/// One refined adjacency per frame. Returns `[B, T, V, V]`.
pub fn temporal_dependent_adjacency(
    h: &Array4<f64>,
    a_norm: &Array2<f64>,
    refine: &RefineParams,
) -> Result<Array4<f64>> {
    check_refine(h, a_norm, refine)?;
    let (b, t_n, v, _) = h.dim();
    let mut out = Array4::zeros((b, t_n, v, v));
    for n in 0..b {
        for t in 0..t_n {
            let p = project_joints(h.slice(s![n, t, .., ..]), &refine.proj);
            let (a, _) = refine_matrix(&p, a_norm, refine.tau());
            out.slice_mut(s![n, t, .., ..]).assign(&a);
        }
    }
    Ok(out)
}

/// Depthwise "same"-padded convolution along frames, without activation.
fn temporal_conv_linear(g: &Array4<f64>, tc: &TemporalConv) -> Array4<f64> {
    let (n_b, t_n, v, c) = g.dim();
    let k = tc.kernel();
    let r = k / 2;
    let gs = g.as_slice().expect("standard layout");
    let mut y = Array4::<f64>::zeros(g.raw_dim());
    let ys = y.as_slice_mut().unwrap();
    let slab = v * c;
    let bias = tc.bias.as_slice().unwrap();
    let taps = kernel_taps(&tc.weight);
    for n in 0..n_b {
        for t in 0..t_n {
            let out = &mut ys[(n * t_n + t) * slab..(n * t_n + t + 1) * slab];
            for row in out.chunks_exact_mut(c) {
                row.copy_from_slice(bias);
            }
            for (kk, wk) in taps.iter().enumerate() {
                let src = t as isize + kk as isize - r as isize;
                if src < 0 || src >= t_n as isize {
                    continue;
                }
                let src = src as usize;
                let inp = &gs[(n * t_n + src) * slab..(n * t_n + src + 1) * slab];
                for (orow, irow) in out.chunks_exact_mut(c).zip(inp.chunks_exact(c)) {
                    for ((o, &x), &w) in orow.iter_mut().zip(irow).zip(wk) {
                        *o += w * x;
                    }
                }
            }
        }
    }
    y
}

/// `[C, k]` kernel as `k` contiguous per-channel tap vectors.
fn kernel_taps(weight: &Array2<f64>) -> Vec<Vec<f64>> {
    weight.columns().into_iter().map(|col| col.to_vec()).collect()
}

/// `relu(conv_t(H) + H)`: depthwise temporal convolution, residual, ReLU.
pub fn temporal_conv_forward(h: &Array4<f64>, tc: &TemporalConv) -> Result<Array4<f64>> {
    tc.check(h.dim().3)?;
    let h = h.as_standard_layout().into_owned();
    let mut y = temporal_conv_linear(&h, tc);
    y.zip_mut_with(&h, |y, &g| *y = relu(*y + g));
    Ok(y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnConfig {
    /// Output width of each block.
    pub channels: Vec<usize>,
    pub temporal_kernel: usize,
    #[serde(default)]
    pub mode: AdjacencyMode,
}

impl Default for GcnConfig {
    fn default() -> Self {
        GcnConfig {
            channels: vec![32, 32, 64, 64],
            temporal_kernel: 5,
            mode: AdjacencyMode::Static,
        }
    }
}

impl GcnConfig {
    pub fn with_mode(mut self, mode: AdjacencyMode) -> Self {
        self.mode = mode;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    topology: Topology,
    a_norm: Array2<f64>,
    config: GcnConfig,
    in_channels: usize,
    pub layers: Vec<GcnLayerParams>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

/// Activations kept from the forward pass of one block.
#[derive(Debug)]
struct BlockCache {
    input: Array4<f64>,
    z: Array4<f64>,
    adj: Adjacency,
    /// tanh refinement matrices, same layout as `adj` (dynamic modes only).
    refine: Option<Adjacency>,
    /// Source features of the refinement projection: `[N, V, C]` temporal
    /// means, or the input itself per frame.
    refine_src: Option<Array3<f64>>,
    pre_graph: Array4<f64>,
    graph_out: Array4<f64>,
    pre_out: Array4<f64>,
}

#[derive(Debug)]
pub struct GcnCache {
    batch: usize,
    persons: usize,
    blocks: Vec<BlockCache>,
    pooled: Array2<f64>,
    final_shape: (usize, usize, usize, usize),
}

impl GcnModel {
    pub fn new<R: Rng + ?Sized>(
        topology: Topology,
        in_channels: usize,
        num_classes: usize,
        config: GcnConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.channels.is_empty() || config.channels.contains(&0) || in_channels == 0 {
            return Err(Error::Config("GCN widths must be positive and non-empty".into()));
        }
        if config.temporal_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "temporal kernel must be odd, got {}",
                config.temporal_kernel
            )));
        }
        if num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        let k = config.temporal_kernel;
        let mut layers = Vec::with_capacity(config.channels.len());
        let mut c_in = in_channels;
        for &c_out in &config.channels {
            let weight = he_uniform((c_in, c_out), c_in, rng);
            let refine = match config.mode {
                AdjacencyMode::Static => None,
                _ => Some(RefineParams::new(he_uniform(c_in, c_in, rng), 0.0)),
            };
            let temporal = TemporalConv {
                weight: he_uniform((c_out, k), k, rng),
                bias: Array1::zeros(c_out),
            };
            layers.push(GcnLayerParams {
                weight,
                mode: config.mode,
                refine,
                temporal,
            });
            c_in = c_out;
        }
        Ok(GcnModel {
            a_norm: normalized_adjacency(&topology),
            topology,
            in_channels,
            head_w: he_uniform((c_in, num_classes), c_in, rng),
            head_b: Array1::zeros(num_classes),
            layers,
            config,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn config(&self) -> &GcnConfig {
        &self.config
    }

    pub fn adjacency(&self) -> &Array2<f64> {
        &self.a_norm
    }

    /// Copy of this model with every block switched to `mode`, sharing all
    /// weights. New refinement parameters start from `proj` = 0, `tau` = 0.
    pub fn with_mode(&self, mode: AdjacencyMode) -> Self {
        let mut out = self.clone();
        out.config.mode = mode;
        let mut c_in = self.in_channels;
        for layer in &mut out.layers {
            layer.mode = mode;
            layer.refine = match mode {
                AdjacencyMode::Static => None,
                _ => layer
                    .refine
                    .take()
                    .or_else(|| Some(RefineParams::new(Array1::zeros(c_in), 0.0))),
            };
            c_in = layer.weight.ncols();
        }
        out
    }

    fn block_forward(&self, layer: &GcnLayerParams, h: Array4<f64>) -> Result<BlockCache> {
        let z = matmul_channels(&h, &layer.weight)?;
        let (n_b, t_n, v, _) = h.dim();
        let (adj, refine, refine_src) = match (&layer.mode, &layer.refine) {
            (AdjacencyMode::Static, _) => (Adjacency::Shared(self.a_norm.clone()), None, None),
            (AdjacencyMode::ChannelRefined, Some(rp)) => {
                let means = h.mean_axis(Axis(1)).unwrap();
                let mut a = Array3::zeros((n_b, v, v));
                let mut r = Array3::zeros((n_b, v, v));
                for n in 0..n_b {
                    let p = project_joints(means.index_axis(Axis(0), n), &rp.proj);
                    let (an, rn) = refine_matrix(&p, &self.a_norm, rp.tau());
                    a.index_axis_mut(Axis(0), n).assign(&an);
                    r.index_axis_mut(Axis(0), n).assign(&rn);
                }
                (
                    Adjacency::PerSample(a),
                    Some(Adjacency::PerSample(r)),
                    Some(means),
                )
            }
            (AdjacencyMode::TemporalDependent, Some(rp)) => {
                let mut a = Array4::zeros((n_b, t_n, v, v));
                let mut r = Array4::zeros((n_b, t_n, v, v));
                for n in 0..n_b {
                    for t in 0..t_n {
                        let p = project_joints(h.slice(s![n, t, .., ..]), &rp.proj);
                        let (an, rn) = refine_matrix(&p, &self.a_norm, rp.tau());
                        a.slice_mut(s![n, t, .., ..]).assign(&an);
                        r.slice_mut(s![n, t, .., ..]).assign(&rn);
                    }
                }
                (Adjacency::PerFrame(a), Some(Adjacency::PerFrame(r)), None)
            }
            (mode, None) => {
                return Err(Error::Config(format!(
                    "{mode} block is missing refinement parameters"
                )))
            }
        };
        let pre_graph = propagate(&adj, &z);
        let graph_out = pre_graph.mapv(relu);
        let mut pre_out = temporal_conv_linear(&graph_out, &layer.temporal);
        pre_out += &graph_out;
        Ok(BlockCache {
            input: h,
            z,
            adj,
            refine,
            refine_src,
            pre_graph,
            graph_out,
            pre_out,
        })
    }

    fn check_input(&self, x: &Array5<f64>) -> Result<()> {
        let (b, m, t, v, c) = x.dim();
        if b == 0 || m == 0 || t == 0 {
            return Err(Error::Dimension("empty input batch".into()));
        }
        if v != self.topology.num_joints() {
            return Err(Error::Dimension(format!(
                "input has {v} joints, model topology has {}",
                self.topology.num_joints()
            )));
        }
        if c != self.in_channels {
            return Err(Error::Dimension(format!(
                "input has {c} channels, model expects {}",
                self.in_channels
            )));
        }
        Ok(())
    }

    /// Values entering the graph and temporal ReLUs of every block.
    pub fn block_preactivations(&self, x: &Array5<f64>) -> Result<Vec<(Array4<f64>, Array4<f64>)>> {
        let (_, cache) = self.forward_train(x)?;
        Ok(cache
            .blocks
            .into_iter()
            .map(|b| (b.pre_graph, b.pre_out))
            .collect())
    }

    /// Per-block activations of a batch, for inspection and tests.
    pub fn block_outputs(&self, x: &Array5<f64>) -> Result<Vec<Array4<f64>>> {
        let (_, cache) = self.forward_train(x)?;
        Ok(cache
            .blocks
            .iter()
            .map(|b| b.pre_out.mapv(relu))
            .collect())
    }
}

impl Network for GcnModel {
    type Cache = GcnCache;

    fn num_classes(&self) -> usize {
        self.head_b.len()
    }

    fn in_channels(&self) -> usize {
        self.in_channels
    }

    fn forward(&self, x: &Array5<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_train(x)?.0)
    }

    fn forward_train(&self, x: &Array5<f64>) -> Result<(Array2<f64>, GcnCache)> {
        self.check_input(x)?;
        let (b, m, t, v, c) = x.dim();
        let mut h = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((b * m, t, v, c))
            .unwrap();
        let mut blocks = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let cache = self.block_forward(layer, h)?;
            h = cache.pre_out.mapv(relu);
            blocks.push(cache);
        }
        let final_shape = h.dim();
        let c_last = final_shape.3;
        let per_sample = h.into_shape_with_order((b, m * t * v, c_last)).unwrap();
        let pooled = per_sample.mean_axis(Axis(1)).unwrap();
        let logits = pooled.dot(&self.head_w) + &self.head_b;
        Ok((
            logits,
            GcnCache {
                batch: b,
                persons: m,
                blocks,
                pooled,
                final_shape,
            },
        ))
    }

    fn backward(&self, cache: &GcnCache, dlogits: &Array2<f64>) -> Self {
        let mut grads = self.zeros_like();
        grads.head_w = cache.pooled.t().dot(dlogits);
        grads.head_b = dlogits.sum_axis(Axis(0));
        let dpooled = dlogits.dot(&self.head_w.t());

        let (nm, t_n, v, c_last) = cache.final_shape;
        let count = (cache.persons * t_n * v) as f64;
        let mut dh = Array4::<f64>::zeros((nm, t_n, v, c_last));
        for n in 0..nm {
            let row = dpooled.row(n / cache.persons);
            for mut jc in dh.index_axis_mut(Axis(0), n).rows_mut() {
                jc.zip_mut_with(&row, |d, &g| *d = g / count);
            }
        }
        debug_assert_eq!(cache.batch * cache.persons, nm);

        for (li, (layer, bc)) in self.layers.iter().zip(&cache.blocks).enumerate().rev() {
            let g = &mut grads.layers[li];
            // output relu
            let mut dpre = dh;
            dpre.zip_mut_with(&bc.pre_out, |d, &p| {
                if p <= 0.0 {
                    *d = 0.0
                }
            });
            // temporal conv: weights, bias, input (plus residual)
            let (_, _, _, c) = bc.graph_out.dim();
            let k = layer.temporal.kernel();
            let r = k / 2;
            let slab = v * c;
            let ds = dpre.as_slice().unwrap();
            let gs = bc.graph_out.as_slice().unwrap();
            let mut dgraph = dpre.clone();
            {
                let dgs = dgraph.as_slice_mut().unwrap();
                let nb = bc.graph_out.dim().0;
                let taps = kernel_taps(&layer.temporal.weight);
                let mut dtaps = vec![vec![0.0; c]; k];
                let mut dbias = vec![0.0; c];
                for n in 0..nb {
                    for t in 0..t_n {
                        let dout = &ds[(n * t_n + t) * slab..(n * t_n + t + 1) * slab];
                        for drow in dout.chunks_exact(c) {
                            for (b, &d) in dbias.iter_mut().zip(drow) {
                                *b += d;
                            }
                        }
                        for kk in 0..k {
                            let src = t as isize + kk as isize - r as isize;
                            if src < 0 || src >= t_n as isize {
                                continue;
                            }
                            let src = src as usize;
                            let range = (n * t_n + src) * slab..(n * t_n + src + 1) * slab;
                            let inp = &gs[range.clone()];
                            let dinp = &mut dgs[range];
                            let (wk, dwk) = (taps[kk].as_slice(), dtaps[kk].as_mut_slice());
                            for ((drow, irow), dirow) in dout
                                .chunks_exact(c)
                                .zip(inp.chunks_exact(c))
                                .zip(dinp.chunks_exact_mut(c))
                            {
                                for (((dw, di), &d), (&x, &w)) in dwk
                                    .iter_mut()
                                    .zip(dirow.iter_mut())
                                    .zip(drow)
                                    .zip(irow.iter().zip(wk))
                                {
                                    *dw += d * x;
                                    *di += w * d;
                                }
                            }
                        }
                    }
                }
                g.temporal.bias = Array1::from(dbias);
                for (kk, dwk) in dtaps.iter().enumerate() {
                    g.temporal.weight.column_mut(kk).assign(&ndarray::ArrayView1::from(dwk));
                }
            }
            // graph relu
            dgraph.zip_mut_with(&bc.pre_graph, |d, &p| {
                if p <= 0.0 {
                    *d = 0.0
                }
            });
            // propagation: dz = A^T ds, dA = ds z^T
            let dsg = dgraph.as_slice().unwrap();
            let zs = bc.z.as_slice().unwrap();
            let mut dz = Array4::<f64>::zeros(bc.z.raw_dim());
            let dzs = dz.as_slice_mut().unwrap();
            let (nb, _, _, c_in) = bc.input.dim();
            let dynamic = bc.refine.is_some();
            let tau = layer.refine.as_ref().map(|rp| rp.tau()).unwrap_or(0.0);
            let mut dtau = 0.0;
            let mut dp_acc = match layer.mode {
                AdjacencyMode::ChannelRefined => Some(Array3::<f64>::zeros((nb, 1, v))),
                AdjacencyMode::TemporalDependent => Some(Array3::<f64>::zeros((nb, t_n, v))),
                AdjacencyMode::Static => None,
            };
            for n in 0..nb {
                for t in 0..t_n {
                    let a = bc.adj.at(n, t);
                    let base = (n * t_n + t) * slab;
                    let dsl = &dsg[base..base + slab];
                    let zsl = &zs[base..base + slab];
                    let dzsl = &mut dzs[base..base + slab];
                    for i in 0..v {
                        let drow = &dsl[i * c..(i + 1) * c];
                        for j in 0..v {
                            let aij = a[[i, j]];
                            if aij != 0.0 {
                                let dzrow = &mut dzsl[j * c..(j + 1) * c];
                                for (dz, &d) in dzrow.iter_mut().zip(drow) {
                                    *dz += aij * d;
                                }
                            }
                        }
                    }
                    if dynamic {
                        let rm = bc.refine.as_ref().unwrap().at(n, t);
                        let dp = dp_acc.as_mut().unwrap();
                        let tp = if layer.mode == AdjacencyMode::ChannelRefined { 0 } else { t };
                        for i in 0..v {
                            let drow = &dsl[i * c..(i + 1) * c];
                            for j in 0..v {
                                let zrow = &zsl[j * c..(j + 1) * c];
                                let da: f64 = drow.iter().zip(zrow).map(|(a, b)| a * b).sum();
                                let rij = rm[[i, j]];
                                dtau += da * rij;
                                let du = tau * da * (1.0 - rij * rij);
                                dp[[n, tp, i]] += du;
                                dp[[n, tp, j]] -= du;
                            }
                        }
                    }
                }
            }
            // channel mixing weight
            let in_flat = bc
                .input
                .view()
                .into_shape_with_order((nb * t_n * v, c_in))
                .unwrap();
            let dz_flat = dz.view().into_shape_with_order((nb * t_n * v, c)).unwrap();
            g.weight = in_flat.t().dot(&dz_flat);
            let mut dinput = dz_flat
                .dot(&layer.weight.t())
                .into_shape_with_order((nb, t_n, v, c_in))
                .unwrap();
            if let (Some(rp), Some(gr), Some(dp)) = (&layer.refine, g.refine.as_mut(), dp_acc) {
                gr.scale[0] = dtau;
                match layer.mode {
                    AdjacencyMode::ChannelRefined => {
                        let means = bc.refine_src.as_ref().unwrap();
                        for n in 0..nb {
                            for i in 0..v {
                                let d = dp[[n, 0, i]];
                                if d == 0.0 {
                                    continue;
                                }
                                let src = means.slice(s![n, i, ..]);
                                gr.proj.scaled_add(d, &src);
                                let dh_each = d / t_n as f64;
                                for t in 0..t_n {
                                    dinput
                                        .slice_mut(s![n, t, i, ..])
                                        .scaled_add(dh_each, &rp.proj);
                                }
                            }
                        }
                    }
                    AdjacencyMode::TemporalDependent => {
                        for n in 0..nb {
                            for t in 0..t_n {
                                for i in 0..v {
                                    let d = dp[[n, t, i]];
                                    if d == 0.0 {
                                        continue;
                                    }
                                    let src = bc.input.slice(s![n, t, i, ..]);
                                    gr.proj.scaled_add(d, &src);
                                    dinput.slice_mut(s![n, t, i, ..]).scaled_add(d, &rp.proj);
                                }
                            }
                        }
                    }
                    AdjacencyMode::Static => {}
                }
            }
            dh = dinput;
        }
        grads
    }

    fn visit_params(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, layer) in self.layers.iter().enumerate() {
            f(
                &format!("block{i}.weight"),
                layer.weight.shape(),
                layer.weight.as_slice().unwrap(),
            );
            if let Some(rp) = &layer.refine {
                f(
                    &format!("block{i}.refine_proj"),
                    rp.proj.shape(),
                    rp.proj.as_slice().unwrap(),
                );
                f(
                    &format!("block{i}.refine_scale"),
                    rp.scale.shape(),
                    rp.scale.as_slice().unwrap(),
                );
            }
            f(
                &format!("block{i}.temporal_weight"),
                layer.temporal.weight.shape(),
                layer.temporal.weight.as_slice().unwrap(),
            );
            f(
                &format!("block{i}.temporal_bias"),
                layer.temporal.bias.shape(),
                layer.temporal.bias.as_slice().unwrap(),
            );
        }
        f("head.weight", self.head_w.shape(), self.head_w.as_slice().unwrap());
        f("head.bias", self.head_b.shape(), self.head_b.as_slice().unwrap());
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            f(&format!("block{i}.weight"), layer.weight.as_slice_mut().unwrap());
            if let Some(rp) = &mut layer.refine {
                f(&format!("block{i}.refine_proj"), rp.proj.as_slice_mut().unwrap());
                f(&format!("block{i}.refine_scale"), rp.scale.as_slice_mut().unwrap());
            }
            f(
                &format!("block{i}.temporal_weight"),
                layer.temporal.weight.as_slice_mut().unwrap(),
            );
            f(
                &format!("block{i}.temporal_bias"),
                layer.temporal.bias.as_slice_mut().unwrap(),
            );
        }
        f("head.weight", self.head_w.as_slice_mut().unwrap());
        f("head.bias", self.head_b.as_slice_mut().unwrap());
    }
}
