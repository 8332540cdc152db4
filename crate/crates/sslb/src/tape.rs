//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] is an append-only arena of nodes. Forward methods record an
//! operation, compute its values eagerly, and hand back a [`Var`] handle.
//! [`Tape::backward`] walks the arena once in reverse, accumulating
//! `∂loss/∂node` into every node that (transitively) requires gradients.
//! Tapes are cheap and rebuilt per batch: the training pipeline assembles a
//! different graph every step.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Predictions are clamped to `[LOG_CLAMP_EPS, 1]` before any log.
pub const LOG_CLAMP_EPS: f64 = 1e-12;
/// Variance floor inside channel normalization.
pub const NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// x:[n,in] · w:[in,out] + b:[out] -> [n,out]
    Dense { x: Var, w: Var, b: Var },
    /// Cross-correlation. x:[n,ci,h,w], k:[co,ci,kh,kw] -> [n,co,ho,wo]
    Conv2d { x: Var, k: Var, stride: usize, padding: usize },
    /// Per-(sample, channel) normalization followed by a per-channel affine.
    /// `stats` carries precomputed per-channel (mean, var) when frozen;
    /// otherwise statistics come from each sample and receive gradients.
    ChannelNorm {
        x: Var,
        gain: Var,
        bias: Var,
        frozen: bool,
        /// (x - mean) * inv_std, cached for backward.
        normalized: Vec<f64>,
        /// One inv_std per (sample, channel).
        inv_std: Vec<f64>,
    },
    Relu { x: Var },
    /// Row-wise softmax on [n, c].
    Softmax { x: Var },
    /// Mean over rows of row_weight · (−Σ_k target·log(clamp(pred))).
    CrossEntropy { target: Var, pred: Var, row_weights: Vec<f64> },
    /// Mean over rows of row_weight · ‖target − pred‖².
    MseDistance { target: Var, pred: Var, row_weights: Vec<f64> },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    /// Multiplies row r of a [n, c] input by factors[r].
    RowScale { x: Var, factors: Vec<f64> },
    Sum { x: Var },
    /// [n,c,h,w] -> [n,c]
    GlobalAvgPool { x: Var },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    needs_grad: bool,
    op: Op,
}

/// Append-only computation arena; see module docs.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, needs_grad: bool, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let n = values.len();
        self.nodes.push(Node {
            shape,
            values,
            grad: vec![0.0; n],
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Leaf that participates in gradient computation.
    pub fn param(&mut self, shape: &[usize], values: Vec<f64>) -> Var {
        self.push(shape.to_vec(), values, true, Op::Leaf)
    }

    /// Leaf excluded from gradient computation (inputs, targets).
    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Var {
        self.push(shape.to_vec(), values, false, Op::Leaf)
    }

    /// Leaf taking shape, values and grad participation from a [`Tensor`].
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.values().to_vec(),
            t.requires_grad(),
            Op::Leaf,
        )
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn values(&self, v: Var) -> &[f64] {
        &self.node(v).values
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        &self.node(v).grad
    }

    /// Value of a single-element node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.node(v).values.len(), 1);
        self.node(v).values[0]
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).needs_grad)
    }

    /// `x:[n,in] · w:[in,out] + b:[out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(Error::Dimension(format!(
                "dense expects x:[n,in], w:[in,out], b:[out]; got x:{xs:?}, w:{ws:?}, b:{bs:?}"
            )));
        }
        let (n, input, output) = (xs[0], xs[1], ws[1]);
        let mut values = vec![0.0; n * output];
        {
            let xv = &self.node(x).values;
            let wv = &self.node(w).values;
            let bv = &self.node(b).values;
            for i in 0..n {
                let row = &xv[i * input..(i + 1) * input];
                let out = &mut values[i * output..(i + 1) * output];
                out.copy_from_slice(bv);
                for (k, &xk) in row.iter().enumerate() {
                    let wrow = &wv[k * output..(k + 1) * output];
                    for (o, &wk) in out.iter_mut().zip(wrow) {
                        *o += xk * wk;
                    }
                }
            }
        }
        let needs = self.needs(&[x, w, b]);
        Ok(self.push(vec![n, output], values, needs, Op::Dense { x, w, b }))
    }

    /// Batched 2-d cross-correlation with zero padding and no bias.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ks) = (self.shape(x), self.shape(k));
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] {
            return Err(Error::Dimension(format!(
                "conv2d expects x:[n,ci,h,w], k:[co,ci,kh,kw]; got x:{xs:?}, k:{ks:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be ≥ 1".into()));
        }
        let (n, ci, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (co, kh, kw) = (ks[0], ks[2], ks[3]);
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(Error::Dimension(format!(
                "conv2d kernel {kh}×{kw} exceeds padded input {}×{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let ho = (h + 2 * padding - kh) / stride + 1;
        let wo = (w + 2 * padding - kw) / stride + 1;
        let mut values = vec![0.0; n * co * ho * wo];
        {
            let xv = &self.node(x).values;
            let kv = &self.node(k).values;
            for b in 0..n {
                for o in 0..co {
                    for i in 0..ho {
                        for j in 0..wo {
                            let mut acc = 0.0;
                            for c in 0..ci {
                                let xoff = (b * ci + c) * h * w;
                                let koff = (o * ci + c) * kh * kw;
                                for u in 0..kh {
                                    let y0 = (i * stride + u) as isize - padding as isize;
                                    if y0 < 0 || y0 as usize >= h {
                                        continue;
                                    }
                                    for v in 0..kw {
                                        let x0 = (j * stride + v) as isize - padding as isize;
                                        if x0 < 0 || x0 as usize >= w {
                                            continue;
                                        }
                                        acc += xv[xoff + y0 as usize * w + x0 as usize]
                                            * kv[koff + u * kw + v];
                                    }
                                }
                            }
                            values[((b * co + o) * ho + i) * wo + j] = acc;
                        }
                    }
                }
            }
        }
        let needs = self.needs(&[x, k]);
        Ok(self.push(
            vec![n, co, ho, wo],
            values,
            needs,
            Op::Conv2d { x, k, stride, padding },
        ))
    }

    /// Per-(sample, channel) normalization followed by a per-channel affine.
    ///
    /// With `stats` absent, each sample normalizes by its own spatial mean and
    /// variance and gradients flow through the statistics. With
    /// `stats = Some((mean, var))` (one entry per channel) the statistics are
    /// constants — the frozen form used for inference and pseudo-labelling.
    pub fn channel_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        stats: Option<(&[f64], &[f64])>,
    ) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 4 {
            return Err(Error::Dimension(format!(
                "channel_norm expects x:[n,c,h,w]; got {xs:?}"
            )));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let gs = self.shape(gain);
        let bs = self.shape(bias);
        if gs != [c] || bs != [c] {
            return Err(Error::Dimension(format!(
                "channel_norm expects gain and bias of shape [{c}]; got gain:{gs:?}, bias:{bs:?}"
            )));
        }
        if let Some((m, v)) = stats {
            if m.len() != c || v.len() != c {
                return Err(Error::Dimension(format!(
                    "frozen stats need {c} channel entries; got mean:{}, var:{}",
                    m.len(),
                    v.len()
                )));
            }
        }
        let m = h * w;
        let mut normalized = vec![0.0; n * c * m];
        let mut inv_std = vec![0.0; n * c];
        let mut values = vec![0.0; n * c * m];
        {
            let xv = &self.node(x).values;
            let gv = &self.node(gain).values;
            let bv = &self.node(bias).values;
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * m;
                    let window = &xv[off..off + m];
                    let (mean, var) = match stats {
                        Some((ms, vs)) => (ms[ch], vs[ch]),
                        None => {
                            let mean = window.iter().sum::<f64>() / m as f64;
                            let var = window.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                                / m as f64;
                            (mean, var)
                        }
                    };
                    let inv = 1.0 / (var + NORM_EPS).sqrt();
                    inv_std[b * c + ch] = inv;
                    for i in 0..m {
                        let xh = (window[i] - mean) * inv;
                        normalized[off + i] = xh;
                        values[off + i] = gv[ch] * xh + bv[ch];
                    }
                }
            }
        }
        let needs = self.needs(&[x, gain, bias]);
        Ok(self.push(
            xs.to_vec(),
            values,
            needs,
            Op::ChannelNorm {
                x,
                gain,
                bias,
                frozen: stats.is_some(),
                normalized,
                inv_std,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let values = self.node(x).values.iter().map(|v| v.max(0.0)).collect();
        let needs = self.needs(&[x]);
        let shape = self.shape(x).to_vec();
        self.push(shape, values, needs, Op::Relu { x })
    }

    /// Row-wise softmax with max-subtraction for stability.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 2 || xs[1] < 2 {
            return Err(Error::Dimension(format!(
                "softmax expects logits:[n,c] with c ≥ 2; got {xs:?}"
            )));
        }
        let (n, c) = (xs[0], xs[1]);
        let mut values = vec![0.0; n * c];
        {
            let xv = &self.node(x).values;
            for i in 0..n {
                let row = &xv[i * c..(i + 1) * c];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let out = &mut values[i * c..(i + 1) * c];
                let mut sum = 0.0;
                for (o, &l) in out.iter_mut().zip(row) {
                    *o = (l - max).exp();
                    sum += *o;
                }
                for o in out.iter_mut() {
                    *o /= sum;
                }
            }
        }
        let needs = self.needs(&[x]);
        Ok(self.push(vec![n, c], values, needs, Op::Softmax { x }))
    }

    fn check_rows(&self, target: Var, pred: Var, op: &str) -> Result<(usize, usize)> {
        let (ts, ps) = (self.shape(target), self.shape(pred));
        if ts.len() != 2 || ts != ps {
            return Err(Error::Dimension(format!(
                "{op} expects equal [n,c] shapes; got target:{ts:?}, pred:{ps:?}"
            )));
        }
        Ok((ts[0], ts[1]))
    }

    fn cross_entropy_inner(
        &mut self,
        target: Var,
        pred: Var,
        row_weights: Option<Vec<f64>>,
    ) -> Result<Var> {
        let (n, c) = self.check_rows(target, pred, "cross_entropy")?;
        let weights = match row_weights {
            Some(w) if w.len() != n => {
                return Err(Error::Dimension(format!(
                    "cross_entropy got {} row weights for {n} rows",
                    w.len()
                )))
            }
            Some(w) => w,
            None => vec![1.0; n],
        };
        let mut total = 0.0;
        {
            let tv = &self.node(target).values;
            let pv = &self.node(pred).values;
            for i in 0..n {
                let mut row = 0.0;
                for k in 0..c {
                    let p = pv[i * c + k].clamp(LOG_CLAMP_EPS, 1.0);
                    row -= tv[i * c + k] * p.ln();
                }
                total += weights[i] * row;
            }
        }
        let needs = self.needs(&[target, pred]);
        Ok(self.push(
            vec![1],
            vec![total / n as f64],
            needs,
            Op::CrossEntropy { target, pred, row_weights: weights },
        ))
    }

    /// Mean over rows of `−Σ_k target·log(clamp(pred))`. Both arguments must
    /// hold probability rows; violations are caught in debug builds.
    pub fn cross_entropy(&mut self, target: Var, pred: Var) -> Result<Var> {
        self.debug_assert_simplex(target, "cross_entropy target");
        self.debug_assert_simplex(pred, "cross_entropy pred");
        self.cross_entropy_inner(target, pred, None)
    }

    /// `cross_entropy` with one weight per row.
    pub fn cross_entropy_weighted(
        &mut self,
        target: Var,
        pred: Var,
        row_weights: Vec<f64>,
    ) -> Result<Var> {
        self.debug_assert_simplex(target, "cross_entropy target");
        self.debug_assert_simplex(pred, "cross_entropy pred");
        self.cross_entropy_inner(target, pred, Some(row_weights))
    }

    /// `cross_entropy` without the simplex check, for callers that feed
    /// deliberately unnormalized rows.
    pub fn cross_entropy_raw(&mut self, target: Var, pred: Var) -> Result<Var> {
        self.cross_entropy_inner(target, pred, None)
    }

    fn debug_assert_simplex(&self, v: Var, what: &str) {
        if cfg!(debug_assertions) {
            let c = self.shape(v)[1];
            for (i, row) in self.node(v).values.chunks(c).enumerate() {
                // Non-finite rows are a runtime outcome of divergent
                // training, not a caller bug: they pass through and surface
                // as a non-finite loss.
                if row.iter().any(|p| !p.is_finite()) {
                    continue;
                }
                let sum: f64 = row.iter().sum();
                debug_assert!(
                    (sum - 1.0).abs() < 1e-6 && row.iter().all(|&p| p >= -1e-12),
                    "{what} row {i} is not a probability row: {row:?}"
                );
            }
        }
    }

    fn mse_inner(&mut self, target: Var, pred: Var, row_weights: Option<Vec<f64>>) -> Result<Var> {
        let (n, c) = self.check_rows(target, pred, "mse_distance")?;
        let weights = match row_weights {
            Some(w) if w.len() != n => {
                return Err(Error::Dimension(format!(
                    "mse_distance got {} row weights for {n} rows",
                    w.len()
                )))
            }
            Some(w) => w,
            None => vec![1.0; n],
        };
        let mut total = 0.0;
        {
            let tv = &self.node(target).values;
            let pv = &self.node(pred).values;
            for i in 0..n {
                let mut row = 0.0;
                for k in 0..c {
                    let d = tv[i * c + k] - pv[i * c + k];
                    row += d * d;
                }
                total += weights[i] * row;
            }
        }
        let needs = self.needs(&[target, pred]);
        Ok(self.push(
            vec![1],
            vec![total / n as f64],
            needs,
            Op::MseDistance { target, pred, row_weights: weights },
        ))
    }

    /// Mean over rows of the squared Euclidean distance ‖target − pred‖².
    pub fn mse_distance(&mut self, target: Var, pred: Var) -> Result<Var> {
        self.mse_inner(target, pred, None)
    }

    /// `mse_distance` with one weight per row.
    pub fn mse_distance_weighted(
        &mut self,
        target: Var,
        pred: Var,
        row_weights: Vec<f64>,
    ) -> Result<Var> {
        self.mse_inner(target, pred, Some(row_weights))
    }

    fn check_same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Dimension(format!(
                "{op} expects equal shapes; got {sa:?} and {sb:?}"
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "add")?;
        let values = self
            .node(a)
            .values
            .iter()
            .zip(&self.node(b).values)
            .map(|(x, y)| x + y)
            .collect();
        let needs = self.needs(&[a, b]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, values, needs, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "mul")?;
        let values = self
            .node(a)
            .values
            .iter()
            .zip(&self.node(b).values)
            .map(|(x, y)| x * y)
            .collect();
        let needs = self.needs(&[a, b]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, values, needs, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let values = self.node(x).values.iter().map(|v| v * factor).collect();
        let needs = self.needs(&[x]);
        let shape = self.shape(x).to_vec();
        self.push(shape, values, needs, Op::Scale { x, factor })
    }

    /// Multiplies each row of a `[n, c]` input by its own factor.
    pub fn row_scale(&mut self, x: Var, factors: Vec<f64>) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 2 || xs[0] != factors.len() {
            return Err(Error::Dimension(format!(
                "row_scale expects x:[n,c] with one factor per row; got x:{xs:?}, {} factors",
                factors.len()
            )));
        }
        let (n, c) = (xs[0], xs[1]);
        let mut values = vec![0.0; n * c];
        for i in 0..n {
            for k in 0..c {
                values[i * c + k] = self.node(x).values[i * c + k] * factors[i];
            }
        }
        let needs = self.needs(&[x]);
        Ok(self.push(vec![n, c], values, needs, Op::RowScale { x, factors }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.node(x).values.iter().sum();
        let needs = self.needs(&[x]);
        self.push(vec![1], vec![total], needs, Op::Sum { x })
    }

    /// `[n,c,h,w] -> [n,c]`, averaging over the spatial extent.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 4 {
            return Err(Error::Dimension(format!(
                "global_avg_pool expects x:[n,c,h,w]; got {xs:?}"
            )));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let m = (h * w) as f64;
        let mut values = vec![0.0; n * c];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * h * w;
                values[b * c + ch] =
                    self.node(x).values[off..off + h * w].iter().sum::<f64>() / m;
            }
        }
        let needs = self.needs(&[x]);
        Ok(self.push(vec![n, c], values, needs, Op::GlobalAvgPool { x }))
    }

    /// Populates gradients of every grad-requiring node reachable from `loss`.
    /// Unreachable grads stay zero. Resets all gradients first, so repeated
    /// calls are idempotent rather than accumulating.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.node(loss).values.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss; got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[loss.0].grad[0] = 1.0;
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            if self.nodes[i].grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            let contributions = self.node_backward(i);
            for (target, contribution) in contributions {
                let grad = &mut self.nodes[target].grad;
                for (g, c) in grad.iter_mut().zip(contribution) {
                    *g += c;
                }
            }
        }
        Ok(())
    }

    /// Computes `∂loss/∂input` contributions of node `i` toward each of its
    /// grad-requiring inputs. Pure reads; accumulation happens in `backward`.
    fn node_backward(&self, i: usize) -> Vec<(usize, Vec<f64>)> {
        let node = &self.nodes[i];
        let dy = &node.grad;
        let mut out: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut emit = |v: Var, g: Vec<f64>| {
            if self.nodes[v.0].needs_grad {
                out.push((v.0, g));
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let xs = &self.node(*x).shape;
                let (n, input) = (xs[0], xs[1]);
                let output = self.node(*w).shape[1];
                let xv = &self.node(*x).values;
                let wv = &self.node(*w).values;
                let mut dx = vec![0.0; n * input];
                let mut dw = vec![0.0; input * output];
                let mut db = vec![0.0; output];
                for r in 0..n {
                    let dyr = &dy[r * output..(r + 1) * output];
                    for k in 0..input {
                        let xk = xv[r * input + k];
                        let wrow = &wv[k * output..(k + 1) * output];
                        let mut acc = 0.0;
                        for j in 0..output {
                            acc += dyr[j] * wrow[j];
                            dw[k * output + j] += xk * dyr[j];
                        }
                        dx[r * input + k] = acc;
                    }
                    for j in 0..output {
                        db[j] += dyr[j];
                    }
                }
                emit(*x, dx);
                emit(*w, dw);
                emit(*b, db);
            }
            Op::Conv2d { x, k, stride, padding } => {
                let xs = &self.node(*x).shape;
                let ks = &self.node(*k).shape;
                let (n, ci, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let (co, kh, kw) = (ks[0], ks[2], ks[3]);
                let (ho, wo) = (node.shape[2], node.shape[3]);
                let xv = &self.node(*x).values;
                let kv = &self.node(*k).values;
                let mut dx = vec![0.0; xv.len()];
                let mut dk = vec![0.0; kv.len()];
                for b in 0..n {
                    for o in 0..co {
                        for i0 in 0..ho {
                            for j0 in 0..wo {
                                let g = dy[((b * co + o) * ho + i0) * wo + j0];
                                if g == 0.0 {
                                    continue;
                                }
                                for c in 0..ci {
                                    let xoff = (b * ci + c) * h * w;
                                    let koff = (o * ci + c) * kh * kw;
                                    for u in 0..kh {
                                        let y0 = (i0 * stride + u) as isize - *padding as isize;
                                        if y0 < 0 || y0 as usize >= h {
                                            continue;
                                        }
                                        for v in 0..kw {
                                            let x0 =
                                                (j0 * stride + v) as isize - *padding as isize;
                                            if x0 < 0 || x0 as usize >= w {
                                                continue;
                                            }
                                            let xi = xoff + y0 as usize * w + x0 as usize;
                                            dx[xi] += g * kv[koff + u * kw + v];
                                            dk[koff + u * kw + v] += g * xv[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                emit(*x, dx);
                emit(*k, dk);
            }
            Op::ChannelNorm { x, gain, bias, frozen, normalized, inv_std } => {
                let xs = &self.node(*x).shape;
                let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let m = h * w;
                let gv = &self.node(*gain).values;
                let mut dx = vec![0.0; n * c * m];
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * m;
                        let inv = inv_std[b * c + ch];
                        let g = gv[ch];
                        let mut sum_dxh = 0.0;
                        let mut sum_dxh_xh = 0.0;
                        for i in 0..m {
                            let d = dy[off + i];
                            let xh = normalized[off + i];
                            dg[ch] += d * xh;
                            db[ch] += d;
                            sum_dxh += d * g;
                            sum_dxh_xh += d * g * xh;
                        }
                        if *frozen {
                            for i in 0..m {
                                dx[off + i] = dy[off + i] * g * inv;
                            }
                        } else {
                            let mf = m as f64;
                            for i in 0..m {
                                let dxh = dy[off + i] * g;
                                let xh = normalized[off + i];
                                dx[off + i] =
                                    inv * (dxh - sum_dxh / mf - xh * sum_dxh_xh / mf);
                            }
                        }
                    }
                }
                emit(*x, dx);
                emit(*gain, dg);
                emit(*bias, db);
            }
            Op::Relu { x } => {
                let xv = &self.node(*x).values;
                let dx = dy
                    .iter()
                    .zip(xv)
                    .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                emit(*x, dx);
            }
            Op::Softmax { x } => {
                let (n, c) = (node.shape[0], node.shape[1]);
                let pv = &node.values;
                let mut dx = vec![0.0; n * c];
                for r in 0..n {
                    let p = &pv[r * c..(r + 1) * c];
                    let d = &dy[r * c..(r + 1) * c];
                    let dot: f64 = p.iter().zip(d).map(|(&pi, &di)| pi * di).sum();
                    for k in 0..c {
                        dx[r * c + k] = p[k] * (d[k] - dot);
                    }
                }
                emit(*x, dx);
            }
            Op::CrossEntropy { target, pred, row_weights } => {
                let g = dy[0];
                let (n, c) = {
                    let s = &self.node(*target).shape;
                    (s[0], s[1])
                };
                let tv = &self.node(*target).values;
                let pv = &self.node(*pred).values;
                let nf = n as f64;
                let mut dp = vec![0.0; n * c];
                let mut dt = vec![0.0; n * c];
                for r in 0..n {
                    let w = row_weights[r];
                    for k in 0..c {
                        let p = pv[r * c + k];
                        let clamped = p.clamp(LOG_CLAMP_EPS, 1.0);
                        // The clamp is flat outside [ε, 1]; no gradient there.
                        if (LOG_CLAMP_EPS..=1.0).contains(&p) {
                            dp[r * c + k] = -g * w * tv[r * c + k] / (clamped * nf);
                        }
                        dt[r * c + k] = -g * w * clamped.ln() / nf;
                    }
                }
                emit(*pred, dp);
                emit(*target, dt);
            }
            Op::MseDistance { target, pred, row_weights } => {
                let g = dy[0];
                let (n, c) = {
                    let s = &self.node(*target).shape;
                    (s[0], s[1])
                };
                let tv = &self.node(*target).values;
                let pv = &self.node(*pred).values;
                let nf = n as f64;
                let mut dp = vec![0.0; n * c];
                let mut dt = vec![0.0; n * c];
                for r in 0..n {
                    let w = row_weights[r];
                    for k in 0..c {
                        let d = tv[r * c + k] - pv[r * c + k];
                        dp[r * c + k] = -2.0 * g * w * d / nf;
                        dt[r * c + k] = 2.0 * g * w * d / nf;
                    }
                }
                emit(*pred, dp);
                emit(*target, dt);
            }
            Op::Add { a, b } => {
                emit(*a, dy.clone());
                emit(*b, dy.clone());
            }
            Op::Mul { a, b } => {
                let av = &self.node(*a).values;
                let bv = &self.node(*b).values;
                let da = dy.iter().zip(bv).map(|(&g, &v)| g * v).collect();
                let db = dy.iter().zip(av).map(|(&g, &v)| g * v).collect();
                emit(*a, da);
                emit(*b, db);
            }
            Op::Scale { x, factor } => {
                emit(*x, dy.iter().map(|&g| g * factor).collect());
            }
            Op::RowScale { x, factors } => {
                let c = node.shape[1];
                let mut dx = vec![0.0; dy.len()];
                for (r, &f) in factors.iter().enumerate() {
                    for k in 0..c {
                        dx[r * c + k] = dy[r * c + k] * f;
                    }
                }
                emit(*x, dx);
            }
            Op::Sum { x } => {
                let g = dy[0];
                emit(*x, vec![g; self.node(*x).values.len()]);
            }
            Op::GlobalAvgPool { x } => {
                let xs = &self.node(*x).shape;
                let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let m = (h * w) as f64;
                let mut dx = vec![0.0; n * c * h * w];
                for b in 0..n {
                    for ch in 0..c {
                        let g = dy[b * c + ch] / m;
                        let off = (b * c + ch) * h * w;
                        dx[off..off + h * w].iter_mut().for_each(|d| *d = g);
                    }
                }
                emit(*x, dx);
            }
        }
        out
    }
}

/// Compares an analytic gradient against central finite differences of `f`
/// around `x`, returning the maximum per-coordinate relative error with
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check<F>(f: &mut F, x: &[f64], h: f64, analytic: &[f64]) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        let numeric = (plus - minus) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((numeric - analytic[i]).abs() / denom);
    }
    worst
}
