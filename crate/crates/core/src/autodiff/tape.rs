//! Batched reverse-mode tape over second-order jets.
//!
//! Every node stores a block of jets laid out as `rows × channels × points`
//! (row-major, points innermost). Channel 0 is the value; the remaining
//! channels hold the input gradient and the upper triangle of the input
//! Hessian. Linear maps therefore act on all channels at once, and only the
//! nonlinear elementwise operations need the jet composition rules.
//!
//! Parameters are not nodes. Operations that read parameters store offsets
//! into the flat parameter vector the tape was created with, and the reverse
//! sweep accumulates directly into a [`Gradient`] of the same length.

use super::primitive::{softplus, Primitive};
use crate::basis::BsplineGrid;
use crate::error::{Error, Result};

/// Jet channel layout of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channels {
    /// Value only.
    Plain,
    /// Value, `d/dx`, `d²/dx²`.
    D1,
    /// Value, two gradient entries, Hessian entries `(0,0)`, `(0,1)`, `(1,1)`.
    D2,
    /// Value, two gradient entries and only `∂²/∂x₀²`: first order in the
    /// second input, second order in the first.
    Parabolic,
}

impl Channels {
    pub fn from_dim(dim: usize) -> Result<Self> {
        match dim {
            0 => Ok(Channels::Plain),
            1 => Ok(Channels::D1),
            2 => Ok(Channels::D2),
            d => Err(Error::Dimension(format!("jets support at most 2 inputs, got {d}"))),
        }
    }

    #[inline]
    pub fn count(self) -> usize {
        match self {
            Channels::Plain => 1,
            Channels::D1 => 3,
            Channels::D2 => 6,
            Channels::Parabolic => 4,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Channels::Plain => 0,
            Channels::D1 => 1,
            Channels::D2 | Channels::Parabolic => 2,
        }
    }

    /// Channel holding `∂/∂x_i`.
    pub fn grad(self, i: usize) -> usize {
        assert!(i < self.dim(), "gradient channel {i} out of range for {self:?}");
        1 + i
    }

    /// Channel holding `∂²/∂x_i∂x_j`.
    pub fn hess(self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        match (self, i, j) {
            (Channels::D1, 0, 0) => 2,
            (Channels::D2, 0, 0) => 3,
            (Channels::D2, 0, 1) => 4,
            (Channels::D2, 1, 1) => 5,
            (Channels::Parabolic, 0, 0) => 3,
            _ => panic!("hessian channel ({i},{j}) out of range for {self:?}"),
        }
    }

    /// Stored Hessian entries as `(channel, i, j)` with `i <= j`.
    pub fn hess_entries(self) -> &'static [(usize, usize, usize)] {
        match self {
            Channels::Plain => &[],
            Channels::D1 => &[(2, 0, 0)],
            Channels::D2 => &[(3, 0, 0), (4, 0, 1), (5, 1, 1)],
            Channels::Parabolic => &[(3, 0, 0)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradient of a scalar with respect to every parameter, index-aligned with
/// the parameter vector the tape was built over.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
}

impl Gradient {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Linear { x: NodeId, w: usize, b: Option<usize>, n_in: usize, n_out: usize },
    Unary { x: NodeId, f: Primitive },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    Shift { x: NodeId, c: f64 },
    RowAffine { x: NodeId, scale: Vec<f64>, shift: Vec<f64> },
    Atoms { x: NodeId, centers: usize, scale_logits: usize, k: usize },
    GroupDot { x: NodeId, coeff: usize, k: usize, inv_scale_logits: Option<usize>, factor: f64 },
    Harmonics { x: NodeId, k: usize, omega: f64 },
    Concat { parts: Vec<NodeId> },
    SumRows { x: NodeId },
    EdgeSum { x: NodeId, w: usize, b: Option<usize>, d_in: usize, d_out: usize },
    Bspline { x: NodeId, grid: BsplineGrid },
    SplineMix { x: NodeId, coeff: usize, scaler: usize, d_in: usize, nb: usize, d_out: usize },
    Row { x: NodeId, row: usize },
    Channel { x: NodeId, chan: usize },
    MulPoints { x: NodeId, data: Vec<f64> },
    SubTarget { x: NodeId, target: Vec<f64> },
    SumSquares { x: NodeId, scale: f64 },
    WeightedSum { terms: Vec<(NodeId, f64)> },
}

#[derive(Debug, Clone)]
struct Node {
    rows: usize,
    chans: Channels,
    n: usize,
    op: Op,
    value: Vec<f64>,
    /// Per-element derivatives cached by elementwise nonlinearities.
    aux: Vec<f64>,
}

impl Node {
    #[inline]
    fn stride(&self) -> usize {
        self.chans.count() * self.n
    }

    #[inline]
    fn row(&self, r: usize) -> &[f64] {
        let s = self.stride();
        &self.value[r * s..(r + 1) * s]
    }
}

/// Recorded computation over a fixed parameter vector.
pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Self { params, nodes: Vec::new() }
    }

    pub fn params(&self) -> &'p [f64] {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn rows(&self, x: NodeId) -> usize {
        self.nodes[x.0].rows
    }

    pub fn points(&self, x: NodeId) -> usize {
        self.nodes[x.0].n
    }

    pub fn channels(&self, x: NodeId) -> Channels {
        self.nodes[x.0].chans
    }

    /// Raw node storage, `rows × channels × points`.
    pub fn value(&self, x: NodeId) -> &[f64] {
        &self.nodes[x.0].value
    }

    /// Channel `chan` of `row` over all points.
    pub fn channel_values(&self, x: NodeId, row: usize, chan: usize) -> &[f64] {
        let node = &self.nodes[x.0];
        let start = (row * node.chans.count() + chan) * node.n;
        &node.value[start..start + node.n]
    }

    /// Value of a scalar node.
    pub fn scalar(&self, x: NodeId) -> f64 {
        let node = &self.nodes[x.0];
        assert!(node.rows == 1 && node.n == 1, "node is not scalar");
        node.value[0]
    }

    /// Jet stored at `(row, point)`.
    pub fn jet(&self, x: NodeId, row: usize, p: usize) -> super::Jet {
        let node = &self.nodes[x.0];
        let c = node.chans;
        let at = |ch: usize| node.value[(row * c.count() + ch) * node.n + p];
        let d = c.dim();
        let mut grad = [0.0; 2];
        let mut hess = [[0.0; 2]; 2];
        for i in 0..d {
            grad[i] = at(c.grad(i));
        }
        for &(h, i, j) in c.hess_entries() {
            hess[i][j] = at(h);
            hess[j][i] = at(h);
        }
        super::Jet::from_parts(at(0), &grad[..d], &hess[..d])
    }

    fn push(&mut self, rows: usize, chans: Channels, n: usize, op: Op) -> NodeId {
        let (value, aux) = compute(&self.nodes, self.params, &op, rows, chans, n);
        self.nodes.push(Node { rows, chans, n, op, value, aux });
        NodeId(self.nodes.len() - 1)
    }

    fn check_params(&self, offset: usize, len: usize) {
        assert!(
            offset + len <= self.params.len(),
            "parameter slice {offset}..{} exceeds store of length {}",
            offset + len,
            self.params.len()
        );
    }

    fn same_shape(&self, a: NodeId, b: NodeId) -> (usize, Channels, usize) {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        assert!(
            na.rows == nb.rows && na.chans == nb.chans && na.n == nb.n,
            "shape mismatch: ({}, {:?}, {}) vs ({}, {:?}, {})",
            na.rows,
            na.chans,
            na.n,
            nb.rows,
            nb.chans,
            nb.n
        );
        (na.rows, na.chans, na.n)
    }

    fn shape(&self, x: NodeId) -> (usize, Channels, usize) {
        let n = &self.nodes[x.0];
        (n.rows, n.chans, n.n)
    }

    // ---- leaves -------------------------------------------------------

    /// Input points given coordinate-major (`coords[i * n + p]`), seeded as
    /// jet variables for `chans`. With `Channels::Plain` only values are kept.
    pub fn input(&mut self, coords: &[f64], dims: usize, chans: Channels) -> Result<NodeId> {
        if dims == 0 || !coords.len().is_multiple_of(dims) {
            return Err(Error::Dimension(format!(
                "{} coordinates cannot be split into {dims} input dimensions",
                coords.len()
            )));
        }
        if chans != Channels::Plain && chans.dim() != dims {
            return Err(Error::Dimension(format!(
                "jet channels {chans:?} do not match {dims} inputs"
            )));
        }
        let n = coords.len() / dims;
        let c = chans.count();
        let mut value = vec![0.0; dims * c * n];
        for i in 0..dims {
            value[i * c * n..i * c * n + n].copy_from_slice(&coords[i * n..(i + 1) * n]);
            if chans != Channels::Plain {
                let g = chans.grad(i);
                let start = (i * c + g) * n;
                value[start..start + n].fill(1.0);
            }
        }
        self.nodes.push(Node { rows: dims, chans, n, op: Op::Input, value, aux: Vec::new() });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Input points with one-variable jets: only coordinate `var` is seeded,
    /// the other rows carry values and zero derivatives.
    pub fn input_along(&mut self, coords: &[f64], dims: usize, var: usize) -> Result<NodeId> {
        if dims == 0 || !coords.len().is_multiple_of(dims) || var >= dims {
            return Err(Error::Dimension(format!(
                "{} coordinates cannot be split into {dims} input dimensions seeded along {var}",
                coords.len()
            )));
        }
        let n = coords.len() / dims;
        let c = Channels::D1.count();
        let mut value = vec![0.0; dims * c * n];
        for i in 0..dims {
            value[i * c * n..i * c * n + n].copy_from_slice(&coords[i * n..(i + 1) * n]);
        }
        value[(var * c + 1) * n..(var * c + 2) * n].fill(1.0);
        self.nodes.push(Node { rows: dims, chans: Channels::D1, n, op: Op::Input, value, aux: Vec::new() });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Single-point node whose rows are the given jets.
    pub fn jets(&mut self, jets: &[super::Jet]) -> Result<NodeId> {
        let dim = jets.first().map_or(0, |j| j.dim());
        if jets.iter().any(|j| j.dim() != dim) {
            return Err(Error::Dimension("jets of mixed dimension".into()));
        }
        let chans = Channels::from_dim(dim)?;
        let c = chans.count();
        let mut value = vec![0.0; jets.len() * c];
        for (r, j) in jets.iter().enumerate() {
            value[r * c] = j.value;
            for i in 0..dim {
                value[r * c + chans.grad(i)] = j.grad[i];
                for k in i..dim {
                    value[r * c + chans.hess(i, k)] = j.hess[i][k];
                }
            }
        }
        self.nodes.push(Node { rows: jets.len(), chans, n: 1, op: Op::Input, value, aux: Vec::new() });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Constant block with no derivative content.
    pub fn constant(&mut self, rows: usize, chans: Channels, n: usize, values: &[f64]) -> NodeId {
        assert_eq!(values.len(), rows * n);
        let c = chans.count();
        let mut value = vec![0.0; rows * c * n];
        for r in 0..rows {
            value[r * c * n..r * c * n + n].copy_from_slice(&values[r * n..(r + 1) * n]);
        }
        self.nodes.push(Node { rows, chans, n, op: Op::Input, value, aux: Vec::new() });
        NodeId(self.nodes.len() - 1)
    }

    // ---- operations ---------------------------------------------------

    /// `W x + b` with `W` stored row-major `[n_out × n_in]` at `w`.
    pub fn linear(&mut self, x: NodeId, w: usize, b: Option<usize>, n_out: usize) -> NodeId {
        let (n_in, chans, n) = self.shape(x);
        self.check_params(w, n_in * n_out);
        if let Some(b) = b {
            self.check_params(b, n_out);
        }
        self.push(n_out, chans, n, Op::Linear { x, w, b, n_in, n_out })
    }

    pub fn unary(&mut self, x: NodeId, f: Primitive) -> NodeId {
        let (rows, chans, n) = self.shape(x);
        self.push(rows, chans, n, Op::Unary { x, f })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (rows, chans, n) = self.same_shape(a, b);
        self.push(rows, chans, n, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (rows, chans, n) = self.same_shape(a, b);
        self.push(rows, chans, n, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (rows, chans, n) = self.same_shape(a, b);
        self.push(rows, chans, n, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let (rows, chans, n) = self.shape(x);
        self.push(rows, chans, n, Op::Scale { x, c })
    }

    /// Adds `c` to the value channel.
    pub fn shift(&mut self, x: NodeId, c: f64) -> NodeId {
        let (rows, chans, n) = self.shape(x);
        self.push(rows, chans, n, Op::Shift { x, c })
    }

    /// Row-wise `scale[r] * x_r + shift[r]` with constant coefficients.
    pub fn row_affine(&mut self, x: NodeId, scale: Vec<f64>, shift: Vec<f64>) -> NodeId {
        let (rows, chans, n) = self.shape(x);
        assert!(scale.len() == rows && shift.len() == rows);
        self.push(rows, chans, n, Op::RowAffine { x, scale, shift })
    }

    /// Normalised atom coordinates `r_{i,k} = (x_i - c_{i,k}) / softplus(l_{i,k})`,
    /// output row `i * k + j`.
    pub fn atoms(&mut self, x: NodeId, centers: usize, scale_logits: usize, k: usize) -> NodeId {
        let (rows, chans, n) = self.shape(x);
        self.check_params(centers, rows * k);
        self.check_params(scale_logits, rows * k);
        self.push(rows * k, chans, n, Op::Atoms { x, centers, scale_logits, k })
    }

    /// `y_i = factor * Σ_j coeff_{i,j} x_{i*k+j}`, optionally divided by
    /// `softplus(l_{i,j})`.
    pub fn group_dot(
        &mut self,
        x: NodeId,
        coeff: usize,
        k: usize,
        inv_scale_logits: Option<usize>,
        factor: f64,
    ) -> NodeId {
        let (rows, chans, n) = self.shape(x);
        assert!(rows % k == 0, "{rows} rows do not split into groups of {k}");
        self.check_params(coeff, rows);
        if let Some(l) = inv_scale_logits {
            self.check_params(l, rows);
        }
        self.push(rows / k, chans, n, Op::GroupDot { x, coeff, k, inv_scale_logits, factor })
    }

    /// Rows `i * k + j` hold `(j + 1) ω x_i`.
    pub fn harmonics(&mut self, x: NodeId, k: usize, omega: f64) -> NodeId {
        let (rows, chans, n) = self.shape(x);
        self.push(rows * k, chans, n, Op::Harmonics { x, k, omega })
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let (_, chans, n) = self.shape(parts[0]);
        let mut rows = 0;
        for &p in parts {
            let (r, c, m) = self.shape(p);
            assert!(c == chans && m == n, "concat parts disagree in channels or points");
            rows += r;
        }
        self.push(rows, chans, n, Op::Concat { parts: parts.to_vec() })
    }

    pub fn sum_rows(&mut self, x: NodeId) -> NodeId {
        let (_, chans, n) = self.shape(x);
        self.push(1, chans, n, Op::SumRows { x })
    }

    /// Per-edge aggregation: input rows `j * d_out + o`, output
    /// `y_o = Σ_j w_{o,j} x_{j*d_out+o} + b_o`.
    pub fn edge_sum(&mut self, x: NodeId, w: usize, b: Option<usize>, d_out: usize) -> NodeId {
        let (rows, chans, n) = self.shape(x);
        assert!(rows % d_out == 0);
        let d_in = rows / d_out;
        self.check_params(w, d_in * d_out);
        if let Some(b) = b {
            self.check_params(b, d_out);
        }
        self.push(d_out, chans, n, Op::EdgeSum { x, w, b, d_in, d_out })
    }

    /// All B-spline bases of every input row, output row `i * nb + j`.
    pub fn bspline(&mut self, x: NodeId, grid: BsplineGrid) -> NodeId {
        let (rows, chans, n) = self.shape(x);
        self.push(rows * grid.num_bases(), chans, n, Op::Bspline { x, grid })
    }

    /// `y_o = Σ_i scaler_{o,i} Σ_j coeff_{o,i,j} x_{i*nb+j}`.
    pub fn spline_mix(&mut self, x: NodeId, coeff: usize, scaler: usize, nb: usize, d_out: usize) -> NodeId {
        let (rows, chans, n) = self.shape(x);
        assert!(rows % nb == 0);
        let d_in = rows / nb;
        self.check_params(coeff, d_out * d_in * nb);
        self.check_params(scaler, d_out * d_in);
        self.push(d_out, chans, n, Op::SplineMix { x, coeff, scaler, d_in, nb, d_out })
    }

    pub fn row(&mut self, x: NodeId, row: usize) -> NodeId {
        let (rows, chans, n) = self.shape(x);
        assert!(row < rows);
        self.push(1, chans, n, Op::Row { x, row })
    }

    /// Channel `chan` of every row as a plain node.
    pub fn channel(&mut self, x: NodeId, chan: usize) -> NodeId {
        let (rows, chans, n) = self.shape(x);
        assert!(chan < chans.count());
        self.push(rows, Channels::Plain, n, Op::Channel { x, chan })
    }

    /// Multiplies every row and channel of point `p` by `data[p]`.
    pub fn mul_points(&mut self, x: NodeId, data: Vec<f64>) -> NodeId {
        let (rows, chans, n) = self.shape(x);
        assert_eq!(data.len(), n);
        self.push(rows, chans, n, Op::MulPoints { x, data })
    }

    /// Value channel minus a target laid out `rows × points`.
    pub fn sub_target(&mut self, x: NodeId, target: Vec<f64>) -> NodeId {
        let (rows, chans, n) = self.shape(x);
        assert_eq!(target.len(), rows * n);
        self.push(rows, chans, n, Op::SubTarget { x, target })
    }

    /// `scale * Σ value²` over every row and point.
    pub fn sum_squares(&mut self, x: NodeId, scale: f64) -> NodeId {
        self.push(1, Channels::Plain, 1, Op::SumSquares { x, scale })
    }

    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> NodeId {
        for &(t, _) in terms {
            let (r, _, n) = self.shape(t);
            assert!(r == 1 && n == 1, "weighted_sum expects scalar terms");
        }
        self.push(1, Channels::Plain, 1, Op::WeightedSum { terms: terms.to_vec() })
    }

    /// Recomputes every node from its recorded operation and checks the
    /// result is bit-identical to the stored values.
    pub fn replay_matches(&self) -> bool {
        let mut replayed: Vec<Node> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let (value, aux) = match node.op {
                Op::Input => (node.value.clone(), Vec::new()),
                _ => compute(&replayed, self.params, &node.op, node.rows, node.chans, node.n),
            };
            if value.iter().zip(&node.value).any(|(a, b)| a.to_bits() != b.to_bits()) {
                return false;
            }
            replayed.push(Node { value, aux, op: node.op.clone(), ..*node });
        }
        true
    }

    /// Reverse sweep from the value channel of scalar node `loss`.
    pub fn gradient(&self, loss: NodeId) -> Result<Gradient> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Tape(format!(
                "loss node {} is not on a tape of {} nodes",
                loss.0,
                self.nodes.len()
            )));
        }
        let ln = &self.nodes[loss.0];
        if ln.rows != 1 || ln.n != 1 {
            return Err(Error::Tape("loss node is not a scalar".into()));
        }
        let mut grad = Gradient::zeros(self.params.len());
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        let mut seed = vec![0.0; ln.value.len()];
        seed[0] = 1.0;
        adj[loss.0] = Some(seed);
        for i in (0..=loss.0).rev() {
            let Some(ybar) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            backward(&self.nodes, self.params, node, &ybar, &mut adj, &mut grad.values);
        }
        Ok(grad)
    }
}

// ---- jet kernels -----------------------------------------------------------

#[inline]
fn jet_chain_fwd(c: usize, f: &[f64; 4], x: &[f64; 6], y: &mut [f64; 6]) {
    y[0] = f[0];
    match c {
        1 => {}
        3 => {
            y[1] = f[1] * x[1];
            y[2] = f[2] * x[1] * x[1] + f[1] * x[2];
        }
        4 => {
            y[1] = f[1] * x[1];
            y[2] = f[1] * x[2];
            y[3] = f[2] * x[1] * x[1] + f[1] * x[3];
        }
        _ => {
            y[1] = f[1] * x[1];
            y[2] = f[1] * x[2];
            y[3] = f[2] * x[1] * x[1] + f[1] * x[3];
            y[4] = f[2] * x[1] * x[2] + f[1] * x[4];
            y[5] = f[2] * x[2] * x[2] + f[1] * x[5];
        }
    }
}

#[inline]
fn jet_chain_bwd(c: usize, f: &[f64; 4], x: &[f64; 6], a: &[f64; 6], xb: &mut [f64; 6]) {
    match c {
        1 => xb[0] = a[0] * f[1],
        3 => {
            xb[0] = a[0] * f[1] + a[1] * f[2] * x[1] + a[2] * (f[3] * x[1] * x[1] + f[2] * x[2]);
            xb[1] = a[1] * f[1] + 2.0 * a[2] * f[2] * x[1];
            xb[2] = a[2] * f[1];
        }
        4 => {
            xb[0] = a[0] * f[1] + a[1] * f[2] * x[1] + a[2] * f[2] * x[2] + a[3] * (f[3] * x[1] * x[1] + f[2] * x[3]);
            xb[1] = a[1] * f[1] + 2.0 * a[3] * f[2] * x[1];
            xb[2] = a[2] * f[1];
            xb[3] = a[3] * f[1];
        }
        _ => {
            xb[0] = a[0] * f[1]
                + a[1] * f[2] * x[1]
                + a[2] * f[2] * x[2]
                + a[3] * (f[3] * x[1] * x[1] + f[2] * x[3])
                + a[4] * (f[3] * x[1] * x[2] + f[2] * x[4])
                + a[5] * (f[3] * x[2] * x[2] + f[2] * x[5]);
            xb[1] = a[1] * f[1] + 2.0 * a[3] * f[2] * x[1] + a[4] * f[2] * x[2];
            xb[2] = a[2] * f[1] + a[4] * f[2] * x[1] + 2.0 * a[5] * f[2] * x[2];
            xb[3] = a[3] * f[1];
            xb[4] = a[4] * f[1];
            xb[5] = a[5] * f[1];
        }
    }
}

/// Channel slice `k` of a row block.
#[inline]
fn ch(v: &[f64], n: usize, k: usize) -> &[f64] {
    &v[k * n..(k + 1) * n]
}

/// Forward chain rule over one row block: fills the derivative channels of
/// `y` from the input channels `x` and the cached `f'`, `f''`.
fn chain_fwd(chans: Channels, n: usize, d1: &[f64], d2: &[f64], x: &[f64], y: &mut [f64]) {
    for &(h, i, j) in chans.hess_entries() {
        let (xi, xj, xh) = (ch(x, n, 1 + i), ch(x, n, 1 + j), ch(x, n, h));
        for (p, yh) in y[h * n..(h + 1) * n].iter_mut().enumerate() {
            *yh = d2[p] * xi[p] * xj[p] + d1[p] * xh[p];
        }
    }
    for i in 0..chans.dim() {
        let xg = ch(x, n, 1 + i);
        for (p, yg) in y[(1 + i) * n..(2 + i) * n].iter_mut().enumerate() {
            *yg = d1[p] * xg[p];
        }
    }
}

/// Reverse of [`chain_fwd`] including the value channel; accumulates into `xb`.
fn chain_bwd(chans: Channels, n: usize, d: [&[f64]; 3], x: &[f64], a: &[f64], xb: &mut [f64]) {
    let [d1, d2, d3] = d;
    let (a0, xb0) = (ch(a, n, 0), &mut xb[..n]);
    for p in 0..n {
        xb0[p] += a0[p] * d1[p];
    }
    for i in 0..chans.dim() {
        let (ag, xg) = (ch(a, n, 1 + i), ch(x, n, 1 + i));
        for p in 0..n {
            xb0[p] += ag[p] * d2[p] * xg[p];
        }
    }
    for &(h, i, j) in chans.hess_entries() {
        let (ah, xi, xj, xh) = (ch(a, n, h), ch(x, n, 1 + i), ch(x, n, 1 + j), ch(x, n, h));
        for p in 0..n {
            xb0[p] += ah[p] * (d3[p] * xi[p] * xj[p] + d2[p] * xh[p]);
        }
    }
    for i in 0..chans.dim() {
        let ag = ch(a, n, 1 + i);
        let xbg = &mut xb[(1 + i) * n..(2 + i) * n];
        for p in 0..n {
            xbg[p] += ag[p] * d1[p];
        }
        for &(h, hi, hj) in chans.hess_entries() {
            let ah = ch(a, n, h);
            for other in [(hi == i).then_some(hj), (hj == i).then_some(hi)].into_iter().flatten() {
                let xo = ch(x, n, 1 + other);
                for p in 0..n {
                    xbg[p] += ah[p] * d2[p] * xo[p];
                }
            }
        }
    }
    for &(h, ..) in chans.hess_entries() {
        let ah = ch(a, n, h);
        for (p, v) in xb[h * n..(h + 1) * n].iter_mut().enumerate() {
            *v += ah[p] * d1[p];
        }
    }
}

/// Jet product over one row block.
fn mul_fwd(chans: Channels, n: usize, a: &[f64], b: &[f64], y: &mut [f64]) {
    let (a0, b0) = (ch(a, n, 0), ch(b, n, 0));
    for &(h, i, j) in chans.hess_entries() {
        let (ah, bh) = (ch(a, n, h), ch(b, n, h));
        let (ai, aj, bi, bj) = (ch(a, n, 1 + i), ch(a, n, 1 + j), ch(b, n, 1 + i), ch(b, n, 1 + j));
        for (p, yh) in y[h * n..(h + 1) * n].iter_mut().enumerate() {
            *yh = ah[p] * b0[p] + ai[p] * bj[p] + aj[p] * bi[p] + a0[p] * bh[p];
        }
    }
    for i in 0..chans.dim() {
        let (ag, bg) = (ch(a, n, 1 + i), ch(b, n, 1 + i));
        for (p, yg) in y[(1 + i) * n..(2 + i) * n].iter_mut().enumerate() {
            *yg = ag[p] * b0[p] + a0[p] * bg[p];
        }
    }
    for (p, y0) in y[..n].iter_mut().enumerate() {
        *y0 = a0[p] * b0[p];
    }
}

/// Adjoint of the jet product with respect to one factor, given the other;
/// accumulates into `tb`.
fn mul_bwd(chans: Channels, n: usize, other: &[f64], yb: &[f64], tb: &mut [f64]) {
    let o0 = ch(other, n, 0);
    for k in 0..chans.count() {
        let (ybk, ok) = (ch(yb, n, k), ch(other, n, k));
        let t0 = &mut tb[..n];
        for p in 0..n {
            t0[p] += ybk[p] * ok[p];
        }
    }
    for i in 0..chans.dim() {
        let ybg = ch(yb, n, 1 + i);
        let tg = &mut tb[(1 + i) * n..(2 + i) * n];
        for p in 0..n {
            tg[p] += ybg[p] * o0[p];
        }
        for &(h, hi, hj) in chans.hess_entries() {
            let ybh = ch(yb, n, h);
            for o in [(hi == i).then_some(hj), (hj == i).then_some(hi)].into_iter().flatten() {
                let og = ch(other, n, 1 + o);
                for p in 0..n {
                    tg[p] += ybh[p] * og[p];
                }
            }
        }
    }
    for &(h, ..) in chans.hess_entries() {
        let ybh = ch(yb, n, h);
        for (p, v) in tb[h * n..(h + 1) * n].iter_mut().enumerate() {
            *v += ybh[p] * o0[p];
        }
    }
}

#[inline]
fn gather(v: &[f64], base: usize, n: usize, p: usize, c: usize, out: &mut [f64; 6]) {
    for k in 0..c {
        out[k] = v[base + k * n + p];
    }
}

#[inline]
fn scatter_add(v: &mut [f64], base: usize, n: usize, p: usize, c: usize, x: &[f64; 6]) {
    for k in 0..c {
        v[base + k * n + p] += x[k];
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    // Eight accumulators keep the reduction vectorisable and its order fixed.
    let n = x.len().min(y.len());
    let (x, y) = (&x[..n], &y[..n]);
    let mut acc = [0.0; 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for k in 0..8 {
            acc[k] += a[k] * b[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (a, b) in xr.iter().zip(yr) {
        s += a * b;
    }
    s
}

/// `y += Σ w x` over the non-zero terms, four terms per pass over `y`.
fn gather_axpy<'a>(y: &mut [f64], terms: impl IntoIterator<Item = (f64, &'a [f64])>) {
    let empty: &[f64] = &[];
    let mut buf = [(0.0, empty); 4];
    let mut k = 0;
    for (w, x) in terms {
        if w == 0.0 {
            continue;
        }
        buf[k] = (w, x);
        k += 1;
        if k == 4 {
            axpy4(&buf, y);
            k = 0;
        }
    }
    for &(w, x) in &buf[..k] {
        axpy(w, x, y);
    }
}

#[inline]
fn axpy4(t: &[(f64, &[f64]); 4], y: &mut [f64]) {
    let n = y.len();
    let (a, b, c, d) = (&t[0].1[..n], &t[1].1[..n], &t[2].1[..n], &t[3].1[..n]);
    let (wa, wb, wc, wd) = (t[0].0, t[1].0, t[2].0, t[3].0);
    for p in 0..n {
        y[p] += (wa * a[p] + wb * b[p]) + (wc * c[p] + wd * d[p]);
    }
}

/// `out[k] += <y, row(k)>` for `k < out.len()`, four rows per pass over `y`.
fn multi_dot<'a>(y: &[f64], row: impl Fn(usize) -> &'a [f64], out: &mut [f64]) {
    let n = y.len();
    let full = out.len() / 4 * 4;
    for k in (0..full).step_by(4) {
        let (a, b, c, d) = (&row(k)[..n], &row(k + 1)[..n], &row(k + 2)[..n], &row(k + 3)[..n]);
        let mut acc = [[0.0; 2]; 4];
        let pairs = n / 2 * 2;
        for p in (0..pairs).step_by(2) {
            for l in 0..2 {
                let yv = y[p + l];
                acc[0][l] += yv * a[p + l];
                acc[1][l] += yv * b[p + l];
                acc[2][l] += yv * c[p + l];
                acc[3][l] += yv * d[p + l];
            }
        }
        let mut s = acc.map(|v| v[0] + v[1]);
        for p in pairs..n {
            s[0] += y[p] * a[p];
            s[1] += y[p] * b[p];
            s[2] += y[p] * c[p];
            s[3] += y[p] * d[p];
        }
        for l in 0..4 {
            out[k + l] += s[l];
        }
    }
    for k in full..out.len() {
        out[k] += dot(y, row(k));
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    super::primitive::Primitive::Sigmoid.eval(x)
}

fn adj_buf<'a>(adj: &'a mut [Option<Vec<f64>>], nodes: &[Node], x: NodeId) -> &'a mut Vec<f64> {
    adj[x.0].get_or_insert_with(|| vec![0.0; nodes[x.0].value.len()])
}

/// Effective spline weights `scaler_{o,i} * coeff_{o,i,j}`.
fn spline_weights(params: &[f64], coeff: usize, scaler: usize, d_in: usize, nb: usize, d_out: usize) -> Vec<f64> {
    let mut w = vec![0.0; d_out * d_in * nb];
    for o in 0..d_out {
        for i in 0..d_in {
            let s = params[scaler + o * d_in + i];
            for j in 0..nb {
                let idx = (o * d_in + i) * nb + j;
                w[idx] = s * params[coeff + idx];
            }
        }
    }
    w
}

fn compute(
    nodes: &[Node],
    params: &[f64],
    op: &Op,
    rows: usize,
    chans: Channels,
    n: usize,
) -> (Vec<f64>, Vec<f64>) {
    let c = chans.count();
    let stride = c * n;
    let mut y = vec![0.0; rows * stride];
    let mut aux = Vec::new();
    match op {
        Op::Input => unreachable!("inputs are created directly"),
        Op::Linear { x, w, b, n_in, n_out } => {
            let xn = &nodes[x.0];
            for o in 0..*n_out {
                let yr = &mut y[o * stride..(o + 1) * stride];
                gather_axpy(yr, (0..*n_in).map(|i| (params[w + o * n_in + i], xn.row(i))));
                if let Some(b) = b {
                    let bo = params[b + o];
                    for v in &mut yr[..n] {
                        *v += bo;
                    }
                }
            }
        }
        Op::Unary { x, f } => {
            let xv = &nodes[x.0].value;
            if c == 1 {
                aux = vec![0.0; rows * n];
                for ((yi, ai), &xi) in y.iter_mut().zip(aux.iter_mut()).zip(xv) {
                    let d = f.derivs(xi, 1);
                    *yi = d[0];
                    *ai = d[1];
                }
            } else {
                aux = vec![0.0; 3 * rows * n];
                for r in 0..rows {
                    let xr = &xv[r * stride..(r + 1) * stride];
                    let yr = &mut y[r * stride..(r + 1) * stride];
                    let (d1, rest) = aux[3 * r * n..3 * (r + 1) * n].split_at_mut(n);
                    let (d2, d3) = rest.split_at_mut(n);
                    for p in 0..n {
                        let d = f.derivs(xr[p], 3);
                        yr[p] = d[0];
                        d1[p] = d[1];
                        d2[p] = d[2];
                        d3[p] = d[3];
                    }
                    chain_fwd(chans, n, d1, d2, xr, yr);
                }
            }
        }
        Op::Add { a, b } => {
            for ((yi, ai), bi) in y.iter_mut().zip(&nodes[a.0].value).zip(&nodes[b.0].value) {
                *yi = ai + bi;
            }
        }
        Op::Sub { a, b } => {
            for ((yi, ai), bi) in y.iter_mut().zip(&nodes[a.0].value).zip(&nodes[b.0].value) {
                *yi = ai - bi;
            }
        }
        Op::Mul { a, b } => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if c == 1 {
                for ((yi, ai), bi) in y.iter_mut().zip(av).zip(bv) {
                    *yi = ai * bi;
                }
            } else {
                for r in 0..rows {
                    let span = r * stride..(r + 1) * stride;
                    mul_fwd(chans, n, &av[span.clone()], &bv[span.clone()], &mut y[span]);
                }
            }
        }
        Op::Scale { x, c: s } => {
            for (yi, xi) in y.iter_mut().zip(&nodes[x.0].value) {
                *yi = s * xi;
            }
        }
        Op::Shift { x, c: s } => {
            y.copy_from_slice(&nodes[x.0].value);
            for r in 0..rows {
                for v in &mut y[r * stride..r * stride + n] {
                    *v += s;
                }
            }
        }
        Op::RowAffine { x, scale, shift } => {
            let xn = &nodes[x.0];
            for r in 0..rows {
                let yr = &mut y[r * stride..(r + 1) * stride];
                for (yi, xi) in yr.iter_mut().zip(xn.row(r)) {
                    *yi = scale[r] * xi;
                }
                for v in &mut yr[..n] {
                    *v += shift[r];
                }
            }
        }
        Op::Atoms { x, centers, scale_logits, k } => {
            let xn = &nodes[x.0];
            for i in 0..xn.rows {
                let xr = xn.row(i);
                for j in 0..*k {
                    let idx = i * k + j;
                    let cen = params[centers + idx];
                    let inv = 1.0 / softplus(params[scale_logits + idx]);
                    let yr = &mut y[idx * stride..(idx + 1) * stride];
                    for (p, yv) in yr[..n].iter_mut().enumerate() {
                        *yv = (xr[p] - cen) * inv;
                    }
                    for (yv, xv) in yr[n..].iter_mut().zip(&xr[n..]) {
                        *yv = xv * inv;
                    }
                }
            }
        }
        Op::GroupDot { x, coeff, k, inv_scale_logits, factor } => {
            let xn = &nodes[x.0];
            for i in 0..rows {
                let yr = &mut y[i * stride..(i + 1) * stride];
                gather_axpy(
                    yr,
                    (0..*k).map(|j| {
                        let idx = i * k + j;
                        let mut e = factor * params[coeff + idx];
                        if let Some(l) = inv_scale_logits {
                            e /= softplus(params[l + idx]);
                        }
                        (e, xn.row(idx))
                    }),
                );
            }
        }
        Op::Harmonics { x, k, omega } => {
            let xn = &nodes[x.0];
            for i in 0..xn.rows {
                for j in 0..*k {
                    let m = (j + 1) as f64 * omega;
                    let idx = i * k + j;
                    for (yv, xv) in y[idx * stride..(idx + 1) * stride].iter_mut().zip(xn.row(i)) {
                        *yv = m * xv;
                    }
                }
            }
        }
        Op::Concat { parts } => {
            let mut off = 0;
            for p in parts {
                let v = &nodes[p.0].value;
                y[off..off + v.len()].copy_from_slice(v);
                off += v.len();
            }
        }
        Op::SumRows { x } => {
            let xn = &nodes[x.0];
            for r in 0..xn.rows {
                axpy(1.0, xn.row(r), &mut y);
            }
        }
        Op::EdgeSum { x, w, b, d_in, d_out } => {
            let xn = &nodes[x.0];
            for o in 0..*d_out {
                let yr = &mut y[o * stride..(o + 1) * stride];
                gather_axpy(yr, (0..*d_in).map(|j| (params[w + o * d_in + j], xn.row(j * d_out + o))));
                if let Some(b) = b {
                    for v in &mut yr[..n] {
                        *v += params[b + o];
                    }
                }
            }
        }
        Op::Bspline { x, grid } => {
            let xn = &nodes[x.0];
            let nb = grid.num_bases();
            let order = if c == 1 { 0 } else { 2 };
            let mut derivs = vec![[0.0; 4]; nb];
            let (mut xs, mut ys) = ([0.0; 6], [0.0; 6]);
            for i in 0..xn.rows {
                let base_in = i * stride;
                for p in 0..n {
                    gather(&xn.value, base_in, n, p, c, &mut xs);
                    grid.eval_with_derivs(xs[0], order, &mut derivs);
                    for (j, d) in derivs.iter().enumerate() {
                        jet_chain_fwd(c, d, &xs, &mut ys);
                        let base = (i * nb + j) * stride;
                        for k in 0..c {
                            y[base + k * n + p] = ys[k];
                        }
                    }
                }
            }
        }
        Op::SplineMix { x, coeff, scaler, d_in, nb, d_out } => {
            let xn = &nodes[x.0];
            let w = spline_weights(params, *coeff, *scaler, *d_in, *nb, *d_out);
            let cols = d_in * nb;
            for o in 0..*d_out {
                let yr = &mut y[o * stride..(o + 1) * stride];
                gather_axpy(yr, (0..cols).map(|col| (w[o * cols + col], xn.row(col))));
            }
        }
        Op::Row { x, row } => y.copy_from_slice(nodes[x.0].row(*row)),
        Op::Channel { x, chan } => {
            let xn = &nodes[x.0];
            let xc = xn.chans.count();
            for r in 0..rows {
                let start = (r * xc + chan) * n;
                y[r * n..(r + 1) * n].copy_from_slice(&xn.value[start..start + n]);
            }
        }
        Op::MulPoints { x, data } => {
            let xv = &nodes[x.0].value;
            for (blk, yb) in y.chunks_mut(n).enumerate() {
                let xb = &xv[blk * n..(blk + 1) * n];
                for p in 0..n {
                    yb[p] = data[p] * xb[p];
                }
            }
        }
        Op::SubTarget { x, target } => {
            y.copy_from_slice(&nodes[x.0].value);
            for r in 0..rows {
                for p in 0..n {
                    y[r * stride + p] -= target[r * n + p];
                }
            }
        }
        Op::SumSquares { x, scale } => {
            let xn = &nodes[x.0];
            let mut s = 0.0;
            for r in 0..xn.rows {
                let v = &xn.row(r)[..xn.n];
                s += dot(v, v);
            }
            y[0] = scale * s;
        }
        Op::WeightedSum { terms } => {
            y[0] = terms.iter().map(|&(t, w)| w * nodes[t.0].value[0]).sum();
        }
    }
    (y, aux)
}

fn backward(
    nodes: &[Node],
    params: &[f64],
    node: &Node,
    ybar: &[f64],
    adj: &mut [Option<Vec<f64>>],
    pgrad: &mut [f64],
) {
    let c = node.chans.count();
    let n = node.n;
    let stride = c * n;
    match &node.op {
        Op::Input => {}
        Op::Linear { x, w, b, n_in, n_out } => {
            let xn = &nodes[x.0];
            for o in 0..*n_out {
                let yr = &ybar[o * stride..(o + 1) * stride];
                multi_dot(yr, |i| xn.row(i), &mut pgrad[w + o * n_in..w + (o + 1) * n_in]);
                if let Some(b) = b {
                    pgrad[b + o] += yr[..n].iter().sum::<f64>();
                }
            }
            let xb = adj_buf(adj, nodes, *x);
            for i in 0..*n_in {
                let xr = &mut xb[i * stride..(i + 1) * stride];
                gather_axpy(xr, (0..*n_out).map(|o| (params[w + o * n_in + i], &ybar[o * stride..(o + 1) * stride])));
            }
        }
        Op::Unary { x, .. } => {
            let xv = &nodes[x.0].value;
            let xb = adj_buf(adj, nodes, *x);
            if c == 1 {
                for ((xbi, &d1), &yb) in xb.iter_mut().zip(&node.aux).zip(ybar) {
                    *xbi += yb * d1;
                }
            } else {
                for r in 0..node.rows {
                    let span = r * stride..(r + 1) * stride;
                    let (d1, rest) = node.aux[3 * r * n..3 * (r + 1) * n].split_at(n);
                    let (d2, d3) = rest.split_at(n);
                    chain_bwd(node.chans, n, [d1, d2, d3], &xv[span.clone()], &ybar[span.clone()], &mut xb[span]);
                }
            }
        }
        Op::Add { a, b } => {
            axpy(1.0, ybar, adj_buf(adj, nodes, *a));
            axpy(1.0, ybar, adj_buf(adj, nodes, *b));
        }
        Op::Sub { a, b } => {
            axpy(1.0, ybar, adj_buf(adj, nodes, *a));
            axpy(-1.0, ybar, adj_buf(adj, nodes, *b));
        }
        Op::Mul { a, b } => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if c == 1 {
                let ab = adj_buf(adj, nodes, *a);
                for ((g, yb), bi) in ab.iter_mut().zip(ybar).zip(bv) {
                    *g += yb * bi;
                }
                let bb = adj_buf(adj, nodes, *b);
                for ((g, yb), ai) in bb.iter_mut().zip(ybar).zip(av) {
                    *g += yb * ai;
                }
            } else {
                for (this, other_v) in [(*a, bv), (*b, av)] {
                    let tb = adj_buf(adj, nodes, this);
                    for r in 0..node.rows {
                        let span = r * stride..(r + 1) * stride;
                        mul_bwd(node.chans, n, &other_v[span.clone()], &ybar[span.clone()], &mut tb[span]);
                    }
                }
            }
        }
        Op::Scale { x, c: s } => axpy(*s, ybar, adj_buf(adj, nodes, *x)),
        Op::Shift { x, .. } => axpy(1.0, ybar, adj_buf(adj, nodes, *x)),
        Op::RowAffine { x, scale, .. } => {
            let xb = adj_buf(adj, nodes, *x);
            for r in 0..node.rows {
                axpy(scale[r], &ybar[r * stride..(r + 1) * stride], &mut xb[r * stride..(r + 1) * stride]);
            }
        }
        Op::Atoms { x, centers, scale_logits, k } => {
            let d = nodes[x.0].rows;
            for i in 0..d {
                for j in 0..*k {
                    let idx = i * k + j;
                    let logit = params[scale_logits + idx];
                    let s = softplus(logit);
                    let yr = &ybar[idx * stride..(idx + 1) * stride];
                    let rr = &node.value[idx * stride..(idx + 1) * stride];
                    pgrad[centers + idx] -= yr[..n].iter().sum::<f64>() / s;
                    let sbar = -dot(yr, rr) / s;
                    pgrad[scale_logits + idx] += sbar * sigmoid(logit);
                }
            }
            let xb = adj_buf(adj, nodes, *x);
            for i in 0..d {
                let xr = &mut xb[i * stride..(i + 1) * stride];
                for j in 0..*k {
                    let idx = i * k + j;
                    let inv = 1.0 / softplus(params[scale_logits + idx]);
                    axpy(inv, &ybar[idx * stride..(idx + 1) * stride], xr);
                }
            }
        }
        Op::GroupDot { x, coeff, k, inv_scale_logits, factor } => {
            let xn = &nodes[x.0];
            let mut eff = vec![0.0; xn.rows];
            for i in 0..node.rows {
                let yr = &ybar[i * stride..(i + 1) * stride];
                for j in 0..*k {
                    let idx = i * k + j;
                    let ebar = dot(yr, xn.row(idx));
                    let cv = params[coeff + idx];
                    match inv_scale_logits {
                        Some(l) => {
                            let logit = params[l + idx];
                            let s = softplus(logit);
                            pgrad[coeff + idx] += ebar * factor / s;
                            let sbar = -ebar * factor * cv / (s * s);
                            pgrad[l + idx] += sbar * sigmoid(logit);
                            eff[idx] = factor * cv / s;
                        }
                        None => {
                            pgrad[coeff + idx] += ebar * factor;
                            eff[idx] = factor * cv;
                        }
                    }
                }
            }
            let xb = adj_buf(adj, nodes, *x);
            for i in 0..node.rows {
                for j in 0..*k {
                    let idx = i * k + j;
                    axpy(eff[idx], &ybar[i * stride..(i + 1) * stride], &mut xb[idx * stride..(idx + 1) * stride]);
                }
            }
        }
        Op::Harmonics { x, k, omega } => {
            let d = nodes[x.0].rows;
            let xb = adj_buf(adj, nodes, *x);
            for i in 0..d {
                for j in 0..*k {
                    let idx = i * k + j;
                    axpy(
                        (j + 1) as f64 * omega,
                        &ybar[idx * stride..(idx + 1) * stride],
                        &mut xb[i * stride..(i + 1) * stride],
                    );
                }
            }
        }
        Op::Concat { parts } => {
            let mut off = 0;
            for p in parts {
                let len = nodes[p.0].value.len();
                axpy(1.0, &ybar[off..off + len], adj_buf(adj, nodes, *p));
                off += len;
            }
        }
        Op::SumRows { x } => {
            let d = nodes[x.0].rows;
            let xb = adj_buf(adj, nodes, *x);
            for r in 0..d {
                axpy(1.0, ybar, &mut xb[r * stride..(r + 1) * stride]);
            }
        }
        Op::EdgeSum { x, w, b, d_in, d_out } => {
            let xn = &nodes[x.0];
            for o in 0..*d_out {
                let yr = &ybar[o * stride..(o + 1) * stride];
                for j in 0..*d_in {
                    pgrad[w + o * d_in + j] += dot(yr, xn.row(j * d_out + o));
                }
                if let Some(b) = b {
                    pgrad[b + o] += yr[..n].iter().sum::<f64>();
                }
            }
            let xb = adj_buf(adj, nodes, *x);
            for o in 0..*d_out {
                for j in 0..*d_in {
                    let row = j * d_out + o;
                    axpy(
                        params[w + o * d_in + j],
                        &ybar[o * stride..(o + 1) * stride],
                        &mut xb[row * stride..(row + 1) * stride],
                    );
                }
            }
        }
        Op::Bspline { x, grid } => {
            let xn = &nodes[x.0];
            let nb = grid.num_bases();
            let order = if c == 1 { 1 } else { 3 };
            let mut derivs = vec![[0.0; 4]; nb];
            let xb = adj_buf(adj, nodes, *x);
            let (mut xs, mut a, mut out) = ([0.0; 6], [0.0; 6], [0.0; 6]);
            for i in 0..xn.rows {
                let base_in = i * stride;
                for p in 0..n {
                    gather(&xn.value, base_in, n, p, c, &mut xs);
                    grid.eval_with_derivs(xs[0], order, &mut derivs);
                    for (j, d) in derivs.iter().enumerate() {
                        gather(ybar, (i * nb + j) * stride, n, p, c, &mut a);
                        jet_chain_bwd(c, d, &xs, &a, &mut out);
                        scatter_add(xb, base_in, n, p, c, &out);
                    }
                }
            }
        }
        Op::SplineMix { x, coeff, scaler, d_in, nb, d_out } => {
            let xn = &nodes[x.0];
            let w = spline_weights(params, *coeff, *scaler, *d_in, *nb, *d_out);
            let cols = d_in * nb;
            let mut wbar = vec![0.0; cols];
            for o in 0..*d_out {
                let yr = &ybar[o * stride..(o + 1) * stride];
                wbar.fill(0.0);
                multi_dot(yr, |col| xn.row(col), &mut wbar);
                for i in 0..*d_in {
                    let s = params[scaler + o * d_in + i];
                    let mut sbar = 0.0;
                    for j in 0..*nb {
                        let idx = (o * d_in + i) * nb + j;
                        let wb = wbar[i * nb + j];
                        pgrad[coeff + idx] += wb * s;
                        sbar += wb * params[coeff + idx];
                    }
                    pgrad[scaler + o * d_in + i] += sbar;
                }
            }
            let xb = adj_buf(adj, nodes, *x);
            for col in 0..cols {
                let xr = &mut xb[col * stride..(col + 1) * stride];
                gather_axpy(xr, (0..*d_out).map(|o| (w[o * cols + col], &ybar[o * stride..(o + 1) * stride])));
            }
        }
        Op::Row { x, row } => {
            let xb = adj_buf(adj, nodes, *x);
            axpy(1.0, ybar, &mut xb[row * stride..(row + 1) * stride]);
        }
        Op::Channel { x, chan } => {
            let xc = nodes[x.0].chans.count();
            let xb = adj_buf(adj, nodes, *x);
            for r in 0..node.rows {
                let start = (r * xc + chan) * n;
                axpy(1.0, &ybar[r * n..(r + 1) * n], &mut xb[start..start + n]);
            }
        }
        Op::MulPoints { x, data } => {
            let xb = adj_buf(adj, nodes, *x);
            for (blk, yb) in ybar.chunks(n).enumerate() {
                let xr = &mut xb[blk * n..(blk + 1) * n];
                for p in 0..n {
                    xr[p] += data[p] * yb[p];
                }
            }
        }
        Op::SubTarget { x, .. } => axpy(1.0, ybar, adj_buf(adj, nodes, *x)),
        Op::SumSquares { x, scale } => {
            let xn = &nodes[x.0];
            let g = 2.0 * scale * ybar[0];
            let xs = xn.stride();
            let xb = adj_buf(adj, nodes, *x);
            for r in 0..xn.rows {
                let start = r * xs;
                axpy(g, &xn.value[start..start + xn.n], &mut xb[start..start + xn.n]);
            }
        }
        Op::WeightedSum { terms } => {
            for &(t, w) in terms {
                adj_buf(adj, nodes, t)[0] += w * ybar[0];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{fd_check, Jet};

    #[test]
    fn scalar_model_w_times_x() {
        // y = w x, loss (y - 1)², w = 0, x = 1.
        let params = [0.0];
        let mut t = Tape::new(&params);
        let x = t.input(&[1.0], 1, Channels::Plain).unwrap();
        let y = t.linear(x, 0, None, 1);
        let r = t.sub_target(y, vec![1.0]);
        let l = t.sum_squares(r, 1.0);
        let g = t.gradient(l).unwrap();
        assert_eq!(g.values, vec![-2.0]);
    }

    #[test]
    fn absent_parameters_get_zero_gradient() {
        let params = [0.5, 7.0];
        let mut t = Tape::new(&params);
        let x = t.input(&[1.0, 2.0], 1, Channels::Plain).unwrap();
        let y = t.linear(x, 0, None, 1);
        let l = t.sum_squares(y, 1.0);
        let g = t.gradient(l).unwrap();
        assert_eq!(g.values[1], 0.0);
        assert!(g.values[0] != 0.0);
    }

    #[test]
    fn foreign_loss_node_is_a_tape_error() {
        let params = [1.0];
        let t = Tape::new(&params);
        assert!(matches!(t.gradient(NodeId(3)), Err(Error::Tape(_))));
    }

    #[test]
    fn unary_jets_match_scalar_jets() {
        let params: [f64; 0] = [];
        let mut t = Tape::new(&params);
        let x = t.input(&[0.3, -0.4, 0.8, 1.2], 2, Channels::D2).unwrap();
        let prod = {
            let a = t.row(x, 0);
            let b = t.row(x, 1);
            let s = t.unary(a, Primitive::Sin);
            let e = t.unary(b, Primitive::Tanh);
            t.mul(s, e)
        };
        for p in 0..2 {
            let j = crate::autodiff::seed_inputs(&[[0.3, -0.4][p], [0.8, 1.2][p]]).unwrap();
            let expect: Jet = j[0].sin() * j[1].tanh();
            let got = t.jet(prod, 0, p);
            assert!((got.value - expect.value).abs() < 1e-15);
            for a in 0..2 {
                assert!((got.grad[a] - expect.grad[a]).abs() < 1e-15);
                for b in 0..2 {
                    assert!((got.hess[a][b] - expect.hess[a][b]).abs() < 1e-15);
                }
            }
        }
    }

    /// A loss that reads derivative channels must differentiate through them.
    #[test]
    fn gradient_through_hessian_channels() {
        let params = vec![0.7, -0.3, 0.4, 0.2, 1.1, -0.5, 0.3];
        let loss = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
            let mut t = Tape::new(p);
            let x = t.input(&[0.1, 0.5, -0.7, 0.2, 0.4, 0.9], 2, Channels::D2)?;
            let h = t.linear(x, 0, Some(2), 1);
            let a = t.unary(h, Primitive::Tanh);
            let bh = t.unary(h, Primitive::MexicanHat);
            let m = t.mul(a, bh);
            let z = t.linear(m, 3, Some(4), 1);
            let s = t.unary(z, Primitive::Softplus);
            let s = t.scale(s, 1.3);
            let uxx = t.channel(s, Channels::D2.hess(0, 0));
            let uxy = t.channel(s, Channels::D2.hess(0, 1));
            let ut = t.channel(s, Channels::D2.grad(1));
            let r = t.add(uxx, ut);
            let r = t.add(r, uxy);
            let l = t.sum_squares(r, 1.0 / 3.0);
            Ok((t.scalar(l), t.gradient(l)?.values))
        };
        let err = fd_check(loss, &params, 1e-5).unwrap();
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn replay_is_bit_identical() {
        let params = vec![0.2, -0.7, 0.1];
        let mut t = Tape::new(&params);
        let x = t.input(&[0.3, 0.6, 0.9], 1, Channels::D1).unwrap();
        let h = t.linear(x, 0, Some(1), 1);
        let u = t.unary(h, Primitive::Silu);
        let v = t.mul(u, h);
        t.sum_squares(v, 1.0);
        assert!(t.replay_matches());
    }
}
