//! Reverse-mode differentiation on an explicit tape.
//!
//! Every adjoint rule is itself expressed through tape operations, so the
//! output of [`Tape::grad`] is an ordinary tape node and can be
//! differentiated again. That double-backward path is what the
//! Fisher-information-trace penalty needs: the penalty is a function of
//! ∇_x log q, and training differentiates it with respect to the estimator
//! parameters.
//!
//! Values are dense `f64` matrices; scalars are 1×1, row vectors 1×d. The
//! tape is an arena that is built per evaluation and dropped afterwards.

use super::matrix::{solve_lower, solve_upper, Mat};
use ndarray::Axis;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddConst(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Sin(Var),
    Cos(Var),
    Square(Var),
    Recip(Var),
    Sqrt(Var),
    SumAll(Var),
    SumAxis0(Var),
    SumAxis1(Var),
    BroadcastAll(Var, usize, usize),
    BroadcastRows(Var, usize),
    BroadcastCols(Var, usize),
    AddRow(Var, Var),
    AddScalar(Var, Var),
    MulScalar(Var, Var),
    SliceCols(Var, usize, usize),
    PadCols(Var, usize, usize),
    SolveLower(Var, Var),
    SolveUpper(Var, Var),
    TrilStrict(Var),
    DiagExtract(Var),
    DiagEmbed(Var),
}

struct Node {
    value: Mat,
    op: Op,
}

/// Arena of operations with eagerly computed values.
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

    fn push(&mut self, value: Mat, op: Op) -> Var {
        debug_assert!(value.iter().all(|v| !v.is_nan()), "NaN entered the tape");
        let id = u32::try_from(self.nodes.len()).expect("tape overflow");
        self.nodes.push(Node { value, op });
        Var(id)
    }

    /// Insert a value as a differentiable leaf (parameters, inputs) or plain
    /// constant — the tape does not distinguish, callers just never request
    /// gradients for constants.
    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Mat::from_elem((1, 1), value))
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.leaf(Mat::zeros((rows, cols)))
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.idx()].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1), "expected a scalar node");
        m[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    fn binary_same_shape(&self, a: Var, b: Var, what: &str) {
        debug_assert_eq!(self.shape(a), self.shape(b), "{what}: shape mismatch");
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "add");
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "sub");
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "mul");
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| -v);
        self.push(value, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|v| c * v);
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|v| v + c);
        self.push(value, Op::AddConst(a, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.shape(a).1, self.shape(b).0, "matmul: inner dims");
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(crate::numerics::autodiff::sigmoid_stable);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(softplus_stable);
        self.push(value, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        self.push(value, Op::Ln(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::sin);
        self.push(value, Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::cos);
        self.push(value, Op::Cos(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| v * v);
        self.push(value, Op::Square(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| 1.0 / v);
        self.push(value, Op::Recip(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::sqrt);
        self.push(value, Op::Sqrt(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    /// Column sums: (r×c) → (1×c).
    pub fn sum_axis0(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .sum_axis(Axis(0))
            .insert_axis(Axis(0))
            .to_owned();
        self.push(value, Op::SumAxis0(a))
    }

    /// Row sums: (r×c) → (r×1).
    pub fn sum_axis1(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .sum_axis(Axis(1))
            .insert_axis(Axis(1))
            .to_owned();
        self.push(value, Op::SumAxis1(a))
    }

    pub fn broadcast_all(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        debug_assert_eq!(self.shape(a), (1, 1));
        let value = Mat::from_elem((rows, cols), self.value(a)[[0, 0]]);
        self.push(value, Op::BroadcastAll(a, rows, cols))
    }

    /// Tile a row vector (1×c) into (rows×c).
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        debug_assert_eq!(self.shape(a).0, 1);
        let row = self.value(a).row(0).to_owned();
        let cols = row.len();
        let value = Mat::from_shape_fn((rows, cols), |(_, j)| row[j]);
        self.push(value, Op::BroadcastRows(a, rows))
    }

    /// Tile a column vector (r×1) into (r×cols).
    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Var {
        debug_assert_eq!(self.shape(a).1, 1);
        let col = self.value(a).column(0).to_owned();
        let rows = col.len();
        let value = Mat::from_shape_fn((rows, cols), |(i, _)| col[i]);
        self.push(value, Op::BroadcastCols(a, cols))
    }

    /// Matrix plus a row vector broadcast over rows.
    pub fn add_row(&mut self, m: Var, v: Var) -> Var {
        debug_assert_eq!(self.shape(m).1, self.shape(v).1, "add_row: cols");
        debug_assert_eq!(self.shape(v).0, 1, "add_row: v must be 1×c");
        let value = self.value(m) + &self.value(v).row(0);
        self.push(value, Op::AddRow(m, v))
    }

    /// Matrix plus a 1×1 scalar node broadcast everywhere.
    pub fn add_scalar(&mut self, m: Var, s: Var) -> Var {
        debug_assert_eq!(self.shape(s), (1, 1));
        let value = self.value(m).mapv(|v| v + self.nodes[s.idx()].value[[0, 0]]);
        self.push(value, Op::AddScalar(m, s))
    }

    /// Matrix times a 1×1 scalar node.
    pub fn mul_scalar(&mut self, m: Var, s: Var) -> Var {
        debug_assert_eq!(self.shape(s), (1, 1));
        let c = self.value(s)[[0, 0]];
        let value = self.value(m).mapv(|v| v * c);
        self.push(value, Op::MulScalar(m, s))
    }

    /// Columns `c0..c1`.
    pub fn slice_cols(&mut self, a: Var, c0: usize, c1: usize) -> Var {
        let value = self
            .value(a)
            .slice(ndarray::s![.., c0..c1])
            .to_owned();
        self.push(value, Op::SliceCols(a, c0, c1))
    }

    /// Embed into a wider zero matrix at column offset `c0`.
    pub fn pad_cols(&mut self, a: Var, c0: usize, total: usize) -> Var {
        let (r, c) = self.shape(a);
        debug_assert!(c0 + c <= total);
        let mut value = Mat::zeros((r, total));
        value.slice_mut(ndarray::s![.., c0..c0 + c]).assign(self.value(a));
        self.push(value, Op::PadCols(a, c0, total))
    }

    /// Solve L z = b with L lower-triangular (entries above the diagonal are
    /// ignored by the solve itself but must be zero for correct adjoints).
    pub fn solve_lower(&mut self, l: Var, b: Var) -> Var {
        let value = solve_lower(&self.value(l).view(), &self.value(b).view());
        self.push(value, Op::SolveLower(l, b))
    }

    /// Solve U z = b with U upper-triangular.
    pub fn solve_upper(&mut self, u: Var, b: Var) -> Var {
        let value = solve_upper(&self.value(u).view(), &self.value(b).view());
        self.push(value, Op::SolveUpper(u, b))
    }

    /// Keep strictly-lower entries, zero elsewhere.
    pub fn tril_strict(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Mat::from_shape_fn(m.dim(), |(i, j)| if i > j { m[[i, j]] } else { 0.0 });
        self.push(value, Op::TrilStrict(a))
    }

    /// Diagonal of a square matrix as 1×d.
    pub fn diag_extract(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let d = m.nrows();
        let value = Mat::from_shape_fn((1, d), |(_, j)| m[[j, j]]);
        self.push(value, Op::DiagExtract(a))
    }

    /// Diagonal matrix from a 1×d row.
    pub fn diag_embed(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let d = v.ncols();
        let value = Mat::from_shape_fn((d, d), |(i, j)| if i == j { v[[0, j]] } else { 0.0 });
        self.push(value, Op::DiagEmbed(a))
    }

    // --- composites ---

    pub fn mean_all(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / (r * c) as f64)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let rb = self.recip(b);
        self.mul(a, rb)
    }

    /// Sum of squared entries as a scalar node.
    pub fn sum_sq(&mut self, a: Var) -> Var {
        let sq = self.square(a);
        self.sum_all(sq)
    }

    /// Reverse sweep from scalar `y`; returns one gradient node per entry of
    /// `wrt` (zeros where `y` does not depend on the variable).
    ///
    /// The returned nodes live on the same tape, so they can enter further
    /// computations and be differentiated again.
    pub fn grad(&mut self, y: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(self.shape(y), (1, 1), "grad target must be scalar");
        let n = y.idx() + 1;
        let mut adj: Vec<Option<Var>> = vec![None; n];
        let seed = self.leaf(Mat::from_elem((1, 1), 1.0));
        adj[y.idx()] = Some(seed);

        for i in (0..n).rev() {
            let Some(g) = adj[i] else { continue };
            let op = self.nodes[i].op;
            let out = Var(i as u32);
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(&mut adj, a, g);
                    self.accumulate(&mut adj, b, g);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut adj, a, g);
                    let gneg = self.neg(g);
                    self.accumulate(&mut adj, b, gneg);
                }
                Op::Mul(a, b) => {
                    let ga = self.mul(g, b);
                    self.accumulate(&mut adj, a, ga);
                    let gb = self.mul(g, a);
                    self.accumulate(&mut adj, b, gb);
                }
                Op::Neg(a) => {
                    let ga = self.neg(g);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::Scale(a, c) => {
                    let ga = self.scale(g, c);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::AddConst(a, c) => {
                    debug_assert!(c.is_finite());
                    self.accumulate(&mut adj, a, g);
                }
                Op::MatMul(a, b) => {
                    let bt = self.transpose(b);
                    let ga = self.matmul(g, bt);
                    self.accumulate(&mut adj, a, ga);
                    let at = self.transpose(a);
                    let gb = self.matmul(at, g);
                    self.accumulate(&mut adj, b, gb);
                }
                Op::Transpose(a) => {
                    let ga = self.transpose(g);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::Tanh(a) => {
                    // d tanh = 1 - tanh², in terms of the output node.
                    let sq = self.square(out);
                    let nsq = self.neg(sq);
                    let one_minus = self.add_const(nsq, 1.0);
                    let ga = self.mul(g, one_minus);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::Sigmoid(a) => {
                    let nout = self.neg(out);
                    let one_minus = self.add_const(nout, 1.0);
                    let d = self.mul(out, one_minus);
                    let ga = self.mul(g, d);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::Softplus(a) => {
                    let s = self.sigmoid(a);
                    let ga = self.mul(g, s);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::Exp(a) => {
                    let ga = self.mul(g, out);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::Ln(a) => {
                    let r = self.recip(a);
                    let ga = self.mul(g, r);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::Sin(a) => {
                    let c = self.cos(a);
                    let ga = self.mul(g, c);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::Cos(a) => {
                    let s = self.sin(a);
                    let gs = self.mul(g, s);
                    let ga = self.neg(gs);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::Square(a) => {
                    let ga2 = self.mul(g, a);
                    let ga = self.scale(ga2, 2.0);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::Recip(a) => {
                    let sq = self.square(out);
                    let gs = self.mul(g, sq);
                    let ga = self.neg(gs);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::Sqrt(a) => {
                    let r = self.recip(out);
                    let gr = self.mul(g, r);
                    let ga = self.scale(gr, 0.5);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::SumAll(a) => {
                    let (r, c) = self.shape(a);
                    let ga = self.broadcast_all(g, r, c);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::SumAxis0(a) => {
                    let rows = self.shape(a).0;
                    let ga = self.broadcast_rows(g, rows);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::SumAxis1(a) => {
                    let cols = self.shape(a).1;
                    let ga = self.broadcast_cols(g, cols);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::BroadcastAll(a, rows, cols) => {
                    debug_assert_eq!(self.shape(g), (rows, cols));
                    let ga = self.sum_all(g);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::BroadcastRows(a, rows) => {
                    debug_assert_eq!(self.shape(g).0, rows);
                    let ga = self.sum_axis0(g);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::BroadcastCols(a, cols) => {
                    debug_assert_eq!(self.shape(g).1, cols);
                    let ga = self.sum_axis1(g);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::AddRow(m, v) => {
                    self.accumulate(&mut adj, m, g);
                    let gv = self.sum_axis0(g);
                    self.accumulate(&mut adj, v, gv);
                }
                Op::AddScalar(m, s) => {
                    self.accumulate(&mut adj, m, g);
                    let gs = self.sum_all(g);
                    self.accumulate(&mut adj, s, gs);
                }
                Op::MulScalar(m, s) => {
                    let gm = self.mul_scalar(g, s);
                    self.accumulate(&mut adj, m, gm);
                    let gmm = self.mul(g, m);
                    let gs = self.sum_all(gmm);
                    self.accumulate(&mut adj, s, gs);
                }
                Op::SliceCols(a, c0, c1) => {
                    debug_assert_eq!(self.shape(g).1, c1 - c0);
                    let total = self.shape(a).1;
                    let ga = self.pad_cols(g, c0, total);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::PadCols(a, c0, total) => {
                    debug_assert_eq!(self.shape(g).1, total);
                    let c = self.shape(a).1;
                    let ga = self.slice_cols(g, c0, c0 + c);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::SolveLower(l, b) => {
                    // z = L⁻¹ b:  b̄ = L⁻ᵀ ḡ,  L̄ = -b̄ zᵀ.
                    let lt = self.transpose(l);
                    let gb = self.solve_upper(lt, g);
                    self.accumulate(&mut adj, b, gb);
                    let zt = self.transpose(out);
                    let prod = self.matmul(gb, zt);
                    let gl = self.neg(prod);
                    self.accumulate(&mut adj, l, gl);
                }
                Op::SolveUpper(u, b) => {
                    let ut = self.transpose(u);
                    let gb = self.solve_lower(ut, g);
                    self.accumulate(&mut adj, b, gb);
                    let zt = self.transpose(out);
                    let prod = self.matmul(gb, zt);
                    let gu = self.neg(prod);
                    self.accumulate(&mut adj, u, gu);
                }
                Op::TrilStrict(a) => {
                    let ga = self.tril_strict(g);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::DiagExtract(a) => {
                    let ga = self.diag_embed(g);
                    self.accumulate(&mut adj, a, ga);
                }
                Op::DiagEmbed(a) => {
                    let ga = self.diag_extract(g);
                    self.accumulate(&mut adj, a, ga);
                }
            }
        }

        wrt.iter()
            .map(|w| match adj[w.idx()] {
                Some(g) => g,
                None => {
                    let (r, c) = self.shape(*w);
                    self.zeros(r, c)
                }
            })
            .collect()
    }

    fn accumulate(&mut self, adj: &mut [Option<Var>], target: Var, contrib: Var) {
        adj[target.idx()] = Some(match adj[target.idx()] {
            Some(cur) => self.add(cur, contrib),
            None => contrib,
        });
    }
}

/// Numerically stable logistic function.
pub fn sigmoid_stable(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softplus ln(1 + eˣ).
pub fn softplus_stable(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff::numeric_grad;
    use crate::numerics::rng::RandomStream;

    /// Check the tape gradient of `f` against central differences for every
    /// entry of every leaf.
    fn gradcheck<F>(leaf_values: Vec<Mat>, f: F, tol: f64)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = leaf_values.iter().map(|m| tape.leaf(m.clone())).collect();
        let y = f(&mut tape, &leaves);
        let grads = tape.grad(y, &leaves);
        let analytic: Vec<Mat> = grads.iter().map(|g| tape.value(*g).clone()).collect();

        let numeric = numeric_grad(&leaf_values, 1e-6, |vals| {
            let mut t = Tape::new();
            let ls: Vec<Var> = vals.iter().map(|m| t.leaf(m.clone())).collect();
            let y = f(&mut t, &ls);
            t.scalar_value(y)
        });

        for (k, (a, n)) in analytic.iter().zip(numeric.iter()).enumerate() {
            for (idx, (av, nv)) in a.iter().zip(n.iter()).enumerate() {
                let denom = nv.abs().max(av.abs()).max(1e-6);
                assert!(
                    (av - nv).abs() / denom < tol,
                    "leaf {k} entry {idx}: analytic {av} vs numeric {nv}"
                );
            }
        }
    }

    #[test]
    fn elementwise_chain_grads() {
        let mut s = RandomStream::new(1);
        let a = s.normal_matrix(3, 4);
        let b = s.normal_matrix(3, 4);
        gradcheck(vec![a, b], |t, l| {
            let m = t.mul(l[0], l[1]);
            let h = t.tanh(m);
            let sp = t.softplus(h);
            let e = t.exp(sp);
            let sq = t.square(e);
            t.sum_all(sq)
        }, 1e-6);
    }

    #[test]
    fn matmul_and_reduction_grads() {
        let mut s = RandomStream::new(2);
        let a = s.normal_matrix(4, 3);
        let b = s.normal_matrix(3, 5);
        let v = s.normal_matrix(1, 5);
        gradcheck(vec![a, b, v], |t, l| {
            let p = t.matmul(l[0], l[1]);
            let q = t.add_row(p, l[2]);
            let sg = t.sigmoid(q);
            let r = t.sum_axis1(sg);
            let r2 = t.square(r);
            t.sum_all(r2)
        }, 1e-6);
    }

    #[test]
    fn slice_pad_diag_grads() {
        let mut s = RandomStream::new(3);
        let a = s.normal_matrix(4, 6);
        let d = s.normal_matrix(1, 4);
        gradcheck(vec![a, d], |t, l| {
            let left = t.slice_cols(l[0], 0, 3);
            let right = t.slice_cols(l[0], 3, 6);
            let m = t.mul(left, right);
            let dm = t.diag_embed(l[1]);
            let dd = t.diag_extract(dm);
            let se = t.sum_all(dd);
            let sm = t.sum_all(m);
            t.add(se, sm)
        }, 1e-6);
    }

    #[test]
    fn ln_sin_cos_recip_sqrt_grads() {
        let mut s = RandomStream::new(4);
        let a = s.normal_matrix(3, 3).mapv(|v| v.abs() + 0.5);
        gradcheck(vec![a], |t, l| {
            let ln = t.ln(l[0]);
            let sn = t.sin(ln);
            let cs = t.cos(l[0]);
            let m = t.mul(sn, cs);
            let r = t.recip(l[0]);
            let sq = t.sqrt(l[0]);
            let mr = t.mul(r, sq);
            let tot = t.add(m, mr);
            t.sum_all(tot)
        }, 1e-6);
    }

    #[test]
    fn triangular_solve_grads() {
        let mut s = RandomStream::new(5);
        let raw = s.normal_matrix(3, 3);
        let b = s.normal_matrix(3, 2);
        gradcheck(vec![raw, b], |t, l| {
            // Build a well-conditioned lower factor from the raw leaf.
            let strict = t.tril_strict(l[0]);
            let d = t.diag_extract(l[0]);
            let dpos = t.softplus(d);
            let dshift = t.add_const(dpos, 0.5);
            let diag = t.diag_embed(dshift);
            let lmat = t.add(strict, diag);
            let z = t.solve_lower(lmat, l[1]);
            let sq = t.square(z);
            t.sum_all(sq)
        }, 1e-5);
    }

    #[test]
    fn broadcast_grads() {
        let mut s = RandomStream::new(6);
        let sc = s.normal_matrix(1, 1);
        let row = s.normal_matrix(1, 4);
        let col = s.normal_matrix(3, 1);
        gradcheck(vec![sc, row, col], |t, l| {
            let a = t.broadcast_all(l[0], 3, 4);
            let b = t.broadcast_rows(l[1], 3);
            let c = t.broadcast_cols(l[2], 4);
            let ab = t.mul(a, b);
            let abc = t.mul(ab, c);
            let sc2 = t.sum_all(abc);
            let shifted = t.add_scalar(b, l[0]);
            let scaled = t.mul_scalar(shifted, sc2);
            t.sum_all(scaled)
        }, 1e-6);
    }

    #[test]
    fn second_order_matches_finite_difference_of_gradient() {
        // y = sum(tanh(a W)²); g = ∇_W y built on-tape; then differentiate
        // h = sum(g²) with respect to W and compare against finite
        // differences of h.
        let mut s = RandomStream::new(7);
        let a_val = s.normal_matrix(2, 3);
        let w_val = s.normal_matrix(3, 2);

        let h_of = |w: &Mat| -> f64 {
            let mut t = Tape::new();
            let a = t.leaf(a_val.clone());
            let w = t.leaf(w.clone());
            let p = t.matmul(a, w);
            let th = t.tanh(p);
            let sq = t.square(th);
            let y = t.sum_all(sq);
            let g = t.grad(y, &[w])[0];
            let gsq = t.square(g);
            let h = t.sum_all(gsq);
            t.scalar_value(h)
        };

        let mut t = Tape::new();
        let a = t.leaf(a_val.clone());
        let w = t.leaf(w_val.clone());
        let p = t.matmul(a, w);
        let th = t.tanh(p);
        let sq = t.square(th);
        let y = t.sum_all(sq);
        let g = t.grad(y, &[w])[0];
        let gsq = t.square(g);
        let h = t.sum_all(gsq);
        let dh = t.grad(h, &[w])[0];
        let analytic = t.value(dh).clone();

        let numeric = numeric_grad(std::slice::from_ref(&w_val), 1e-6, |vals| h_of(&vals[0]));
        for (av, nv) in analytic.iter().zip(numeric[0].iter()) {
            let denom = nv.abs().max(av.abs()).max(1e-8);
            assert!(
                (av - nv).abs() / denom < 1e-5,
                "second order: analytic {av} vs numeric {nv}"
            );
        }
    }

    #[test]
    fn grad_of_unrelated_leaf_is_zero() {
        let mut t = Tape::new();
        let a = t.scalar(2.0);
        let b = t.scalar(3.0);
        let y = t.square(a);
        let g = t.grad(y, &[a, b]);
        assert_eq!(t.scalar_value(g[0]), 4.0);
        assert_eq!(t.scalar_value(g[1]), 0.0);
    }
}
