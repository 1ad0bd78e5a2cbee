//! Dense HOOI at desk scale.
//!
//! Tensors are row-major (last index fastest). The mode-`n` unfolding has one
//! column per mode-`n` fiber, columns ordered lexicographically by the remaining
//! coordinates in ascending mode order.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Label, NodeId, TtmTree};

/// Numerical tolerances shared by the engine and its tests.
pub mod tol {
    /// Eigen-gap below which a truncation is reported as degenerate, relative to `λ_1`.
    pub const DEGENERATE_GAP: f64 = 1e-10;
    /// Factor orthonormality: `max |FᵀF - I|`.
    pub const ORTHONORMAL: f64 = 1e-9;
    /// Projector agreement in Frobenius norm.
    pub const PROJECTOR: f64 = 1e-9;
    /// Relative slack for monotone error sequences.
    pub const MONOTONE_SLACK: f64 = 1e-12;
    /// Elementwise agreement of TTM results computed in different orders.
    pub const COMMUTE: f64 = 1e-10;
}

pub type Matrix = DMatrix<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if dims.is_empty() || data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "dims {dims:?} need {len} elements, got {}",
                data.len()
            )));
        }
        Ok(DenseTensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        DenseTensor { dims, data: vec![0.0; len] }
    }

    /// Entries drawn i.i.d. from the standard normal distribution.
    pub fn random(dims: Vec<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = dims.iter().product();
        let data = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        DenseTensor { dims, data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        index.iter().zip(&self.dims).fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(DenseTensor { dims: self.dims.clone(), data })
    }

    pub fn max_abs_diff(&self, other: &DenseTensor) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    fn split(&self, mode: usize) -> (usize, usize, usize) {
        let left = self.dims[..mode].iter().product();
        let right = self.dims[mode + 1..].iter().product();
        (left, self.dims[mode], right)
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            return Err(Error::BadMode { mode, order: self.order() });
        }
        Ok(())
    }

    /// Writes the header line `{"dims":[...]}` followed by little-endian `f64`s.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = TensorHeader { dims: self.dims.clone() };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: TensorHeader = serde_json::from_str(line.trim_end())?;
        let len: usize = header.dims.iter().product();
        let mut bytes = vec![0u8; len * 8];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::Format(format!("tensor body shorter than dims {:?}: {e}", header.dims)))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        DenseTensor::new(header.dims, data)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    dims: Vec<usize>,
}

/// Mode-`n` unfolding, `L_n x (|t| / L_n)`.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<Matrix> {
    t.check_mode(mode)?;
    if t.order() < 2 {
        return Err(Error::BadDims(t.order()));
    }
    let (left, len, right) = t.split(mode);
    Ok(Matrix::from_fn(len, left * right, |l, j| {
        let (i, r) = (j / right, j % right);
        t.data[(i * len + l) * right + r]
    }))
}

/// Inverse of [`unfold`].
pub fn fold(m: &Matrix, dims: &[usize], mode: usize) -> Result<DenseTensor> {
    let mut t = DenseTensor::zeros(dims.to_vec());
    t.check_mode(mode)?;
    let (left, len, right) = t.split(mode);
    if m.nrows() != len || m.ncols() != left * right {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} matrix cannot fold into {dims:?} along mode {}",
            m.nrows(),
            m.ncols(),
            mode + 1
        )));
    }
    for i in 0..left {
        for l in 0..len {
            for r in 0..right {
                t.data[(i * len + l) * right + r] = m[(l, i * right + r)];
            }
        }
    }
    Ok(t)
}

/// `t ×_mode a` for `a` of shape `K x L_mode`.
pub fn ttm(t: &DenseTensor, a: &Matrix, mode: usize) -> Result<DenseTensor> {
    ttm_counted(t, a, mode).map(|(out, _)| out)
}

/// [`ttm`] plus the multiply-accumulates executed (`K * |t|`).
///
/// Each mode-`n` slab (fixed leading indices) is one GEMM, so the tensor is
/// never unfolded explicitly.
pub fn ttm_counted(t: &DenseTensor, a: &Matrix, mode: usize) -> Result<(DenseTensor, u64)> {
    t.check_mode(mode)?;
    let (left, len, right) = t.split(mode);
    if a.ncols() != len {
        return Err(Error::ShapeMismatch(format!(
            "matrix has {} columns, mode {} has length {len}",
            a.ncols(),
            mode + 1
        )));
    }
    let k = a.nrows();
    let mut dims = t.dims.clone();
    dims[mode] = k;
    let mut out = DenseTensor::zeros(dims);
    let at = a.transpose();
    let mut macs = 0u64;
    for i in 0..left {
        // Row-major `len x right` slab == column-major `right x len`.
        let slab = DMatrixView::from_slice(&t.data[i * len * right..(i + 1) * len * right], right, len);
        let mut dst =
            DMatrixViewMut::from_slice(&mut out.data[i * k * right..(i + 1) * k * right], right, k);
        dst.gemm(1.0, &slab, &at, 0.0);
        macs += (k * len * right) as u64;
    }
    Ok((out, macs))
}

/// `m mᵀ`, filling the upper triangle and mirroring it.
pub fn gram(m: &Matrix) -> Matrix {
    let rows = m.transpose();
    let n = m.nrows();
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rows.column(i).dot(&rows.column(j));
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

#[derive(Debug, Clone)]
pub struct LeadingFactors {
    /// `L x k`, orthonormal columns.
    pub vectors: Matrix,
    /// All eigenvalues of the Gram matrix, descending.
    pub eigenvalues: Vec<f64>,
    /// `λ_k - λ_{k+1} < 1e-10 λ_1`; the subspace is then not unique.
    pub degenerate: bool,
}

/// Leading `k` left singular vectors of `m`, computed as the top eigenvectors
/// of `m mᵀ`. Each vector's largest-magnitude entry is made positive.
pub fn leading_left_factors(m: &Matrix, k: usize) -> Result<LeadingFactors> {
    let l = m.nrows();
    if k == 0 || k > l {
        return Err(Error::ShapeMismatch(format!("cannot take {k} leading vectors of {l} rows")));
    }
    let eig = SymmetricEigen::new(gram(m));
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Matrix::zeros(l, k);
    for (c, &i) in order.iter().take(k).enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(c, &v);
    }
    let degenerate = k < l && eigenvalues[k - 1] - eigenvalues[k] < tol::DEGENERATE_GAP * eigenvalues[0];
    if degenerate {
        log::warn!("degenerate spectrum at truncation k = {k}: λ_k = {}, λ_k+1 = {}", eigenvalues[k - 1], eigenvalues[k]);
    }
    Ok(LeadingFactors { vectors, eigenvalues, degenerate })
}

/// `F Fᵀ`, the orthogonal projector onto a factor's column space.
pub fn projector(f: &Matrix) -> Matrix {
    f * f.transpose()
}

/// `max |FᵀF - I|`.
pub fn orthonormality_defect(f: &Matrix) -> f64 {
    let g = f.transpose() * f;
    let id = Matrix::identity(g.nrows(), g.ncols());
    (g - id).amax()
}

/// `rows x cols` matrix with orthonormal columns, from a seeded Gaussian.
pub fn random_orthonormal(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng));
    g.qr().q()
}

/// `{G; F_1, ..., F_N}`.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub core: DenseTensor,
    /// `F_n` is `L_n x K_n`.
    pub factors: Vec<Matrix>,
}

impl Decomposition {
    /// Orthonormalised Gaussian factors with the core `T ×_1 F_1ᵀ ... ×_N F_Nᵀ`.
    pub fn random_init(t: &DenseTensor, core_dims: &[usize], seed: u64) -> Result<Self> {
        if core_dims.len() != t.order() {
            return Err(Error::ShapeMismatch(format!("core {core_dims:?} for tensor {:?}", t.dims())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut factors = Vec::with_capacity(t.order());
        for (&l, &k) in t.dims().iter().zip(core_dims) {
            if k == 0 || k > l {
                return Err(Error::ShapeMismatch(format!("core length {k} for mode length {l}")));
            }
            let g = Matrix::from_fn(l, k, |_, _| StandardNormal.sample(&mut rng));
            factors.push(g.qr().q());
        }
        let core = project_core(t, &factors)?;
        Ok(Decomposition { core, factors })
    }

    pub fn core_dims(&self) -> Vec<usize> {
        self.core.dims().to_vec()
    }

    pub fn reconstruct(&self) -> Result<DenseTensor> {
        self.factors
            .iter()
            .enumerate()
            .try_fold(self.core.clone(), |acc, (m, f)| ttm(&acc, f, m))
    }

    fn check_against(&self, t: &DenseTensor) -> Result<()> {
        let ok = self.factors.len() == t.order()
            && self.core.order() == t.order()
            && self.factors.iter().enumerate().all(|(m, f)| {
                f.nrows() == t.dims()[m] && f.ncols() == self.core.dims()[m]
            });
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("decomposition does not match tensor".into()))
        }
    }
}

/// `T ×_1 F_1ᵀ ... ×_N F_Nᵀ`.
pub fn project_core(t: &DenseTensor, factors: &[Matrix]) -> Result<DenseTensor> {
    factors
        .iter()
        .enumerate()
        .try_fold(t.clone(), |acc, (m, f)| ttm(&acc, &f.transpose(), m))
}

/// `‖T - G ×_1 F_1 ... ×_N F_N‖_F / ‖T‖_F`.
pub fn reconstruction_error(t: &DenseTensor, d: &Decomposition) -> Result<f64> {
    d.check_against(t)?;
    let norm = t.norm();
    if norm == 0.0 {
        return Err(Error::ZeroTensor);
    }
    Ok(t.sub(&d.reconstruct()?)?.norm() / norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SweepMode {
    /// Every TTM uses the factors from the start of the sweep.
    #[default]
    Jacobi,
    /// Chains run in mode order, each using the latest factors.
    GaussSeidel,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ExecStats {
    /// Multiply-accumulates executed by TTM nodes.
    pub macs: u64,
    /// Most tensors alive at once, the input tensor included.
    pub peak_live: usize,
}

/// Depth-first execution of `tree`: each TTM node multiplies its parent's
/// output by `F_nᵀ`; each leaf receives its input tensor through `on_leaf`.
pub fn execute_tree<F>(t: &DenseTensor, factors: &[Matrix], tree: &TtmTree, mut on_leaf: F) -> Result<ExecStats>
where
    F: FnMut(usize, &DenseTensor) -> Result<()>,
{
    tree.validate(t.order())?;
    let transposed: Vec<Matrix> = factors.iter().map(|f| f.transpose()).collect();
    let mut stats = ExecStats { macs: 0, peak_live: 1 };
    fn visit<F: FnMut(usize, &DenseTensor) -> Result<()>>(
        tree: &TtmTree,
        u: NodeId,
        input: &DenseTensor,
        transposed: &[Matrix],
        live: usize,
        stats: &mut ExecStats,
        on_leaf: &mut F,
    ) -> Result<()> {
        for &c in tree.children(u) {
            match tree.label(c) {
                Label::Leaf(n) => on_leaf(n, input)?,
                Label::Mode(m) => {
                    let (out, macs) = ttm_counted(input, &transposed[m], m)?;
                    stats.macs += macs;
                    stats.peak_live = stats.peak_live.max(live + 1);
                    visit(tree, c, &out, transposed, live + 1, stats, on_leaf)?;
                }
                Label::Root => unreachable!("validated"),
            }
        }
        Ok(())
    }
    visit(tree, TtmTree::ROOT, t, &transposed, 1, &mut stats, &mut on_leaf)?;
    Ok(stats)
}

/// One HOOI invocation driven by `tree`.
pub fn hooi_sweep(t: &DenseTensor, d: &Decomposition, tree: &TtmTree, mode: SweepMode) -> Result<Decomposition> {
    hooi_sweep_with_stats(t, d, tree, mode).map(|(d, _)| d)
}

pub fn hooi_sweep_with_stats(
    t: &DenseTensor,
    d: &Decomposition,
    tree: &TtmTree,
    mode: SweepMode,
) -> Result<(Decomposition, ExecStats)> {
    d.check_against(t)?;
    let core_dims = d.core_dims();
    let (factors, stats) = match mode {
        SweepMode::Jacobi => {
            let mut new: Vec<Option<Matrix>> = vec![None; t.order()];
            let stats = execute_tree(t, &d.factors, tree, |n, z| {
                new[n] = Some(leading_left_factors(&unfold(z, n)?, core_dims[n])?.vectors);
                Ok(())
            })?;
            let factors = new.into_iter().map(|f| f.expect("every leaf visited")).collect();
            (factors, stats)
        }
        SweepMode::GaussSeidel => gauss_seidel(t, d, tree)?,
    };
    let core = project_core(t, &factors)?;
    Ok((Decomposition { core, factors }, stats))
}

fn gauss_seidel(t: &DenseTensor, d: &Decomposition, tree: &TtmTree) -> Result<(Vec<Matrix>, ExecStats)> {
    tree.validate(t.order())?;
    if !tree.is_chain_tree() {
        return Err(Error::GaussSeidelNeedsChain);
    }
    // chain[n]: the modes multiplied on the way to F_n, top-down.
    let mut chains: Vec<Vec<usize>> = vec![Vec::new(); t.order()];
    for &top in tree.children(TtmTree::ROOT) {
        let mut modes = Vec::new();
        let mut u = top;
        loop {
            match tree.label(u) {
                Label::Mode(m) => modes.push(m),
                Label::Leaf(n) => {
                    chains[n] = modes;
                    break;
                }
                Label::Root => unreachable!(),
            }
            u = tree.children(u)[0];
        }
    }
    let mut factors = d.factors.clone();
    let mut stats = ExecStats { macs: 0, peak_live: 1 };
    for (n, chain) in chains.iter().enumerate() {
        let mut z = t.clone();
        for (depth, &m) in chain.iter().enumerate() {
            let (next, macs) = ttm_counted(&z, &factors[m].transpose(), m)?;
            stats.macs += macs;
            stats.peak_live = stats.peak_live.max(depth + 2);
            z = next;
        }
        factors[n] = leading_left_factors(&unfold(&z, n)?, d.core.dims()[n])?.vectors;
    }
    Ok((factors, stats))
}
