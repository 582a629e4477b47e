//! Gaussian states over labeled canonical modes.
//!
//! A state of `n` modes is a mean vector ordered `(X1, P1, ..., Xn, Pn)` and
//! a `2n x 2n` covariance matrix. Everything inside the engine uses the
//! canonical convention `[X, P] = i`, so the vacuum (and the coherent spin
//! state of an atomic ensemble) has variance 1/2 in every quadrature.
//!
//! States are immutable values. Every operation returns a new state:
//!
//! * [`GaussianState::apply_symplectic`]: `v -> S v + d`, `cov -> S cov S^T`
//! * [`GaussianState::homodyne_condition`]: Schur-complement conditioning on
//!   one measured quadrature; the measured mode is removed.
//! * [`GaussianState::displace`]: shifts one quadrature mean (feedback).
//! * [`GaussianState::attenuate`]: beam-splitter admixture of vacuum.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance of either quadrature of the vacuum in canonical units.
pub const VACUUM_VARIANCE: f64 = 0.5;

/// Relative asymmetry tolerated before a covariance matrix is rejected.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Slack allowed below the symplectic-eigenvalue floor and the Heisenberg
/// bound.
pub const PHYSICALITY_TOLERANCE: f64 = 1e-9;

/// Measured quadratures with a variance below this are rejected.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

const SYMPLECTIC_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Atomic,
    Light,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeLabel {
    pub kind: ModeKind,
    pub index: u8,
    pub tag: String,
}

impl ModeLabel {
    pub fn new(kind: ModeKind, index: u8, tag: impl Into<String>) -> Self {
        ModeLabel {
            kind,
            index,
            tag: tag.into(),
        }
    }

    /// Atomic mode tagged `A<index>`.
    pub fn atomic(index: u8) -> Self {
        ModeLabel::new(ModeKind::Atomic, index, format!("A{index}"))
    }

    /// Light mode tagged `L<index>`.
    pub fn light(index: u8) -> Self {
        ModeLabel::new(ModeKind::Light, index, format!("L{index}"))
    }

    pub fn x(&self) -> Quadrature {
        Quadrature::new(self.clone(), Axis::X)
    }

    pub fn p(&self) -> Quadrature {
        Quadrature::new(self.clone(), Axis::P)
    }

    fn same_mode(&self, other: &ModeLabel) -> bool {
        self.kind == other.kind && self.index == other.index
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    P,
}

impl Axis {
    fn offset(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::P => 1,
        }
    }
}

/// One quadrature (`X` or `P`) of a named mode.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Quadrature {
    pub mode: ModeLabel,
    pub axis: Axis,
}

impl Quadrature {
    pub fn new(mode: ModeLabel, axis: Axis) -> Self {
        Quadrature { mode, axis }
    }
}

impl fmt::Display for Quadrature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let axis = match self.axis {
            Axis::X => "X",
            Axis::P => "P",
        };
        write!(f, "{axis}_{}", self.mode)
    }
}

/// Canonical symplectic form `⊕ [[0, 1], [-1, 0]]` on `n` modes.
pub fn symplectic_form(n_modes: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * n_modes, 2 * n_modes);
    for k in 0..n_modes {
        omega[(2 * k, 2 * k + 1)] = 1.0;
        omega[(2 * k + 1, 2 * k)] = -1.0;
    }
    omega
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_unique_modes(modes: &[ModeLabel]) -> Result<()> {
    for (i, a) in modes.iter().enumerate() {
        for b in &modes[i + 1..] {
            if a.same_mode(b) {
                return Err(Error::invalid(format!(
                    "mode ({:?}, {}) appears twice",
                    a.kind, a.index
                )));
            }
            if a.tag == b.tag {
                return Err(Error::invalid(format!("mode tag {} appears twice", a.tag)));
            }
        }
    }
    Ok(())
}

/// A linear symplectic map acting on a named subset of modes, with an
/// optional displacement.
#[derive(Debug, Clone)]
pub struct SymplecticMap {
    modes: Vec<ModeLabel>,
    matrix: DMatrix<f64>,
    displacement: Option<DVector<f64>>,
}

impl SymplecticMap {
    /// Builds a map, rejecting matrices with `S^T Ω S != Ω`.
    pub fn new(
        modes: Vec<ModeLabel>,
        matrix: DMatrix<f64>,
        displacement: Option<DVector<f64>>,
    ) -> Result<Self> {
        check_unique_modes(&modes)?;
        let dim = 2 * modes.len();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::invalid(format!(
                "map over {} modes needs a {dim}x{dim} matrix, got {}x{}",
                modes.len(),
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if let Some(d) = &displacement {
            if d.len() != dim {
                return Err(Error::invalid(format!(
                    "displacement has length {}, expected {dim}",
                    d.len()
                )));
            }
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::ContractViolation("map has non-finite entries".into()));
        }
        let omega = symplectic_form(modes.len());
        let defect = (matrix.transpose() * &omega * &matrix - &omega).amax();
        let scale = matrix.amax().powi(2).max(1.0);
        if defect > SYMPLECTIC_TOLERANCE * scale {
            return Err(Error::ContractViolation(format!(
                "matrix is not symplectic (|S^T Ω S - Ω| = {defect:e})"
            )));
        }
        Ok(SymplecticMap {
            modes,
            matrix,
            displacement,
        })
    }

    pub fn identity(modes: Vec<ModeLabel>) -> Result<Self> {
        let dim = 2 * modes.len();
        SymplecticMap::new(modes, DMatrix::identity(dim, dim), None)
    }

    /// Phase-space rotation of one mode by `angle` radians:
    /// `X' = X cos + P sin`, `P' = -X sin + P cos`.
    pub fn rotation(mode: ModeLabel, angle: f64) -> Result<Self> {
        let (s, c) = angle.sin_cos();
        let m = DMatrix::from_row_slice(2, 2, &[c, s, -s, c]);
        SymplecticMap::new(vec![mode], m, None)
    }

    /// Single-mode squeezer `X' = r X`, `P' = P / r`.
    pub fn squeezer(mode: ModeLabel, r: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::invalid(format!(
                "squeeze factor must be positive, got {r}"
            )));
        }
        let m = DMatrix::from_row_slice(2, 2, &[r, 0.0, 0.0, 1.0 / r]);
        SymplecticMap::new(vec![mode], m, None)
    }

    pub fn with_displacement(mut self, d: DVector<f64>) -> Result<Self> {
        if d.len() != self.matrix.nrows() {
            return Err(Error::invalid("displacement length mismatch"));
        }
        self.displacement = Some(d);
        Ok(self)
    }

    pub fn modes(&self) -> &[ModeLabel] {
        &self.modes
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn displacement(&self) -> Option<&DVector<f64>> {
        self.displacement.as_ref()
    }

    /// Inverse map (`S^-1 = -Ω S^T Ω`), displacement included.
    pub fn inverse(&self) -> Self {
        let omega = symplectic_form(self.modes.len());
        let inv = -(&omega * self.matrix.transpose() * &omega);
        let displacement = self.displacement.as_ref().map(|d| -(&inv * d));
        SymplecticMap {
            modes: self.modes.clone(),
            matrix: inv,
            displacement,
        }
    }

    /// `self` applied after `first`. Both maps must act on the same modes in
    /// the same order.
    pub fn compose(&self, first: &SymplecticMap) -> Result<Self> {
        if self.modes != first.modes {
            return Err(Error::invalid("composed maps act on different modes"));
        }
        let matrix = &self.matrix * &first.matrix;
        let displacement = match (&self.displacement, &first.displacement) {
            (None, None) => None,
            (a, b) => {
                let mut d = DVector::zeros(matrix.nrows());
                if let Some(b) = b {
                    d += &self.matrix * b;
                }
                if let Some(a) = a {
                    d += a;
                }
                Some(d)
            }
        };
        Ok(SymplecticMap {
            modes: self.modes.clone(),
            matrix,
            displacement,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    modes: Vec<ModeLabel>,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

/// `n` vacuum modes labeled `A1..An`.
pub fn make_vacuum(n_modes: usize) -> Result<GaussianState> {
    if n_modes == 0 {
        return Err(Error::invalid("a state needs at least one mode"));
    }
    if n_modes > u8::MAX as usize {
        return Err(Error::invalid("too many modes"));
    }
    GaussianState::vacuum((1..=n_modes as u8).map(ModeLabel::atomic).collect())
}

impl GaussianState {
    /// Validating constructor. Rejects asymmetric or unphysical covariances.
    pub fn new(modes: Vec<ModeLabel>, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_unique_modes(&modes)?;
        let dim = 2 * modes.len();
        if mean.len() != dim || cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::invalid(format!(
                "{} modes need a mean of length {dim} and a {dim}x{dim} covariance",
                modes.len()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("state has non-finite entries"));
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > SYMMETRY_TOLERANCE * cov.amax().max(1.0) {
            return Err(Error::invalid(format!("covariance is not symmetric ({asym:e})")));
        }
        let state = GaussianState {
            modes,
            mean,
            cov: symmetrize(&cov),
        };
        state.check_physical()?;
        Ok(state)
    }

    pub fn vacuum(modes: Vec<ModeLabel>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::invalid("a state needs at least one mode"));
        }
        check_unique_modes(&modes)?;
        let dim = 2 * modes.len();
        Ok(GaussianState {
            modes,
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim) * VACUUM_VARIANCE,
        })
    }

    /// Vacuum of one mode displaced to `(x, p)`.
    pub fn coherent(mode: ModeLabel, x: f64, p: f64) -> Result<Self> {
        let mut s = GaussianState::vacuum(vec![mode])?;
        s.mean[0] = x;
        s.mean[1] = p;
        Ok(s)
    }

    pub fn modes(&self) -> &[ModeLabel] {
        &self.modes
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn mode_position(&self, mode: &ModeLabel) -> Result<usize> {
        self.modes
            .iter()
            .position(|m| m.same_mode(mode))
            .ok_or_else(|| Error::invalid(format!("mode {mode} is not part of the state")))
    }

    pub fn contains(&self, mode: &ModeLabel) -> bool {
        self.modes.iter().any(|m| m.same_mode(mode))
    }

    fn index(&self, q: &Quadrature) -> Result<usize> {
        Ok(2 * self.mode_position(&q.mode)? + q.axis.offset())
    }

    pub fn mean_of(&self, q: &Quadrature) -> Result<f64> {
        Ok(self.mean[self.index(q)?])
    }

    pub fn variance(&self, q: &Quadrature) -> Result<f64> {
        let i = self.index(q)?;
        Ok(self.cov[(i, i)])
    }

    pub fn covariance(&self, a: &Quadrature, b: &Quadrature) -> Result<f64> {
        Ok(self.cov[(self.index(a)?, self.index(b)?)])
    }

    /// Symplectic eigenvalues (Williamson spectrum), ascending.
    ///
    /// Computed as the square roots of the doubly degenerate eigenvalues of
    /// `-(γ^½ Ω γ^½)²`, which is symmetric positive semidefinite.
    pub fn symplectic_eigenvalues(&self) -> Vec<f64> {
        let n = self.modes.len();
        if n == 0 {
            return Vec::new();
        }
        let eig = SymmetricEigen::new(self.cov.clone());
        if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
            // Not positive definite: certainly below the floor.
            return vec![0.0; n];
        }
        let sqrt_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
        let root = &eig.eigenvectors * sqrt_diag * eig.eigenvectors.transpose();
        let m = &root * symplectic_form(n) * &root;
        let sq = symmetrize(&(-(&m * &m)));
        let mut nu2: Vec<f64> = SymmetricEigen::new(sq).eigenvalues.iter().copied().collect();
        nu2.sort_by(f64::total_cmp);
        nu2.chunks(2)
            .map(|pair| (0.5 * (pair[0] + pair[1])).max(0.0).sqrt())
            .collect()
    }

    /// Checks the symplectic-eigenvalue floor and the per-mode Heisenberg
    /// product.
    pub fn check_physical(&self) -> Result<()> {
        for (k, mode) in self.modes.iter().enumerate() {
            let vx = self.cov[(2 * k, 2 * k)];
            let vp = self.cov[(2 * k + 1, 2 * k + 1)];
            if vx * vp < 0.25 - PHYSICALITY_TOLERANCE {
                return Err(Error::ContractViolation(format!(
                    "mode {mode} violates Var(X)Var(P) >= 1/4 ({})",
                    vx * vp
                )));
            }
        }
        if let Some(&min) = self.symplectic_eigenvalues().first() {
            if min < VACUUM_VARIANCE - PHYSICALITY_TOLERANCE {
                return Err(Error::ContractViolation(format!(
                    "smallest symplectic eigenvalue {min} is below 1/2"
                )));
            }
        }
        Ok(())
    }

    /// Product state `self ⊗ other`.
    pub fn tensor(&self, other: &GaussianState) -> Result<Self> {
        let mut modes = self.modes.clone();
        modes.extend(other.modes.iter().cloned());
        check_unique_modes(&modes)?;
        let (a, b) = (self.mean.len(), other.mean.len());
        let mut mean = DVector::zeros(a + b);
        mean.rows_mut(0, a).copy_from(&self.mean);
        mean.rows_mut(a, b).copy_from(&other.mean);
        let mut cov = DMatrix::zeros(a + b, a + b);
        cov.view_mut((0, 0), (a, a)).copy_from(&self.cov);
        cov.view_mut((a, a), (b, b)).copy_from(&other.cov);
        Ok(GaussianState { modes, mean, cov })
    }

    /// Appends a vacuum mode.
    pub fn with_vacuum_mode(&self, mode: ModeLabel) -> Result<Self> {
        self.tensor(&GaussianState::vacuum(vec![mode])?)
    }

    /// `v -> S v + d`, `cov -> S cov S^T`, with `S` embedded on the map's
    /// modes and the identity elsewhere.
    pub fn apply_symplectic(&self, map: &SymplecticMap) -> Result<Self> {
        let idx = self.quadrature_indices(map.modes())?;
        let dim = self.mean.len();
        let mut s = DMatrix::identity(dim, dim);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                s[(i, j)] = map.matrix[(a, b)];
            }
        }
        let mut mean = &s * &self.mean;
        if let Some(d) = &map.displacement {
            for (a, &i) in idx.iter().enumerate() {
                mean[i] += d[a];
            }
        }
        let cov = symmetrize(&(&s * &self.cov * s.transpose()));
        Ok(GaussianState {
            modes: self.modes.clone(),
            mean,
            cov,
        })
    }

    fn quadrature_indices(&self, modes: &[ModeLabel]) -> Result<Vec<usize>> {
        let mut idx = Vec::with_capacity(2 * modes.len());
        for m in modes {
            let k = self.mode_position(m)?;
            idx.push(2 * k);
            idx.push(2 * k + 1);
        }
        Ok(idx)
    }

    /// Conditions on the outcome of a homodyne measurement of `q` and
    /// removes the measured mode.
    ///
    /// Retained means move by `C (outcome - μ) / V` and the retained
    /// covariance loses `C C^T / V`, where `V` is the measured variance and
    /// `C` the cross-covariance column. The posterior covariance does not
    /// depend on the outcome.
    pub fn homodyne_condition(&self, q: &Quadrature, outcome: f64) -> Result<Self> {
        if !outcome.is_finite() {
            return Err(Error::invalid("measurement outcome must be finite"));
        }
        let k = self.mode_position(&q.mode)?;
        let m = 2 * k + q.axis.offset();
        let var = self.cov[(m, m)];
        if var < DEGENERATE_VARIANCE {
            return Err(Error::DegenerateMeasurement {
                variance: var,
                tolerance: DEGENERATE_VARIANCE,
            });
        }
        let keep: Vec<usize> = (0..self.mean.len()).filter(|&i| i / 2 != k).collect();
        let innovation = (outcome - self.mean[m]) / var;
        let c = DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.cov[(i, m)]));
        let mean = DVector::from_iterator(
            keep.len(),
            keep.iter()
                .enumerate()
                .map(|(a, &i)| self.mean[i] + c[a] * innovation),
        );
        let cov = DMatrix::from_fn(keep.len(), keep.len(), |a, b| {
            self.cov[(keep[a], keep[b])] - c[a] * c[b] / var
        });
        let modes = self
            .modes
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != k)
            .map(|(_, m)| m.clone())
            .collect();
        Ok(GaussianState {
            modes,
            mean,
            cov: symmetrize(&cov),
        })
    }

    /// Shifts the mean of one quadrature; covariance untouched.
    pub fn displace(&self, q: &Quadrature, amount: f64) -> Result<Self> {
        if !amount.is_finite() {
            return Err(Error::invalid("displacement must be finite"));
        }
        let i = self.index(q)?;
        let mut out = self.clone();
        out.mean[i] += amount;
        Ok(out)
    }

    /// Beam-splitter admixture of vacuum into one mode:
    /// `X -> r X + sqrt(1 - r²) V_X` (same for `P`), with retention `r`.
    pub fn attenuate(&self, mode: &ModeLabel, retention: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&retention) {
            return Err(Error::invalid(format!(
                "retention must lie in [0, 1], got {retention}"
            )));
        }
        let k = self.mode_position(mode)?;
        let dim = self.mean.len();
        let mut out = self.clone();
        let in_mode = |i: usize| i / 2 == k;
        for i in 0..dim {
            if in_mode(i) {
                out.mean[i] *= retention;
            }
            for j in 0..dim {
                let factor = match (in_mode(i), in_mode(j)) {
                    (true, true) => retention * retention,
                    (true, false) | (false, true) => retention,
                    (false, false) => 1.0,
                };
                out.cov[(i, j)] *= factor;
            }
        }
        let fill = (1.0 - retention * retention) * VACUUM_VARIANCE;
        out.cov[(2 * k, 2 * k)] += fill;
        out.cov[(2 * k + 1, 2 * k + 1)] += fill;
        Ok(out)
    }

    /// Reduced state with `mode` discarded.
    pub fn trace_out(&self, mode: &ModeLabel) -> Result<Self> {
        let k = self.mode_position(mode)?;
        let keep: Vec<usize> = (0..self.mean.len()).filter(|&i| i / 2 != k).collect();
        Ok(GaussianState {
            modes: self
                .modes
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != k)
                .map(|(_, m)| m.clone())
                .collect(),
            mean: DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.mean[i])),
            cov: DMatrix::from_fn(keep.len(), keep.len(), |a, b| self.cov[(keep[a], keep[b])]),
        })
    }

    /// Reduced state on the listed modes, in the listed order.
    pub fn reduce(&self, modes: &[ModeLabel]) -> Result<Self> {
        check_unique_modes(modes)?;
        let idx = self.quadrature_indices(modes)?;
        Ok(GaussianState {
            modes: modes.to_vec(),
            mean: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.mean[i])),
            cov: DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.cov[(idx[a], idx[b])]),
        })
    }
}
