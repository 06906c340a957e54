//! Forward operators and componentwise link maps.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, GlipError, Result};
use crate::linalg;

/// Default relative singular-value threshold for rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Width of the normalised Gaussian bump kernel.
pub const BUMP_WIDTH: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    /// `K(t, u) = 1{u <= t}`.
    Volterra,
    /// Normalised Gaussian density in `t - u` with standard deviation [`BUMP_WIDTH`].
    GaussianBump,
}

impl Kernel {
    pub fn parse(id: &str) -> Result<Self> {
        match id {
            "volterra" => Ok(Kernel::Volterra),
            "gaussian-bump" => Ok(Kernel::GaussianBump),
            other => Err(GlipError::Config(format!(
                "unknown kernel `{other}` (expected `volterra` or `gaussian-bump`)"
            ))),
        }
    }

    pub fn eval(self, t: f64, u: f64) -> f64 {
        match self {
            Kernel::Volterra => {
                if u <= t {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::GaussianBump => {
                let z = (t - u) / BUMP_WIDTH;
                (-0.5 * z * z).exp() / (BUMP_WIDTH * (2.0 * std::f64::consts::PI).sqrt())
            }
        }
    }
}

/// Where an operator came from. Serialised as the operator's JSON description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Dense { matrix: Vec<Vec<f64>> },
    Spectral { alpha: f64, p: usize },
    Grid { kernel: Kernel, n: usize, p: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Dense,
    Spectral { alpha: f64 },
    Grid { kernel: Kernel, n: usize, p: usize },
}

/// Orthogonal split of parameter space into `range(A^T)` and `null(A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankSplit {
    pub p0: usize,
    pub p1: usize,
    /// Projector onto `range(A^T)`.
    pub projector: DMatrix<f64>,
    /// Orthonormal `p x p` basis; the first `p0` columns span `range(A^T)`.
    pub basis: DMatrix<f64>,
    pub singular_values: Vec<f64>,
}

impl RankSplit {
    pub fn u0(&self) -> DMatrix<f64> {
        self.basis.columns(0, self.p0).into_owned()
    }

    pub fn u1(&self) -> DMatrix<f64> {
        self.basis.columns(self.p0, self.p1).into_owned()
    }
}

/// An `n x p` linear operator with its rank decomposition computed at construction.
#[derive(Clone, PartialEq)]
pub struct ForwardOperator {
    matrix: DMatrix<f64>,
    provenance: Provenance,
    split: RankSplit,
    norm: f64,
}

impl fmt::Debug for ForwardOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ForwardOperator")
            .field("shape", &self.matrix.shape())
            .field("provenance", &self.provenance)
            .field("p0", &self.split.p0)
            .finish()
    }
}

/// Rank split of an arbitrary matrix at relative tolerance `tol`.
pub fn rank_split(matrix: &DMatrix<f64>, tol: f64) -> Result<RankSplit> {
    if !(tol > 0.0) {
        return Err(GlipError::Domain(format!("rank tolerance {tol} must be > 0")));
    }
    let p = matrix.ncols();
    let (row, null, singular_values) = linalg::row_null_split(matrix, tol);
    let p0 = row.ncols();
    let mut basis = DMatrix::zeros(p, p);
    basis.columns_mut(0, p0).copy_from(&row);
    basis.columns_mut(p0, p - p0).copy_from(&null);
    let mut projector = &row * row.transpose();
    linalg::symmetrize(&mut projector);
    Ok(RankSplit {
        p0,
        p1: p - p0,
        projector,
        basis,
        singular_values,
    })
}

impl ForwardOperator {
    fn build(matrix: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(GlipError::Domain("operator must have positive dimensions".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(GlipError::Domain("operator entries must be finite".into()));
        }
        let split = rank_split(&matrix, DEFAULT_RANK_TOL)?;
        let norm = split.singular_values.first().copied().unwrap_or(0.0);
        Ok(ForwardOperator {
            matrix,
            provenance,
            split,
            norm,
        })
    }

    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        Self::build(matrix, Provenance::Dense)
    }

    /// `diag(j^-alpha)`, `j = 1..p`.
    pub fn spectral(alpha: f64, p: usize) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(GlipError::Domain(format!("alpha = {alpha} must be > 0")));
        }
        let d = DVector::from_iterator(p, (1..=p).map(|j| (j as f64).powf(-alpha)));
        Self::build(DMatrix::from_diagonal(&d), Provenance::Spectral { alpha })
    }

    /// `A_ij = K(i/n, j/p) / p`.
    pub fn grid(kernel: Kernel, n: usize, p: usize) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(GlipError::Domain("grid sizes must be >= 1".into()));
        }
        let m = DMatrix::from_fn(n, p, |i, j| {
            kernel.eval((i + 1) as f64 / n as f64, (j + 1) as f64 / p as f64) / p as f64
        });
        Self::build(m, Provenance::Grid { kernel, n, p })
    }

    pub fn from_spec(spec: &OperatorSpec) -> Result<Self> {
        match spec {
            OperatorSpec::Dense { matrix } => {
                let n = matrix.len();
                let p = matrix.first().map_or(0, |r| r.len());
                if let Some(bad) = matrix.iter().position(|r| r.len() != p) {
                    return Err(GlipError::Config(format!(
                        "dense matrix row {bad} has {} entries, expected {p}",
                        matrix[bad].len()
                    )));
                }
                Self::dense(DMatrix::from_fn(n, p, |i, j| matrix[i][j]))
            }
            OperatorSpec::Spectral { alpha, p } => Self::spectral(*alpha, *p),
            OperatorSpec::Grid { kernel, n, p } => Self::grid(*kernel, *n, *p),
        }
    }

    pub fn to_spec(&self) -> OperatorSpec {
        match &self.provenance {
            Provenance::Dense => OperatorSpec::Dense {
                matrix: self
                    .matrix
                    .row_iter()
                    .map(|r| r.iter().copied().collect())
                    .collect(),
            },
            Provenance::Spectral { alpha } => OperatorSpec::Spectral {
                alpha: *alpha,
                p: self.matrix.ncols(),
            },
            Provenance::Grid { kernel, n, p } => OperatorSpec::Grid {
                kernel: *kernel,
                n: *n,
                p: *p,
            },
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn p(&self) -> usize {
        self.matrix.ncols()
    }

    /// Spectral norm.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// Rank split at the default tolerance.
    pub fn split(&self) -> &RankSplit {
        &self.split
    }

    /// Rank split at a caller-chosen relative tolerance.
    pub fn rank_split(&self, tol: f64) -> Result<RankSplit> {
        rank_split(&self.matrix, tol)
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("apply(x)", self.p(), x.len())?;
        Ok(&self.matrix * x)
    }

    pub fn adjoint(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("adjoint(v)", self.n(), v.len())?;
        Ok(self.matrix.tr_mul(v))
    }

    /// Diagonal of a square diagonal operator, if it is one.
    pub fn diagonal(&self) -> Option<DVector<f64>> {
        linalg::is_diagonal(&self.matrix).then(|| self.matrix.diagonal())
    }
}

impl Serialize for ForwardOperator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_spec().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ForwardOperator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let spec = OperatorSpec::deserialize(d)?;
        ForwardOperator::from_spec(&spec).map_err(serde::de::Error::custom)
    }
}

/// A user-supplied componentwise link with its inverse and first two derivatives.
#[derive(Clone, Copy)]
pub struct CustomLink {
    pub name: &'static str,
    pub g: fn(f64) -> f64,
    pub g_inv: fn(f64) -> f64,
    pub g1: fn(f64) -> f64,
    pub g2: fn(f64) -> f64,
    /// Open interval on which `g` is defined.
    pub domain: (f64, f64),
}

impl fmt::Debug for CustomLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomLink({})", self.name)
    }
}

impl PartialEq for CustomLink {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.domain == other.domain
    }
}

/// Componentwise link `G` applied to `mu = A x`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkMap {
    #[default]
    Identity,
    Exp,
    /// `ln(1 + e^mu)`.
    Softplus,
    #[serde(skip)]
    Custom(CustomLink),
}

fn softplus(m: f64) -> f64 {
    if m > 30.0 {
        m + (-m).exp().ln_1p()
    } else {
        m.exp().ln_1p()
    }
}

fn logistic(m: f64) -> f64 {
    1.0 / (1.0 + (-m).exp())
}

impl LinkMap {
    pub fn is_identity(&self) -> bool {
        matches!(self, LinkMap::Identity)
    }

    fn check(&self, m: f64, i: usize) -> Result<()> {
        let ok = match self {
            LinkMap::Custom(c) => m > c.domain.0 && m < c.domain.1,
            _ => m.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(GlipError::Domain(format!("mu[{i}] = {m} outside the link domain")))
        }
    }

    /// `(G(m), G'(m), G''(m))`.
    pub fn eval(&self, m: f64) -> (f64, f64, f64) {
        match self {
            LinkMap::Identity => (m, 1.0, 0.0),
            LinkMap::Exp => {
                let e = m.exp();
                (e, e, e)
            }
            LinkMap::Softplus => {
                let s = logistic(m);
                (softplus(m), s, s * (1.0 - s))
            }
            LinkMap::Custom(c) => ((c.g)(m), (c.g1)(m), (c.g2)(m)),
        }
    }

    pub fn inverse(&self, eta: f64) -> Result<f64> {
        let v = match self {
            LinkMap::Identity => eta,
            LinkMap::Exp => eta.ln(),
            LinkMap::Softplus => eta.exp_m1().ln(),
            LinkMap::Custom(c) => (c.g_inv)(eta),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(GlipError::Domain(format!("eta = {eta} outside the link range")))
        }
    }

    pub fn apply(&self, mu: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = mu.clone();
        for (i, m) in out.iter_mut().enumerate() {
            self.check(*m, i)?;
            *m = self.eval(*m).0;
        }
        Ok(out)
    }

    /// Diagonal Jacobian `diag(G'(mu_i))`.
    pub fn jacobian(&self, mu: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut d = mu.clone();
        for (i, m) in d.iter_mut().enumerate() {
            self.check(*m, i)?;
            *m = self.eval(*m).1;
        }
        Ok(DMatrix::from_diagonal(&d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_matrix(rng: &mut Stream, n: usize, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn apply_identity_and_spectral() {
        let id = ForwardOperator::dense(DMatrix::identity(3, 3)).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(id.apply(&x).unwrap(), x);
        let sp = ForwardOperator::spectral(1.0, 3).unwrap();
        let y = sp.apply(&DVector::from_element(3, 1.0)).unwrap();
        assert_relative_eq!(y[0], 1.0);
        assert_relative_eq!(y[1], 0.5);
        assert_relative_eq!(y[2], 1.0 / 3.0);
    }

    #[test]
    fn apply_matches_triple_loop() {
        let mut rng = Stream::from_seed(3);
        let m = random_matrix(&mut rng, 4, 6);
        let x = DVector::from_fn(6, |_, _| rng.random_range(-2.0..2.0));
        let op = ForwardOperator::dense(m.clone()).unwrap();
        let y = op.apply(&x).unwrap();
        for i in 0..4 {
            let mut s = 0.0;
            for j in 0..6 {
                s += m[(i, j)] * x[j];
            }
            assert!((y[i] - s).abs() < 1e-12);
        }
        assert!(matches!(op.apply(&DVector::zeros(5)), Err(GlipError::Dimension { .. })));
    }

    #[test]
    fn split_full_rank_identity() {
        let op = ForwardOperator::dense(DMatrix::identity(2, 2)).unwrap();
        let s = op.split();
        assert_eq!((s.p0, s.p1), (2, 0));
        assert!((&s.projector - DMatrix::identity(2, 2)).norm() < 1e-14);
        assert!((s.basis.transpose() * &s.basis - DMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn split_row_vector() {
        let op = ForwardOperator::dense(DMatrix::from_row_slice(1, 2, &[1.0, 1.0])).unwrap();
        let s = op.split();
        assert_eq!((s.p0, s.p1), (1, 1));
        assert!((&s.projector - DMatrix::from_element(2, 2, 0.5)).norm() < 1e-14);
    }

    #[test]
    fn split_outer_product() {
        let u = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let v = DVector::from_vec(vec![0.3, 1.0, 2.0]);
        let op = ForwardOperator::dense(&u * v.transpose()).unwrap();
        assert_eq!(op.split().p0, 1);
        // eigen oracle: A^T A has exactly one nonzero eigenvalue
        let ata = op.matrix().transpose() * op.matrix();
        let eig = ata.symmetric_eigen().eigenvalues;
        let big = eig.iter().filter(|e| **e > 1e-10 * eig.max()).count();
        assert_eq!(big, 1);
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let op = ForwardOperator::dense(DMatrix::zeros(2, 3)).unwrap();
        assert_eq!(op.split().p0, 0);
        assert_eq!(op.split().projector, DMatrix::zeros(3, 3));
        assert!(rank_split(op.matrix(), 0.0).is_err());
    }

    #[test]
    fn grid_volterra() {
        let op = ForwardOperator::grid(Kernel::Volterra, 2, 2).unwrap();
        assert_eq!(op.matrix(), &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.5, 0.5]));
        let one = ForwardOperator::grid(Kernel::GaussianBump, 1, 1).unwrap();
        assert_relative_eq!(one.matrix()[(0, 0)], Kernel::GaussianBump.eval(1.0, 1.0));
        assert!(Kernel::parse("radon").is_err());
    }

    #[test]
    fn gaussian_bump_interior_rows_integrate_to_one() {
        let op = ForwardOperator::grid(Kernel::GaussianBump, 50, 400).unwrap();
        for i in 20..30 {
            let s: f64 = op.matrix().row(i).sum();
            assert!((s - 1.0).abs() < 1e-2, "row {i} sums to {s}");
        }
    }

    #[test]
    fn links() {
        let mu = DVector::from_vec(vec![3.0, -1.0]);
        assert_eq!(LinkMap::Identity.apply(&mu).unwrap(), mu);
        assert_eq!(LinkMap::Identity.jacobian(&mu).unwrap(), DMatrix::identity(2, 2));
        let (g, g1, _) = LinkMap::Exp.eval(0.0);
        assert_eq!((g, g1), (1.0, 1.0));
        assert!(LinkMap::Exp.apply(&DVector::from_element(1, f64::NAN)).is_err());
        for link in [LinkMap::Exp, LinkMap::Softplus] {
            for m in [-2.0, 0.3, 1.7] {
                let h = 1e-5;
                let (_, g1, g2) = link.eval(m);
                let fd1 = (link.eval(m + h).0 - link.eval(m - h).0) / (2.0 * h);
                let fd2 = (link.eval(m + h).1 - link.eval(m - h).1) / (2.0 * h);
                assert_relative_eq!(g1, fd1, max_relative = 1e-6);
                assert_relative_eq!(g2, fd2, max_relative = 1e-6);
                assert_relative_eq!(link.inverse(link.eval(m).0).unwrap(), m, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let ops = [
            ForwardOperator::dense(DMatrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.])).unwrap(),
            ForwardOperator::spectral(1.5, 4).unwrap(),
            ForwardOperator::grid(Kernel::Volterra, 3, 2).unwrap(),
        ];
        for op in ops {
            let s = serde_json::to_string(&op).unwrap();
            let back: ForwardOperator = serde_json::from_str(&s).unwrap();
            assert_eq!(back, op);
        }
        let ragged = r#"{"kind":"dense","matrix":[[1,2],[3]]}"#;
        assert!(serde_json::from_str::<ForwardOperator>(ragged).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn projector_fixes_range_of_adjoint(seed in 0u64..10_000, n in 1usize..5, p in 1usize..6) {
                let mut rng = Stream::from_seed(seed);
                let m = random_matrix(&mut rng, n, p);
                let op = ForwardOperator::dense(m.clone()).unwrap();
                let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                let x = m.tr_mul(&v);
                let pa = &op.split().projector;
                prop_assert!((pa * &x - &x).norm() <= 1e-8);
                prop_assert!((pa * pa - pa).norm() <= 1e-10);
                prop_assert!((pa - pa.transpose()).norm() <= 1e-10);
                prop_assert_eq!(op.split().p0 + op.split().p1, p);
            }

            #[test]
            fn norm_matches_power_iteration(seed in 0u64..10_000) {
                let mut rng = Stream::from_seed(seed);
                let m = random_matrix(&mut rng, 4, 3);
                let op = ForwardOperator::dense(m.clone()).unwrap();
                let mtm = m.transpose() * &m;
                let mut v = DVector::from_element(3, 1.0);
                for _ in 0..2000 {
                    let w = &mtm * &v;
                    v = &w / w.norm();
                }
                prop_assert!((op.norm() - (&m * &v).norm()).abs() <= 1e-8);
            }

            #[test]
            fn interlace_smallest_positive_eigenvalue(seed in 0u64..10_000) {
                let mut rng = Stream::from_seed(seed);
                // rank 2 operator in R^4
                let m = random_matrix(&mut rng, 2, 4);
                let d = DVector::from_fn(2, |_, _| rng.random_range(0.1..3.0));
                let min_pos = |s: &DMatrix<f64>| {
                    let e = s.clone().symmetric_eigen().eigenvalues;
                    let top = e.max();
                    e.iter().copied().filter(|x| *x > 1e-9 * top).fold(f64::INFINITY, f64::min)
                };
                let lhs = min_pos(&(m.transpose() * DMatrix::from_diagonal(&d) * &m));
                let rhs = d.min() * min_pos(&(m.transpose() * &m));
                prop_assert!(lhs >= rhs * (1.0 - 1e-9));
            }
        }
    }
}
