//! Correlated Brownian construction for the four factor drivers.
//!
//! Rows of a [`LoadingMatrix`] are ordered `(W_r, W_S, W_chi, W_gamma)`. Columns are
//! independent drivers `(W_0, W_1, W_2, W_3)`, or `(W_0, W_2, W_3)` for the reduced
//! factor used when the stock shares the rate Brownian.

use crate::error::{EsgError, Result};

pub const ROW_R: usize = 0;
pub const ROW_S: usize = 1;
pub const ROW_CHI: usize = 2;
pub const ROW_GAMMA: usize = 3;

const PIVOT_TOL: f64 = 1e-12;

/// Pairwise correlations of the factor Brownians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationSpec {
    rho_r_s: f64,
    rho_r_chi: f64,
    rho_r_gamma: f64,
    rho_s_chi: f64,
    rho_s_gamma: f64,
    rho_chi_gamma: f64,
}

impl CorrelationSpec {
    /// Validates ranges and positive semi-definiteness.
    pub fn new(
        rho_r_s: f64,
        rho_r_chi: f64,
        rho_r_gamma: f64,
        rho_s_chi: f64,
        rho_s_gamma: f64,
        rho_chi_gamma: f64,
    ) -> Result<Self> {
        let spec = Self { rho_r_s, rho_r_chi, rho_r_gamma, rho_s_chi, rho_s_gamma, rho_chi_gamma };
        for (name, value) in spec.named() {
            if !(-1.0..=1.0).contains(&value) || value.is_nan() {
                return Err(EsgError::CorrelationOutOfRange { name, value });
            }
        }
        semidefinite_factor(&spec.matrix())?;
        Ok(spec)
    }

    pub fn independent() -> Self {
        Self {
            rho_r_s: 0.0,
            rho_r_chi: 0.0,
            rho_r_gamma: 0.0,
            rho_s_chi: 0.0,
            rho_s_gamma: 0.0,
            rho_chi_gamma: 0.0,
        }
    }

    /// Spec with `W_S = W_r`, so the stock correlations copy the rate ones.
    pub fn stock_on_rate(rho_r_chi: f64, rho_r_gamma: f64, rho_chi_gamma: f64) -> Result<Self> {
        Self::new(1.0, rho_r_chi, rho_r_gamma, rho_r_chi, rho_r_gamma, rho_chi_gamma)
    }

    pub fn rho_r_s(&self) -> f64 {
        self.rho_r_s
    }
    pub fn rho_r_chi(&self) -> f64 {
        self.rho_r_chi
    }
    pub fn rho_r_gamma(&self) -> f64 {
        self.rho_r_gamma
    }
    pub fn rho_s_chi(&self) -> f64 {
        self.rho_s_chi
    }
    pub fn rho_s_gamma(&self) -> f64 {
        self.rho_s_gamma
    }
    pub fn rho_chi_gamma(&self) -> f64 {
        self.rho_chi_gamma
    }

    pub fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("rho_rS", self.rho_r_s),
            ("rho_rChi", self.rho_r_chi),
            ("rho_rGamma", self.rho_r_gamma),
            ("rho_SChi", self.rho_s_chi),
            ("rho_SGamma", self.rho_s_gamma),
            ("rho_ChiGamma", self.rho_chi_gamma),
        ]
    }

    /// The symmetric 4x4 matrix with unit diagonal.
    pub fn matrix(&self) -> [[f64; 4]; 4] {
        let Self { rho_r_s: a, rho_r_chi: b, rho_r_gamma: c, rho_s_chi: d, rho_s_gamma: e, rho_chi_gamma: f } =
            *self;
        [[1.0, a, b, c], [a, 1.0, d, e], [b, d, 1.0, f], [c, e, f, 1.0]]
    }
}

/// Lower-triangular loadings of the correlated drivers on independent ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadingMatrix {
    rows: [[f64; 4]; 4],
    cols: usize,
}

impl LoadingMatrix {
    pub fn identity() -> Self {
        let mut rows = [[0.0; 4]; 4];
        for (i, row) in rows.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self { rows, cols: 4 }
    }

    pub fn from_rows(rows: [[f64; 4]; 4], cols: usize) -> Result<Self> {
        if !(1..=4).contains(&cols) {
            return Err(EsgError::DimensionMismatch { expected: 4, got: cols });
        }
        Ok(Self { rows, cols })
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.rows[row][col]
    }

    /// Row `i` padded with zeros up to four columns.
    pub fn row(&self, i: usize) -> [f64; 4] {
        self.rows[i]
    }

    /// `L * L^T`.
    pub fn covariance(&self) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                out[i][j] = (0..self.cols).map(|k| self.rows[i][k] * self.rows[j][k]).sum();
            }
        }
        out
    }

    pub fn row_norms(&self) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (o, row) in out.iter_mut().zip(self.rows.iter()) {
            *o = row[..self.cols].iter().map(|x| x * x).sum::<f64>().sqrt();
        }
        out
    }

    /// Correlated increments `L * dz` without a length check.
    #[inline]
    pub fn apply(&self, dz: &[f64]) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (o, row) in out.iter_mut().zip(self.rows.iter()) {
            *o = row[..self.cols].iter().zip(dz).map(|(l, z)| l * z).sum();
        }
        out
    }
}

/// Closed-form loadings built row by row.
pub fn recursive_loadings(spec: &CorrelationSpec) -> Result<LoadingMatrix> {
    let CorrelationSpec { rho_r_s: rs, rho_r_chi: rc, rho_r_gamma: rg, rho_s_chi: sc, rho_s_gamma: sg, rho_chi_gamma: cg } =
        *spec;
    let s_rad = 1.0 - rs * rs;
    if s_rad <= 0.0 {
        return Err(EsgError::DegenerateCorrelation("1 - rho_rS^2 vanishes"));
    }
    let s_diag = s_rad.sqrt();
    let sc1 = (sc - rs * rc) / s_diag;
    let cc_rad = 1.0 - rc * rc - sc1 * sc1;
    if cc_rad <= 0.0 {
        return Err(EsgError::DegenerateCorrelation("rho'_ChiChi radicand is not positive"));
    }
    let cc1 = cc_rad.sqrt();
    let sg2 = (sg - rs * rg) / s_diag;
    let num = cg - rc * rg - sc * sg - rs * rs * cg + rs * rc * sg + rs * rg * sc;
    let den = (1.0 + rs.powi(4) - 2.0 * rs.powi(3) * rc * sc - 2.0 * rs * rs
        + rs * rs * rc * rc
        + rs * rs * sc * sc
        - rc * rc
        - sc * sc
        + 2.0 * rs * rc * sc)
        .sqrt();
    let cg2 = num / den;
    let gg_rad = 1.0 - rg * rg - sg2 * sg2 - cg2 * cg2;
    if gg_rad <= 0.0 {
        return Err(EsgError::DegenerateCorrelation("rho''_GammaGamma radicand is not positive"));
    }
    let rows = [
        [1.0, 0.0, 0.0, 0.0],
        [rs, s_diag, 0.0, 0.0],
        [rc, sc1, cc1, 0.0],
        [rg, sg2, cg2, gg_rad.sqrt()],
    ];
    Ok(LoadingMatrix { rows, cols: 4 })
}

/// Cholesky factor of the full correlation matrix.
pub fn cholesky_loadings(spec: &CorrelationSpec) -> Result<LoadingMatrix> {
    let a = spec.matrix();
    let mut l = [[0.0; 4]; 4];
    for j in 0..4 {
        let d = a[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if d <= PIVOT_TOL {
            return Err(EsgError::NotPositiveDefinite { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[j][j] = djj;
        for i in j + 1..4 {
            let v = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = v / djj;
        }
    }
    Ok(LoadingMatrix { rows: l, cols: 4 })
}

/// Three-driver loadings for a spec with `rho_rS = 1`.
pub fn reduced_loadings(spec: &CorrelationSpec) -> Result<LoadingMatrix> {
    if spec.rho_r_s != 1.0 {
        return Err(EsgError::DegenerateCorrelation("reduced loadings need rho_rS = 1"));
    }
    let (rc, rg, cg) = (spec.rho_r_chi, spec.rho_r_gamma, spec.rho_chi_gamma);
    let c_rad = 1.0 - rc * rc;
    if c_rad <= 0.0 {
        return Err(EsgError::DegenerateCorrelation("1 - rho_rChi^2 vanishes"));
    }
    let cg1 = (cg - rc * rg) / c_rad.sqrt();
    let gg_rad = (1.0 - rc * rc - rg * rg - cg * cg + 2.0 * rc * rg * cg) / c_rad;
    if gg_rad <= 0.0 {
        return Err(EsgError::DegenerateCorrelation("rho'_GammaGamma radicand is not positive"));
    }
    let rows = [
        [1.0, 0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
        [rc, c_rad.sqrt(), 0.0, 0.0],
        [rg, cg1, gg_rad.sqrt(), 0.0],
    ];
    Ok(LoadingMatrix { rows, cols: 3 })
}

/// `loadings * dz`.
pub fn correlate(loadings: &LoadingMatrix, dz: &[f64]) -> Result<[f64; 4]> {
    if dz.len() != loadings.cols {
        return Err(EsgError::DimensionMismatch { expected: loadings.cols, got: dz.len() });
    }
    Ok(loadings.apply(dz))
}

// Cholesky that tolerates zero pivots when the rest of the column is zero too.
fn semidefinite_factor(a: &[[f64; 4]; 4]) -> Result<()> {
    let mut l = [[0.0; 4]; 4];
    for j in 0..4 {
        let d = a[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if d < -PIVOT_TOL {
            return Err(EsgError::NotPositiveSemiDefinite { pivot: j, value: d });
        }
        if d <= PIVOT_TOL {
            for i in j + 1..4 {
                let v = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
                if v.abs() > 1e-9 {
                    return Err(EsgError::NotPositiveSemiDefinite { pivot: j, value: d });
                }
            }
            continue;
        }
        let djj = d.sqrt();
        l[j][j] = djj;
        for i in j + 1..4 {
            let v = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = v / djj;
        }
    }
    Ok(())
}
