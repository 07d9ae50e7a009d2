//! One-dimensional basis systems on a closed interval, together with the
//! integral matrices built from them: Gram, derivative penalty and the
//! function-times-second-derivative cross matrix.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{MpbError, Result};
use crate::quadrature::gauss_legendre;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisKind {
    /// Clamped B-splines; `knots` is the full knot vector including the
    /// `degree + 1` repeated boundary knots at each end.
    Bspline { degree: usize, knots: Vec<f64> },
    /// `{1, sqrt2 cos(2 pi k t), sqrt2 sin(2 pi k t), ...}` with `t = (x - lo) / period`,
    /// scaled to be orthonormal over one period.
    Fourier { period: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBasis", into = "RawBasis")]
pub struct MarginalBasis {
    kind: BasisKind,
    lo: f64,
    hi: f64,
    rank: usize,
}

#[derive(Clone, Serialize, Deserialize)]
struct RawBasis {
    #[serde(flatten)]
    kind: BasisKind,
    domain: [f64; 2],
    rank: usize,
}

impl TryFrom<RawBasis> for MarginalBasis {
    type Error = MpbError;

    fn try_from(raw: RawBasis) -> Result<Self> {
        let [lo, hi] = raw.domain;
        match raw.kind {
            BasisKind::Bspline { degree, knots } => {
                let b = MarginalBasis::bspline_with_knots(degree, knots)?;
                if b.rank != raw.rank || b.lo != lo || b.hi != hi {
                    return Err(MpbError::InvalidArgument(
                        "B-spline rank/domain disagree with its knot vector".into(),
                    ));
                }
                Ok(b)
            }
            BasisKind::Fourier { period } => MarginalBasis::fourier(lo, hi, raw.rank, period),
        }
    }
}

impl From<MarginalBasis> for RawBasis {
    fn from(b: MarginalBasis) -> Self {
        RawBasis { kind: b.kind, domain: [b.lo, b.hi], rank: b.rank }
    }
}

fn check_domain(lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(MpbError::InvalidArgument(format!(
            "domain [{lo}, {hi}] must be a finite interval with lo < hi"
        )));
    }
    Ok(())
}

impl MarginalBasis {
    /// B-splines of the given degree with equispaced clamped knots.
    pub fn bspline(lo: f64, hi: f64, rank: usize, degree: usize) -> Result<Self> {
        check_domain(lo, hi)?;
        if degree == 0 {
            return Err(MpbError::InvalidArgument("B-spline degree must be at least 1".into()));
        }
        if rank < degree + 1 {
            return Err(MpbError::InvalidArgument(format!(
                "a degree-{degree} B-spline basis needs rank >= {}, got {rank}",
                degree + 1
            )));
        }
        let interior = rank - degree - 1;
        let mut knots = vec![lo; degree + 1];
        let step = (hi - lo) / (interior + 1) as f64;
        knots.extend((1..=interior).map(|i| lo + step * i as f64));
        knots.extend(std::iter::repeat_n(hi, degree + 1));
        Self::bspline_with_knots(degree, knots)
    }

    /// B-splines on a caller-provided clamped knot vector. The domain is
    /// `[knots[0], knots[last]]`.
    pub fn bspline_with_knots(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if degree == 0 {
            return Err(MpbError::InvalidArgument("B-spline degree must be at least 1".into()));
        }
        if knots.len() < 2 * (degree + 1) {
            return Err(MpbError::InvalidArgument(format!(
                "knot vector needs at least {} entries",
                2 * (degree + 1)
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(MpbError::InvalidArgument("knots must be finite and nondecreasing".into()));
        }
        let lo = knots[0];
        let hi = *knots.last().unwrap();
        check_domain(lo, hi)?;
        let n = knots.len();
        if knots[..=degree].iter().any(|&k| k != lo) || knots[n - degree - 1..].iter().any(|&k| k != hi) {
            return Err(MpbError::InvalidArgument(
                "knot vector must be clamped (boundary knots repeated degree+1 times)".into(),
            ));
        }
        let interior = &knots[degree + 1..n - degree - 1];
        if interior.iter().any(|&k| k <= lo || k >= hi) {
            return Err(MpbError::InvalidArgument("interior knots must lie strictly inside the domain".into()));
        }
        let mut run = 1;
        for w in interior.windows(2) {
            run = if w[0] == w[1] { run + 1 } else { 1 };
            if run > degree {
                return Err(MpbError::InvalidArgument(format!(
                    "interior knot multiplicity exceeds degree {degree}"
                )));
            }
        }
        let rank = n - degree - 1;
        Ok(Self { kind: BasisKind::Bspline { degree, knots }, lo, hi, rank })
    }

    /// Fourier system of odd `rank` with the given period.
    pub fn fourier(lo: f64, hi: f64, rank: usize, period: f64) -> Result<Self> {
        check_domain(lo, hi)?;
        if rank == 0 || rank.is_multiple_of(2) {
            return Err(MpbError::InvalidArgument(format!("Fourier rank must be odd, got {rank}")));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(MpbError::InvalidArgument(format!("Fourier period must be positive, got {period}")));
        }
        Ok(Self { kind: BasisKind::Fourier { period }, lo, hi, rank })
    }

    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Highest derivative order that can be evaluated.
    pub fn max_derivative(&self) -> usize {
        match &self.kind {
            BasisKind::Bspline { degree, .. } => *degree,
            BasisKind::Fourier { .. } => usize::MAX,
        }
    }

    fn check_order(&self, order: usize) -> Result<()> {
        let max = self.max_derivative();
        if order > max {
            return Err(MpbError::Smoothness { order, max });
        }
        Ok(())
    }

    fn check_point(&self, x: f64) -> Result<f64> {
        let tol = 1e-12 * (self.hi - self.lo);
        if !x.is_finite() || x < self.lo - tol || x > self.hi + tol {
            return Err(MpbError::OutOfDomain { point: x, lo: self.lo, hi: self.hi });
        }
        Ok(x.clamp(self.lo, self.hi))
    }

    /// `points.len() x rank` matrix of `deriv`-th derivatives of each basis
    /// function at each point.
    pub fn evaluate(&self, points: &[f64], deriv: usize) -> Result<Matrix> {
        self.check_order(deriv)?;
        let mut out = Matrix::zeros(points.len(), self.rank);
        for (i, &x) in points.iter().enumerate() {
            let x = self.check_point(x)?;
            match &self.kind {
                BasisKind::Bspline { degree, knots } => {
                    let span = find_span(knots, *degree, self.rank, x);
                    let ders = basis_derivatives(knots, *degree, span, x, deriv);
                    for (j, v) in ders[deriv].iter().enumerate() {
                        out[(i, span - degree + j)] = *v;
                    }
                }
                BasisKind::Fourier { period } => {
                    fourier_row(*period, self.rank, x - self.lo, deriv, |j, v| out[(i, j)] = v);
                }
            }
        }
        Ok(out)
    }

    /// Quadrature nodes and weights that integrate products of basis
    /// derivatives exactly (B-splines) or to near machine precision (Fourier).
    pub fn quadrature(&self, extra_order: usize) -> (Vec<f64>, Vec<f64>) {
        match &self.kind {
            BasisKind::Bspline { degree, knots } => {
                let (gx, gw) = gauss_legendre(degree + extra_order + 1);
                let mut xs = Vec::new();
                let mut ws = Vec::new();
                for w in knots.windows(2).filter(|w| w[1] > w[0]) {
                    push_panel(w[0], w[1], &gx, &gw, &mut xs, &mut ws);
                }
                (xs, ws)
            }
            BasisKind::Fourier { .. } => {
                let panels = 4 * self.rank;
                let (gx, gw) = gauss_legendre(12);
                let h = (self.hi - self.lo) / panels as f64;
                let mut xs = Vec::with_capacity(panels * gx.len());
                let mut ws = Vec::with_capacity(panels * gx.len());
                for p in 0..panels {
                    let a = self.lo + h * p as f64;
                    let b = if p + 1 == panels { self.hi } else { a + h };
                    push_panel(a, b, &gx, &gw, &mut xs, &mut ws);
                }
                (xs, ws)
            }
        }
    }

    /// `M(i, j) = integral of phi_i^(left) * phi_j^(right)` over the domain.
    pub fn integral_matrix(&self, left: usize, right: usize) -> Result<Matrix> {
        self.check_order(left.max(right))?;
        let (xs, ws) = self.quadrature(left.max(right));
        let a = self.evaluate(&xs, left)?;
        let b = if left == right { a.clone() } else { self.evaluate(&xs, right)? };
        let mut aw = a;
        for (r, w) in ws.iter().enumerate() {
            aw.row_mut(r).scale_mut(*w);
        }
        let mut m = aw.tr_mul(&b);
        if left == right {
            symmetrize(&mut m);
        }
        Ok(m)
    }

    /// Gram matrix of pairwise L2 inner products.
    pub fn gram_matrix(&self) -> Result<Matrix> {
        self.integral_matrix(0, 0)
    }

    /// Roughness penalty `R(i, j) = integral of phi_i^(order) * phi_j^(order)`.
    pub fn penalty_matrix(&self, order: usize) -> Result<Matrix> {
        if order == 0 {
            return Err(MpbError::InvalidArgument("penalty order must be at least 1".into()));
        }
        self.integral_matrix(order, order)
    }

    /// `E(i, j) = integral of phi_i * phi_j''`.
    pub fn cross_matrix(&self) -> Result<Matrix> {
        self.integral_matrix(0, 2)
    }
}

pub(crate) fn symmetrize(m: &mut Matrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn push_panel(a: f64, b: f64, gx: &[f64], gw: &[f64], xs: &mut Vec<f64>, ws: &mut Vec<f64>) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    for (x, w) in gx.iter().zip(gw) {
        xs.push(mid + half * x);
        ws.push(half * w);
    }
}

fn fourier_row(period: f64, rank: usize, t: f64, deriv: usize, mut put: impl FnMut(usize, f64)) {
    let c0 = (1.0 / period).sqrt();
    let c1 = (2.0 / period).sqrt();
    put(0, if deriv == 0 { c0 } else { 0.0 });
    for k in 1..=(rank - 1) / 2 {
        let w = 2.0 * PI * k as f64 / period;
        let arg = w * t;
        let scale = c1 * w.powi(deriv as i32);
        // d^n/dx^n cos(wx) = w^n cos(wx + n pi/2), same shift for sin
        let shift = deriv as f64 * PI / 2.0;
        put(2 * k - 1, scale * (arg + shift).cos());
        put(2 * k, scale * (arg + shift).sin());
    }
}

/// Index of the knot span containing `x` (`knots[span] <= x < knots[span+1]`,
/// with the right endpoint assigned to the last nonempty span).
fn find_span(knots: &[f64], degree: usize, rank: usize, x: f64) -> usize {
    let n = rank - 1;
    if x >= knots[n + 1] {
        return n;
    }
    if x <= knots[degree] {
        return degree;
    }
    let (mut low, mut high) = (degree, n + 1);
    let mut mid = (low + high) / 2;
    while x < knots[mid] || x >= knots[mid + 1] {
        if x < knots[mid] {
            high = mid;
        } else {
            low = mid;
        }
        mid = (low + high) / 2;
    }
    mid
}

/// Nonzero basis functions on `span` and their derivatives up to `n`
/// (Piegl & Tiller, algorithm A2.3). Row `k` holds the k-th derivatives of
/// functions `span - degree ..= span`.
fn basis_derivatives(knots: &[f64], p: usize, span: usize, x: f64, n: usize) -> Vec<Vec<f64>> {
    let mut ndu = vec![vec![0.0; p + 1]; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut ders = vec![vec![0.0; p + 1]; n + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let mut a = vec![vec![0.0; p + 1]; 2];
    for r in 0..=p {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=n {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = p - k.min(p);
            if k > p {
                ders[k][r] = 0.0;
                continue;
            }
            if rk >= 0 {
                let rk = rk as usize;
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                d = a[s2][0] * ndu[rk][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                d += a[s2][j] * ndu[idx][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = p as f64;
    for k in 1..=n.min(p) {
        for v in ders[k].iter_mut() {
            *v *= factor;
        }
        factor *= (p - k) as f64;
    }
    ders
}

/// `n` equispaced points covering `[lo, hi]` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let h = (hi - lo) / (n - 1) as f64;
            (0..n).map(|i| if i + 1 == n { hi } else { lo + h * i as f64 }).collect()
        }
    }
}
