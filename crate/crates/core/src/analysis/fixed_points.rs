use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::core_maps::{delayed_triple_step, logistic_step, second_iterate_pair, DelayGains, MapParams};

/// Slack on |λ| ≤ 1 when labelling a point stable.
pub const STABILITY_TOL: f64 = 1e-9;
/// Step of the central-difference Jacobian.
const FD_STEP: f64 = 1e-6;
const GRID: usize = 33;
const GRID_HALF_WIDTH: f64 = 1.5;
const DEDUP_RADIUS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPoint {
    pub state: Vec<f64>,
    pub eigenvalues: Vec<Complex64>,
    pub stable: bool,
}

impl FixedPoint {
    fn new(state: Vec<f64>, eigenvalues: Vec<Complex64>) -> Self {
        let stable = eigenvalues.iter().all(|l| l.norm() <= 1.0 + STABILITY_TOL);
        Self {
            state,
            eigenvalues,
            stable,
        }
    }

    /// The eigenvalue of largest modulus.
    pub fn dominant(&self) -> Complex64 {
        self.eigenvalues
            .iter()
            .copied()
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointReport {
    pub points: Vec<FixedPoint>,
    /// Largest |F(x*) − x*| over the reported points, re-evaluated with the
    /// map itself rather than the solver.
    pub residual: f64,
    /// Number of solver starts and how many of them converged.
    pub starts: usize,
    pub converged: usize,
}

impl FixedPointReport {
    /// True when the solver found nothing (flagged rather than an error).
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Smallest dominant |λ| among the points (∞ if there are none): below
    /// one iff at least one stationary state is stable.
    pub fn margin(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.dominant().norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// The point that attains [`Self::margin`].
    pub fn least_unstable(&self) -> Option<&FixedPoint> {
        self.points
            .iter()
            .min_by(|a, b| a.dominant().norm().total_cmp(&b.dominant().norm()))
    }
}

fn quadratic_roots(b: f64, c: f64) -> [Complex64; 2] {
    // λ² + bλ + c
    let d = Complex64::new(b * b / 4.0 - c, 0.0).sqrt();
    let h = Complex64::new(-b / 2.0, 0.0);
    [h + d, h - d]
}

/// Roots of λ³ + aλ² + bλ + c: the largest real root from Cardano, polished
/// by Newton, then deflation to a quadratic for the remaining pair.
fn cubic_roots(a: f64, b: f64, c: f64) -> [Complex64; 3] {
    let f = |x: f64| ((x + a) * x + b) * x + c;
    let df = |x: f64| (3.0 * x + 2.0 * a) * x + b;
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let disc = Complex64::new(q * q / 4.0 + p * p * p / 27.0, 0.0).sqrt();
    let mut u = (Complex64::new(-q / 2.0, 0.0) + disc).cbrt();
    if u.norm() < 1e-300 {
        u = (Complex64::new(-q / 2.0, 0.0) - disc).cbrt();
    }
    let omega = Complex64::new(-0.5, 3f64.sqrt() / 2.0);
    let mut candidates = Vec::with_capacity(3);
    if u.norm() < 1e-300 {
        candidates.push(-a / 3.0);
    } else {
        let mut w = u;
        for _ in 0..3 {
            candidates.push((w - p / (3.0 * w)).re - a / 3.0);
            w *= omega;
        }
    }
    let polish = |mut x: f64| {
        for _ in 0..8 {
            let d = df(x);
            if d == 0.0 {
                break;
            }
            let next = x - f(x) / d;
            if !(f(next).abs() < f(x).abs()) {
                break;
            }
            x = next;
        }
        x
    };
    // the real projections of the complex candidates are not roots; keep the
    // best-fitting of those with the largest modulus
    let r = candidates
        .into_iter()
        .map(polish)
        .filter(|x| x.is_finite())
        .min_by(|x, y| {
            let fx = f(*x).abs() / (1.0 + x.abs().powi(3));
            let fy = f(*y).abs() / (1.0 + y.abs().powi(3));
            let key = |fv: f64| (fv > 1e-12) as u8;
            key(fx).cmp(&key(fy)).then(y.abs().total_cmp(&x.abs()))
        })
        .expect("a cubic has a real root");
    let b2 = a + r;
    let c2 = b + r * b2;
    let [s, t] = quadratic_roots(b2, c2);
    [Complex64::new(r, 0.0), s, t]
}

/// Eigenvalues sorted by descending modulus. Small matrices go through their
/// characteristic polynomial, which copes with defective (e.g. nilpotent)
/// Jacobians where QR iteration stalls.
pub fn eigenvalues(j: &DMatrix<f64>) -> Vec<Complex64> {
    let mut ev: Vec<Complex64> = match j.nrows() {
        0 => Vec::new(),
        1 => vec![Complex64::new(j[(0, 0)], 0.0)],
        2 => {
            let tr = j[(0, 0)] + j[(1, 1)];
            let det = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)];
            quadratic_roots(-tr, det).to_vec()
        }
        3 => {
            let m = |r: usize, c: usize| j[(r, c)];
            let tr = m(0, 0) + m(1, 1) + m(2, 2);
            let minors = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0) + m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0)
                + m(1, 1) * m(2, 2)
                - m(1, 2) * m(2, 1);
            let det = j.determinant();
            cubic_roots(-tr, minors, -det).to_vec()
        }
        _ => j.complex_eigenvalues().iter().copied().collect(),
    };
    ev.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(a.im.total_cmp(&b.im)));
    ev
}

/// Jacobian of `f` at `x` by central differences with step `h`.
pub fn central_difference_jacobian<F>(f: F, x: &[f64], h: f64) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = x.len();
    let mut j = DMatrix::zeros(n, n);
    let mut probe = x.to_vec();
    for c in 0..n {
        probe[c] = x[c] + h;
        let plus = f(&probe)?;
        probe[c] = x[c] - h;
        let minus = f(&probe)?;
        probe[c] = x[c];
        for r in 0..n {
            j[(r, c)] = (plus[r] - minus[r]) / (2.0 * h);
        }
    }
    Some(j)
}

/// Stationary states of the single transformed map: −(α−1)/α and 0, with
/// multipliers 2 − 2αx − α. For α = 0 only the origin exists.
pub fn fixed_points_single(p: MapParams) -> FixedPointReport {
    let a = p.alpha;
    let mut xs = Vec::new();
    if a != 0.0 {
        xs.push(-(a - 1.0) / a);
    }
    if xs.first() != Some(&0.0) {
        xs.push(0.0);
    }
    let mut residual = 0.0f64;
    let points = xs
        .into_iter()
        .map(|x| {
            let fx = logistic_step(x, p).unwrap_or(f64::INFINITY);
            residual = residual.max((fx - x).abs());
            FixedPoint::new(vec![x], vec![Complex64::new(2.0 - 2.0 * a * x - a, 0.0)])
        })
        .collect();
    FixedPointReport {
        points,
        residual,
        starts: 0,
        converged: 0,
    }
}

fn pair_map(p: MapParams, k2: f64) -> impl Fn(&[f64]) -> Option<Vec<f64>> {
    move |v: &[f64]| {
        second_iterate_pair(v[0], v[1], p, k2)
            .ok()
            .map(|(x, y)| vec![x, y])
    }
}

/// Analytic Jacobian of the second-iterate pair map (chain rule), used only
/// to drive Newton; reported eigenvalues come from finite differences.
fn pair_jacobian(x: f64, y: f64, p: MapParams, k2: f64) -> Option<([f64; 2], [f64; 4])> {
    let a = p.alpha;
    let d = |u: f64| 2.0 - 2.0 * a * u - a;
    let (x1, y1) = crate::core_maps::pair_step(x, y, p, k2).ok()?;
    let (x2, y2) = crate::core_maps::pair_step(x1, y1, p, k2).ok()?;
    let (a0, b0) = (d(x), d(y));
    let (a1, b1) = (d(x1), d(y1));
    // J1(v1)·J1(v0) with J1(u, w) = [[d(u), k2], [k2, d(w)]]
    let j = [
        a1 * a0 + k2 * k2,
        a1 * k2 + k2 * b0,
        k2 * a0 + b1 * k2,
        k2 * k2 + b1 * b0,
    ];
    Some(([x2, y2], j))
}

fn newton_pair(mut v: [f64; 2], p: MapParams, k2: f64) -> Option<([f64; 2], usize)> {
    let mut best = f64::INFINITY;
    let mut stalls = 0;
    let mut iters = 0;
    for it in 0..200 {
        iters = it;
        let (fv, j) = pair_jacobian(v[0], v[1], p, k2)?;
        let r = [fv[0] - v[0], fv[1] - v[1]];
        let rn = r[0].abs().max(r[1].abs());
        if !rn.is_finite() {
            return None;
        }
        if rn < best {
            best = rn;
            stalls = 0;
        } else {
            stalls += 1;
            if stalls > 8 {
                break;
            }
        }
        if rn == 0.0 {
            break;
        }
        let (m00, m01, m10, m11) = (j[0] - 1.0, j[1], j[2], j[3] - 1.0);
        let det = m00 * m11 - m01 * m10;
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let dx = -(m11 * r[0] - m01 * r[1]) / det;
        let dy = -(-m10 * r[0] + m00 * r[1]) / det;
        v = [v[0] + dx, v[1] + dy];
        if v[0].abs() > 10.0 || v[1].abs() > 10.0 {
            return None;
        }
        if dx.abs().max(dy.abs()) < 1e-16 {
            break;
        }
    }
    let (fx, fy) = second_iterate_pair(v[0], v[1], p, k2).ok()?;
    ((fx - v[0]).abs().max((fy - v[1]).abs()) < 1e-11).then_some((v, iters))
}

/// Real fixed points of the second-iterate pair map (period-2 states of two
/// symmetrically coupled maps) with their stability.
pub fn coupled_pair_stability(p: MapParams, k2: f64) -> FixedPointReport {
    let mut found: Vec<([f64; 2], (f64, usize))> = Vec::new();
    let mut converged = 0;
    let res = |v: [f64; 2]| {
        second_iterate_pair(v[0], v[1], p, k2)
            .map(|(fx, fy)| (fx - v[0]).abs().max((fy - v[1]).abs()))
            .unwrap_or(f64::INFINITY)
    };
    let step = 2.0 * GRID_HALF_WIDTH / (GRID - 1) as f64;
    for i in 0..GRID {
        for j in 0..GRID {
            let seed = [-GRID_HALF_WIDTH + i as f64 * step, -GRID_HALF_WIDTH + j as f64 * step];
            let Some((v, iters)) = newton_pair(seed, p, k2) else {
                continue;
            };
            converged += 1;
            // keep the best-converged representative of each cluster; near
            // degenerate roots residuals tie at zero, and a start that was
            // already a root wins
            let r = (res(v), iters);
            let dup = found
                .iter_mut()
                .find(|(u, _)| ((u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2)).sqrt() < DEDUP_RADIUS);
            match dup {
                Some(entry) if r < entry.1 => *entry = (v, r),
                Some(_) => {}
                None => found.push((v, r)),
            }
        }
    }
    let mut found: Vec<[f64; 2]> = found.into_iter().map(|(v, _)| v).collect();
    found.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let f = pair_map(p, k2);
    let mut residual = 0.0f64;
    let points = found
        .into_iter()
        .filter_map(|v| {
            let fv = f(&v)?;
            residual = residual.max((fv[0] - v[0]).abs().max((fv[1] - v[1]).abs()));
            let j = central_difference_jacobian(&f, &v, FD_STEP)?;
            Some(FixedPoint::new(v.to_vec(), eigenvalues(&j)))
        })
        .collect();
    FixedPointReport {
        points,
        residual,
        starts: GRID * GRID,
        converged,
    }
}

/// The 3×3 Jacobian of (x, y, z) ↦ (f(x) + k3·y + k4·z, x, y).
pub(crate) fn delayed_jacobian(x: f64, p: MapParams, d: &DelayGains) -> DMatrix<f64> {
    let a = p.alpha;
    DMatrix::from_row_slice(
        3,
        3,
        &[2.0 - 2.0 * x * a - a, d.k3, d.k4, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    )
}

/// The two constant solutions of the delayed map, 0 and (1−α+k3+k4)/α, as
/// points (x, x, x) of the three-variable system.
pub fn delayed_stability(p: MapParams, d: &DelayGains) -> FixedPointReport {
    let a = p.alpha;
    let mut xs = vec![0.0];
    if a != 0.0 {
        let xs1 = (1.0 - a + d.k3 + d.k4) / a;
        if xs1 != 0.0 {
            xs.insert(0, xs1);
        }
    }
    let mut residual = 0.0f64;
    let points = xs
        .into_iter()
        .map(|x| {
            let fx = delayed_triple_step(x, x, x, p, d).unwrap_or(f64::INFINITY);
            residual = residual.max((fx - x).abs());
            FixedPoint::new(vec![x; 3], eigenvalues(&delayed_jacobian(x, p, d)))
        })
        .collect();
    FixedPointReport {
        points,
        residual,
        starts: 0,
        converged: 0,
    }
}
