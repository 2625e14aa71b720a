//! Small numerical toolbox: scalar search, root bracketing, Nelder-Mead,
//! adaptive Gauss-Kronrod quadrature and a binomial agreement test.

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Result of a scalar minimisation.
#[derive(Debug, Clone, Copy)]
pub struct ScalarMin {
    pub x: f64,
    pub fx: f64,
    pub evaluations: usize,
}

/// Golden-section search for a minimum of `f` on `[a, b]`.
///
/// Stops when the bracket is narrower than `tol` or after `max_iter` steps.
pub fn golden_section_min<F>(mut f: F, mut a: f64, mut b: f64, tol: f64, max_iter: usize) -> ScalarMin
where
    F: FnMut(f64) -> f64,
{
    if a > b {
        std::mem::swap(&mut a, &mut b);
    }
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut evaluations = 2;
    let mut iter = 0;
    while (b - a).abs() > tol && iter < max_iter {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        evaluations += 1;
        iter += 1;
    }
    if fc <= fd {
        ScalarMin { x: c, fx: fc, evaluations }
    } else {
        ScalarMin { x: d, fx: fd, evaluations }
    }
}

/// Bisection root finder. Requires `f(a)` and `f(b)` of opposite sign (or zero).
pub fn bisect_root<F>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> Option<f64>
where
    F: FnMut(f64) -> f64,
{
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if !(fa.is_finite() && fb.is_finite()) || fa.signum() == fb.signum() {
        return None;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (b - a).abs() <= tol || m == a || m == b {
            return Some(m);
        }
        let fm = f(m);
        if fm == 0.0 {
            return Some(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_evaluations: usize,
    /// Relative spread of function values across the simplex at convergence.
    pub f_tol: f64,
    /// Largest vertex distance from the best vertex at convergence.
    pub x_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evaluations: 4000,
            f_tol: 1e-12,
            x_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Nelder-Mead simplex minimisation with dimension-adaptive coefficients.
///
/// The best vertex value never increases, so the returned `fx` is always
/// `<= f(x0)`. Non-finite objective values are treated as `+inf`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], steps: &[f64], opts: NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut eval = |x: &[f64], count: &mut usize| {
        *count += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut evaluations = 0usize;
    if n == 0 {
        let fx = eval(x0, &mut evaluations);
        return NelderMeadResult { x: Vec::new(), fx, evaluations, converged: true };
    }
    let nf = n as f64;
    let alpha = 1.0;
    let beta = 1.0 + 2.0 / nf;
    let gamma = 0.75 - 1.0 / (2.0 * nf);
    let delta = 1.0 - 1.0 / nf;

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if steps[i] != 0.0 { steps[i] } else { 1e-3 };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evaluations)).collect();
    let mut order: Vec<usize> = (0..=n).collect();
    let mut converged = false;

    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];

    while evaluations < opts.max_evaluations {
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        let f_spread = (values[worst] - values[best]).abs();
        let f_scale = values[best].abs().max(1e-300);
        let x_spread = simplex
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[best])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if f_spread <= opts.f_tol * f_scale && x_spread <= opts.x_tol {
            converged = true;
            break;
        }

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &idx in &order[..n] {
            for (c, v) in centroid.iter_mut().zip(&simplex[idx]) {
                *c += v / nf;
            }
        }
        for i in 0..n {
            trial[i] = centroid[i] + alpha * (centroid[i] - simplex[worst][i]);
        }
        let f_reflect = eval(&trial, &mut evaluations);
        if f_reflect < values[best] {
            for i in 0..n {
                trial2[i] = centroid[i] + beta * (trial[i] - centroid[i]);
            }
            let f_expand = eval(&trial2, &mut evaluations);
            if f_expand < f_reflect {
                simplex[worst].copy_from_slice(&trial2);
                values[worst] = f_expand;
            } else {
                simplex[worst].copy_from_slice(&trial);
                values[worst] = f_reflect;
            }
            continue;
        }
        if f_reflect < values[second_worst] {
            simplex[worst].copy_from_slice(&trial);
            values[worst] = f_reflect;
            continue;
        }
        let outside = f_reflect < values[worst];
        for i in 0..n {
            trial2[i] = if outside {
                centroid[i] + gamma * (trial[i] - centroid[i])
            } else {
                centroid[i] - gamma * (centroid[i] - simplex[worst][i])
            };
        }
        let f_contract = eval(&trial2, &mut evaluations);
        let accept = if outside { f_contract <= f_reflect } else { f_contract < values[worst] };
        if accept {
            simplex[worst].copy_from_slice(&trial2);
            values[worst] = f_contract;
            continue;
        }
        // shrink toward the best vertex
        let best_vertex = simplex[best].clone();
        for &idx in &order[1..] {
            for (v, b) in simplex[idx].iter_mut().zip(&best_vertex) {
                *v = b + delta * (*v - b);
            }
            values[idx] = eval(&simplex[idx], &mut evaluations);
        }
    }

    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    NelderMeadResult {
        x: simplex[best].clone(),
        fx: values[best],
        evaluations,
        converged,
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(centre - dx) + f(centre + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    let result = kronrod * half;
    let err = ((kronrod - gauss) * half).abs();
    (result, err)
}

#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

/// Globally adaptive 15-point Gauss-Kronrod integration of `f` over `[a, b]`.
pub fn integrate<F>(mut f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Quadrature
where
    F: FnMut(f64) -> f64,
{
    if a == b {
        return Quadrature { value: 0.0, error: 0.0, intervals: 0 };
    }
    const MAX_INTERVALS: usize = 4000;
    let (v0, e0) = gk15(&mut f, a, b);
    let mut intervals = vec![(a, b, v0, e0)];
    let mut total = v0;
    let mut err = e0;
    while err > abs_tol.max(rel_tol * total.abs()) && intervals.len() < MAX_INTERVALS {
        let (worst, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, v, e) = intervals.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            intervals.push((lo, hi, v, 0.0));
            err -= e;
            continue;
        }
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        total += v1 + v2 - v;
        err += e1 + e2 - e;
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
    // re-sum to shed accumulated rounding from the running updates
    let value = intervals.iter().map(|iv| iv.2).sum();
    let error = intervals.iter().map(|iv| iv.3).sum();
    Quadrature { value, error, intervals: intervals.len() }
}

/// Two-sided tail probability matching a 3 sigma normal deviation.
pub const THREE_SIGMA_TAIL: f64 = 0.00135;

/// Whether `observed` successes out of `trials` are compatible with success
/// probability `p` at the 3 sigma level.
///
/// The normal band `|obs - np| <= 3 sqrt(np(1-p))` decides when it accepts;
/// otherwise both exact binomial tails must stay above [`THREE_SIGMA_TAIL`],
/// which keeps small expected counts from failing on a single event.
pub fn binomial_within_3sigma(observed: u64, trials: u64, p: f64) -> bool {
    use statrs::distribution::{Binomial, DiscreteCDF};

    if observed > trials || !(0.0..=1.0).contains(&p) {
        return false;
    }
    let n = trials as f64;
    let sd = (n * p * (1.0 - p)).sqrt();
    if (observed as f64 - n * p).abs() <= 3.0 * sd {
        return true;
    }
    let Ok(b) = Binomial::new(p, trials) else {
        return false;
    };
    let lower = b.cdf(observed);
    let upper = if observed == 0 { 1.0 } else { b.sf(observed - 1) };
    lower >= THREE_SIGMA_TAIL && upper >= THREE_SIGMA_TAIL
}
