use crate::error::{Error, Result};
use crate::numeric::{bisect_root, golden_section_min};

use super::voigt::VoigtComponent;

fn check_ordered(components: &[VoigtComponent]) -> Result<()> {
    if components.len() < 2 {
        return Err(Error::InvalidParameter("need at least two components for boundaries".into()));
    }
    for (i, w) in components.windows(2).enumerate() {
        if !(w[0].center < w[1].center) {
            return Err(Error::InvalidParameter(format!(
                "component centers must be strictly ascending (components {i} and {})",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Cut between each adjacent pair where the weighted densities are equal,
/// searched between the two centers.
pub fn optimize_boundaries(components: &[VoigtComponent]) -> Result<Vec<f64>> {
    check_ordered(components)?;
    components
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (lo, hi) = (w[0], w[1]);
            let g = |x: f64| lo.weight * lo.density(x) - hi.weight * hi.density(x);
            if !(g(lo.center) > 0.0 && g(hi.center) < 0.0) {
                return Err(Error::DegenerateOverlap { lower: i, upper: i + 1 });
            }
            let tol = 1e-9 * (hi.center - lo.center).max(1.0);
            bisect_root(g, lo.center, hi.center, tol).ok_or(Error::DegenerateOverlap { lower: i, upper: i + 1 })
        })
        .collect()
}

/// Pairwise misassigned probability `w_lo P_lo(X > b) + w_hi P_hi(X <= b)`.
pub fn pair_misassignment(lo: &VoigtComponent, hi: &VoigtComponent, b: f64) -> f64 {
    lo.weight * lo.sf(b) + hi.weight * hi.cdf(b)
}

/// Boundaries minimising each pair's misassignment over `[c_k, c_k+1]`.
///
/// Unlike [`optimize_boundaries`] this always succeeds; for pairs whose
/// densities never cross the minimum sits at a center. Coinciding cuts are
/// separated by a negligible step so the list stays strictly ascending.
pub fn misassignment_boundaries(components: &[VoigtComponent]) -> Result<Vec<f64>> {
    check_ordered(components)?;
    let mut cuts: Vec<f64> = Vec::with_capacity(components.len() - 1);
    for w in components.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let span = hi.center - lo.center;
        let m = golden_section_min(|b| pair_misassignment(&lo, &hi, b), lo.center, hi.center, 1e-7 * span, 200);
        let mut best = m.x;
        for end in [lo.center, hi.center] {
            if pair_misassignment(&lo, &hi, end) < pair_misassignment(&lo, &hi, best) {
                best = end;
            }
        }
        if let Some(&prev) = cuts.last() {
            if best <= prev {
                best = prev + 1e-6 * span.max(1e-3);
            }
        }
        cuts.push(best);
    }
    Ok(cuts)
}

/// Row-stochastic matrix: entry `(i, j)` is the probability that component `i`
/// lands in class `j`. Class 0 is `(-inf, b0]`, class `j` is `(b_{j-1}, b_j]`
/// and the last class is `(b_last, inf)`.
pub fn crosstalk_matrix(components: &[VoigtComponent], boundaries: &[f64]) -> Result<Vec<Vec<f64>>> {
    if components.is_empty() {
        return Err(Error::InvalidParameter("no components".into()));
    }
    if boundaries.len() + 1 != components.len() {
        return Err(Error::InvalidParameter(format!(
            "{} components need {} boundaries, got {}",
            components.len(),
            components.len() - 1,
            boundaries.len()
        )));
    }
    if boundaries.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("boundaries must be strictly ascending".into()));
    }
    let k = components.len();
    Ok(components
        .iter()
        .map(|c| {
            let mut row: Vec<f64> = (0..k)
                .map(|j| {
                    let a = if j == 0 { f64::NEG_INFINITY } else { boundaries[j - 1] };
                    let b = if j + 1 == k { f64::INFINITY } else { boundaries[j] };
                    match (a.is_finite(), b.is_finite()) {
                        (false, false) => 1.0,
                        (false, true) => c.cdf(b),
                        (true, false) => c.sf(a),
                        (true, true) => c.mass(a, b),
                    }
                })
                .collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            row
        })
        .collect())
}

/// Sum of all off-diagonal entries.
pub fn total_crosstalk(matrix: &[Vec<f64>]) -> f64 {
    matrix
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum::<f64>())
        .sum()
}

/// `C[i][i+1] + C[i+1][i]`: confusion between classes `i` and `i + 1`.
pub fn adjacent_crosstalk(matrix: &[Vec<f64>], i: usize) -> f64 {
    matrix[i][i + 1] + matrix[i + 1][i]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::voigt::sample_mixture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vc(center: f64, sigma: f64, gamma: f64, weight: f64) -> VoigtComponent {
        VoigtComponent::new(center, sigma, gamma, weight).unwrap()
    }

    #[test]
    fn symmetric_pair_cuts_at_midpoint() {
        let b = optimize_boundaries(&[vc(0.0, 2.0, 0.5, 0.5), vc(10.0, 2.0, 0.5, 0.5)]).unwrap();
        assert!((b[0] - 5.0).abs() < 1e-7);
    }

    #[test]
    fn heavier_component_pushes_cut_away() {
        let b = optimize_boundaries(&[vc(0.0, 2.0, 0.0, 0.9), vc(10.0, 2.0, 0.0, 0.1)]).unwrap();
        assert!(b[0] > 5.0);
        let b = optimize_boundaries(&[vc(0.0, 2.0, 0.0, 0.1), vc(10.0, 2.0, 0.0, 0.9)]).unwrap();
        assert!(b[0] < 5.0);
    }

    #[test]
    fn matches_grid_minimum_of_misassignment() {
        let lo = vc(0.0, 2.5, 0.7, 0.3);
        let hi = vc(9.0, 1.5, 0.2, 0.7);
        let b = optimize_boundaries(&[lo, hi]).unwrap()[0];
        let step = 1e-3;
        let grid_best = (0..=9000)
            .map(|i| i as f64 * step)
            .min_by(|&x, &y| pair_misassignment(&lo, &hi, x).total_cmp(&pair_misassignment(&lo, &hi, y)))
            .unwrap();
        assert!((b - grid_best).abs() <= step, "{b} vs {grid_best}");
    }

    #[test]
    fn degenerate_overlap() {
        let r = optimize_boundaries(&[vc(0.0, 10.0, 0.0, 0.9), vc(0.5, 10.0, 0.0, 0.1)]);
        assert!(matches!(r, Err(Error::DegenerateOverlap { lower: 0, upper: 1 })));
        let b = misassignment_boundaries(&[vc(0.0, 10.0, 0.0, 0.9), vc(0.5, 10.0, 0.0, 0.1)]).unwrap();
        assert!((b[0] - 0.5).abs() < 1e-6);
        let b = misassignment_boundaries(&[
            vc(0.0, 10.0, 0.0, 0.6),
            vc(0.5, 10.0, 0.0, 0.3),
            vc(1.0, 10.0, 0.0, 0.1),
        ])
        .unwrap();
        assert!(b[0] < b[1]);
    }

    #[test]
    fn unordered_rejected() {
        assert!(optimize_boundaries(&[vc(5.0, 1.0, 0.0, 0.5), vc(1.0, 1.0, 0.0, 0.5)]).is_err());
        assert!(optimize_boundaries(&[vc(5.0, 1.0, 0.0, 0.5)]).is_err());
    }

    #[test]
    fn far_apart_is_identity() {
        // 100 (sigma + gamma) apart; a Lorentzian tail alone would leave
        // gamma / (50 pi (sigma + gamma)) in each neighbour, so gamma stays small
        let comps: Vec<_> = (0..4).map(|i| vc(i as f64 * 200.0, 2.0, 1e-4, 0.25)).collect();
        let b = optimize_boundaries(&comps).unwrap();
        let m = crosstalk_matrix(&comps, &b).unwrap();
        for (i, row) in m.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-6, "({i},{j}) = {v}");
            }
        }
    }

    #[test]
    fn symmetric_pair_matrix() {
        let comps = [vc(0.0, 2.0, 0.5, 0.5), vc(6.0, 2.0, 0.5, 0.5)];
        let b = optimize_boundaries(&comps).unwrap();
        let m = crosstalk_matrix(&comps, &b).unwrap();
        let q = comps[0].sf(3.0);
        assert!((m[0][1] - q).abs() < 1e-9 && (m[1][0] - q).abs() < 1e-9);
        assert!((m[0][0] - (1.0 - q)).abs() < 1e-9);
    }

    #[test]
    fn rows_sum_to_one_and_shrink_with_separation() {
        let mut last = f64::INFINITY;
        for scale in [1.0, 1.5, 2.0, 3.0, 5.0] {
            let comps: Vec<_> = (0..4).map(|i| vc(i as f64 * 4.0 * scale, 1.5, 0.4, 0.25)).collect();
            let b = optimize_boundaries(&comps).unwrap();
            let m = crosstalk_matrix(&comps, &b).unwrap();
            for row in &m {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            let t = total_crosstalk(&m);
            assert!(t < last, "scale {scale}: {t} !< {last}");
            last = t;
        }
    }

    #[test]
    fn agrees_with_monte_carlo_classification() {
        let comps = [vc(0.0, 1.5, 0.3, 0.3), vc(5.0, 1.5, 0.3, 0.45), vc(10.0, 1.5, 0.3, 0.25)];
        let b = optimize_boundaries(&comps).unwrap();
        let m = crosstalk_matrix(&comps, &b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let draws = sample_mixture(&comps, 200_000, &mut rng);
        let mut counts = [[0u64; 3]; 3];
        for (k, x) in draws {
            let j = b.iter().take_while(|&&c| x > c).count();
            counts[k][j] += 1;
        }
        for i in 0..3 {
            let n: u64 = counts[i].iter().sum();
            for j in 0..3 {
                let p = m[i][j];
                let sd = (n as f64 * p * (1.0 - p)).sqrt().max(1.0);
                assert!((counts[i][j] as f64 - n as f64 * p).abs() <= 4.0 * sd, "({i},{j})");
            }
        }
    }
}
