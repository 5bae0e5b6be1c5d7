//! Label and sign matching across posterior draws.
//!
//! MCMC draws of the factor blocks are only identified up to column
//! permutations and tensor-preserving sign flips. A pivot draw (median
//! largest singular value of the temporal block) anchors the alignment:
//! every draw's temporal columns are greedily matched to the pivot's ±
//! columns, the response and predictor blocks then flip toward the nearer
//! sign, and the temporal block flips exactly when the two indicators
//! disagree. The triple product of per-column flip indicators is therefore
//! always +1 and the composed tensor never changes.
//!
//! An optional final shrink removes columns whose rank-one components stay
//! below the activity threshold on average across the aligned draws.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rank::AdaptConfig;
use crate::tensor::{cp_components, CpTensor3};

/// Posterior draws of the factor triple with common shapes.
#[derive(Debug, Clone)]
pub struct DrawCollection {
    pub draws: Vec<CpTensor3>,
    /// Iteration index of each retained draw.
    pub iterations: Vec<usize>,
    /// Seed of the chain that produced the draws.
    pub seed: u64,
}

impl DrawCollection {
    pub fn new(draws: Vec<CpTensor3>, iterations: Vec<usize>, seed: u64) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::invalid("empty draw collection"));
        }
        let (n, p, r) = (
            draws[0].n_series(),
            draws[0].lag_order(),
            draws[0].rank(),
        );
        if draws
            .iter()
            .any(|d| d.n_series() != n || d.lag_order() != p || d.rank() != r)
        {
            return Err(Error::invalid("draws disagree on (N, P, R)"));
        }
        if iterations.len() != draws.len() {
            return Err(Error::invalid("iteration metadata length mismatch"));
        }
        Ok(Self {
            draws,
            iterations,
            seed,
        })
    }

    pub fn rank(&self) -> usize {
        self.draws[0].rank()
    }
}

/// Largest singular value of the temporal block.
pub fn temporal_condition_number(b3: &DMatrix<f64>) -> f64 {
    b3.clone().svd(false, false).singular_values.max()
}

/// Index of the draw whose κ = σ_max(B3) is the (lower) median.
pub fn select_pivot(collection: &DrawCollection) -> Result<usize> {
    if collection.draws.is_empty() {
        return Err(Error::invalid("empty draw collection"));
    }
    let mut kappas: Vec<(f64, usize)> = collection
        .draws
        .iter()
        .enumerate()
        .map(|(i, d)| (temporal_condition_number(&d.b3), i))
        .collect();
    kappas.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(kappas[(kappas.len() - 1) / 2].1)
}

fn column_distance_sq(a: &DMatrix<f64>, ca: usize, b: &DMatrix<f64>, cb: usize, negate: bool) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        let pb = if negate { -b[(i, cb)] } else { b[(i, cb)] };
        let d = a[(i, ca)] - pb;
        acc += d * d;
    }
    acc
}

/// Greedy label assignment of the draw's temporal columns onto the pivot's
/// ± columns. Returns per-source-column (target index, matched-to-negated).
/// Ties break toward the lowest row then the lowest column index.
pub fn greedy_label_assignment(
    b3: &DMatrix<f64>,
    pivot_b3: &DMatrix<f64>,
) -> Vec<(usize, bool)> {
    let r = b3.ncols();
    let mut theta = DMatrix::zeros(r, 2 * r);
    for r1 in 0..r {
        for r2 in 0..r {
            theta[(r1, r2)] = column_distance_sq(b3, r1, pivot_b3, r2, false);
            theta[(r1, r2 + r)] = column_distance_sq(b3, r1, pivot_b3, r2, true);
        }
    }
    let mut assignment = vec![(usize::MAX, false); r];
    for _ in 0..r {
        let mut best = (f64::INFINITY, 0usize, 0usize);
        for r1 in 0..r {
            for r2 in 0..2 * r {
                if theta[(r1, r2)] < best.0 {
                    best = (theta[(r1, r2)], r1, r2);
                }
            }
        }
        let (_, r1, r2) = best;
        let target = r2 % r;
        assignment[r1] = (target, r2 >= r);
        for c in 0..2 * r {
            theta[(r1, c)] = f64::INFINITY;
        }
        for row in 0..r {
            theta[(row, target)] = f64::INFINITY;
            theta[(row, target + r)] = f64::INFINITY;
        }
    }
    assignment
}

/// Align one draw to the pivot: permute columns by the greedy temporal-block
/// assignment, flip the response and predictor columns toward the nearer
/// pivot sign, and flip the temporal column exactly when those two
/// indicators disagree (triple product +1, tensor unchanged).
pub fn match_draw(draw: &CpTensor3, pivot: &CpTensor3) -> CpTensor3 {
    let r = draw.rank();
    let assignment = greedy_label_assignment(&draw.b3, &pivot.b3);
    let (n, p) = (draw.n_series(), draw.lag_order());
    let mut b1 = DMatrix::zeros(n, r);
    let mut b2 = DMatrix::zeros(n, r);
    let mut b3 = DMatrix::zeros(p, r);
    for (src, &(dst, _)) in assignment.iter().enumerate() {
        for i in 0..n {
            b1[(i, dst)] = draw.b1[(i, src)];
            b2[(i, dst)] = draw.b2[(i, src)];
        }
        for i in 0..p {
            b3[(i, dst)] = draw.b3[(i, src)];
        }
    }
    for rr in 0..r {
        let ind1 = sign_match(&mut b1, rr, &pivot.b1);
        let ind2 = sign_match(&mut b2, rr, &pivot.b2);
        if ind1 * ind2 < 0 {
            for i in 0..p {
                b3[(i, rr)] = -b3[(i, rr)];
            }
        }
    }
    CpTensor3::new(b1, b2, b3).expect("aligned blocks keep their shapes")
}

/// Flip column `col` toward the nearer of ±pivot; returns +1 (kept) or −1
/// (flipped). Ties keep the current signs.
fn sign_match(block: &mut DMatrix<f64>, col: usize, pivot: &DMatrix<f64>) -> i32 {
    let d_keep = column_distance_sq(block, col, pivot, col, false);
    let d_flip = column_distance_sq(block, col, pivot, col, true);
    if d_keep <= d_flip {
        1
    } else {
        for i in 0..block.nrows() {
            block[(i, col)] = -block[(i, col)];
        }
        -1
    }
}

/// Align every draw to the pivot (chosen by [`select_pivot`]); returns the
/// pivot index. Draws align independently, so the pass runs in parallel.
pub fn align_collection(collection: &mut DrawCollection) -> Result<usize> {
    let pivot_idx = select_pivot(collection)?;
    let pivot = collection.draws[pivot_idx].clone();
    collection
        .draws
        .par_iter_mut()
        .for_each(|draw| *draw = match_draw(draw, &pivot));
    Ok(pivot_idx)
}

/// Remove columns whose average small-magnitude share across draws exceeds
/// the activity threshold; returns the reduced collection and the final rank.
pub fn final_rank_shrink(
    collection: &DrawCollection,
    cfg: &AdaptConfig,
) -> Result<(DrawCollection, usize)> {
    let r = collection.rank();
    let mut avg = vec![0.0f64; r];
    for draw in &collection.draws {
        for (rr, comp) in cp_components(draw).into_iter().enumerate() {
            avg[rr] += comp.small_magnitude_fraction(cfg.mag_threshold);
        }
    }
    let n_draws = collection.draws.len() as f64;
    let to_drop: Vec<usize> = (0..r)
        .filter(|&rr| avg[rr] / n_draws > cfg.prop_threshold)
        .collect();
    if to_drop.len() == r {
        // Keep the most active column rather than emptying the model.
        let keep = (0..r)
            .min_by(|&a, &b| avg[a].partial_cmp(&avg[b]).unwrap())
            .unwrap();
        let drop: Vec<usize> = (0..r).filter(|&c| c != keep).collect();
        return shrink_to(collection, &drop);
    }
    shrink_to(collection, &to_drop)
}

fn shrink_to(collection: &DrawCollection, drop: &[usize]) -> Result<(DrawCollection, usize)> {
    if drop.is_empty() {
        return Ok((collection.clone(), collection.rank()));
    }
    let draws: Result<Vec<CpTensor3>> = collection
        .draws
        .iter()
        .map(|d| d.drop_columns(drop))
        .collect();
    let draws = draws?;
    let final_rank = draws[0].rank();
    Ok((
        DrawCollection {
            draws,
            iterations: collection.iterations.clone(),
            seed: collection.seed,
        },
        final_rank,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::cp_compose;
    use nalgebra::DMatrix;
    use rand::Rng;

    fn random_cp(n: usize, p: usize, r: usize, rng: &mut impl Rng) -> CpTensor3 {
        CpTensor3::new(
            DMatrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0)),
            DMatrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0)),
            DMatrix::from_fn(p, r, |_, _| rng.random_range(-1.0..1.0)),
        )
        .unwrap()
    }

    /// Apply a column permutation and a tensor-preserving sign pattern
    /// (s1·s2·s3 = +1 per column).
    fn scramble(cp: &CpTensor3, perm: &[usize], s1: &[i32], s2: &[i32]) -> CpTensor3 {
        let r = cp.rank();
        let (n, p) = (cp.n_series(), cp.lag_order());
        let mut b1 = DMatrix::zeros(n, r);
        let mut b2 = DMatrix::zeros(n, r);
        let mut b3 = DMatrix::zeros(p, r);
        for dst in 0..r {
            let src = perm[dst];
            let s3 = s1[dst] * s2[dst];
            for i in 0..n {
                b1[(i, dst)] = s1[dst] as f64 * cp.b1[(i, src)];
                b2[(i, dst)] = s2[dst] as f64 * cp.b2[(i, src)];
            }
            for i in 0..p {
                b3[(i, dst)] = s3 as f64 * cp.b3[(i, src)];
            }
        }
        CpTensor3::new(b1, b2, b3).unwrap()
    }

    #[test]
    fn pivot_constant_kappa_takes_lower_median() {
        let mut rng = crate::rng_from_seed(401);
        let mut draws = Vec::new();
        for _ in 0..4 {
            let mut cp = random_cp(3, 2, 2, &mut rng);
            cp.b3 = DMatrix::identity(2, 2);
            draws.push(cp);
        }
        let coll = DrawCollection::new(draws, vec![0, 1, 2, 3], 7).unwrap();
        assert_eq!(select_pivot(&coll).unwrap(), 1); // (4-1)/2 with equal κ
    }

    #[test]
    fn pivot_median_of_three() {
        let mut rng = crate::rng_from_seed(403);
        let mut draws = Vec::new();
        for scale in [1.0, 5.0, 100.0] {
            let mut cp = random_cp(3, 2, 2, &mut rng);
            cp.b3 = DMatrix::identity(2, 2) * scale;
            draws.push(cp);
        }
        let coll = DrawCollection::new(draws, vec![0, 1, 2], 7).unwrap();
        assert_eq!(select_pivot(&coll).unwrap(), 1);
    }

    #[test]
    fn kappa_matches_power_iteration_oracle() {
        let mut rng = crate::rng_from_seed(409);
        for _ in 0..20 {
            let b3 = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-2.0..2.0));
            let kappa = temporal_condition_number(&b3);
            // Power iteration on B3'B3.
            let gram = b3.transpose() * &b3;
            let mut v = nalgebra::DVector::from_element(3, 1.0).normalize();
            for _ in 0..500 {
                v = (&gram * v).normalize();
            }
            let sigma_max = (v.transpose() * &gram * &v)[(0, 0)].sqrt();
            assert!((kappa - sigma_max).abs() < 1e-8, "{kappa} vs {sigma_max}");
        }
    }

    #[test]
    fn match_identity_is_bitwise_noop() {
        let mut rng = crate::rng_from_seed(419);
        let cp = random_cp(4, 3, 3, &mut rng);
        let aligned = match_draw(&cp, &cp);
        assert_eq!(aligned, cp);
    }

    #[test]
    fn match_recovers_constructed_scramble() {
        // Columns swapped and column 0 negated on the response and temporal
        // blocks (a tensor-preserving pattern): recovered exactly.
        let mut rng = crate::rng_from_seed(421);
        let pivot = random_cp(4, 3, 2, &mut rng);
        let draw = scramble(&pivot, &[1, 0], &[-1, 1], &[1, 1]);
        let aligned = match_draw(&draw, &pivot);
        assert_eq!(aligned, pivot);
    }

    #[test]
    fn all_three_negated_preserves_tensor_not_layout() {
        // Negating a column on all three blocks flips that component's sign;
        // alignment must keep the (flipped) tensor rather than force the
        // pivot's layout.
        let mut rng = crate::rng_from_seed(423);
        let pivot = random_cp(3, 2, 2, &mut rng);
        let mut draw = pivot.clone();
        for i in 0..3 {
            draw.b1[(i, 0)] = -draw.b1[(i, 0)];
            draw.b2[(i, 0)] = -draw.b2[(i, 0)];
        }
        for i in 0..2 {
            draw.b3[(i, 0)] = -draw.b3[(i, 0)];
        }
        let before = cp_compose(&draw);
        let aligned = match_draw(&draw, &pivot);
        assert!(before.max_abs_diff(&cp_compose(&aligned)) <= 1e-12);
        // Response and predictor ends up sign-matched to the pivot.
        assert_eq!(aligned.b1, pivot.b1);
        assert_eq!(aligned.b2, pivot.b2);
    }

    #[test]
    fn randomized_scrambles_recover_exactly() {
        let mut rng = crate::rng_from_seed(431);
        for trial in 0..500 {
            let r = rng.random_range(1..=5);
            let pivot = random_cp(4, 3, r, &mut rng);
            let mut perm: Vec<usize> = (0..r).collect();
            for i in (1..r).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            let s1: Vec<i32> = (0..r).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
            let s2: Vec<i32> = (0..r).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
            let draw = scramble(&pivot, &perm, &s1, &s2);
            let aligned = match_draw(&draw, &pivot);
            assert_eq!(aligned, pivot, "trial {trial} failed");
        }
    }

    #[test]
    fn greedy_matches_exhaustive_oracle_for_small_ranks() {
        // Exhaustive minimum of the total matching distance over all
        // R!·2^R alignments, compared on constructed recovery cases.
        let mut rng = crate::rng_from_seed(433);
        for r in 1..=4usize {
            for _ in 0..25 {
                let pivot = random_cp(3, 3, r, &mut rng);
                let mut perm: Vec<usize> = (0..r).collect();
                for i in (1..r).rev() {
                    let j = rng.random_range(0..=i);
                    perm.swap(i, j);
                }
                let s1: Vec<i32> =
                    (0..r).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
                let s2: Vec<i32> =
                    (0..r).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
                let draw = scramble(&pivot, &perm, &s1, &s2);

                let assignment = greedy_label_assignment(&draw.b3, &pivot.b3);
                let greedy_cost: f64 = assignment
                    .iter()
                    .enumerate()
                    .map(|(src, &(dst, neg))| {
                        column_distance_sq(&draw.b3, src, &pivot.b3, dst, neg)
                    })
                    .sum();

                let mut best = f64::INFINITY;
                let perms = permutations(r);
                for pm in &perms {
                    for mask in 0..(1usize << r) {
                        let cost: f64 = (0..r)
                            .map(|src| {
                                column_distance_sq(
                                    &draw.b3,
                                    src,
                                    &pivot.b3,
                                    pm[src],
                                    mask & (1 << src) != 0,
                                )
                            })
                            .sum();
                        best = best.min(cost);
                    }
                }
                assert!(
                    (greedy_cost - best).abs() <= 1e-10,
                    "greedy {greedy_cost} vs optimum {best} at r={r}"
                );
            }
        }
    }

    fn permutations(r: usize) -> Vec<Vec<usize>> {
        if r == 1 {
            return vec![vec![0]];
        }
        let mut out = Vec::new();
        for sub in permutations(r - 1) {
            for pos in 0..=sub.len() {
                let mut next = sub.clone();
                next.insert(pos, r - 1);
                out.push(next);
            }
        }
        out
    }

    #[test]
    fn idempotent_alignment() {
        let mut rng = crate::rng_from_seed(439);
        let pivot = random_cp(4, 3, 3, &mut rng);
        let draw = random_cp(4, 3, 3, &mut rng);
        let once = match_draw(&draw, &pivot);
        let twice = match_draw(&once, &pivot);
        assert_eq!(once, twice);
    }

    #[test]
    fn tensor_invariance_under_alignment() {
        let mut rng = crate::rng_from_seed(443);
        for _ in 0..100 {
            let pivot = random_cp(4, 3, 3, &mut rng);
            let draw = random_cp(4, 3, 3, &mut rng);
            let aligned = match_draw(&draw, &pivot);
            assert!(cp_compose(&draw).max_abs_diff(&cp_compose(&aligned)) <= 1e-12);
        }
    }

    #[test]
    fn final_shrink_keeps_active_columns() {
        let mut rng = crate::rng_from_seed(449);
        let mut draws = Vec::new();
        for _ in 0..12 {
            let mut cp = random_cp(3, 2, 3, &mut rng);
            // Strengthen active columns well above the cutoff.
            for block in [&mut cp.b1, &mut cp.b2] {
                for i in 0..3 {
                    for r in [0usize, 2] {
                        block[(i, r)] += block[(i, r)].signum().max(0.5);
                    }
                }
            }
            // Column 1 nearly dead in every draw.
            for i in 0..3 {
                cp.b1[(i, 1)] = 1e-6;
                cp.b2[(i, 1)] = 1e-6;
            }
            draws.push(cp);
        }
        let coll = DrawCollection::new(draws, (0..12).collect(), 3).unwrap();
        let cfg = AdaptConfig::simulation(3, 100);
        let (reduced, final_rank) = final_rank_shrink(&coll, &cfg).unwrap();
        assert_eq!(final_rank, 2);
        assert!(reduced.draws.iter().all(|d| d.rank() == 2));
    }

    #[test]
    fn final_shrink_no_change_when_all_active() {
        let mut rng = crate::rng_from_seed(457);
        let mut draws = Vec::new();
        for _ in 0..5 {
            let mut cp = random_cp(3, 2, 2, &mut rng);
            for block in [&mut cp.b1, &mut cp.b2] {
                block.iter_mut().for_each(|v| *v += v.signum() * 0.6);
            }
            cp.b3.iter_mut().for_each(|v| *v += v.signum() * 0.6);
            draws.push(cp);
        }
        let coll = DrawCollection::new(draws.clone(), (0..5).collect(), 3).unwrap();
        let cfg = AdaptConfig::simulation(3, 100);
        let (reduced, final_rank) = final_rank_shrink(&coll, &cfg).unwrap();
        assert_eq!(final_rank, 2);
        for (a, b) in reduced.draws.iter().zip(&draws) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn final_shrink_counting_oracle_96_percent() {
        // Column with 96% small entries on average under threshold 0.95 is
        // deleted; direct counting confirms the share.
        let mut rng = crate::rng_from_seed(461);
        let mut draws = Vec::new();
        for _ in 0..10 {
            // 5×5×1 component: need exactly 1 of 25 entries large (96% small).
            let mut b1 = DMatrix::from_fn(5, 2, |_, _| rng.random_range(0.5..1.0));
            let mut b2 = DMatrix::from_fn(5, 2, |_, _| rng.random_range(0.5..1.0));
            let b3 = DMatrix::from_fn(1, 2, |_, _| 1.0);
            for i in 0..5 {
                b1[(i, 1)] = if i == 0 { 1.0 } else { 1e-6 };
                b2[(i, 1)] = if i == 0 { 1.0 } else { 1e-6 };
            }
            draws.push(CpTensor3::new(b1, b2, b3).unwrap());
        }
        let coll = DrawCollection::new(draws, (0..10).collect(), 3).unwrap();
        let comp = cp_components(&coll.draws[0]);
        let small = comp[1]
            .entries()
            .iter()
            .filter(|v| v.abs() < 5e-4)
            .count();
        assert_eq!(small, 24); // 96%
        let cfg = AdaptConfig::real_data(5, 100); // thresholds (5e-4, 0.95)
        let (_, final_rank) = final_rank_shrink(&coll, &cfg).unwrap();
        assert_eq!(final_rank, 1);
    }

    #[test]
    fn empty_collection_rejected() {
        assert!(DrawCollection::new(vec![], vec![], 0).is_err());
    }
}
