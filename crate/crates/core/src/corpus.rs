// Copyright 2026 The Pipeforge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Synthetic dataset generators and the bundled meta-learning corpus.

use rand::Rng as _;
use rand_distr::{Cauchy, Distribution, Normal};

use crate::data::{Column, Dataset};
use crate::rng::{rng_for, Rng};

const STREAM: u64 = 0x636f_7270;

fn names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

fn build(rows: Vec<Vec<f64>>, target: Vec<usize>, k: usize) -> Dataset {
    let names = names(rows.first().map_or(0, |r| r.len()));
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Dataset::from_rows(&refs, &rows, target, k).expect("generated rows are rectangular")
}

/// Isotropic Gaussian clusters, one per class, with centres drawn
/// uniformly from `[-4, 4]^d`.
pub fn gaussian_blobs(n: usize, d: usize, k: usize, spread: f64, seed: u64) -> Dataset {
    let mut rng = rng_for(seed, STREAM + 1);
    let centres: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.gen_range(-4.0..4.0)).collect()).collect();
    let noise = Normal::new(0.0, spread).expect("spread is finite and non-negative");
    let target: Vec<usize> = (0..n).map(|i| i % k).collect();
    let rows = target
        .iter()
        .map(|&c| centres[c].iter().map(|m| m + noise.sample(&mut rng)).collect())
        .collect();
    build(rows, target, k)
}

/// Interleaved half circles. With `k > 2`, further arcs are stacked
/// alternately above and below.
pub fn moons(n: usize, k: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = rng_for(seed, STREAM + 2);
    let jitter = Normal::new(0.0, noise).expect("noise is finite and non-negative");
    let target: Vec<usize> = (0..n).map(|i| i % k).collect();
    let rows = target
        .iter()
        .map(|&c| {
            let t = rng.gen_range(0.0..std::f64::consts::PI);
            let (x, y) = if c % 2 == 0 {
                (t.cos(), t.sin() + (c / 2) as f64 * 1.5)
            } else {
                (1.0 - t.cos(), 0.5 - t.sin() - (c / 2) as f64 * 1.5)
            };
            vec![x + jitter.sample(&mut rng), y + jitter.sample(&mut rng)]
        })
        .collect();
    build(rows, target, k)
}

/// Sign parity of `informative` uniform features, each kept at least
/// `margin` away from zero, followed by `noise` uniform distractors.
pub fn parity(n: usize, informative: usize, noise: usize, margin: f64, seed: u64) -> Dataset {
    let mut rng = rng_for(seed, STREAM + 3);
    let mut rows = Vec::with_capacity(n);
    let mut target = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row: Vec<f64> = (0..informative)
            .map(|_| {
                let v = rng.gen_range(margin..1.0);
                if rng.gen_bool(0.5) { v } else { -v }
            })
            .collect();
        let negatives = row.iter().filter(|v| **v < 0.0).count();
        target.push(negatives % 2);
        row.extend((0..noise).map(|_| rng.gen_range(-1.0..1.0)));
        rows.push(row);
    }
    build(rows, target, 2)
}

/// Orthogonal `d x d` matrix from Gram-Schmidt on Gaussian draws.
pub fn random_rotation(d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, STREAM + 6);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| unit.sample(&mut rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// Replaces the first `rotation.len()` columns `x` by `R x`.
pub fn rotate(d: &Dataset, rotation: &[Vec<f64>]) -> Dataset {
    let k = rotation.len();
    let mut values: Vec<Vec<f64>> = (0..d.n_cols()).map(|j| d.col_values(j).to_vec()).collect();
    for i in 0..d.n_rows() {
        let x: Vec<f64> = (0..k).map(|j| d.value(i, j)).collect();
        for (r, row) in rotation.iter().enumerate() {
            values[r][i] = row.iter().zip(&x).map(|(a, b)| a * b).sum();
        }
    }
    let missing = (0..d.n_cols()).map(|j| d.col_missing(j).to_vec()).collect();
    d.with_features(d.columns().to_vec(), values, missing).expect("shape preserved")
}

/// Multiplies column `j` by `factors[j]`; missing factors leave columns
/// unchanged.
pub fn rescale(d: &Dataset, factors: &[f64]) -> Dataset {
    let values = (0..d.n_cols())
        .map(|j| {
            let f = factors.get(j).copied().unwrap_or(1.0);
            d.col_values(j).iter().map(|v| v * f).collect()
        })
        .collect();
    let missing = (0..d.n_cols()).map(|j| d.col_missing(j).to_vec()).collect();
    d.with_features(d.columns().to_vec(), values, missing).expect("shape preserved")
}

/// Appends a heavy-tailed Cauchy column multiplied by `scale`.
pub fn with_heavy_noise(d: &Dataset, scale: f64, seed: u64) -> Dataset {
    let mut rng = rng_for(seed, STREAM + 4);
    let cauchy = Cauchy::new(0.0, 1.0).expect("unit Cauchy");
    let mut columns = d.columns().to_vec();
    let mut values: Vec<Vec<f64>> = (0..d.n_cols()).map(|j| d.col_values(j).to_vec()).collect();
    let mut missing: Vec<Vec<bool>> = (0..d.n_cols()).map(|j| d.col_missing(j).to_vec()).collect();
    columns.push(Column::numeric(format!("x{}", d.n_cols())));
    values.push((0..d.n_rows()).map(|_| scale * cauchy.sample(&mut rng)).collect());
    missing.push(vec![false; d.n_rows()]);
    d.with_features(columns, values, missing).expect("shape preserved")
}

/// Marks each cell missing with probability `fraction`.
pub fn inject_missing(d: &Dataset, fraction: f64, seed: u64) -> Dataset {
    let mut rng: Rng = rng_for(seed, STREAM + 5);
    let mut values = Vec::with_capacity(d.n_cols());
    let mut missing = Vec::with_capacity(d.n_cols());
    for j in 0..d.n_cols() {
        let mut v = d.col_values(j).to_vec();
        let mut m = d.col_missing(j).to_vec();
        for (vi, mi) in v.iter_mut().zip(m.iter_mut()) {
            if rng.gen_bool(fraction) {
                *mi = true;
            }
            if *mi {
                *vi = 0.0;
            }
        }
        values.push(v);
        missing.push(m);
    }
    d.with_features(d.columns().to_vec(), values, missing).expect("shape preserved")
}

/// Multiplies the first `cols` features of every row by one shared
/// log-normal factor `exp(N(0, sigma))`.
pub fn radial_jitter(d: &Dataset, cols: usize, sigma: f64, seed: u64) -> Dataset {
    let mut rng = rng_for(seed, STREAM + 7);
    let spread = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    let factors: Vec<f64> = (0..d.n_rows()).map(|_| spread.sample(&mut rng).exp()).collect();
    let cols = cols.min(d.n_cols());
    let values: Vec<Vec<f64>> = (0..d.n_cols())
        .map(|j| {
            let v = d.col_values(j);
            if j < cols {
                v.iter().zip(&factors).map(|(x, f)| x * f).collect()
            } else {
                v.to_vec()
            }
        })
        .collect();
    let missing = (0..d.n_cols()).map(|j| d.col_missing(j).to_vec()).collect();
    d.with_features(d.columns().to_vec(), values, missing).expect("shape preserved")
}

const PLANTED_ROTATION_SEED: u64 = 77;

/// Binary task that nearest neighbours solve only after scaling: rotated
/// three-bit parity with a log-normal radius, followed by three Cauchy
/// columns of scale 1e6.
pub fn scaling_planted(n: usize, seed: u64) -> Dataset {
    let signal = rotate(&parity(n, 3, 0, 0.15, seed), &random_rotation(3, PLANTED_ROTATION_SEED));
    let mut d = radial_jitter(&signal, 3, 0.5, seed);
    for i in 0..3 {
        d = with_heavy_noise(&d, 1e6, crate::rng::combine(seed, i));
    }
    d
}

/// 400 rows of five-dimensional two-class blobs with 20 % missing cells.
pub fn missing_blobs(seed: u64) -> Dataset {
    inject_missing(&gaussian_blobs(400, 5, 2, 2.0, seed), 0.2, seed)
}

pub const SCALING_PLANTED_ID: &str = "scaling_planted";
pub const SCALING_PLANTED_ROWS: usize = 600;

/// The bundled corpus: blobs, moons, parity, rotated, scaled, heavy-noise
/// and missing-value variants over 2, 3 and 5 classes.
pub fn builtin_corpus(seed: u64) -> Vec<(String, Dataset)> {
    let s = |i: u64| crate::rng::combine(seed, i);
    vec![
        ("blobs_k2".into(), gaussian_blobs(200, 4, 2, 1.5, s(1))),
        ("blobs_k3".into(), gaussian_blobs(210, 4, 3, 1.5, s(2))),
        ("blobs_k5".into(), gaussian_blobs(250, 6, 5, 1.2, s(3))),
        ("moons_k2".into(), moons(200, 2, 0.15, s(4))),
        ("moons_k3".into(), moons(210, 3, 0.15, s(5))),
        ("parity2".into(), parity(200, 2, 1, 0.1, s(6))),
        ("parity3".into(), parity(240, 3, 0, 0.15, s(7))),
        ("blobs_k3_scaled".into(), rescale(&gaussian_blobs(210, 4, 3, 1.5, s(8)), &[1.0, 1e4, 1.0, 1e-3])),
        ("moons_k2_noisy".into(), with_heavy_noise(&moons(200, 2, 0.15, s(9)), 1e5, s(9))),
        ("parity2_noisy".into(), with_heavy_noise(&parity(200, 2, 0, 0.15, s(10)), 1e6, s(10))),
        ("moons_k5_scaled".into(), rescale(&moons(250, 5, 0.1, s(11)), &[1e3, 1.0])),
        ("blobs_k2_missing".into(), inject_missing(&gaussian_blobs(200, 5, 2, 2.0, s(12)), 0.2, s(12))),
        ("moons_k3_missing".into(), inject_missing(&moons(210, 3, 0.15, s(13)), 0.1, s(13))),
        (
            "parity2_rotated_noisy".into(),
            with_heavy_noise(&rotate(&parity(240, 2, 0, 0.15, s(15)), &random_rotation(2, s(15))), 1e6, s(15)),
        ),
        (
            "parity3_rotated_noisy".into(),
            with_heavy_noise(&rotate(&parity(300, 3, 0, 0.2, s(16)), &random_rotation(3, s(16))), 1e5, s(16)),
        ),
        (
            "moons_k2_heavy".into(),
            with_heavy_noise(&with_heavy_noise(&moons(240, 2, 0.1, s(17)), 1e6, s(17)), 1e6, s(18)),
        ),
        (SCALING_PLANTED_ID.into(), scaling_planted(SCALING_PLANTED_ROWS, s(14))),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_have_requested_shape() {
        let d = gaussian_blobs(90, 4, 3, 1.0, 0);
        assert_eq!((d.n_rows(), d.n_cols(), d.n_classes()), (90, 4, 3));
        assert_eq!(d.class_counts(), vec![30, 30, 30]);
        let m = moons(50, 5, 0.1, 0);
        assert_eq!((m.n_rows(), m.n_cols(), m.n_classes()), (50, 2, 5));
        let p = scaling_planted(100, 3);
        assert_eq!((p.n_rows(), p.n_cols()), (100, 6));
    }

    #[test]
    fn parity_labels_follow_signs() {
        let d = parity(200, 3, 2, 0.15, 4);
        for i in 0..d.n_rows() {
            let row = d.row(i);
            assert!(row[..3].iter().all(|v| v.abs() >= 0.15));
            let neg = row[..3].iter().filter(|v| **v < 0.0).count();
            assert_eq!(d.target()[i], neg % 2);
        }
    }

    #[test]
    fn radial_jitter_preserves_sign_pattern() {
        let d = parity(120, 3, 1, 0.15, 5);
        let j = radial_jitter(&d, 3, 0.5, 5);
        for i in 0..d.n_rows() {
            let (a, b) = (d.row(i), j.row(i));
            let f = b[0] / a[0];
            assert!(f > 0.0);
            for c in 0..3 {
                assert!((b[c] - a[c] * f).abs() < 1e-12);
            }
            assert_eq!(a[3], b[3]);
        }
    }

    #[test]
    fn rotation_is_orthogonal() {
        let r = random_rotation(4, 2);
        for a in 0..4 {
            for b in 0..4 {
                let dot: f64 = r[a].iter().zip(&r[b]).map(|(x, y)| x * y).sum();
                assert!((dot - (a == b) as u8 as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn missing_fraction_is_close() {
        let d = missing_blobs(1);
        let frac = d.missing_count() as f64 / (d.n_rows() * d.n_cols()) as f64;
        assert!((frac - 0.2).abs() < 0.03, "{frac}");
        assert_eq!((d.n_rows(), d.n_cols(), d.n_classes()), (400, 5, 2));
    }

    #[test]
    fn corpus_is_deterministic_and_covers_class_counts() {
        let a = builtin_corpus(7);
        assert_eq!(a, builtin_corpus(7));
        let mut ks: Vec<usize> = a.iter().map(|(_, d)| d.n_classes()).collect();
        ks.sort_unstable();
        ks.dedup();
        assert_eq!(ks, vec![2, 3, 5]);
        assert!(a.iter().any(|(id, _)| id == SCALING_PLANTED_ID));
    }
}
