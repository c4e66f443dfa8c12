//! Scalar reference implementations of the matching layers.

#![allow(dead_code)]

use gte_core::matching::{
    attentive_matching, full_matching, max_attentive_matching, maxpool_matching, AttentionWeighting, Perspective, ATTENTION_FLOOR,
};
use gte_core::rng::Seeded;
use gte_core::{Graph, ParamSet, Tensor, Var};

pub type Mat = Vec<Vec<f64>>;

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

pub fn weigh(w: &[f64], v: &[f64]) -> Vec<f64> {
    w.iter().zip(v).map(|(a, b)| a * b).collect()
}

pub fn oracle_match(w: &Mat, u: &Mat, a: &[f64], b: &[f64]) -> Vec<f64> {
    (0..w.len()).map(|k| cos(&weigh(&w[k], a), &weigh(&u[k], b))).collect()
}

pub fn oracle_full(w: &Mat, s1: &Mat, s2: &Mat) -> Mat {
    let last = s2.last().unwrap();
    s1.iter().map(|s| oracle_match(w, w, s, last)).collect()
}

pub fn oracle_maxpool(w: &Mat, s1: &Mat, s2: &Mat) -> Mat {
    s1.iter()
        .map(|s| {
            let mut best = vec![f64::NEG_INFINITY; w.len()];
            for o in s2 {
                for (k, m) in oracle_match(w, w, s, o).into_iter().enumerate() {
                    if m > best[k] {
                        best[k] = m;
                    }
                }
            }
            best
        })
        .collect()
}

pub fn oracle_attentive(w: &Mat, s1: &Mat, s2: &Mat) -> Mat {
    let d = s1[0].len();
    s1.iter()
        .map(|s| {
            let alphas: Vec<f64> = s2.iter().map(|o| cos(s, o)).collect();
            let total = alphas.iter().sum::<f64>().max(ATTENTION_FLOOR);
            let mut mean = vec![0.0; d];
            for (a, o) in alphas.iter().zip(s2) {
                for i in 0..d {
                    mean[i] += a * o[i];
                }
            }
            for x in &mut mean {
                *x /= total;
            }
            oracle_match(w, w, s, &mean)
        })
        .collect()
}

pub fn oracle_max_attentive(w: &Mat, s1: &Mat, s2: &Mat) -> Mat {
    s1.iter()
        .map(|s| {
            let mut best = 0;
            for j in 1..s2.len() {
                if cos(s, &s2[j]) > cos(s, &s2[best]) {
                    best = j;
                }
            }
            oracle_match(w, w, s, &s2[best])
        })
        .collect()
}

pub fn random_mat(rng: &mut Seeded, rows: usize, cols: usize) -> Mat {
    (0..rows).map(|_| (0..cols).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect()
}

pub fn to_tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

pub fn vec_t(v: &[f64]) -> Tensor {
    Tensor::vector(v.to_vec()).unwrap()
}

pub fn max_diff(got: &[Vec<f64>], want: &Mat) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter()
        .zip(want)
        .flat_map(|(a, b)| {
            assert_eq!(a.len(), b.len());
            a.iter().zip(b).map(|(x, y)| (x - y).abs())
        })
        .fold(0.0, f64::max)
}

pub fn graph_strategy(
    which: usize,
    w: &Mat,
    s1: &Mat,
    s2: &Mat,
) -> Vec<Vec<f64>> {
    let empty = ParamSet::new();
    let mut g = Graph::new(&empty);
    let wv = g.constant(to_tensor(w));
    let p = Perspective { left: wv, right: wv };
    let a: Vec<Var> = s1.iter().map(|r| g.constant(vec_t(r))).collect();
    let b: Vec<Var> = s2.iter().map(|r| g.constant(vec_t(r))).collect();
    let out = match which {
        0 => full_matching(&mut g, &a, *b.last().unwrap(), p),
        1 => maxpool_matching(&mut g, &a, &b, p),
        2 => attentive_matching(&mut g, &a, &b, p, AttentionWeighting::Cosine),
        _ => max_attentive_matching(&mut g, &a, &b, p),
    }
    .unwrap();
    out.into_iter().map(|v| g.value(v).data().to_vec()).collect()
}

