//! Plain nested-Vec reference implementations used as test oracles.
#![allow(dead_code)]

use longsurv::data::{Image, ImageSequence, Subject, SurvivalRecord};
use longsurv::model::Model;
use longsurv::tensor::ParameterStore;

pub type Mat = Vec<Vec<f64>>;

pub fn mat(store: &ParameterStore, name: &str) -> Mat {
    let t = store.get(name).unwrap_or_else(|| panic!("missing {name}"));
    let cols = *t.shape().last().unwrap();
    t.data().chunks(cols).map(|r| r.to_vec()).collect()
}

pub fn vec1(store: &ParameterStore, name: &str) -> Vec<f64> {
    store.get(name).unwrap().data().to_vec()
}

pub fn mm(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    assert_eq!(a[0].len(), k);
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn add_bias(a: &Mat, b: &[f64]) -> Mat {
    a.iter().map(|r| r.iter().zip(b).map(|(p, q)| p + q).collect()).collect()
}

pub fn erf_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn softmax_rows(s: &Mat, causal: bool) -> Mat {
    s.iter()
        .enumerate()
        .map(|(i, row)| {
            let allowed: Vec<bool> = (0..row.len()).map(|j| !causal || j <= i).collect();
            let max = row
                .iter()
                .zip(&allowed)
                .filter(|(_, &a)| a)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row
                .iter()
                .zip(&allowed)
                .map(|(v, &a)| if a { (v - max).exp() } else { 0.0 })
                .collect();
            let total: f64 = e.iter().sum();
            e.iter().map(|v| v / total).collect()
        })
        .collect()
}

pub fn layer_norm(a: &Mat, gain: &[f64], shift: &[f64]) -> Mat {
    a.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter()
                .zip(gain.iter().zip(shift))
                .map(|(v, (g, s))| g * (v - mean) / (var + 1e-5).sqrt() + s)
                .collect()
        })
        .collect()
}

pub fn layer(store: &ParameterStore, prefix: &str, heads: usize, z: &Mat, causal: bool) -> Mat {
    let d = z[0].len();
    let dh = d / heads;
    let mut concat = vec![Vec::new(); z.len()];
    for h in 0..heads {
        let q = mm(z, &mat(store, &format!("{prefix}.attn.w_q{h}")));
        let k = mm(z, &mat(store, &format!("{prefix}.attn.w_k{h}")));
        let v = mm(z, &mat(store, &format!("{prefix}.attn.w_v{h}")));
        let s: Mat = mm(&q, &transpose(&k))
            .into_iter()
            .map(|r| r.into_iter().map(|x| x / (dh as f64).sqrt()).collect())
            .collect();
        let head = mm(&softmax_rows(&s, causal), &v);
        for (c, r) in concat.iter_mut().zip(head) {
            c.extend(r);
        }
    }
    let attn = mm(&concat, &mat(store, &format!("{prefix}.attn.w_a")));
    let o_r = layer_norm(
        &add(z, &attn),
        &vec1(store, &format!("{prefix}.norm1.gain")),
        &vec1(store, &format!("{prefix}.norm1.shift")),
    );
    let hidden: Mat = add_bias(&mm(&o_r, &mat(store, &format!("{prefix}.ffn.w1"))), &vec1(store, &format!("{prefix}.ffn.b1")))
        .into_iter()
        .map(|r| r.into_iter().map(erf_gelu).collect())
        .collect();
    let ffn = add_bias(&mm(&hidden, &mat(store, &format!("{prefix}.ffn.w2"))), &vec1(store, &format!("{prefix}.ffn.b2")));
    layer_norm(
        &add(&o_r, &ffn),
        &vec1(store, &format!("{prefix}.norm2.gain")),
        &vec1(store, &format!("{prefix}.norm2.shift")),
    )
}

/// Patches of a `p x p` image, row-major over the patch grid.
pub fn patches(image: &Image, p: usize) -> Mat {
    let g = (p as f64).sqrt() as usize;
    let k = image.rows() / g;
    let mut out = Vec::new();
    for pr in 0..g {
        for pc in 0..g {
            let mut row = Vec::new();
            for r in 0..k {
                for c in 0..k {
                    row.push(image.get(pr * k + r, pc * k + c));
                }
            }
            out.push(row);
        }
    }
    out
}

pub fn vision(model: &Model, image: &Image) -> Vec<f64> {
    let s = &model.params;
    let c = &model.config;
    let mut z = vec![vec1(s, "vision.cls")];
    z.extend(mm(&patches(image, c.patches), &mat(s, "vision.patch_proj.w")));
    let mut z = add(&z, &mat(s, "vision.pos_embed"));
    for l in 0..c.vision_layers {
        z = layer(s, &format!("vision.layer{l}"), c.heads, &z, false);
    }
    z[0].clone()
}

pub fn sequence(model: &Model, embeddings: &[Vec<f64>]) -> Vec<f64> {
    let s = &model.params;
    let c = &model.config;
    let mut z: Mat = embeddings.to_vec();
    z.push(vec1(s, "sequence.cls"));
    for l in 0..c.sequence_layers {
        z = layer(s, &format!("sequence.layer{l}"), c.heads, &z, true);
    }
    z.last().unwrap().clone()
}

pub fn head(model: &Model, summary: &[f64], covariates: &[f64]) -> f64 {
    let s = &model.params;
    let mut input = summary.to_vec();
    input.extend_from_slice(covariates);
    let h: Vec<f64> = add_bias(&mm(&vec![input], &mat(s, "survival.w1")), &vec1(s, "survival.b1"))[0]
        .iter()
        .map(|&v| erf_gelu(v))
        .collect();
    mm(&vec![h], &mat(s, "survival.w2"))[0][0] + vec1(s, "survival.b2")[0]
}

pub fn risk(model: &Model, seq: &ImageSequence, visits: usize) -> f64 {
    let e: Vec<Vec<f64>> = seq.images[..visits].iter().map(|im| vision(model, im)).collect();
    head(model, &sequence(model, &e), &seq.covariates)
}

/// Deterministic pseudo-random values in (-1, 1) without an RNG dependency.
pub fn wiggle(seed: u64, n: usize) -> Vec<f64> {
    let mut x = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..n)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

pub fn image(side: usize, seed: u64) -> Image {
    Image::new(side, side, wiggle(seed, side * side).into_iter().map(|v| 0.5 * v).collect()).unwrap()
}

pub fn subject(id: &str, side: usize, visits: usize, time: f64, event: bool, seed: u64) -> Subject {
    let times: Vec<f64> = (0..visits).map(|k| k as f64 * 0.05).collect();
    let images = (0..visits).map(|k| image(side, seed * 31 + k as u64)).collect();
    Subject {
        sequence: ImageSequence::new(id, times, images, vec![]).unwrap(),
        record: SurvivalRecord::new(time, event),
        true_risk: None,
    }
}
