//! Plain nested-loop reference implementations shared by unit tests.

use crate::attention::{Activation, MaskMode, MASK_NEG};
use crate::tensor::Tensor;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    let [r, c] = *t.dims() else { panic!("not a matrix") };
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

pub fn batch_mat(t: &Tensor, b: usize) -> Mat {
    let [_, l, d] = *t.dims() else { panic!("not rank 3") };
    (0..l)
        .map(|i| t.data()[(b * l + i) * d..(b * l + i + 1) * d].to_vec())
        .collect()
}

pub fn mm(a: &Mat, b: &Mat) -> Mat {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let mut c = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                c[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    c
}

pub fn cols(a: &Mat, from: usize, to: usize) -> Mat {
    a.iter().map(|r| r[from..to].to_vec()).collect()
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn softmax_rows(a: &Mat) -> Mat {
    a.iter()
        .map(|r| {
            let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Materializes Q, K, V per head and applies scaling, softmax, masking and
/// context aggregation step by step.
pub fn mha_oracle(
    xq: &Mat,
    xkv: &Mat,
    w: [&Mat; 4],
    heads: usize,
    scale: f64,
    mask: Option<(&Mat, MaskMode)>,
) -> Mat {
    let d = w[0].len();
    let dk = d / heads;
    let (q, k, v) = (mm(xq, w[0]), mm(xkv, w[1]), mm(xkv, w[2]));
    let mut concat = vec![Vec::new(); xq.len()];
    for h in 0..heads {
        let (qh, kh, vh) = (
            cols(&q, h * dk, (h + 1) * dk),
            cols(&k, h * dk, (h + 1) * dk),
            cols(&v, h * dk, (h + 1) * dk),
        );
        let mut s = mm(&qh, &transpose(&kh));
        for row in &mut s {
            for x in row.iter_mut() {
                *x *= scale;
            }
        }
        let a = match mask {
            None => softmax_rows(&s),
            Some((m, MaskMode::PreSoftmaxAdditive)) => {
                for (i, row) in s.iter_mut().enumerate() {
                    for (j, x) in row.iter_mut().enumerate() {
                        if m[i][j] == 0.0 {
                            *x += MASK_NEG;
                        }
                    }
                }
                softmax_rows(&s)
            }
            Some((m, MaskMode::PostSoftmaxMultiplicative)) => {
                let mut a = softmax_rows(&s);
                for (i, row) in a.iter_mut().enumerate() {
                    for (j, x) in row.iter_mut().enumerate() {
                        *x *= m[i][j];
                    }
                }
                a
            }
        };
        let c = mm(&a, &vh);
        for (i, row) in c.into_iter().enumerate() {
            concat[i].extend(row);
        }
    }
    mm(&concat, w[3])
}

pub fn temporal_oracle(x: &Mat, wq: &Mat, wk: &Mat, wv: &Mat) -> Mat {
    let (q, k, v) = (mm(x, wq), mm(x, wk), mm(x, wv));
    let scores = mm(&q, &transpose(&k));
    let weights = softmax_rows(&scores);
    mm(&weights, &v)
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn layer_norm_rows(a: &Mat, gain: &[f64], bias: &[f64], eps: f64) -> Mat {
    a.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(j, v)| gain[j] * (v - mean) / (var + eps).sqrt() + bias[j])
                .collect()
        })
        .collect()
}

pub fn ffn_oracle(x: &Mat, w1: &Mat, b1: &[f64], w2: &Mat, b2: &[f64], act: Activation) -> Mat {
    let mut h = mm(x, w1);
    for row in &mut h {
        for (j, v) in row.iter_mut().enumerate() {
            let z = *v + b1[j];
            *v = match act {
                Activation::Relu => z.max(0.0),
                Activation::Gelu => {
                    let c = (2.0 / std::f64::consts::PI).sqrt();
                    0.5 * z * (1.0 + (c * (z + 0.044715 * z.powi(3))).tanh())
                }
            };
        }
    }
    let mut out = mm(&h, w2);
    for row in &mut out {
        for (j, v) in row.iter_mut().enumerate() {
            *v += b2[j];
        }
    }
    out
}

/// Rows of a `[B, L, d]` tensor for every batch element.
pub fn batches(t: &Tensor) -> Vec<Mat> {
    (0..t.dims()[0]).map(|b| batch_mat(t, b)).collect()
}
