//! Plain-loop reference implementations shared by the integration tests.
//! None of these touch the tape.
#![allow(dead_code)]

use vqcodec::grad::Tensor;
use vqcodec::model::ConvLayer;

pub type Mat = Vec<Vec<f64>>;

/// Causal conv over `[C_in][T]` rows.
pub fn conv(x: &Mat, layer: &ConvLayer) -> Mat {
    let w = &layer.weight.value;
    let b = layer.bias.value.data();
    let (co, ci, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let (s, d) = (layer.stride, layer.dilation);
    let t = x[0].len();
    let pad = (k - 1) * d;
    (0..co)
        .map(|o| {
            (0..t / s)
                .map(|tt| {
                    let mut acc = b[o];
                    for (i, row) in x.iter().enumerate().take(ci) {
                        for j in 0..k {
                            let pos = (tt * s + j * d) as i64 - pad as i64;
                            if pos >= 0 {
                                acc += w.data()[(o * ci + i) * k + j] * row[pos as usize];
                            }
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

pub fn relu(x: &Mat) -> Mat {
    x.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
}

pub fn repeat(x: &Mat, f: usize) -> Mat {
    x.iter().map(|r| r.iter().flat_map(|&v| std::iter::repeat_n(v, f)).collect()).collect()
}

pub fn brute_nearest(book: &Tensor, v: &[f64]) -> usize {
    let mut dists: Vec<(f64, usize)> = (0..book.shape()[0])
        .map(|r| (book.row(r).iter().zip(v).map(|(e, x)| (x - e).powi(2)).sum::<f64>(), r))
        .collect();
    dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    dists[0].1
}

pub fn to_mat(t: &Tensor) -> Mat {
    (0..t.shape()[0]).map(|r| t.row(r).to_vec()).collect()
}
