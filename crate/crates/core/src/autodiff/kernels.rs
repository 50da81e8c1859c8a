use crate::error::{Error, Result};
use crate::tensor::MAX_RANK;

/// sqrt(2 / pi)
pub(crate) const GELU_C: f64 = 0.797_884_560_802_865_4;

pub(crate) fn gelu_derivative(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Resolved batch broadcasting for one matmul.
#[derive(Debug, Clone)]
pub(crate) struct BatchPlan {
    pub out_dims: Vec<usize>,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// For every output batch: (batch index into `a`, batch index into `b`).
    pub pairs: Vec<(usize, usize)>,
    pub a_batches: usize,
    pub b_batches: usize,
}

impl BatchPlan {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 {
            return Err(Error::shape("matmul", a, b));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(Error::shape("matmul", a, b));
        }
        let a_lead = &a[..a.len() - 2];
        let b_lead = &b[..b.len() - 2];
        let rank = a_lead.len().max(b_lead.len());
        if rank + 2 > MAX_RANK {
            return Err(Error::shape("matmul", a, b));
        }
        let pad = |lead: &[usize]| {
            let mut v = vec![1; rank - lead.len()];
            v.extend_from_slice(lead);
            v
        };
        let (pa, pb) = (pad(a_lead), pad(b_lead));
        let mut out_lead = Vec::with_capacity(rank);
        for (&x, &y) in pa.iter().zip(&pb) {
            if x != y && x != 1 && y != 1 {
                return Err(Error::shape("matmul", a, b));
            }
            out_lead.push(x.max(y));
        }
        let total: usize = out_lead.iter().product();
        let mut pairs = Vec::with_capacity(total);
        let mut idx = vec![0; rank];
        for _ in 0..total {
            let (mut ia, mut ib) = (0, 0);
            for d in 0..rank {
                ia = ia * pa[d] + if pa[d] == 1 { 0 } else { idx[d] };
                ib = ib * pb[d] + if pb[d] == 1 { 0 } else { idx[d] };
            }
            pairs.push((ia, ib));
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < out_lead[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let mut out_dims = out_lead;
        out_dims.extend([m, n]);
        Ok(BatchPlan {
            out_dims,
            m,
            k,
            n,
            pairs,
            a_batches: pa.iter().product(),
            b_batches: pb.iter().product(),
        })
    }

    pub fn out_numel(&self) -> usize {
        self.pairs.len() * self.m * self.n
    }
}

const TILE_M: usize = 4;
const TILE_N: usize = 4;

/// `out += a . b` for row-major `a: [m, k]`, `b: [k, n]`, `out: [m, n]`.
/// Every output element accumulates its `k` products in increasing `p`.
fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    let a = &a[..m * k];
    let b = &b[..k * n];
    let out = &mut out[..m * n];
    let full_m = m - m % TILE_M;
    let full_n = n - n % TILE_N;
    let mut panel = vec![[0.0; TILE_N]; k];
    for j0 in (0..full_n).step_by(TILE_N) {
        for (p, dst) in panel.iter_mut().enumerate() {
            dst.copy_from_slice(&b[p * n + j0..p * n + j0 + TILE_N]);
        }
        for i0 in (0..full_m).step_by(TILE_M) {
            let rows = &a[i0 * k..(i0 + TILE_M) * k];
            let (r0, rest) = rows.split_at(k);
            let (r1, rest) = rest.split_at(k);
            let (r2, r3) = rest.split_at(k);
            let mut acc = [[0.0; TILE_N]; TILE_M];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&out[(i0 + r) * n + j0..(i0 + r) * n + j0 + TILE_N]);
            }
            for ((((bp, &x0), &x1), &x2), &x3) in panel.iter().zip(r0).zip(r1).zip(r2).zip(r3) {
                for c in 0..TILE_N {
                    acc[0][c] += x0 * bp[c];
                    acc[1][c] += x1 * bp[c];
                    acc[2][c] += x2 * bp[c];
                    acc[3][c] += x3 * bp[c];
                }
            }
            for (r, row) in acc.iter().enumerate() {
                out[(i0 + r) * n + j0..(i0 + r) * n + j0 + TILE_N].copy_from_slice(row);
            }
        }
    }
    if full_n < n {
        gemm_rows(0, full_m, full_n, k, n, a, b, out);
    }
    if full_m < m {
        gemm_rows(full_m, m, 0, k, n, a, b, out);
    }
}

/// Remainder path of [`gemm_acc`] for rows `[r0, r1)` and columns `[j0, n)`.
#[allow(clippy::too_many_arguments)]
fn gemm_rows(r0: usize, r1: usize, j0: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in r0..r1 {
        let orow = &mut out[i * n + j0..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            for (o, &bv) in orow.iter_mut().zip(&b[p * n + j0..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
}

fn transpose_into(rows: usize, cols: usize, src: &[f64], dst: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

pub(crate) fn matmul_forward(plan: &BatchPlan, a: &[f64], b: &[f64], out: &mut [f64]) {
    let (m, k, n) = (plan.m, plan.k, plan.n);
    for (ob, &(ia, ib)) in plan.pairs.iter().enumerate() {
        gemm_acc(
            m,
            k,
            n,
            &a[ia * m * k..],
            &b[ib * k * n..],
            &mut out[ob * m * n..(ob + 1) * m * n],
        );
    }
}

/// `ga += g . b^T`, summed over output batches that share an `a` batch.
pub(crate) fn matmul_grad_a(plan: &BatchPlan, g: &[f64], b: &[f64], ga: &mut [f64]) {
    let (m, k, n) = (plan.m, plan.k, plan.n);
    debug_assert_eq!(ga.len(), plan.a_batches * m * k);
    let mut bt = vec![0.0; n * k];
    let mut cached = usize::MAX;
    for (ob, &(ia, ib)) in plan.pairs.iter().enumerate() {
        if ib != cached {
            transpose_into(k, n, &b[ib * k * n..(ib + 1) * k * n], &mut bt);
            cached = ib;
        }
        gemm_acc(m, n, k, &g[ob * m * n..], &bt, &mut ga[ia * m * k..(ia + 1) * m * k]);
    }
}

/// `gb += a^T . g`, summed over output batches that share a `b` batch.
pub(crate) fn matmul_grad_b(plan: &BatchPlan, a: &[f64], g: &[f64], gb: &mut [f64]) {
    let (m, k, n) = (plan.m, plan.k, plan.n);
    debug_assert_eq!(gb.len(), plan.b_batches * k * n);
    let mut at = vec![0.0; k * m];
    let mut cached = usize::MAX;
    for (ob, &(ia, ib)) in plan.pairs.iter().enumerate() {
        if ia != cached {
            transpose_into(m, k, &a[ia * m * k..(ia + 1) * m * k], &mut at);
            cached = ia;
        }
        gemm_acc(k, m, n, &at, &g[ob * m * n..], &mut gb[ib * k * n..(ib + 1) * k * n]);
    }
}

/// Copies `data` (row-major, `dims`) with axes `d0` and `d1` exchanged.
pub(crate) fn swap_axes(dims: &[usize], data: &[f64], d0: usize, d1: usize) -> (Vec<usize>, Vec<f64>) {
    let mut out_dims = dims.to_vec();
    out_dims.swap(d0, d1);
    if d0 == d1 {
        return (out_dims, data.to_vec());
    }
    let rank = dims.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank - 1).rev() {
        in_strides[i] = in_strides[i + 1] * dims[i + 1];
    }
    // stride in the input for each output axis
    let mut src_strides = in_strides.clone();
    src_strides.swap(d0, d1);

    let mut out = Vec::with_capacity(data.len());
    let inner_contiguous = d0 != rank - 1 && d1 != rank - 1;
    if inner_contiguous {
        let inner = dims[rank - 1];
        let outer_rank = rank - 1;
        let count: usize = out_dims[..outer_rank].iter().product();
        let mut idx = vec![0; outer_rank];
        for _ in 0..count {
            let off: usize = (0..outer_rank).map(|d| idx[d] * src_strides[d]).sum();
            out.extend_from_slice(&data[off..off + inner]);
            for d in (0..outer_rank).rev() {
                idx[d] += 1;
                if idx[d] < out_dims[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
    } else {
        let mut idx = vec![0; rank];
        for _ in 0..data.len() {
            let off: usize = (0..rank).map(|d| idx[d] * src_strides[d]).sum();
            out.push(data[off]);
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < out_dims[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
    }
    (out_dims, out)
}
