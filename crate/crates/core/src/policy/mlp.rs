//! Fully connected networks over a flat parameter vector, with batched
//! forward passes and hand-written reverse-mode gradients.
//!
//! Layer `l` stores a row-major `in × out` weight matrix followed by an
//! `out`-length bias, so `y = x W + b` for a row-vector input `x`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: &mut [f64]) {
        if self == Activation::Tanh {
            for v in x {
                *v = v.tanh();
            }
        }
    }
}

/// Parameter layout and activations of one network inside a flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    offset: usize,
    pub hidden: Activation,
    pub output: Activation,
}

/// Activations saved during a forward pass, consumed by [`Mlp::backward`].
#[derive(Clone, Debug, Default)]
pub struct MlpCache {
    batch: usize,
    /// `acts[0]` is the input; `acts[l + 1]` is the post-activation output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl Mlp {
    pub fn new(sizes: Vec<usize>, offset: usize, hidden: Activation, output: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        Mlp {
            sizes,
            offset,
            hidden,
            output,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Offsets of layer `l`'s weight and bias within the flat vector.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut o = self.offset;
        for w in self.sizes.windows(2).take(l) {
            o += w[0] * w[1] + w[1];
        }
        (o, o + self.sizes[l] * self.sizes[l + 1])
    }

    fn act(&self, l: usize) -> Activation {
        if l + 1 == self.n_layers() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Orthogonal initialization with per-layer gains and zero biases.
    pub fn init_orthogonal<R: Rng + ?Sized>(&self, params: &mut [f64], gains: &[f64], rng: &mut R) {
        assert_eq!(gains.len(), self.n_layers());
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (wo, bo) = self.layer_offsets(l);
            let q = orthogonal(n_in, n_out, rng);
            for r in 0..n_in {
                for c in 0..n_out {
                    params[wo + r * n_out + c] = gains[l] * q[(r, c)];
                }
            }
            params[bo..bo + n_out].fill(0.0);
        }
    }

    pub fn forward(&self, params: &[f64], x: &[f64], batch: usize) -> Vec<f64> {
        let mut cur = x.to_vec();
        for l in 0..self.n_layers() {
            cur = self.layer_forward(params, l, &cur, batch);
        }
        cur
    }

    pub fn forward_cached(&self, params: &[f64], x: &[f64], batch: usize) -> MlpCache {
        let mut acts = Vec::with_capacity(self.n_layers() + 1);
        acts.push(x.to_vec());
        for l in 0..self.n_layers() {
            let next = self.layer_forward(params, l, acts.last().unwrap(), batch);
            acts.push(next);
        }
        MlpCache { batch, acts }
    }

    fn layer_forward(&self, params: &[f64], l: usize, x: &[f64], batch: usize) -> Vec<f64> {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        assert_eq!(x.len(), batch * n_in, "input does not match layer {l} width");
        let (wo, bo) = self.layer_offsets(l);
        let bias = &params[bo..bo + n_out];
        let mut y = Vec::with_capacity(batch * n_out);
        for _ in 0..batch {
            y.extend_from_slice(bias);
        }
        gemm(
            batch,
            n_in,
            n_out,
            x,
            Layout::Normal,
            &params[wo..wo + n_in * n_out],
            Layout::Normal,
            &mut y,
            1.0,
        );
        self.act(l).apply(&mut y);
        y
    }

    /// Accumulates `∂loss/∂params` into `grad` given `∂loss/∂output`
    /// (`batch × out`, w.r.t. the post-activation output).
    pub fn backward(&self, params: &[f64], cache: &MlpCache, d_out: &[f64], grad: &mut [f64]) {
        let batch = cache.batch;
        assert_eq!(d_out.len(), batch * self.output_dim());
        let mut delta = d_out.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let y = &cache.acts[l + 1];
            if self.act(l) == Activation::Tanh {
                for (d, y) in delta.iter_mut().zip(y) {
                    *d *= 1.0 - y * y;
                }
            }
            let x = &cache.acts[l];
            let (wo, bo) = self.layer_offsets(l);
            gemm(
                n_in,
                batch,
                n_out,
                x,
                Layout::Transposed { ld: n_in },
                &delta,
                Layout::Normal,
                &mut grad[wo..wo + n_in * n_out],
                1.0,
            );
            let gb = &mut grad[bo..bo + n_out];
            for row in delta.chunks_exact(n_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l > 0 {
                let mut dx = vec![0.0; batch * n_in];
                gemm(
                    batch,
                    n_out,
                    n_in,
                    &delta,
                    Layout::Normal,
                    &params[wo..wo + n_in * n_out],
                    Layout::Transposed { ld: n_out },
                    &mut dx,
                    0.0,
                );
                delta = dx;
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Layout {
    /// Row-major as stored.
    Normal,
    /// Use the transpose of a row-major matrix whose rows have length `ld`.
    Transposed { ld: usize },
}

/// `c (m×n) = a (m×k) · b (k×n) + beta · c`, all row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], la: Layout, b: &[f64], lb: Layout, c: &mut [f64], beta: f64) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = match la {
        Layout::Normal => (k as isize, 1),
        Layout::Transposed { ld } => (1, ld as isize),
    };
    let (rsb, csb) = match lb {
        Layout::Normal => (n as isize, 1),
        Layout::Transposed { ld } => (1, ld as isize),
    };
    // SAFETY: the asserts above guarantee every strided access stays within
    // the slices; `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// A `rows × cols` matrix with orthonormal columns (or rows, when wider than tall).
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::<f64>::from_fn(tall, short, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if rows >= cols {
        q
    } else {
        q.transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_init_has_orthonormal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (r, c) in [(6, 4), (4, 6), (5, 5)] {
            let q = orthogonal(r, c, &mut rng);
            assert_eq!(q.shape(), (r, c));
            let g = if r >= c { q.transpose() * &q } else { &q * q.transpose() };
            let id = DMatrix::<f64>::identity(g.nrows(), g.ncols());
            assert!((g - id).abs().max() < 1e-12);
        }
    }

    #[test]
    fn gemm_layouts() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, Layout::Normal, &b, Layout::Normal, &mut c, 0.0);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, Layout::Transposed { ld: 2 }, &b, Layout::Normal, &mut c, 0.0);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, Layout::Normal, &b, Layout::Transposed { ld: 2 }, &mut c, 0.0);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn linear_network_matches_least_squares_gradient() {
        // With identity activations the network is affine; for L = ½|y - t|²
        // the weight gradient of a single layer is xᵀ (y - t).
        let net = Mlp::new(vec![3, 2], 0, Activation::Identity, Activation::Identity);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params: Vec<f64> = (0..net.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = [0.5, -1.0, 2.0, 1.5, 0.25, -0.75];
        let t = [1.0, -1.0, 0.0, 2.0];
        let cache = net.forward_cached(&params, &x, 2);
        let resid: Vec<f64> = cache.output().iter().zip(&t).map(|(y, t)| y - t).collect();
        let mut grad = vec![0.0; net.n_params()];
        net.backward(&params, &cache, &resid, &mut grad);
        for i in 0..3 {
            for o in 0..2 {
                let expected = x[i] * resid[o] + x[3 + i] * resid[2 + o];
                assert!((grad[i * 2 + o] - expected).abs() < 1e-14);
            }
        }
        assert!((grad[6] - (resid[0] + resid[2])).abs() < 1e-14);
        assert!((grad[7] - (resid[1] + resid[3])).abs() < 1e-14);
    }
}
