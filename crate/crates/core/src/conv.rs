//! Multichannel 2D convolution and correlation with zero padding.
//!
//! Synthesis uses true ("full") convolution, so that an `m x m` code map
//! convolved with a `k x k` kernel yields an `(m + k - 1)` square signal.
//! The adjoint of that operator is the "valid" cross-correlation, which is
//! what gradients and the sparse solver use.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, ArrayView4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Result};

/// A single image plane, `height x width`.
pub type Plane = Array2<f64>;

/// A stack of planes, `channels x height x width`.
pub type Tensor3 = Array3<f64>;

/// Accumulates the full convolution of `a` (ah x aw) with `k` (kh x kw) into
/// `out`, whose row stride is `aw + kw - 1`. Zero entries of `a` are skipped.
#[inline]
pub(crate) fn full_conv_acc(
    a: &[f64],
    (ah, aw): (usize, usize),
    k: &[f64],
    (kh, kw): (usize, usize),
    out: &mut [f64],
) {
    let ow = aw + kw - 1;
    for p in 0..ah {
        for q in 0..aw {
            let v = a[p * aw + q];
            if v == 0.0 {
                continue;
            }
            for u in 0..kh {
                let krow = &k[u * kw..(u + 1) * kw];
                let start = (p + u) * ow + q;
                let orow = &mut out[start..start + kw];
                for (o, &kv) in orow.iter_mut().zip(krow) {
                    *o += v * kv;
                }
            }
        }
    }
}

/// Accumulates the valid cross-correlation of `a` (ah x aw) with `k`
/// (kh x kw) into `out`, of size `(ah - kh + 1) x (aw - kw + 1)`.
#[inline]
pub(crate) fn valid_corr_acc(
    a: &[f64],
    (ah, aw): (usize, usize),
    k: &[f64],
    (kh, kw): (usize, usize),
    out: &mut [f64],
) {
    let oh = ah - kh + 1;
    let ow = aw - kw + 1;
    for u in 0..kh {
        for v in 0..kw {
            let kv = k[u * kw + v];
            if kv == 0.0 {
                continue;
            }
            for i in 0..oh {
                let arow = &a[(i + u) * aw + v..(i + u) * aw + v + ow];
                let orow = &mut out[i * ow..(i + 1) * ow];
                for (o, &x) in orow.iter_mut().zip(arow) {
                    *o += kv * x;
                }
            }
        }
    }
}

/// Full 2D convolution with zero padding. Output is `(ha + hk - 1) x (wa + wk - 1)`.
pub fn conv2d_full(a: ArrayView2<f64>, k: ArrayView2<f64>) -> Result<Plane> {
    let (ah, aw) = a.dim();
    let (kh, kw) = k.dim();
    if ah == 0 || aw == 0 || kh == 0 || kw == 0 {
        return shape_err(format!(
            "full convolution of empty planes ({ah}x{aw} with {kh}x{kw})"
        ));
    }
    let a = a.as_standard_layout();
    let k = k.as_standard_layout();
    let mut out = Plane::zeros((ah + kh - 1, aw + kw - 1));
    full_conv_acc(
        a.as_slice().unwrap(),
        (ah, aw),
        k.as_slice().unwrap(),
        (kh, kw),
        out.as_slice_mut().unwrap(),
    );
    Ok(out)
}

/// Valid 2D cross-correlation (no kernel flip). Output is
/// `(ha - hk + 1) x (wa - wk + 1)`.
pub fn conv2d_valid(a: ArrayView2<f64>, k: ArrayView2<f64>) -> Result<Plane> {
    let (ah, aw) = a.dim();
    let (kh, kw) = k.dim();
    if kh == 0 || kw == 0 || kh > ah || kw > aw {
        return shape_err(format!(
            "valid correlation needs a kernel no larger than the plane ({kh}x{kw} vs {ah}x{aw})"
        ));
    }
    let a = a.as_standard_layout();
    let k = k.as_standard_layout();
    let mut out = Plane::zeros((ah - kh + 1, aw - kw + 1));
    valid_corr_acc(
        a.as_slice().unwrap(),
        (ah, aw),
        k.as_slice().unwrap(),
        (kh, kw),
        out.as_slice_mut().unwrap(),
    );
    Ok(out)
}

/// Synthesis with a filter bank `atoms` (`J x C x kh x kw`) from code maps
/// (`J x mh x mw`): output channel `c` is `sum_j full(code[j], atoms[j, c])`.
pub fn synthesize_atoms(atoms: ArrayView4<f64>, code: ArrayView3<f64>) -> Result<Tensor3> {
    let (j, c, kh, kw) = atoms.dim();
    let (cj, mh, mw) = code.dim();
    if j != cj {
        return shape_err(format!("code has {cj} maps but dictionary has {j} atoms"));
    }
    if mh == 0 || mw == 0 || kh == 0 || kw == 0 {
        return shape_err("synthesis with empty code maps or kernels");
    }
    let atoms = atoms.as_standard_layout();
    let code = code.as_standard_layout();
    let (oh, ow) = (mh + kh - 1, mw + kw - 1);
    let mut out = Tensor3::zeros((c, oh, ow));
    let asl = atoms.as_slice().unwrap();
    let csl = code.as_slice().unwrap();
    let osl = out.as_slice_mut().unwrap();
    let ksz = kh * kw;
    let msz = mh * mw;
    let osz = oh * ow;
    for ch in 0..c {
        let o = &mut osl[ch * osz..(ch + 1) * osz];
        for atom in 0..j {
            let k = &asl[(atom * c + ch) * ksz..(atom * c + ch + 1) * ksz];
            let m = &csl[atom * msz..(atom + 1) * msz];
            full_conv_acc(m, (mh, mw), k, (kh, kw), o);
        }
    }
    Ok(out)
}

/// Adjoint of [`synthesize_atoms`]: map `j` is `sum_c valid(signal[c], atoms[j, c])`.
pub fn analyze_atoms(atoms: ArrayView4<f64>, signal: ArrayView3<f64>) -> Result<Tensor3> {
    let (j, c, kh, kw) = atoms.dim();
    let (sc, sh, sw) = signal.dim();
    if sc != c {
        return shape_err(format!(
            "signal has {sc} channels but atoms have {c} input channels"
        ));
    }
    if kh == 0 || kw == 0 || kh > sh || kw > sw {
        return shape_err(format!(
            "signal {sh}x{sw} is smaller than the {kh}x{kw} atoms"
        ));
    }
    let atoms = atoms.as_standard_layout();
    let signal = signal.as_standard_layout();
    let (mh, mw) = (sh - kh + 1, sw - kw + 1);
    let mut out = Tensor3::zeros((j, mh, mw));
    let asl = atoms.as_slice().unwrap();
    let ssl = signal.as_slice().unwrap();
    let osl = out.as_slice_mut().unwrap();
    let ksz = kh * kw;
    let ssz = sh * sw;
    let msz = mh * mw;
    for atom in 0..j {
        let o = &mut osl[atom * msz..(atom + 1) * msz];
        for ch in 0..c {
            let k = &asl[(atom * c + ch) * ksz..(atom * c + ch + 1) * ksz];
            let s = &ssl[ch * ssz..(ch + 1) * ssz];
            valid_corr_acc(s, (sh, sw), k, (kh, kw), o);
        }
    }
    Ok(out)
}

/// A linear operator between 3-axis tensors together with its adjoint.
pub trait LinearOp {
    fn input_shape(&self) -> (usize, usize, usize);
    fn output_shape(&self) -> (usize, usize, usize);
    fn forward(&self, x: &Tensor3) -> Tensor3;
    fn adjoint(&self, y: &Tensor3) -> Tensor3;
}

/// The synthesis operator `code -> D (*) code` for a fixed filter bank and
/// code-map size.
#[derive(Debug, Clone)]
pub struct ConvSynthesis<'a> {
    atoms: ArrayView4<'a, f64>,
    map_h: usize,
    map_w: usize,
}

impl<'a> ConvSynthesis<'a> {
    pub fn new(atoms: ArrayView4<'a, f64>, map_h: usize, map_w: usize) -> Result<Self> {
        let (j, c, kh, kw) = atoms.dim();
        if j == 0 || c == 0 || kh == 0 || kw == 0 || map_h == 0 || map_w == 0 {
            return shape_err("synthesis operator with an empty axis");
        }
        Ok(Self {
            atoms,
            map_h,
            map_w,
        })
    }
}

impl LinearOp for ConvSynthesis<'_> {
    fn input_shape(&self) -> (usize, usize, usize) {
        (self.atoms.dim().0, self.map_h, self.map_w)
    }

    fn output_shape(&self) -> (usize, usize, usize) {
        let (_, c, kh, kw) = self.atoms.dim();
        (c, self.map_h + kh - 1, self.map_w + kw - 1)
    }

    fn forward(&self, x: &Tensor3) -> Tensor3 {
        assert_eq!(x.dim(), self.input_shape(), "forward input shape");
        synthesize_atoms(self.atoms.view(), x.view()).expect("shapes checked")
    }

    fn adjoint(&self, y: &Tensor3) -> Tensor3 {
        assert_eq!(y.dim(), self.output_shape(), "adjoint input shape");
        analyze_atoms(self.atoms.view(), y.view()).expect("shapes checked")
    }
}

/// Canonical (Frobenius) inner product of two equally shaped tensors.
pub fn inner(a: &Tensor3, b: &Tensor3) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Power-iteration estimate of the largest eigenvalue of `adjoint . forward`,
/// i.e. the squared operator norm. The returned value is the Rayleigh quotient
/// of the last iterate, which never exceeds the true value and does not
/// decrease with `iters`.
pub fn operator_norm_sq(op: &dyn LinearOp, iters: usize, seed: u64) -> f64 {
    let iters = iters.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Tensor3::from_shape_simple_fn(op.input_shape(), || StandardNormal.sample(&mut rng));
    let n = inner(&x, &x).sqrt();
    if n == 0.0 {
        return 0.0;
    }
    x /= n;
    let mut estimate = 0.0;
    for _ in 0..iters {
        let y = op.adjoint(&op.forward(&x));
        estimate = inner(&x, &y);
        let norm = inner(&y, &y).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return 0.0;
        }
        x = y / norm;
    }
    estimate.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array4};
    use rand::Rng;

    fn random_plane(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Plane {
        Plane::from_shape_simple_fn((h, w), || rng.random_range(-1.0..1.0))
    }

    fn random_atoms(rng: &mut ChaCha8Rng, dims: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_simple_fn(dims, || rng.random_range(-1.0..1.0))
    }

    /// Dense matrix of `v -> conv2d_full(a, v)` for a kernel of size `kh x kw`,
    /// built column by column from the index definition.
    fn toeplitz_of(a: &Plane, kh: usize, kw: usize) -> Array2<f64> {
        let (ah, aw) = a.dim();
        let (oh, ow) = (ah + kh - 1, aw + kw - 1);
        let mut m = Array2::zeros((oh * ow, kh * kw));
        for i in 0..oh {
            for j in 0..ow {
                for u in 0..kh {
                    for v in 0..kw {
                        if i >= u && j >= v && i - u < ah && j - v < aw {
                            m[[i * ow + j, u * kw + v]] = a[[i - u, j - v]];
                        }
                    }
                }
            }
        }
        m
    }

    /// Dense matrix of the synthesis operator, one column per code entry.
    fn dense_synthesis(atoms: &Array4<f64>, mh: usize, mw: usize) -> Array2<f64> {
        let (j, c, kh, kw) = atoms.dim();
        let (oh, ow) = (mh + kh - 1, mw + kw - 1);
        let mut m = Array2::zeros((c * oh * ow, j * mh * mw));
        for a in 0..j {
            for p in 0..mh {
                for q in 0..mw {
                    let col = (a * mh + p) * mw + q;
                    for ch in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                m[[(ch * oh + p + u) * ow + q + v, col]] += atoms[[a, ch, u, v]];
                            }
                        }
                    }
                }
            }
        }
        m
    }

    struct Scale(f64, (usize, usize, usize));

    impl LinearOp for Scale {
        fn input_shape(&self) -> (usize, usize, usize) {
            self.1
        }
        fn output_shape(&self) -> (usize, usize, usize) {
            self.1
        }
        fn forward(&self, x: &Tensor3) -> Tensor3 {
            x * self.0
        }
        fn adjoint(&self, y: &Tensor3) -> Tensor3 {
            y * self.0
        }
    }

    #[test]
    fn full_size_law_for_paper_kernels() {
        let a = Plane::ones((8, 8));
        let k = Plane::ones((16, 16));
        assert_eq!(conv2d_full(a.view(), k.view()).unwrap().dim(), (23, 23));
    }

    #[test]
    fn full_with_delta_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_plane(&mut rng, 5, 7);
        let delta = array![[1.0]];
        assert_eq!(conv2d_full(a.view(), delta.view()).unwrap(), a);
    }

    #[test]
    fn full_matches_toeplitz_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_plane(&mut rng, 3, 3);
        let k = random_plane(&mut rng, 2, 2);
        let t = toeplitz_of(&a, 2, 2);
        let kv = Array2::from_shape_vec((4, 1), k.iter().copied().collect()).unwrap();
        let expected = t.dot(&kv);
        let got = conv2d_full(a.view(), k.view()).unwrap();
        for (g, e) in got.iter().zip(expected.iter()) {
            assert!((g - e).abs() < 1e-14);
        }
    }

    #[test]
    fn valid_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_plane(&mut rng, 5, 5);
        let k = random_plane(&mut rng, 3, 3);
        let got = conv2d_valid(a.view(), k.view()).unwrap();
        assert_eq!(got.dim(), (3, 3));
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for u in 0..3 {
                    for v in 0..3 {
                        s += a[[i + u, j + v]] * k[[u, v]];
                    }
                }
                assert!((got[[i, j]] - s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn valid_shape_algebra_and_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_plane(&mut rng, 6, 4);
        let k = random_plane(&mut rng, 3, 2);
        let full = conv2d_full(x.view(), k.view()).unwrap();
        let flipped = k.slice(ndarray::s![..;-1, ..;-1]).to_owned();
        assert_eq!(conv2d_valid(full.view(), flipped.view()).unwrap().dim(), x.dim());
        let unit = array![[1.0]];
        assert_eq!(conv2d_valid(x.view(), unit.view()).unwrap(), x);
    }

    #[test]
    fn shape_errors() {
        let empty = Plane::zeros((0, 3));
        let k = Plane::ones((2, 2));
        assert!(conv2d_full(empty.view(), k.view()).is_err());
        let small = Plane::ones((2, 2));
        let big = Plane::ones((3, 2));
        assert!(conv2d_valid(small.view(), big.view()).is_err());
        let atoms = Array4::<f64>::ones((2, 1, 2, 2));
        let code = Tensor3::ones((3, 4, 4));
        assert!(synthesize_atoms(atoms.view(), code.view()).is_err());
        let signal = Tensor3::ones((2, 5, 5));
        assert!(analyze_atoms(atoms.view(), signal.view()).is_err());
    }

    #[test]
    fn synthesize_unit_atom_and_zero_code() {
        let atoms = Array4::<f64>::ones((1, 1, 1, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let map = random_plane(&mut rng, 4, 3);
        let code = map.clone().insert_axis(ndarray::Axis(0));
        let out = synthesize_atoms(atoms.view(), code.view()).unwrap();
        assert_eq!(out.index_axis(ndarray::Axis(0), 0), map);

        let atoms = random_atoms(&mut rng, (2, 3, 3, 3));
        let zero = Tensor3::zeros((2, 4, 4));
        let out = synthesize_atoms(atoms.view(), zero.view()).unwrap();
        assert_eq!(out.dim(), (3, 6, 6));
        assert!(out.iter().all(|&v| v == 0.0));
        let back = analyze_atoms(atoms.view(), Tensor3::zeros((3, 6, 6)).view()).unwrap();
        assert!(back.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn synthesize_and_analyze_match_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let atoms = random_atoms(&mut rng, (2, 2, 3, 3));
        let m = dense_synthesis(&atoms, 4, 4);
        let code = Tensor3::from_shape_simple_fn((2, 4, 4), || rng.random_range(-1.0..1.0));
        let out = synthesize_atoms(atoms.view(), code.view()).unwrap();
        let x = Array2::from_shape_vec((32, 1), code.iter().copied().collect()).unwrap();
        let expected = m.dot(&x);
        for (g, e) in out.iter().zip(expected.iter()) {
            assert!((g - e).abs() < 1e-13);
        }

        let signal = Tensor3::from_shape_simple_fn((2, 6, 6), || rng.random_range(-1.0..1.0));
        let back = analyze_atoms(atoms.view(), signal.view()).unwrap();
        let s = Array2::from_shape_vec((72, 1), signal.iter().copied().collect()).unwrap();
        let expected = m.t().dot(&s);
        for (g, e) in back.iter().zip(expected.iter()) {
            assert!((g - e).abs() < 1e-13);
        }
    }

    #[test]
    fn adjoint_identity_on_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let j = rng.random_range(1..4);
            let c = rng.random_range(1..4);
            let kh = rng.random_range(1..5);
            let kw = rng.random_range(1..5);
            let mh = rng.random_range(1..7);
            let mw = rng.random_range(1..7);
            let atoms = random_atoms(&mut rng, (j, c, kh, kw));
            let op = ConvSynthesis::new(atoms.view(), mh, mw).unwrap();
            let x = Tensor3::from_shape_simple_fn(op.input_shape(), || rng.random_range(-1.0..1.0));
            let y = Tensor3::from_shape_simple_fn(op.output_shape(), || rng.random_range(-1.0..1.0));
            let lhs = inner(&op.forward(&x), &y);
            let rhs = inner(&x, &op.adjoint(&y));
            let scale = inner(&x, &x).sqrt() * inner(&y, &y).sqrt();
            assert!((lhs - rhs).abs() / scale < 1e-10);
        }
    }

    #[test]
    fn operator_norm_simple_cases() {
        let id = Scale(1.0, (2, 3, 3));
        assert!((operator_norm_sq(&id, 5, 0) - 1.0).abs() < 1e-12);
        let twice = Scale(2.0, (1, 4, 4));
        assert!((operator_norm_sq(&twice, 5, 0) - 4.0).abs() < 1e-12);
        let zero = Scale(0.0, (1, 2, 2));
        assert_eq!(operator_norm_sq(&zero, 5, 0), 0.0);
    }

    #[test]
    fn operator_norm_matches_dense_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let atoms = random_atoms(&mut rng, (2, 1, 3, 3));
        let m = dense_synthesis(&atoms, 4, 4);
        let gram = m.t().dot(&m);
        let n = gram.nrows();
        let dense = nalgebra::DMatrix::from_fn(n, n, |r, c| gram[[r, c]]);
        let lambda = dense
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let op = ConvSynthesis::new(atoms.view(), 4, 4).unwrap();
        let est = operator_norm_sq(&op, 200, 11);
        assert!((est - lambda).abs() / lambda < 0.01, "{est} vs {lambda}");
        assert!(est <= lambda * (1.0 + 1e-12));
    }

    #[test]
    fn operator_norm_is_monotone_in_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let atoms = random_atoms(&mut rng, (3, 2, 3, 3));
        let op = ConvSynthesis::new(atoms.view(), 5, 5).unwrap();
        let mut prev = 0.0;
        for iters in 1..40 {
            let est = operator_norm_sq(&op, iters, 42);
            assert!(est >= prev * (1.0 - 1e-12), "iters {iters}: {est} < {prev}");
            prev = est;
        }
    }
}
