use mlcsc::conv::{conv2d_full, operator_norm_sq, ConvSynthesis};
use mlcsc::data::{local_contrast_normalize, make_batches, preprocess, PreprocessConfig};
use mlcsc::fista::{fista_solve, soft_threshold, FistaParams};
use mlcsc::model::{compose_effective, normalize_atoms, Atoms, EffectiveDictionary, LayerDictionary, MlcscModel};
use mlcsc::{Plane, Tensor3};
use ndarray::{Array2, Array4, Axis};
use proptest::prelude::*;

fn plane(h: usize, w: usize) -> impl Strategy<Value = Plane> {
    prop::collection::vec(-2.0..2.0f64, h * w).prop_map(move |v| Array2::from_shape_vec((h, w), v).unwrap())
}

fn sized_plane(max: usize) -> impl Strategy<Value = Plane> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| plane(h, w))
}

fn atoms(n: usize, c: usize, h: usize, w: usize) -> impl Strategy<Value = Array4<f64>> {
    prop::collection::vec(-1.0..1.0f64, n * c * h * w)
        .prop_map(move |v| Array4::from_shape_vec((n, c, h, w), v).unwrap())
}

fn close(a: &Plane, b: &Plane, tol: f64) -> bool {
    let scale = a.iter().chain(b.iter()).fold(1.0f64, |m, v| m.max(v.abs()));
    a.dim() == b.dim() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn full_convolution_is_bilinear(
        (a, b) in (1..7usize, 1..7usize).prop_flat_map(|(h, w)| (plane(h, w), plane(h, w))),
        (k, k2) in (1..5usize, 1..5usize).prop_flat_map(|(h, w)| (plane(h, w), plane(h, w))),
        alpha in -3.0..3.0f64,
    ) {
        let lhs = conv2d_full((&a * alpha + &b).view(), k.view()).unwrap();
        let rhs = conv2d_full(a.view(), k.view()).unwrap() * alpha + conv2d_full(b.view(), k.view()).unwrap();
        prop_assert!(close(&lhs, &rhs, 1e-12));
        let lhs = conv2d_full(a.view(), (&k * alpha + &k2).view()).unwrap();
        let rhs = conv2d_full(a.view(), k.view()).unwrap() * alpha + conv2d_full(a.view(), k2.view()).unwrap();
        prop_assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn size_law_up_to_four_layers(kernels in prop::collection::vec((1..=8usize, 1..=8usize), 1..=4)) {
        let mut channels = 1;
        let layers: Vec<LayerDictionary> = kernels
            .iter()
            .enumerate()
            .map(|(i, &(h, w))| {
                let d = LayerDictionary::new(Array4::from_elem((2, channels, h, w), 0.5), i + 1).unwrap();
                channels = 2;
                d
            })
            .collect();
        let eh: usize = kernels.iter().map(|k| k.0).sum::<usize>() + 1 - kernels.len();
        let ew: usize = kernels.iter().map(|k| k.1).sum::<usize>() + 1 - kernels.len();
        let model = MlcscModel::new(layers, (eh + 3, ew + 2)).unwrap();
        let eff = compose_effective(&model, kernels.len()).unwrap();
        prop_assert_eq!(eff.kernel_size(), (eh, ew));
        prop_assert_eq!(model.effective_kernel_size(), (eh, ew));
        prop_assert_eq!(model.code_shape(), (2, 4, 3));
    }

    #[test]
    fn power_iteration_is_monotone(a in atoms(2, 1, 3, 3), seed in 0..1000u64) {
        let op = ConvSynthesis::new(a.view(), 5, 4).unwrap();
        let mut prev = 0.0;
        for iters in 1..12 {
            let est = operator_norm_sq(&op, iters, seed);
            prop_assert!(est >= prev * (1.0 - 1e-12), "{} then {}", prev, est);
            prev = est;
        }
    }

    #[test]
    fn normalization_keeps_support_and_rescaling_identity(
        raw in atoms(3, 1, 3, 3),
        mask in prop::collection::vec(any::<bool>(), 27),
        code in prop::collection::vec(-1.0..1.0f64, 3 * 4 * 5),
    ) {
        let mut d = raw.clone();
        for (v, keep) in d.iter_mut().zip(&mask) {
            if !keep {
                *v = 0.0;
            }
        }
        // Every atom keeps at least its centre tap.
        for j in 0..3 {
            d[[j, 0, 1, 1]] = 0.25 + raw[[j, 0, 1, 1]].abs();
        }
        let eff = EffectiveDictionary::new(d.clone(), 1).unwrap();
        let (unit, norms) = normalize_atoms(&eff).unwrap();
        for (a, b) in d.iter().zip(unit.atoms().iter()) {
            prop_assert_eq!(*a == 0.0, *b == 0.0);
        }
        for (atom, _) in unit.atoms().outer_iter().zip(&norms) {
            let n = atom.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-12);
        }
        let code = Tensor3::from_shape_vec((3, 4, 5), code).unwrap();
        let mut scaled = code.clone();
        for (mut m, &n) in scaled.axis_iter_mut(Axis(0)).zip(&norms) {
            m.mapv_inplace(|v| v * n);
        }
        let direct = eff.synthesize(&mlcsc::SparseCode::new(code, 1)).unwrap();
        let via_unit = unit.synthesize(&mlcsc::SparseCode::new(scaled, 1)).unwrap();
        prop_assert!(close(&direct, &via_unit, 1e-12));
    }

    #[test]
    fn threshold_never_grows_support(x in atoms(2, 2, 3, 3), zeta in 0.0..1.0f64) {
        let t = soft_threshold(&x, zeta).unwrap();
        for (a, b) in x.iter().zip(t.iter()) {
            prop_assert!(b.abs() <= a.abs());
            prop_assert!(*a != 0.0 || *b == 0.0);
            prop_assert!(*b == 0.0 || b.signum() == a.signum());
        }
    }

    #[test]
    fn fista_never_ends_above_its_start(
        a in atoms(2, 1, 3, 3),
        y in plane(7, 6),
        lambda in 0.0..1.0f64,
        max_iters in 1..60usize,
    ) {
        let eff = EffectiveDictionary::new(a, 1).unwrap();
        let params = FistaParams { lambda, max_iters, ..FistaParams::default() };
        let r = fista_solve(&y, &eff, &params).unwrap();
        prop_assert!(r.final_objective() <= r.objective_trace[0]);
        let again = fista_solve(&y, &eff, &params).unwrap();
        prop_assert_eq!(r.code.maps, again.code.maps);
    }

    #[test]
    fn batches_partition_the_corpus(len in 1..200usize, batch in 1..50usize, seed in any::<u64>()) {
        let batches = make_batches(len, batch, seed).unwrap();
        prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= batch));
        prop_assert_eq!(batches.len(), len.div_ceil(batch));
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
    }

    #[test]
    fn lcn_output_is_finite(img in sized_plane(20), scale in prop::sample::select(vec![0.0, 1e-300, 1.0, 1e150])) {
        let out = local_contrast_normalize(&(img * scale), 9, 1e-8).unwrap();
        prop_assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn preprocessing_is_deterministic(img in sized_plane(24)) {
        let cfg = PreprocessConfig { size: (10, 12), ..PreprocessConfig::default() };
        let a = preprocess(&img, &cfg).unwrap();
        let b = preprocess(&img, &cfg).unwrap();
        prop_assert_eq!(a.dim(), (10, 12));
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn lcn_of_zero_image_is_zero() {
    let out = local_contrast_normalize(&Plane::zeros((9, 9)), 9, 1e-8).unwrap();
    assert!(out.iter().all(|&v| v == 0.0));
}

#[test]
fn strict_size_rejects_other_shapes() {
    let cfg = PreprocessConfig {
        size: (8, 8),
        resize: false,
        lcn: false,
        ..PreprocessConfig::default()
    };
    assert!(preprocess(&Plane::zeros((8, 9)), &cfg).is_err());
    let img = Plane::from_shape_fn((8, 8), |(y, x)| (y * 8 + x) as f64);
    assert_eq!(preprocess(&img, &cfg).unwrap(), img);
}
