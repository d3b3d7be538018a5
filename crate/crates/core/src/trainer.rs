//! Multi-layer convolutional dictionary learning.
//!
//! Each training step codes one image against the normalized deepest
//! effective dictionary, rescales the code back to the unnormalized
//! dictionary, and takes one gradient step on every layer. Layers deeper
//! than the first are soft-thresholded before their atoms are renormalized.

use log::{debug, warn};
use ndarray::{Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::conv::{analyze_atoms, valid_corr_acc, Plane, Tensor3};
use crate::data::make_batches;
use crate::error::{domain_err, shape_err, Error, Result};
use crate::fista::{fista_solve, shrink, FistaParams, FistaResult};
use crate::model::{
    compose_effective, normalize_atoms, raw_atom_norms, sparsity_fraction, Atoms,
    EffectiveDictionary, LayerDictionary, MlcscModel, SparseCode, DEGENERATE_NORM,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// Learning rate of the dictionary gradient step.
    pub eta: f64,
    /// Soft-threshold levels for layers `2..=L`; layer 1 is never thresholded.
    pub zetas: Vec<f64>,
    pub epochs: usize,
    /// Only affects the order in which samples are visited.
    pub batch_size: usize,
    pub seed: u64,
    /// Sparse-coding settings; `fista.lambda` is the deepest-layer sparsity weight.
    pub fista: FistaParams,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            zetas: vec![1e-4],
            epochs: 1000,
            batch_size: 20,
            seed: 0,
            fista: FistaParams::default(),
        }
    }
}

impl TrainingConfig {
    pub fn lambda(&self) -> f64 {
        self.fista.lambda
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return domain_err(format!("eta must be non-negative, got {}", self.eta));
        }
        if self.zetas.len() != num_layers - 1 {
            return domain_err(format!(
                "expected {} zeta values (one per layer after the first), got {}",
                num_layers - 1,
                self.zetas.len()
            ));
        }
        if self.zetas.iter().any(|z| !(*z >= 0.0)) {
            return domain_err("zeta values must be non-negative");
        }
        if self.epochs == 0 {
            return domain_err("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return domain_err("batch_size must be at least 1");
        }
        self.fista.validate()
    }
}

/// Dataset-level diagnostics after one epoch, measured with frozen dictionaries.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean squared pixel error of the reconstructions.
    pub mse: f64,
    /// Fraction of nonzero dictionary entries, per layer.
    pub dict_density: Vec<f64>,
    /// Mean fraction of nonzero deepest-code entries.
    pub code_density: f64,
    pub mean_fista_iters: f64,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainingState {
    pub model: MlcscModel,
    /// Completed epochs.
    pub epoch: usize,
    pub metrics_history: Vec<EpochMetrics>,
    /// Drives dead-atom re-initialization.
    pub rng: ChaCha8Rng,
}

impl TrainingState {
    pub fn new(model: MlcscModel, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self {
            model,
            epoch: 0,
            metrics_history: Vec::new(),
            rng,
        }
    }
}

/// Per-sample outcome of a training step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Mean squared error of the reconstruction before the dictionary update.
    pub mse: f64,
    pub code_density: f64,
    pub fista_iters: usize,
    /// `(layer, atom)` pairs that were re-initialized after dying.
    pub reinitialized: Vec<(usize, usize)>,
}

/// Result of coding one image with the current model.
#[derive(Debug, Clone)]
pub struct Encoding {
    /// Deepest code for the unnormalized effective dictionary.
    pub code: SparseCode,
    /// The unnormalized effective dictionary `D^(L)`.
    pub effective: EffectiveDictionary,
    pub fista: FistaResult,
}

impl Encoding {
    pub fn reconstruction(&self) -> Result<Plane> {
        self.effective.synthesize(&self.code)
    }
}

/// Codes `y` against the normalized deepest effective dictionary and divides
/// each code map by its atom's norm.
pub fn encode(model: &MlcscModel, y: &Plane, fista: &FistaParams) -> Result<Encoding> {
    if y.dim() != model.input_shape() {
        return shape_err(format!(
            "image is {:?} but the model expects {:?}",
            y.dim(),
            model.input_shape()
        ));
    }
    let effective = compose_effective(model, model.num_layers())?;
    let (normalized, norms) = normalize_atoms(&effective)?;
    let result = fista_solve(y, &normalized, fista)?;
    let mut code = result.code.clone();
    code.layer_index = model.num_layers();
    for (mut map, &n) in code.maps.outer_iter_mut().zip(&norms) {
        map.mapv_inplace(|v| v / n);
    }
    Ok(Encoding {
        code,
        effective,
        fista: result,
    })
}

fn squared_error(a: &Plane, b: &Plane) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Gradients of `||y - D^(L) (*) code||^2` with respect to every layer,
/// indexed from layer 1.
pub fn data_term_gradients(model: &MlcscModel, code: &SparseCode, y: &Plane) -> Result<Vec<Array4<f64>>> {
    if code.maps.dim() != model.code_shape() {
        return shape_err(format!(
            "code shape {:?} does not match the model's {:?}",
            code.maps.dim(),
            model.code_shape()
        ));
    }
    if y.dim() != model.input_shape() {
        return shape_err("image shape does not match the model");
    }
    let layers = model.layers();
    let depth = layers.len();

    // signals[i] is the layer-i signal; signals[0] is the reconstruction.
    let mut signals: Vec<Tensor3> = vec![Tensor3::zeros((0, 0, 0)); depth + 1];
    signals[depth] = code.maps.clone();
    for i in (1..=depth).rev() {
        signals[i - 1] = layers[i - 1].synthesize(&signals[i])?;
    }

    let mut upstream = signals[0].clone();
    upstream.zip_mut_with(&y.view().insert_axis(Axis(0)), |r, &t| *r = 2.0 * (*r - t));

    let mut grads = Vec::with_capacity(depth);
    for i in 1..=depth {
        let layer = &layers[i - 1];
        let below = &signals[i];
        let (j, c, kh, kw) = layer.atoms().dim();
        let (_, gh, gw) = upstream.dim();
        let (_, mh, mw) = below.dim();
        let mut grad = Array4::zeros((j, c, kh, kw));
        let up = upstream.as_slice().unwrap();
        let bl = below.as_slice().unwrap();
        for atom in 0..j {
            let m = &bl[atom * mh * mw..(atom + 1) * mh * mw];
            for ch in 0..c {
                let g = &up[ch * gh * gw..(ch + 1) * gh * gw];
                let mut out = grad.slice_mut(ndarray::s![atom, ch, .., ..]);
                let out = out.as_slice_mut().unwrap();
                valid_corr_acc(g, (gh, gw), m, (mh, mw), out);
            }
        }
        grads.push(grad);
        if i < depth {
            upstream = analyze_atoms(layer.atoms().view(), upstream.view())?;
        }
    }
    Ok(grads)
}

/// Gradient of `||y - D^(L) (*) code||^2` with respect to the 1-based `layer`.
pub fn data_term_gradient(model: &MlcscModel, code: &SparseCode, y: &Plane, layer: usize) -> Result<Array4<f64>> {
    if layer == 0 || layer > model.num_layers() {
        return domain_err(format!(
            "layer {layer} out of range 1..={}",
            model.num_layers()
        ));
    }
    Ok(data_term_gradients(model, code, y)?.swap_remove(layer - 1))
}

/// Replaces atoms whose norm is degenerate by unit-variance Gaussian noise.
fn revive_dead_atoms(layer: &mut LayerDictionary, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let norms = raw_atom_norms(layer.atoms());
    let mut revived = Vec::new();
    for (j, &n) in norms.iter().enumerate() {
        if n > DEGENERATE_NORM {
            continue;
        }
        let mut atom = layer.atoms_mut().index_axis_mut(Axis(0), j);
        atom.mapv_inplace(|_| StandardNormal.sample(rng));
        revived.push(j);
    }
    revived
}

/// One ML-CDL update on a single image.
pub fn train_step(state: &mut TrainingState, y: &Plane, cfg: &TrainingConfig) -> Result<StepRecord> {
    let enc = encode(&state.model, y, &cfg.fista)?;
    let recon = enc.reconstruction()?;
    let mut record = StepRecord {
        mse: squared_error(&recon, y) / y.len() as f64,
        code_density: sparsity_fraction(&enc.code.maps),
        fista_iters: enc.fista.iterations_used,
        reinitialized: Vec::new(),
    };
    if cfg.eta == 0.0 {
        return Ok(record);
    }

    // All gradients come from the same pre-update snapshot.
    let grads = data_term_gradients(&state.model, &enc.code, y)?;
    let depth = state.model.num_layers();
    for i in (1..=depth).rev() {
        let grad = &grads[i - 1];
        let zeta = if i >= 2 { cfg.zetas[i - 2] } else { 0.0 };
        let layer = &mut state.model.layers_mut()[i - 1];
        let atoms = layer.atoms_mut();
        if i >= 2 {
            atoms.zip_mut_with(grad, |d, &g| *d = shrink(*d - cfg.eta * g, zeta));
        } else {
            atoms.zip_mut_with(grad, |d, &g| *d -= cfg.eta * g);
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("layer {i} after the dictionary update")));
        }
        for j in revive_dead_atoms(layer, &mut state.rng) {
            warn!("layer {i} atom {j} died and was re-initialized");
            record.reinitialized.push((i, j));
        }
        let (normalized, _) = normalize_atoms(layer)?;
        *layer = normalized;
    }
    Ok(record)
}

/// Seed of the sample order for a 0-based epoch.
pub fn epoch_order_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Codes the whole dataset with the current (frozen) model.
pub fn evaluate(model: &MlcscModel, dataset: &[Plane], fista: &FistaParams, epoch: usize) -> Result<EpochMetrics> {
    if dataset.is_empty() {
        return domain_err("cannot evaluate an empty dataset");
    }
    let per_image: Vec<(f64, f64, usize)> = dataset
        .par_iter()
        .map(|y| {
            let enc = encode(model, y, fista)?;
            let recon = enc.reconstruction()?;
            Ok((
                squared_error(&recon, y),
                sparsity_fraction(&enc.code.maps),
                enc.fista.iterations_used,
            ))
        })
        .collect::<Result<_>>()?;
    let n = dataset.len() as f64;
    let pixels: usize = dataset.iter().map(|y| y.len()).sum();
    Ok(EpochMetrics {
        epoch,
        mse: per_image.iter().map(|p| p.0).sum::<f64>() / pixels as f64,
        dict_density: model
            .layers()
            .iter()
            .map(|l| sparsity_fraction(l.atoms()))
            .collect(),
        code_density: per_image.iter().map(|p| p.1).sum::<f64>() / n,
        mean_fista_iters: per_image.iter().map(|p| p.2 as f64).sum::<f64>() / n,
    })
}

/// The full training objective on `dataset`: data fidelity plus the code l1
/// term for every image, plus the deep-dictionary l1 penalties once.
pub fn full_objective(model: &MlcscModel, dataset: &[Plane], cfg: &TrainingConfig) -> Result<f64> {
    let per_image: Vec<f64> = dataset
        .par_iter()
        .map(|y| {
            let enc = encode(model, y, &cfg.fista)?;
            let recon = enc.reconstruction()?;
            Ok(squared_error(&recon, y) + cfg.lambda() * enc.code.l1_norm())
        })
        .collect::<Result<_>>()?;
    let dict_penalty: f64 = model
        .layers()
        .iter()
        .skip(1)
        .zip(&cfg.zetas)
        .map(|(l, z)| z * l.atoms().iter().map(|v| v.abs()).sum::<f64>())
        .sum();
    Ok(per_image.iter().sum::<f64>() + dict_penalty)
}

fn check_dataset(model: &MlcscModel, dataset: &[Plane]) -> Result<()> {
    if dataset.is_empty() {
        return domain_err("training set is empty");
    }
    if let Some(i) = dataset.iter().position(|y| y.dim() != model.input_shape()) {
        return shape_err(format!(
            "image {i} is {:?} but the model expects {:?}",
            dataset[i].dim(),
            model.input_shape()
        ));
    }
    Ok(())
}

/// Runs one epoch: every sample once, in shuffled batch order, then the
/// frozen-dictionary metrics pass. `on_step` sees the state after each step.
pub fn train_epoch(
    state: &mut TrainingState,
    dataset: &[Plane],
    cfg: &TrainingConfig,
    on_step: &mut dyn FnMut(&TrainingState, &StepRecord),
) -> Result<EpochMetrics> {
    check_dataset(&state.model, dataset)?;
    let batches = make_batches(dataset.len(), cfg.batch_size, epoch_order_seed(cfg.seed, state.epoch))?;
    for batch in &batches {
        for &k in batch {
            let record = train_step(state, &dataset[k], cfg)?;
            on_step(state, &record);
        }
    }
    state.epoch += 1;
    let metrics = evaluate(&state.model, dataset, &cfg.fista, state.epoch)?;
    debug!(
        "epoch {}: mse {:.6e}, code density {:.4}, dictionary density {:?}",
        metrics.epoch, metrics.mse, metrics.code_density, metrics.dict_density
    );
    state.metrics_history.push(metrics.clone());
    Ok(metrics)
}

/// Continues training until `cfg.epochs` epochs are complete, calling
/// `on_epoch` after each one.
pub fn run_epochs(
    state: &mut TrainingState,
    dataset: &[Plane],
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&TrainingState) -> Result<()>,
) -> Result<()> {
    cfg.validate(state.model.num_layers())?;
    check_dataset(&state.model, dataset)?;
    while state.epoch < cfg.epochs {
        train_epoch(state, dataset, cfg, &mut |_, _| {})?;
        on_epoch(state)?;
    }
    Ok(())
}

/// Trains `init` on `dataset` for `cfg.epochs` epochs.
pub fn fit(dataset: &[Plane], cfg: &TrainingConfig, init: MlcscModel) -> Result<(MlcscModel, Vec<EpochMetrics>)> {
    let mut state = TrainingState::new(init, cfg.seed);
    run_epochs(&mut state, dataset, cfg, |_| Ok(()))?;
    Ok((state.model, state.metrics_history))
}

/// Number of atoms and kernel size of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub num_atoms: usize,
    pub kernel: (usize, usize),
}

impl LayerSpec {
    pub fn new(num_atoms: usize, kernel_h: usize, kernel_w: usize) -> Self {
        Self {
            num_atoms,
            kernel: (kernel_h, kernel_w),
        }
    }
}

/// Gaussian random dictionaries with unit-norm atoms, deterministic per seed.
pub fn init_model(arch: &[LayerSpec], input_shape: (usize, usize), seed: u64) -> Result<MlcscModel> {
    if arch.is_empty() {
        return domain_err("architecture has no layers");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut channels = 1;
    let mut layers = Vec::with_capacity(arch.len());
    for (i, spec) in arch.iter().enumerate() {
        let (kh, kw) = spec.kernel;
        if spec.num_atoms == 0 || kh == 0 || kw == 0 {
            return domain_err(format!("layer {} has an empty dimension: {spec:?}", i + 1));
        }
        let atoms = Array4::from_shape_simple_fn((spec.num_atoms, channels, kh, kw), || {
            StandardNormal.sample(&mut rng)
        });
        let (layer, _) = normalize_atoms(&LayerDictionary::new(atoms, i + 1)?)?;
        layers.push(layer);
        channels = spec.num_atoms;
    }
    MlcscModel::new(layers, input_shape)
}
