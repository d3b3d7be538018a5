//! The ML-CSC model: layer dictionaries, effective dictionaries and
//! top-down inference.
//!
//! Layer indices are 1-based throughout, matching the usual notation where
//! `D_1` acts on the image and `D_L` is the deepest layer. Layer `i` has
//! atoms shaped `num_atoms_i x num_atoms_{i-1} x kh_i x kw_i` (layer 1 has a
//! single input channel).

use ndarray::{s, Array3, Array4, ArrayBase, Axis, Data, Dimension};

use crate::conv::{synthesize_atoms, Plane, Tensor3};
use crate::error::{domain_err, shape_err, Error, Result};

/// Atoms whose norm falls at or below this value cannot be normalized.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Anything that stores a bank of atoms as `num_atoms x channels x h x w`.
pub trait Atoms {
    fn atoms(&self) -> &Array4<f64>;
    fn atoms_mut(&mut self) -> &mut Array4<f64>;

    fn num_atoms(&self) -> usize {
        self.atoms().dim().0
    }

    fn kernel_size(&self) -> (usize, usize) {
        let (_, _, h, w) = self.atoms().dim();
        (h, w)
    }
}

fn check_atoms(atoms: &Array4<f64>) -> Result<()> {
    let (j, c, h, w) = atoms.dim();
    if j == 0 || c == 0 || h == 0 || w == 0 {
        return shape_err(format!("dictionary with an empty axis: {j}x{c}x{h}x{w}"));
    }
    if atoms.iter().any(|v| !v.is_finite()) {
        return domain_err("dictionary contains non-finite entries");
    }
    Ok(())
}

/// One layer's filter bank `D_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDictionary {
    atoms: Array4<f64>,
    layer_index: usize,
}

impl LayerDictionary {
    pub fn new(atoms: Array4<f64>, layer_index: usize) -> Result<Self> {
        if layer_index == 0 {
            return domain_err("layer indices start at 1");
        }
        check_atoms(&atoms)?;
        Ok(Self {
            atoms: atoms.as_standard_layout().into_owned(),
            layer_index,
        })
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn in_channels(&self) -> usize {
        self.atoms.dim().1
    }

    /// Synthesizes the layer below from this layer's code maps.
    pub fn synthesize(&self, code: &Tensor3) -> Result<Tensor3> {
        synthesize_atoms(self.atoms.view(), code.view())
    }
}

impl Atoms for LayerDictionary {
    fn atoms(&self) -> &Array4<f64> {
        &self.atoms
    }

    fn atoms_mut(&mut self) -> &mut Array4<f64> {
        &mut self.atoms
    }
}

/// The composed dictionary `D^(i) = D_1 (*) ... (*) D_i`: one single-channel
/// input-space atom per atom of layer `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveDictionary {
    atoms: Array4<f64>,
    depth: usize,
}

impl EffectiveDictionary {
    pub fn new(atoms: Array4<f64>, depth: usize) -> Result<Self> {
        check_atoms(&atoms)?;
        if atoms.dim().1 != 1 {
            return shape_err("effective atoms must have a single channel");
        }
        Ok(Self {
            atoms: atoms.as_standard_layout().into_owned(),
            depth,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Code-map size for which synthesis returns an `h x w` image.
    pub fn code_size_for(&self, (h, w): (usize, usize)) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel_size();
        if kh > h || kw > w {
            return shape_err(format!(
                "effective atoms {kh}x{kw} do not fit in a {h}x{w} image"
            ));
        }
        Ok((h - kh + 1, w - kw + 1))
    }

    /// `D^(i) (*) code`, returned as a plane.
    pub fn synthesize(&self, code: &SparseCode) -> Result<Plane> {
        let out = synthesize_atoms(self.atoms.view(), code.maps.view())?;
        Ok(out.index_axis_move(Axis(0), 0))
    }
}

impl Atoms for EffectiveDictionary {
    fn atoms(&self) -> &Array4<f64> {
        &self.atoms
    }

    fn atoms_mut(&mut self) -> &mut Array4<f64> {
        &mut self.atoms
    }
}

/// Coefficient maps of one layer, one map per atom.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub maps: Tensor3,
    pub layer_index: usize,
}

impl SparseCode {
    pub fn new(maps: Tensor3, layer_index: usize) -> Self {
        Self { maps, layer_index }
    }

    pub fn zeros(shape: (usize, usize, usize), layer_index: usize) -> Self {
        Self::new(Tensor3::zeros(shape), layer_index)
    }

    pub fn l1_norm(&self) -> f64 {
        self.maps.iter().map(|v| v.abs()).sum()
    }

    pub fn l0_norm(&self) -> usize {
        self.maps.iter().filter(|&&v| v != 0.0).count()
    }
}

/// An ordered stack of layer dictionaries acting on single-channel images of
/// a fixed size.
#[derive(Debug, Clone, PartialEq)]
pub struct MlcscModel {
    layers: Vec<LayerDictionary>,
    input_shape: (usize, usize),
}

impl MlcscModel {
    pub fn new(layers: Vec<LayerDictionary>, input_shape: (usize, usize)) -> Result<Self> {
        if layers.is_empty() {
            return domain_err("a model needs at least one layer");
        }
        let mut expected_channels = 1;
        for (i, layer) in layers.iter().enumerate() {
            if layer.layer_index() != i + 1 {
                return domain_err(format!(
                    "layer at position {} is tagged as layer {}",
                    i + 1,
                    layer.layer_index()
                ));
            }
            if layer.in_channels() != expected_channels {
                return domain_err(format!(
                    "layer {} expects {} input channels but the layer below has {} atoms",
                    i + 1,
                    layer.in_channels(),
                    expected_channels
                ));
            }
            expected_channels = layer.num_atoms();
        }
        let model = Self {
            layers,
            input_shape,
        };
        let (eh, ew) = model.effective_kernel_size();
        if eh > input_shape.0 || ew > input_shape.1 {
            return shape_err(format!(
                "effective atoms {eh}x{ew} exceed the {}x{} input",
                input_shape.0, input_shape.1
            ));
        }
        Ok(model)
    }

    pub fn layers(&self) -> &[LayerDictionary] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LayerDictionary] {
        &mut self.layers
    }

    /// Layer `D_i` for a 1-based index.
    pub fn layer(&self, index: usize) -> Result<&LayerDictionary> {
        if index == 0 || index > self.layers.len() {
            return domain_err(format!(
                "layer {index} out of range 1..={}",
                self.layers.len()
            ));
        }
        Ok(&self.layers[index - 1])
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.input_shape
    }

    /// Size of the deepest effective atoms, `sum_i (k_i - 1) + 1` per axis.
    pub fn effective_kernel_size(&self) -> (usize, usize) {
        self.layers.iter().fold((1, 1), |(h, w), l| {
            let (kh, kw) = l.kernel_size();
            (h + kh - 1, w + kw - 1)
        })
    }

    /// Shape of the deepest code `gamma_L`, sized so that full synthesis
    /// returns exactly the input shape.
    pub fn code_shape(&self) -> (usize, usize, usize) {
        let (eh, ew) = self.effective_kernel_size();
        let (h, w) = self.input_shape;
        (self.layers.last().unwrap().num_atoms(), h - eh + 1, w - ew + 1)
    }
}

/// Composes layers `1..=depth` into input-space atoms.
///
/// Atom `j` of layer `depth` is treated as a code (one map per channel) and
/// synthesized down through layers `depth - 1, ..., 1`.
pub fn compose_effective(model: &MlcscModel, depth: usize) -> Result<EffectiveDictionary> {
    if depth == 0 || depth > model.num_layers() {
        return domain_err(format!(
            "depth {depth} out of range 1..={}",
            model.num_layers()
        ));
    }
    let layers = model.layers();
    let top = &layers[depth - 1];
    let (eh, ew) = layers[..depth].iter().fold((1, 1), |(h, w), l| {
        let (kh, kw) = l.kernel_size();
        (h + kh - 1, w + kw - 1)
    });
    let mut out = Array4::zeros((top.num_atoms(), 1, eh, ew));
    for (j, atom) in top.atoms().outer_iter().enumerate() {
        let mut signal: Tensor3 = atom.to_owned();
        for layer in layers[..depth - 1].iter().rev() {
            signal = layer.synthesize(&signal)?;
        }
        out.slice_mut(s![j, .., .., ..]).assign(&signal);
    }
    EffectiveDictionary::new(out, depth)
}

pub(crate) fn raw_atom_norms(atoms: &Array4<f64>) -> Vec<f64> {
    atoms
        .outer_iter()
        .map(|a| a.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// The l2 norm of every atom, taken over all channels and pixels.
///
/// An atom that is exactly zero is reported as [`Error::DegenerateAtom`].
pub fn atom_norms<D: Atoms>(d: &D) -> Result<Vec<f64>> {
    let norms = raw_atom_norms(d.atoms());
    if let Some(index) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::DegenerateAtom { index, norm: 0.0 });
    }
    Ok(norms)
}

/// Divides each atom by its own l2 norm and returns the norms.
pub fn normalize_atoms<D: Atoms + Clone>(d: &D) -> Result<(D, Vec<f64>)> {
    let norms = raw_atom_norms(d.atoms());
    if let Some(index) = norms.iter().position(|&n| !(n > DEGENERATE_NORM)) {
        return Err(Error::DegenerateAtom {
            index,
            norm: norms[index],
        });
    }
    let mut out = d.clone();
    for (mut atom, &n) in out.atoms_mut().outer_iter_mut().zip(&norms) {
        atom.mapv_inplace(|v| v / n);
    }
    Ok((out, norms))
}

/// Top-down inference `gamma_{i-1} = D_i (*) gamma_i` from layer `from_layer`.
pub fn project_down(code: &SparseCode, model: &MlcscModel, from_layer: usize) -> Result<SparseCode> {
    if from_layer < 2 || from_layer > model.num_layers() {
        return domain_err(format!(
            "cannot project down from layer {from_layer} of a {}-layer model",
            model.num_layers()
        ));
    }
    let maps = model.layer(from_layer)?.synthesize(&code.maps)?;
    Ok(SparseCode::new(maps, from_layer - 1))
}

/// Reconstructs the image `D^(L) (*) gamma_L`.
pub fn reconstruct(model: &MlcscModel, code: &SparseCode) -> Result<Plane> {
    if code.maps.dim() != model.code_shape() {
        return shape_err(format!(
            "code shape {:?} does not match the model's {:?}",
            code.maps.dim(),
            model.code_shape()
        ));
    }
    let eff = compose_effective(model, model.num_layers())?;
    eff.synthesize(code)
}

/// Fraction of entries that are nonzero.
pub fn sparsity_fraction<S, D>(t: &ArrayBase<S, D>) -> f64
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    if t.is_empty() {
        return 0.0;
    }
    t.iter().filter(|v| v.abs() > 0.0).count() as f64 / t.len() as f64
}

/// Outcome of checking one layer of the generative model.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    pub layer: usize,
    pub l0: usize,
    pub bound: f64,
    pub sparsity_ok: bool,
    /// Frobenius norm of `gamma_{i-1} - D_i (*) gamma_i` (the image for layer 1).
    pub residual: f64,
    pub synthesis_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub layers: Vec<LayerCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.layers.iter().all(|l| l.sparsity_ok && l.synthesis_ok)
    }
}

/// Tolerance on the synthesis residual, relative to `max(1, ||target||)`.
pub const MEMBERSHIP_TOL: f64 = 1e-8;

/// Checks whether `signal` with codes `codes[i] = gamma_{i+1}` satisfies the
/// multi-layer model: every `||gamma_i||_0 <= lambdas[i]` and every layer
/// reproduces the one below it.
pub fn validate_mlcsc(
    model: &MlcscModel,
    signal: &Plane,
    codes: &[SparseCode],
    lambdas: &[f64],
) -> ValidationReport {
    let mut layers = Vec::with_capacity(model.num_layers());
    for (i, layer) in model.layers().iter().enumerate() {
        let code = codes.get(i);
        let bound = lambdas.get(i).copied().unwrap_or(f64::INFINITY);
        let l0 = code.map_or(0, SparseCode::l0_norm);
        let target: Option<Tensor3> = if i == 0 {
            Some(signal.clone().insert_axis(Axis(0)))
        } else {
            codes.get(i - 1).map(|c| c.maps.clone())
        };
        let residual = match (code, target) {
            (Some(code), Some(target)) => match layer.synthesize(&code.maps) {
                Ok(synth) if synth.dim() == target.dim() => {
                    let diff = (&synth - &target).iter().map(|v| v * v).sum::<f64>().sqrt();
                    let scale = target.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
                    (diff, diff <= MEMBERSHIP_TOL * scale)
                }
                _ => (f64::INFINITY, false),
            },
            _ => (f64::INFINITY, false),
        };
        layers.push(LayerCheck {
            layer: i + 1,
            l0,
            bound,
            sparsity_ok: code.is_some() && (l0 as f64) <= bound,
            residual: residual.0,
            synthesis_ok: residual.1,
        });
    }
    ValidationReport { layers }
}

/// Generates a code of the given shape with approximately `density` nonzero
/// Gaussian entries. Used to build synthetic corpora.
pub fn random_sparse_code<R: rand::Rng + ?Sized>(
    rng: &mut R,
    shape: (usize, usize, usize),
    density: f64,
    layer_index: usize,
) -> SparseCode {
    use rand_distr::{Distribution, StandardNormal};
    let maps = Array3::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < density {
            StandardNormal.sample(rng)
        } else {
            0.0
        }
    });
    SparseCode::new(maps, layer_index)
}
