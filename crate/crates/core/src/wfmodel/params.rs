//! Wave-function parameter set with named, tagged slots.
//!
//! Every tensor is tagged `Shared`, `Global` or `Node`: the latter two are
//! the subsets a geometry-conditioned generator replaces per molecule, while
//! `Shared` slots are free parameters of the joint model.

use ndarray::{Array1, Array2, Array3, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// ln(e - 1): softplus_inv(1), the default envelope decay parameter.
pub const SOFTPLUS_INV_ONE: f64 = 0.5413248546129181;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Spin {
    Up,
    Dn,
}

impl Spin {
    pub const BOTH: [Spin; 2] = [Spin::Up, Spin::Dn];
}

/// Ownership tag of a parameter slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotTag {
    /// Free parameter of the joint model.
    Shared,
    /// Replaced per geometry by the generator's global head.
    Global,
    /// Replaced per geometry by the generator's per-nucleus head.
    Node,
}

/// Identifies one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WfSlot {
    InputProj,
    InputW1,
    InputB1,
    InputW2,
    InputB2,
    NucleiEmbed,
    WSingle(usize),
    BSingle(usize),
    WGlobal(usize),
    WDouble(usize),
    BDouble(usize),
    OrbW(Spin),
    OrbB(Spin),
    EnvP(Spin),
    EnvS(Spin),
    DetWeights,
}

impl WfSlot {
    pub fn tag(&self) -> SlotTag {
        match self {
            WfSlot::BSingle(_) | WfSlot::BDouble(_) | WfSlot::OrbB(_) | WfSlot::DetWeights => {
                SlotTag::Global
            }
            WfSlot::NucleiEmbed | WfSlot::EnvP(_) | WfSlot::EnvS(_) => SlotTag::Node,
            _ => SlotTag::Shared,
        }
    }

    pub fn name(&self) -> String {
        match self {
            WfSlot::InputProj => "input_proj".into(),
            WfSlot::InputW1 => "input_mlp_w1".into(),
            WfSlot::InputB1 => "input_mlp_b1".into(),
            WfSlot::InputW2 => "input_mlp_w2".into(),
            WfSlot::InputB2 => "input_mlp_b2".into(),
            WfSlot::NucleiEmbed => "nuclei_embed".into(),
            WfSlot::WSingle(t) => format!("w_single_{t}"),
            WfSlot::BSingle(t) => format!("b_single_{t}"),
            WfSlot::WGlobal(t) => format!("w_global_{t}"),
            WfSlot::WDouble(t) => format!("w_double_{t}"),
            WfSlot::BDouble(t) => format!("b_double_{t}"),
            WfSlot::OrbW(Spin::Up) => "orb_w_up".into(),
            WfSlot::OrbW(Spin::Dn) => "orb_w_dn".into(),
            WfSlot::OrbB(Spin::Up) => "orb_b_up".into(),
            WfSlot::OrbB(Spin::Dn) => "orb_b_dn".into(),
            WfSlot::EnvP(Spin::Up) => "env_p_up".into(),
            WfSlot::EnvP(Spin::Dn) => "env_p_dn".into(),
            WfSlot::EnvS(Spin::Up) => "env_s_up".into(),
            WfSlot::EnvS(Spin::Dn) => "env_s_dn".into(),
            WfSlot::DetWeights => "det_weights".into(),
        }
    }
}

/// Model dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WfDims {
    pub n_up: usize,
    pub n_dn: usize,
    pub n_nuclei: usize,
    /// Single-stream width S.
    pub single_width: usize,
    /// Double-stream width P.
    pub double_width: usize,
    /// Nuclei embedding dimension.
    pub embed_dim: usize,
    /// Number of determinants K.
    pub n_dets: usize,
    /// Number of stream update layers.
    pub n_layers: usize,
}

impl WfDims {
    pub fn n_electrons(&self) -> usize {
        self.n_up + self.n_dn
    }

    pub fn n_spin(&self, spin: Spin) -> usize {
        match spin {
            Spin::Up => self.n_up,
            Spin::Dn => self.n_dn,
        }
    }

    /// Pair-stream width entering layer `t`.
    pub fn pair_in(&self, t: usize) -> usize {
        if t == 0 {
            4
        } else {
            self.double_width
        }
    }

    /// Width of the concatenated single-stream input at layer `t`.
    pub fn single_in(&self, t: usize) -> usize {
        self.single_width + 2 * self.pair_in(t)
    }

    pub fn slots(&self) -> Vec<WfSlot> {
        let mut slots = vec![
            WfSlot::InputProj,
            WfSlot::InputW1,
            WfSlot::InputB1,
            WfSlot::InputW2,
            WfSlot::InputB2,
            WfSlot::NucleiEmbed,
        ];
        for t in 0..self.n_layers {
            slots.push(WfSlot::WSingle(t));
            slots.push(WfSlot::BSingle(t));
            slots.push(WfSlot::WGlobal(t));
            slots.push(WfSlot::WDouble(t));
            slots.push(WfSlot::BDouble(t));
        }
        for spin in Spin::BOTH {
            slots.push(WfSlot::OrbW(spin));
            slots.push(WfSlot::OrbB(spin));
            slots.push(WfSlot::EnvP(spin));
            slots.push(WfSlot::EnvS(spin));
        }
        slots.push(WfSlot::DetWeights);
        slots
    }
}

/// One stream update layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamLayer {
    /// S x (S + 2 * pair_in)
    pub w_single: Array2<f64>,
    pub b_single: Array1<f64>,
    /// S x 2S
    pub w_global: Array2<f64>,
    /// P x pair_in
    pub w_double: Array2<f64>,
    pub b_double: Array1<f64>,
}

/// Depth-2 tanh MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2 {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Mlp2 {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Mlp2 {
            w1: Array2::zeros((hidden, input)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((output, hidden)),
            b2: Array1::zeros(output),
        }
    }

    pub fn init<R: Rng>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Mlp2 {
            w1: fan_in_normal((hidden, input), rng),
            b1: Array1::zeros(hidden),
            w2: fan_in_normal((output, hidden), rng),
            b2: Array1::zeros(output),
        }
    }

    /// Forward pass over row vectors, returning the hidden and output
    /// activations.
    pub fn forward_rows(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut t1 = x.dot(&self.w1.t());
        t1 += &self.b1;
        t1.mapv_inplace(f64::tanh);
        let mut t2 = t1.dot(&self.w2.t());
        t2 += &self.b2;
        t2.mapv_inplace(f64::tanh);
        (t1, t2)
    }
}

/// Fan-in variance-scaled normal initialization.
pub fn fan_in_normal<R: Rng>(shape: (usize, usize), rng: &mut R) -> Array2<f64> {
    let std = (1.0 / shape.1.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).unwrap();
    Array2::from_shape_fn(shape, |_| dist.sample(rng))
}

/// Full parameter set of the wave function.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunctionParams {
    pub dims: WfDims,
    /// embed_dim x 4 projection of the raw electron-nucleus features.
    pub input_proj: Array2<f64>,
    pub input_mlp: Mlp2,
    /// n_nuclei x embed_dim per-nucleus embeddings z_m.
    pub nuclei_embed: Array2<f64>,
    pub layers: Vec<StreamLayer>,
    /// K x n_alpha x S orbital projections.
    pub orb_w_up: Array3<f64>,
    pub orb_w_dn: Array3<f64>,
    /// K x n_alpha orbital biases.
    pub orb_b_up: Array2<f64>,
    pub orb_b_dn: Array2<f64>,
    /// K x n_alpha x M envelope gate/decay pre-activations.
    pub env_p_up: Array3<f64>,
    pub env_p_dn: Array3<f64>,
    pub env_s_up: Array3<f64>,
    pub env_s_dn: Array3<f64>,
    /// K determinant weights.
    pub det_weights: Array1<f64>,
}

impl WaveFunctionParams {
    pub fn zeros(dims: WfDims) -> Self {
        let s = dims.single_width;
        let p = dims.double_width;
        let d = dims.embed_dim;
        let k = dims.n_dets;
        let m = dims.n_nuclei;
        let layers = (0..dims.n_layers)
            .map(|t| StreamLayer {
                w_single: Array2::zeros((s, dims.single_in(t))),
                b_single: Array1::zeros(s),
                w_global: Array2::zeros((s, 2 * s)),
                w_double: Array2::zeros((p, dims.pair_in(t))),
                b_double: Array1::zeros(p),
            })
            .collect();
        WaveFunctionParams {
            dims,
            input_proj: Array2::zeros((d, 4)),
            input_mlp: Mlp2::zeros(d, s, s),
            nuclei_embed: Array2::zeros((m, d)),
            layers,
            orb_w_up: Array3::zeros((k, dims.n_up, s)),
            orb_w_dn: Array3::zeros((k, dims.n_dn, s)),
            orb_b_up: Array2::zeros((k, dims.n_up)),
            orb_b_dn: Array2::zeros((k, dims.n_dn)),
            env_p_up: Array3::zeros((k, dims.n_up, m)),
            env_p_dn: Array3::zeros((k, dims.n_dn, m)),
            env_s_up: Array3::zeros((k, dims.n_up, m)),
            env_s_dn: Array3::zeros((k, dims.n_dn, m)),
            det_weights: Array1::zeros(k),
        }
    }

    /// Default initialization: variance-scaled weights, zero biases, unit
    /// envelopes (pi = 1/2, sigma = 1 per bohr) and uniform determinant
    /// weights 1/K.
    pub fn init<R: Rng>(dims: WfDims, rng: &mut R) -> Self {
        let mut params = Self::zeros(dims);
        let s = dims.single_width;
        params.input_proj = fan_in_normal((dims.embed_dim, 4), rng);
        params.input_mlp = Mlp2::init(dims.embed_dim, s, s, rng);
        for (t, layer) in params.layers.iter_mut().enumerate() {
            layer.w_single = fan_in_normal((s, dims.single_in(t)), rng);
            layer.w_global = fan_in_normal((s, 2 * s), rng);
            layer.w_double = fan_in_normal((dims.double_width, dims.pair_in(t)), rng);
        }
        for spin in Spin::BOTH {
            let n = dims.n_spin(spin);
            let w = fan_in_normal((dims.n_dets * n, s), rng)
                .into_shape_with_order((dims.n_dets, n, s))
                .unwrap();
            match spin {
                Spin::Up => params.orb_w_up = w,
                Spin::Dn => params.orb_w_dn = w,
            }
        }
        params.env_s_up.fill(SOFTPLUS_INV_ONE);
        params.env_s_dn.fill(SOFTPLUS_INV_ONE);
        params.det_weights.fill(1.0 / dims.n_dets as f64);
        params
    }

    pub fn orb_w(&self, spin: Spin) -> &Array3<f64> {
        match spin {
            Spin::Up => &self.orb_w_up,
            Spin::Dn => &self.orb_w_dn,
        }
    }

    pub fn orb_b(&self, spin: Spin) -> &Array2<f64> {
        match spin {
            Spin::Up => &self.orb_b_up,
            Spin::Dn => &self.orb_b_dn,
        }
    }

    pub fn env_p(&self, spin: Spin) -> &Array3<f64> {
        match spin {
            Spin::Up => &self.env_p_up,
            Spin::Dn => &self.env_p_dn,
        }
    }

    pub fn env_s(&self, spin: Spin) -> &Array3<f64> {
        match spin {
            Spin::Up => &self.env_s_up,
            Spin::Dn => &self.env_s_dn,
        }
    }

    /// Read-only view of a slot.
    pub fn slot(&self, slot: WfSlot) -> ArrayViewD<'_, f64> {
        match slot {
            WfSlot::InputProj => self.input_proj.view().into_dyn(),
            WfSlot::InputW1 => self.input_mlp.w1.view().into_dyn(),
            WfSlot::InputB1 => self.input_mlp.b1.view().into_dyn(),
            WfSlot::InputW2 => self.input_mlp.w2.view().into_dyn(),
            WfSlot::InputB2 => self.input_mlp.b2.view().into_dyn(),
            WfSlot::NucleiEmbed => self.nuclei_embed.view().into_dyn(),
            WfSlot::WSingle(t) => self.layers[t].w_single.view().into_dyn(),
            WfSlot::BSingle(t) => self.layers[t].b_single.view().into_dyn(),
            WfSlot::WGlobal(t) => self.layers[t].w_global.view().into_dyn(),
            WfSlot::WDouble(t) => self.layers[t].w_double.view().into_dyn(),
            WfSlot::BDouble(t) => self.layers[t].b_double.view().into_dyn(),
            WfSlot::OrbW(Spin::Up) => self.orb_w_up.view().into_dyn(),
            WfSlot::OrbW(Spin::Dn) => self.orb_w_dn.view().into_dyn(),
            WfSlot::OrbB(Spin::Up) => self.orb_b_up.view().into_dyn(),
            WfSlot::OrbB(Spin::Dn) => self.orb_b_dn.view().into_dyn(),
            WfSlot::EnvP(Spin::Up) => self.env_p_up.view().into_dyn(),
            WfSlot::EnvP(Spin::Dn) => self.env_p_dn.view().into_dyn(),
            WfSlot::EnvS(Spin::Up) => self.env_s_up.view().into_dyn(),
            WfSlot::EnvS(Spin::Dn) => self.env_s_dn.view().into_dyn(),
            WfSlot::DetWeights => self.det_weights.view().into_dyn(),
        }
    }

    /// Mutable view of a slot.
    pub fn slot_mut(&mut self, slot: WfSlot) -> ArrayViewMutD<'_, f64> {
        match slot {
            WfSlot::InputProj => self.input_proj.view_mut().into_dyn(),
            WfSlot::InputW1 => self.input_mlp.w1.view_mut().into_dyn(),
            WfSlot::InputB1 => self.input_mlp.b1.view_mut().into_dyn(),
            WfSlot::InputW2 => self.input_mlp.w2.view_mut().into_dyn(),
            WfSlot::InputB2 => self.input_mlp.b2.view_mut().into_dyn(),
            WfSlot::NucleiEmbed => self.nuclei_embed.view_mut().into_dyn(),
            WfSlot::WSingle(t) => self.layers[t].w_single.view_mut().into_dyn(),
            WfSlot::BSingle(t) => self.layers[t].b_single.view_mut().into_dyn(),
            WfSlot::WGlobal(t) => self.layers[t].w_global.view_mut().into_dyn(),
            WfSlot::WDouble(t) => self.layers[t].w_double.view_mut().into_dyn(),
            WfSlot::BDouble(t) => self.layers[t].b_double.view_mut().into_dyn(),
            WfSlot::OrbW(Spin::Up) => self.orb_w_up.view_mut().into_dyn(),
            WfSlot::OrbW(Spin::Dn) => self.orb_w_dn.view_mut().into_dyn(),
            WfSlot::OrbB(Spin::Up) => self.orb_b_up.view_mut().into_dyn(),
            WfSlot::OrbB(Spin::Dn) => self.orb_b_dn.view_mut().into_dyn(),
            WfSlot::EnvP(Spin::Up) => self.env_p_up.view_mut().into_dyn(),
            WfSlot::EnvP(Spin::Dn) => self.env_p_dn.view_mut().into_dyn(),
            WfSlot::EnvS(Spin::Up) => self.env_s_up.view_mut().into_dyn(),
            WfSlot::EnvS(Spin::Dn) => self.env_s_dn.view_mut().into_dyn(),
            WfSlot::DetWeights => self.det_weights.view_mut().into_dyn(),
        }
    }

    /// Number of scalar parameters with a given tag (all tags if `None`).
    pub fn n_params(&self, tag: Option<SlotTag>) -> usize {
        self.dims
            .slots()
            .iter()
            .filter(|s| tag.is_none_or(|t| s.tag() == t))
            .map(|&s| self.slot(s).len())
            .sum()
    }

    /// Appends the selected slots, in canonical slot order, onto `out`.
    pub fn flatten_into(&self, tag: Option<SlotTag>, out: &mut Vec<f64>) {
        for slot in self.dims.slots() {
            if tag.is_none_or(|t| slot.tag() == t) {
                out.extend(self.slot(slot).iter());
            }
        }
    }

    /// Reads the selected slots back from a flat buffer; returns the number
    /// of scalars consumed.
    pub fn unflatten_from(&mut self, tag: Option<SlotTag>, data: &[f64]) -> usize {
        let mut offset = 0;
        for slot in self.dims.slots() {
            if tag.is_none_or(|t| slot.tag() == t) {
                let mut view = self.slot_mut(slot);
                let len = view.len();
                for (dst, src) in view.iter_mut().zip(&data[offset..offset + len]) {
                    *dst = *src;
                }
                offset += len;
            }
        }
        offset
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> WfDims {
        WfDims {
            n_up: 2,
            n_dn: 1,
            n_nuclei: 2,
            single_width: 8,
            double_width: 4,
            embed_dim: 6,
            n_dets: 3,
            n_layers: 2,
        }
    }

    #[test]
    fn slot_partition_is_exhaustive_and_disjoint() {
        let d = dims();
        let params = WaveFunctionParams::zeros(d);
        let total = params.n_params(None);
        let shared = params.n_params(Some(SlotTag::Shared));
        let global = params.n_params(Some(SlotTag::Global));
        let node = params.n_params(Some(SlotTag::Node));
        assert_eq!(total, shared + global + node);
        assert!(shared > 0 && global > 0 && node > 0);
        // No slot appears twice.
        let slots = d.slots();
        let names: std::collections::HashSet<String> = slots.iter().map(|s| s.name()).collect();
        assert_eq!(names.len(), slots.len());
    }

    #[test]
    fn flatten_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = WaveFunctionParams::init(dims(), &mut rng);
        let mut flat = Vec::new();
        params.flatten_into(None, &mut flat);
        assert_eq!(flat.len(), params.n_params(None));
        let mut rebuilt = WaveFunctionParams::zeros(dims());
        let consumed = rebuilt.unflatten_from(None, &flat);
        assert_eq!(consumed, flat.len());
        assert_eq!(params, rebuilt);
    }

    #[test]
    fn init_envelope_defaults() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = WaveFunctionParams::init(dims(), &mut rng);
        // softplus(s) = 1 and sigmoid(p) = 1/2 at the defaults.
        let s = params.env_s_up[(0, 0, 0)];
        assert!(((1.0 + s.exp()).ln() - 1.0).abs() < 1e-12);
        assert_eq!(params.env_p_up[(0, 0, 0)], 0.0);
        assert_eq!(params.det_weights[0], 1.0 / 3.0);
    }
}
