//! The survival transformer: vision encoder, causal sequence encoder and a
//! one-hidden-layer survival head.
//!
//! ```text
//! vision:    Z = [CLS_v ; patches D] + PE  -> N_v layers -> row 0
//! sequence:  Z = [e_0 ; ... ; e_{J-1} ; CLS_l] -> N_l causal layers -> last row
//! head:      r = GELU([O_l, x] W_s1 + b_s1) W_s2 + b_s2
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tensor::{ParameterStore, Tape, Tensor, Var};

use crate::data::ImageSequence;
use crate::error::{Error, Result};
use crate::image::{exact_sqrt, prepare_image};
use crate::nn::{encoder_layer_forward, make_causal_mask, EncoderLayer, LayerShape, Mode};

pub const PATCH_PROJ: &str = "vision.patch_proj.w";
pub const CLS_V: &str = "vision.cls";
pub const POS_V: &str = "vision.pos_embed";
pub const CLS_L: &str = "sequence.cls";
pub const POS_L: &str = "sequence.pos_embed";
pub const HEAD_W1: &str = "survival.w1";
pub const HEAD_B1: &str = "survival.b1";
pub const HEAD_W2: &str = "survival.w2";
pub const HEAD_B2: &str = "survival.b2";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Patches per image, a perfect square. Images enter as `P x P` grids.
    pub patches: usize,
    pub dim: usize,
    pub heads: usize,
    pub vision_layers: usize,
    pub sequence_layers: usize,
    pub ffn_dim: usize,
    pub survival_hidden: usize,
    pub covariates: usize,
    pub dropout: f64,
    pub seed: u64,
    /// Learnable positional embedding on the sequence encoder (off by default).
    pub sequence_position: bool,
    /// Longest visit sequence the sequence positional embedding covers.
    pub max_visits: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patches: 64,
            dim: 16,
            heads: 4,
            vision_layers: 2,
            sequence_layers: 2,
            ffn_dim: 32,
            survival_hidden: 16,
            covariates: 0,
            dropout: 0.1,
            seed: 0,
            sequence_position: false,
            max_visits: 21,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if exact_sqrt(self.patches).is_none() {
            return Err(Error::Config(format!("P = {} is not a perfect square", self.patches)));
        }
        if self.vision_layers == 0 || self.sequence_layers == 0 {
            return Err(Error::Config("both encoders need at least one layer".into()));
        }
        if self.survival_hidden == 0 {
            return Err(Error::Config("survival hidden dimension must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.sequence_position && self.max_visits == 0 {
            return Err(Error::Config("max_visits must be positive".into()));
        }
        self.layer_shape()?;
        Ok(())
    }

    pub fn layer_shape(&self) -> Result<LayerShape> {
        LayerShape::new(self.dim, self.heads, self.ffn_dim)
    }

    pub fn vision_prefix(l: usize) -> String {
        format!("vision.layer{l}")
    }

    pub fn sequence_prefix(l: usize) -> String {
        format!("sequence.layer{l}")
    }

    /// Every parameter with its shape, in initialization order.
    pub fn layout(&self) -> Result<Vec<(String, Vec<usize>)>> {
        self.validate()?;
        let (p, d) = (self.patches, self.dim);
        let shape = self.layer_shape()?;
        let mut out = vec![
            (PATCH_PROJ.to_string(), vec![p, d]),
            (CLS_V.to_string(), vec![d]),
            (POS_V.to_string(), vec![p + 1, d]),
        ];
        for l in 0..self.vision_layers {
            let prefix = Self::vision_prefix(l);
            out.extend(shape.tensors().into_iter().map(|(s, dims)| (format!("{prefix}.{s}"), dims)));
        }
        out.push((CLS_L.to_string(), vec![d]));
        if self.sequence_position {
            out.push((POS_L.to_string(), vec![self.max_visits + 1, d]));
        }
        for l in 0..self.sequence_layers {
            let prefix = Self::sequence_prefix(l);
            out.extend(shape.tensors().into_iter().map(|(s, dims)| (format!("{prefix}.{s}"), dims)));
        }
        out.push((HEAD_W1.to_string(), vec![d + self.covariates, self.survival_hidden]));
        out.push((HEAD_B1.to_string(), vec![self.survival_hidden]));
        out.push((HEAD_W2.to_string(), vec![self.survival_hidden, 1]));
        out.push((HEAD_B2.to_string(), vec![1]));
        Ok(out)
    }
}

/// Weight matrices are the parameters whose last name segment starts with
/// `w`: projections, attention, FFN and head weights. Biases, CLS tokens,
/// positional embeddings and layer-norm parameters are not.
pub fn is_weight(name: &str) -> bool {
    name.rsplit('.').next().is_some_and(|last| last.starts_with('w'))
}

/// Glorot-uniform weights, `N(0, 0.02^2)` biases/tokens/embeddings,
/// unit gains and zero shifts. Deterministic in `seed`.
pub fn init_parameters(config: &ModelConfig, seed: u64) -> Result<ParameterStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let small = Normal::new(0.0, 0.02).expect("valid normal");
    let mut store = ParameterStore::new();
    for (name, dims) in config.layout()? {
        let n: usize = dims.iter().product();
        let data: Vec<f64> = if name.ends_with(".gain") {
            vec![1.0; n]
        } else if name.ends_with(".shift") {
            vec![0.0; n]
        } else if is_weight(&name) {
            let limit = (6.0 / (dims[0] + dims[1]) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
        } else {
            (0..n).map(|_| small.sample(&mut rng)).collect()
        };
        store.insert(name, Tensor::new(dims, data)?);
    }
    Ok(store)
}

/// Checks that `params` holds exactly the tensors `config` needs.
pub fn check_parameters(config: &ModelConfig, params: &ParameterStore) -> Result<()> {
    let layout = config.layout()?;
    for (name, dims) in &layout {
        match params.get(name) {
            None => return Err(Error::Input(format!("parameter {name} missing"))),
            Some(t) if t.shape() != &dims[..] => {
                return Err(Error::Input(format!(
                    "parameter {name} has shape {:?}, expected {dims:?}",
                    t.shape()
                )))
            }
            Some(_) => {}
        }
    }
    if params.len() != layout.len() {
        return Err(Error::Input("unexpected extra parameters".into()));
    }
    Ok(())
}

/// All parameters of one network registered on a tape.
pub struct Bound {
    patch_proj: Var,
    cls_v: Var,
    pos_v: Var,
    vision: Vec<EncoderLayer>,
    cls_l: Var,
    pos_l: Option<Var>,
    sequence: Vec<EncoderLayer>,
    head: [Var; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterStore,
}

impl Model {
    /// Freshly initialized model seeded by `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = init_parameters(&config, config.seed)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ParameterStore) -> Result<Self> {
        check_parameters(&config, &params)?;
        Ok(Self { config, params })
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<Bound> {
        let shape = self.config.layer_shape()?;
        let p = &self.params;
        let vision = (0..self.config.vision_layers)
            .map(|l| EncoderLayer::bind(tape, p, &ModelConfig::vision_prefix(l), shape))
            .collect::<Result<Vec<_>>>()?;
        let sequence = (0..self.config.sequence_layers)
            .map(|l| EncoderLayer::bind(tape, p, &ModelConfig::sequence_prefix(l), shape))
            .collect::<Result<Vec<_>>>()?;
        let pos_l = if self.config.sequence_position {
            Some(tape.param_from(p, POS_L)?)
        } else {
            None
        };
        Ok(Bound {
            patch_proj: tape.param_from(p, PATCH_PROJ)?,
            cls_v: tape.param_from(p, CLS_V)?,
            pos_v: tape.param_from(p, POS_V)?,
            vision,
            cls_l: tape.param_from(p, CLS_L)?,
            pos_l,
            sequence,
            head: [
                tape.param_from(p, HEAD_W1)?,
                tape.param_from(p, HEAD_B1)?,
                tape.param_from(p, HEAD_W2)?,
                tape.param_from(p, HEAD_B2)?,
            ],
        })
    }

    /// Vision embedding (`1 x d`) of a prepared `P x P` patch matrix.
    pub fn vision_forward(&self, tape: &mut Tape, b: &Bound, patches: &Tensor, mode: &mut Mode<'_>) -> Result<Var> {
        let x = tape.constant(patches.clone())?;
        let projected = tape.matmul(x, b.patch_proj)?;
        let z = tape.concat_rows(&[b.cls_v, projected])?;
        let mut z = tape.add(z, b.pos_v)?;
        for layer in &b.vision {
            z = encoder_layer_forward(tape, z, layer, None, mode)?;
        }
        Ok(tape.row(z, 0)?)
    }

    /// Sequence summary (`1 x d`) read from the trailing CLS position.
    pub fn sequence_forward(&self, tape: &mut Tape, b: &Bound, embeddings: &[Var], mode: &mut Mode<'_>) -> Result<Var> {
        if embeddings.is_empty() {
            return Err(Error::Input("empty visit sequence".into()));
        }
        let n = embeddings.len() + 1;
        let mut rows = embeddings.to_vec();
        rows.push(b.cls_l);
        let mut z = tape.concat_rows(&rows)?;
        if let Some(pos) = b.pos_l {
            if n > self.config.max_visits + 1 {
                return Err(Error::Input(format!(
                    "{} visits exceed the configured maximum {}",
                    n - 1,
                    self.config.max_visits
                )));
            }
            let pe_rows = (0..n).map(|i| tape.row(pos, i)).collect::<std::result::Result<Vec<_>, _>>()?;
            let pe = tape.concat_rows(&pe_rows)?;
            z = tape.add(z, pe)?;
        }
        let mask = make_causal_mask(n);
        for layer in &b.sequence {
            z = encoder_layer_forward(tape, z, layer, Some(&mask), mode)?;
        }
        Ok(tape.row(z, n - 1)?)
    }

    /// Risk score (`1 x 1`) from the sequence summary and covariates.
    pub fn head_forward(&self, tape: &mut Tape, b: &Bound, summary: Var, covariates: &[f64]) -> Result<Var> {
        if covariates.len() != self.config.covariates {
            return Err(Error::Input(format!(
                "expected {} covariates, got {}",
                self.config.covariates,
                covariates.len()
            )));
        }
        let input = if covariates.is_empty() {
            summary
        } else {
            let x = tape.constant(Tensor::matrix(1, covariates.len(), covariates.to_vec())?)?;
            tape.concat_cols(&[summary, x])?
        };
        let [w1, b1, w2, b2] = b.head;
        let h = tape.matmul(input, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.gelu(h)?;
        let r = tape.matmul(h, w2)?;
        Ok(tape.add_row(r, b2)?)
    }

    /// Full risk computation on `tape` from prepared patch matrices.
    pub fn risk_on_tape(
        &self,
        tape: &mut Tape,
        patches: &[Tensor],
        covariates: &[f64],
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let b = self.bind(tape)?;
        let embeddings = patches
            .iter()
            .map(|p| self.vision_forward(tape, &b, p, mode))
            .collect::<Result<Vec<_>>>()?;
        let summary = self.sequence_forward(tape, &b, &embeddings, mode)?;
        self.head_forward(tape, &b, summary, covariates)
    }

    pub fn prepare(&self, seq: &ImageSequence, visits: usize) -> Result<Vec<Tensor>> {
        if visits == 0 || visits > seq.len() {
            return Err(Error::Input(format!(
                "patient {}: landmark uses {visits} visits but {} are available",
                seq.id,
                seq.len()
            )));
        }
        seq.images[..visits]
            .iter()
            .map(|im| prepare_image(im, self.config.patches))
            .collect()
    }

    /// Vision embedding of one prepared image.
    pub fn embed(&self, patches: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape)?;
        let e = self.vision_forward(&mut tape, &b, patches, &mut Mode::Eval)?;
        Ok(tape.value(e).clone())
    }

    pub fn vision_encode(&self, image: &crate::data::Image) -> Result<Vec<f64>> {
        let patches = prepare_image(image, self.config.patches)?;
        Ok(self.embed(&patches)?.into_data())
    }

    pub fn sequence_encode(&self, embeddings: &[Tensor]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape)?;
        let vars = embeddings
            .iter()
            .map(|e| tape.constant(e.clone()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let s = self.sequence_forward(&mut tape, &b, &vars, &mut Mode::Eval)?;
        Ok(tape.value(s).data().to_vec())
    }

    /// Risk from cached vision embeddings; equals the full path bit for bit.
    pub fn risk_from_embeddings(&self, embeddings: &[Tensor], covariates: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape)?;
        let vars = embeddings
            .iter()
            .map(|e| tape.constant(e.clone()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let s = self.sequence_forward(&mut tape, &b, &vars, &mut Mode::Eval)?;
        let r = self.head_forward(&mut tape, &b, s, covariates)?;
        Ok(tape.value(r).item()?)
    }

    pub fn risk_prepared(&self, patches: &[Tensor], covariates: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let r = self.risk_on_tape(&mut tape, patches, covariates, &mut Mode::Eval)?;
        Ok(tape.value(r).item()?)
    }

    /// Risk score using the first `visits` images of `seq`.
    pub fn risk_score(&self, seq: &ImageSequence, visits: usize) -> Result<f64> {
        let patches = self.prepare(seq, visits)?;
        self.risk_prepared(&patches, &seq.covariates)
    }
}
