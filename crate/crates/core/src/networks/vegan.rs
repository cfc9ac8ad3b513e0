use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::losses::{domain_deception, loss_reconstruction, mean_log};
use super::{ArchConfig, ModelCheckpoint, ModelKind, NetworkError, OutcomeScale, Prediction};
use crate::autodiff::{
    build_mlp, load_into, to_entries, Graph, Mlp, MlpSpec, OutputActivation, ParamId, ParamStore, Tensor, Var,
};
use crate::corruption::check_not_wiped;
use crate::seed::derive;

/// One reparameterized draw per row: `z = mu + sigma ⊙ eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub mu: Tensor,
    pub sigma: Tensor,
    pub eps: Tensor,
    pub z: Tensor,
}

/// Graph nodes of one encoder pass.
#[derive(Debug, Clone, Copy)]
pub struct EncodedVars {
    pub mu: Var,
    pub sigma: Var,
    pub z: Var,
}

#[derive(Debug, Clone)]
pub struct VeganModel {
    pub arch: ArchConfig,
    pub input_dim: usize,
    pub store: ParamStore,
    pub g_phi: Mlp,
    pub mlp_mu: Mlp,
    pub mlp_sigma: Mlp,
    pub psi1: Mlp,
    pub psi0: Mlp,
    pub d_delta: Mlp,
    pub d_beta: Mlp,
    pub outcome_scale: OutcomeScale,
}

fn widths(first: usize, hidden: &[usize], last: usize) -> Vec<usize> {
    let mut v = vec![first];
    v.extend_from_slice(hidden);
    v.push(last);
    v
}

impl VeganModel {
    pub fn new(input_dim: usize, arch: &ArchConfig, seed: u64) -> Result<Self, NetworkError> {
        arch.validate()?;
        if input_dim == 0 {
            return Err(NetworkError::Shape("model needs at least one input column".into()));
        }
        let act = arch.activation;
        let l = arch.latent_dim;
        let rep = arch.representation_width();
        let mut store = ParamStore::new();
        let mut net = |name: &str, k: u64, sizes: Vec<usize>, out: OutputActivation| {
            build_mlp(&mut store, name, &MlpSpec::new(sizes, act, out), derive(seed, &[k]))
        };
        let mut extractor = vec![input_dim];
        extractor.extend_from_slice(&arch.encoder_hidden);
        let g_phi = net("g_phi", 0, extractor, OutputActivation::Identity)?;
        let mlp_mu = net("mlp_mu", 1, vec![rep, l], OutputActivation::Identity)?;
        let mlp_sigma = net("mlp_sigma", 2, vec![rep, l], OutputActivation::Softplus)?;
        let psi1 = net("psi1", 3, widths(l, &arch.decoder_hidden, 1), OutputActivation::Identity)?;
        let psi0 = net("psi0", 4, widths(l, &arch.decoder_hidden, 1), OutputActivation::Identity)?;
        let d_delta = net("d_delta", 5, widths(l, &arch.discriminator_hidden, 1), OutputActivation::Sigmoid)?;
        let d_beta = net("d_beta", 6, widths(l, &arch.discriminator_hidden, 1), OutputActivation::Sigmoid)?;
        Ok(VeganModel {
            arch: arch.clone(),
            input_dim,
            store,
            g_phi,
            mlp_mu,
            mlp_sigma,
            psi1,
            psi0,
            d_delta,
            d_beta,
            outcome_scale: OutcomeScale::default(),
        })
    }

    /// Extractor and both heads.
    pub fn phi_params(&self) -> Vec<ParamId> {
        [&self.g_phi, &self.mlp_mu, &self.mlp_sigma].iter().flat_map(|m| m.params()).collect()
    }

    pub fn psi_params(&self) -> Vec<ParamId> {
        [&self.psi1, &self.psi0].iter().flat_map(|m| m.params()).collect()
    }

    pub fn d_delta_params(&self) -> Vec<ParamId> {
        self.d_delta.params()
    }

    pub fn d_beta_params(&self) -> Vec<ParamId> {
        self.d_beta.params()
    }

    fn check_width(&self, x: &Tensor) -> Result<(), NetworkError> {
        if x.shape().len() != 2 || x.cols() != self.input_dim {
            return Err(NetworkError::Shape(format!(
                "model expects {} covariate columns, got shape {:?}",
                self.input_dim,
                x.shape()
            )));
        }
        Ok(())
    }

    /// `mu = MLP_μ(h)`, `sigma = softplus(MLP_σ(h)) + floor` with
    /// `h = elu(Gφ(x))`; `z = mu + sigma ⊙ eps`, or `z = mu` without `eps`.
    pub fn encode_vars(&self, g: &mut Graph, x: Var, eps: Option<Var>) -> Result<EncodedVars, NetworkError> {
        let h = self.g_phi.forward(g, &self.store, x)?;
        let h = g.elu(h)?;
        let mu = self.mlp_mu.forward(g, &self.store, h)?;
        let s = self.mlp_sigma.forward(g, &self.store, h)?;
        let sigma = g.affine(s, 1.0, self.arch.sigma_floor)?;
        let z = match eps {
            Some(e) => {
                let noise = g.mul(sigma, e)?;
                g.add(mu, noise)?
            }
            None => mu,
        };
        Ok(EncodedVars { mu, sigma, z })
    }

    fn standard_normal(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
        Tensor::matrix(rows, cols, data).expect("finite draws")
    }

    /// Encodes with fresh standard-normal noise from `rng`.
    pub fn encode(&self, x: &Tensor, rng: &mut impl Rng) -> Result<LatentSample, NetworkError> {
        self.check_width(x)?;
        let eps = Self::standard_normal(x.rows(), self.arch.latent_dim, rng);
        self.encode_with_eps(x, &eps)
    }

    pub fn encode_with_eps(&self, x: &Tensor, eps: &Tensor) -> Result<LatentSample, NetworkError> {
        self.check_width(x)?;
        if eps.shape() != [x.rows(), self.arch.latent_dim] {
            return Err(NetworkError::Shape(format!("noise of shape {:?}", eps.shape())));
        }
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let ev = g.constant(eps.clone());
        let enc = self.encode_vars(&mut g, xv, Some(ev))?;
        Ok(LatentSample {
            mu: g.value(enc.mu).clone(),
            sigma: g.value(enc.sigma).clone(),
            eps: eps.clone(),
            z: g.value(enc.z).clone(),
        })
    }

    /// Latents `mu + sigma ⊙ eps` with `eps` drawn from a fixed seed.
    pub fn sampled_latents(&self, x: &Tensor, seed: u64) -> Result<Tensor, NetworkError> {
        Ok(self.encode(x, &mut ChaCha8Rng::seed_from_u64(seed))?.z)
    }

    /// Decoder outputs `(Ψ1(z), Ψ0(z))` on the standardized scale.
    pub fn decode_vars(&self, g: &mut Graph, z: Var) -> Result<(Var, Var), NetworkError> {
        let y1 = self.psi1.forward(g, &self.store, z)?;
        let y0 = self.psi0.forward(g, &self.store, z)?;
        Ok((y1, y0))
    }

    /// Potential outcomes and effects at the posterior mean (`eps = 0`).
    pub fn predict_ite(&self, x: &Tensor) -> Result<Prediction, NetworkError> {
        self.check_width(x)?;
        check_not_wiped(x)?;
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let enc = self.encode_vars(&mut g, xv, None)?;
        let (y1, y0) = self.decode_vars(&mut g, enc.z)?;
        Ok(assemble_prediction(g.value(y1), g.value(y0), self.outcome_scale))
    }

    /// Mean over rows of the closed-form `KL(N(mu, sigma²) ‖ N(0, I))`.
    /// Diagnostic only; training never uses it.
    pub fn kl_to_prior(&self, x: &Tensor) -> Result<f64, NetworkError> {
        let eps = Tensor::zeros(&[x.rows(), self.arch.latent_dim]);
        let s = self.encode_with_eps(x, &eps)?;
        let total: f64 = s
            .mu
            .data()
            .iter()
            .zip(s.sigma.data())
            .map(|(m, sd)| 0.5 * (sd * sd + m * m - 1.0) - sd.ln())
            .sum();
        Ok(total / x.rows() as f64)
    }

    pub fn checkpoint(&self, kind: ModelKind) -> ModelCheckpoint {
        ModelCheckpoint {
            kind,
            arch: self.arch.clone(),
            input_dim: self.input_dim,
            outcome_scale: self.outcome_scale,
            params: to_entries(&self.store),
        }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self, NetworkError> {
        if !ck.kind.is_vegan() {
            return Err(NetworkError::WrongModel {
                expected: ModelKind::Vegan,
                found: ck.kind,
            });
        }
        let mut m = VeganModel::new(ck.input_dim, &ck.arch, 0)?;
        load_into(&mut m.store, &ck.params)?;
        m.outcome_scale = ck.outcome_scale;
        Ok(m)
    }
}

pub(crate) fn assemble_prediction(y1: &Tensor, y0: &Tensor, scale: OutcomeScale) -> Prediction {
    let y1: Vec<f64> = y1.data().iter().map(|&v| scale.restore(v)).collect();
    let y0: Vec<f64> = y0.data().iter().map(|&v| scale.restore(v)).collect();
    let tau = y1.iter().zip(&y0).map(|(a, b)| a - b).collect();
    Prediction { y0, y1, tau }
}

/// Splits batch rows by arm, failing on an empty arm.
pub(crate) fn arms(t: &[u8]) -> (Vec<usize>, Vec<usize>) {
    let treated = (0..t.len()).filter(|&i| t[i] == 1).collect();
    let control = (0..t.len()).filter(|&i| t[i] == 0).collect();
    (treated, control)
}

/// Routes treated rows of `rep` through `psi1` and control rows through `psi0`.
pub(crate) fn factual_reconstruction(
    g: &mut Graph,
    store: &ParamStore,
    psi1: &Mlp,
    psi0: &Mlp,
    rep: Var,
    y: &[f64],
    t: &[u8],
) -> Result<Var, NetworkError> {
    if y.len() != t.len() || g.value(rep).rows() != t.len() {
        return Err(NetworkError::Shape(format!(
            "{} latent rows, {} outcomes, {} treatments",
            g.value(rep).rows(),
            y.len(),
            t.len()
        )));
    }
    let (ti, ci) = arms(t);
    if ti.is_empty() {
        return Err(NetworkError::EmptyGroup("treated"));
    }
    if ci.is_empty() {
        return Err(NetworkError::EmptyGroup("control"));
    }
    let yt: Vec<f64> = ti.iter().map(|&i| y[i]).collect();
    let yc: Vec<f64> = ci.iter().map(|&i| y[i]).collect();
    let rt = g.select_rows(rep, &ti)?;
    let rc = g.select_rows(rep, &ci)?;
    let pt = psi1.forward(g, store, rt)?;
    let pc = psi0.forward(g, store, rc)?;
    loss_reconstruction(g, (pt, &yt), (pc, &yc))
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorTerms {
    pub total: Var,
    pub reconstruction: Var,
}

/// Generator objective on already-encoded latents, with both discriminators
/// frozen: reconstruction `− mean log D_δ(z_sr)`, plus the domain deception
/// terms when runtime latents are given.
pub fn generator_terms(
    g: &mut Graph,
    model: &VeganModel,
    z_sr: Var,
    y: &[f64],
    t: &[u8],
    z_tr: Option<Var>,
) -> Result<GeneratorTerms, NetworkError> {
    let reconstruction = factual_reconstruction(g, &model.store, &model.psi1, &model.psi0, z_sr, y, t)?;
    let p = model.d_delta.forward_frozen(g, &model.store, z_sr)?;
    let prior = mean_log(g, p)?;
    let mut total = g.sub(reconstruction, prior)?;
    if let Some(z_tr) = z_tr {
        let dom = domain_deception(g, &model.d_beta, &model.store, z_sr, z_tr)?;
        total = g.add(total, dom)?;
    }
    Ok(GeneratorTerms { total, reconstruction })
}

/// Encodes a labelled batch (and optionally a runtime batch) and builds the
/// generator objective. `runtime` pairs runtime covariates with their own noise.
pub fn loss_generator(
    g: &mut Graph,
    model: &VeganModel,
    x: &Tensor,
    y: &[f64],
    t: &[u8],
    eps: &Tensor,
    runtime: Option<(&Tensor, &Tensor)>,
) -> Result<GeneratorTerms, NetworkError> {
    model.check_width(x)?;
    let xv = g.constant(x.clone());
    let ev = g.constant(eps.clone());
    let enc = model.encode_vars(g, xv, Some(ev))?;
    let z_tr = match runtime {
        Some((xr, er)) => {
            model.check_width(xr)?;
            let xv = g.constant(xr.clone());
            let ev = g.constant(er.clone());
            Some(model.encode_vars(g, xv, Some(ev))?.z)
        }
        None => None,
    };
    generator_terms(g, model, enc.z, y, t, z_tr)
}
