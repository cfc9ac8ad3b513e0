use super::losses::domain_deception;
use super::vegan::{assemble_prediction, factual_reconstruction};
use super::{ArchConfig, ModelCheckpoint, ModelKind, NetworkError, OutcomeScale, Prediction};
use crate::autodiff::{
    build_mlp, load_into, to_entries, Graph, Mlp, MlpSpec, OutputActivation, ParamId, ParamStore, Tensor, Var,
};
use crate::corruption::check_not_wiped;
use crate::seed::derive;

/// Deterministic shared extractor with two outcome heads. The domain
/// discriminator is always built but only trained by the plug-in variant.
#[derive(Debug, Clone)]
pub struct TarnetModel {
    pub arch: ArchConfig,
    pub input_dim: usize,
    pub store: ParamStore,
    pub extractor: Mlp,
    pub psi1: Mlp,
    pub psi0: Mlp,
    pub d_beta: Mlp,
    pub outcome_scale: OutcomeScale,
}

impl TarnetModel {
    pub fn new(input_dim: usize, arch: &ArchConfig, seed: u64) -> Result<Self, NetworkError> {
        arch.validate()?;
        if input_dim == 0 {
            return Err(NetworkError::Shape("model needs at least one input column".into()));
        }
        let act = arch.activation;
        let rep = arch.representation_width();
        let mut store = ParamStore::new();
        let mut net = |name: &str, k: u64, mut sizes: Vec<usize>, first: usize, last: usize, out| {
            sizes.insert(0, first);
            sizes.push(last);
            build_mlp(&mut store, name, &MlpSpec::new(sizes, act, out), derive(seed, &[k]))
        };
        let (enc, dec, disc) = (
            arch.encoder_hidden[..arch.encoder_hidden.len() - 1].to_vec(),
            arch.decoder_hidden.clone(),
            arch.discriminator_hidden.clone(),
        );
        let extractor = net("extractor", 0, enc, input_dim, rep, OutputActivation::Identity)?;
        let psi1 = net("psi1", 3, dec.clone(), rep, 1, OutputActivation::Identity)?;
        let psi0 = net("psi0", 4, dec, rep, 1, OutputActivation::Identity)?;
        let d_beta = net("d_beta", 6, disc, rep, 1, OutputActivation::Sigmoid)?;
        Ok(TarnetModel {
            arch: arch.clone(),
            input_dim,
            store,
            extractor,
            psi1,
            psi0,
            d_beta,
            outcome_scale: OutcomeScale::default(),
        })
    }

    pub fn extractor_params(&self) -> Vec<ParamId> {
        self.extractor.params()
    }

    pub fn psi_params(&self) -> Vec<ParamId> {
        [&self.psi1, &self.psi0].iter().flat_map(|m| m.params()).collect()
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

    /// `elu(extractor(x))`.
    pub fn feature_vars(&self, g: &mut Graph, x: Var) -> Result<Var, NetworkError> {
        let h = self.extractor.forward(g, &self.store, x)?;
        Ok(g.elu(h)?)
    }

    pub fn features(&self, x: &Tensor) -> Result<Tensor, NetworkError> {
        self.check_width(x)?;
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let f = self.feature_vars(&mut g, xv)?;
        Ok(g.value(f).clone())
    }

    pub fn predict_ite(&self, x: &Tensor) -> Result<Prediction, NetworkError> {
        self.check_width(x)?;
        check_not_wiped(x)?;
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let f = self.feature_vars(&mut g, xv)?;
        let y1 = self.psi1.forward(&mut g, &self.store, f)?;
        let y0 = self.psi0.forward(&mut g, &self.store, f)?;
        Ok(assemble_prediction(g.value(y1), g.value(y0), self.outcome_scale))
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
        if ck.kind.is_vegan() {
            return Err(NetworkError::WrongModel {
                expected: ModelKind::Tarnet,
                found: ck.kind,
            });
        }
        let mut m = TarnetModel::new(ck.input_dim, &ck.arch, 0)?;
        load_into(&mut m.store, &ck.params)?;
        m.outcome_scale = ck.outcome_scale;
        Ok(m)
    }
}

/// Factual reconstruction on the extractor features, plus the domain
/// deception terms against the frozen discriminator when runtime covariates
/// are supplied. Returns `(total, reconstruction)`.
pub fn loss_tarnet(
    g: &mut Graph,
    model: &TarnetModel,
    x: &Tensor,
    y: &[f64],
    t: &[u8],
    runtime: Option<&Tensor>,
) -> Result<(Var, Var), NetworkError> {
    model.check_width(x)?;
    let xv = g.constant(x.clone());
    let f_sr = model.feature_vars(g, xv)?;
    let f_tr = match runtime {
        Some(xr) => {
            model.check_width(xr)?;
            let xv = g.constant(xr.clone());
            Some(model.feature_vars(g, xv)?)
        }
        None => None,
    };
    tarnet_terms(g, model, f_sr, y, t, f_tr)
}

/// [`loss_tarnet`] on already-computed features.
pub fn tarnet_terms(
    g: &mut Graph,
    model: &TarnetModel,
    f_sr: Var,
    y: &[f64],
    t: &[u8],
    f_tr: Option<Var>,
) -> Result<(Var, Var), NetworkError> {
    let recon = factual_reconstruction(g, &model.store, &model.psi1, &model.psi0, f_sr, y, t)?;
    match f_tr {
        Some(f_tr) => {
            let dom = domain_deception(g, &model.d_beta, &model.store, f_sr, f_tr)?;
            Ok((g.add(recon, dom)?, recon))
        }
        None => Ok((recon, recon)),
    }
}
