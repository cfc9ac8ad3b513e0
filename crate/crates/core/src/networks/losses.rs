use crate::autodiff::{Graph, Mlp, ParamStore, Tensor, Var};

use super::NetworkError;

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// `log(clamp(p))`.
pub fn log_prob(g: &mut Graph, p: Var) -> Result<Var, NetworkError> {
    let c = g.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    Ok(g.log(c)?)
}

/// `log(1 − clamp(p))`.
pub(crate) fn log_complement(g: &mut Graph, p: Var) -> Result<Var, NetworkError> {
    let c = g.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let q = g.affine(c, -1.0, 1.0)?;
    Ok(g.log(q)?)
}

pub(crate) fn mean_log(g: &mut Graph, p: Var) -> Result<Var, NetworkError> {
    let l = log_prob(g, p)?;
    Ok(g.mean(l)?)
}

pub(crate) fn mean_log_complement(g: &mut Graph, p: Var) -> Result<Var, NetworkError> {
    let l = log_complement(g, p)?;
    Ok(g.mean(l)?)
}

/// Binary cross-entropy with `real` labelled 1 and `fake` labelled 0:
/// `−mean log real − mean log(1 − fake)`. Both batches must be the same size.
pub fn bce(g: &mut Graph, real: Var, fake: Var) -> Result<Var, NetworkError> {
    let (a, b) = (g.value(real).rows(), g.value(fake).rows());
    if a != b {
        return Err(NetworkError::Shape(format!("discriminator batches differ: {a} vs {b} rows")));
    }
    let lr = mean_log(g, real)?;
    let lf = mean_log_complement(g, fake)?;
    let s = g.add(lr, lf)?;
    Ok(g.neg(s)?)
}

fn group_mse(g: &mut Graph, y_hat: Var, y: &[f64], group: &'static str) -> Result<Var, NetworkError> {
    if y.is_empty() {
        return Err(NetworkError::EmptyGroup(group));
    }
    let rows = g.value(y_hat).rows();
    if rows != y.len() || g.value(y_hat).cols() != 1 {
        return Err(NetworkError::Shape(format!(
            "{group} predictions have shape {:?} for {} targets",
            g.value(y_hat).shape(),
            y.len()
        )));
    }
    let target = g.constant(Tensor::column(y)?);
    let r = g.sub(y_hat, target)?;
    let sq = g.square(r)?;
    Ok(g.mean(sq)?)
}

/// Unit-variance Gaussian likelihood: each group's mean of `0.5·(y − ŷ)²`,
/// averaged over the two groups.
pub fn loss_reconstruction(
    g: &mut Graph,
    treated: (Var, &[f64]),
    control: (Var, &[f64]),
) -> Result<Var, NetworkError> {
    let a = group_mse(g, treated.0, treated.1, "treated")?;
    let b = group_mse(g, control.0, control.1, "control")?;
    let s = g.add(a, b)?;
    Ok(g.affine(s, 0.25, 0.0)?)
}

/// [`loss_reconstruction`] on plain slices, routing rows by treatment.
pub fn reconstruction_loss(y: &[f64], y_hat: &[f64], t: &[u8]) -> Result<f64, NetworkError> {
    if y.len() != y_hat.len() || y.len() != t.len() {
        return Err(NetworkError::Shape(format!(
            "{} outcomes, {} predictions, {} treatments",
            y.len(),
            y_hat.len(),
            t.len()
        )));
    }
    let group = |arm: u8, name: &'static str| {
        let r: Vec<f64> = (0..y.len()).filter(|&i| t[i] == arm).map(|i| 0.5 * (y[i] - y_hat[i]).powi(2)).collect();
        if r.is_empty() {
            Err(NetworkError::EmptyGroup(name))
        } else {
            Ok(r.iter().sum::<f64>() / r.len() as f64)
        }
    };
    Ok((group(1, "treated")? + group(0, "control")?) / 2.0)
}

/// Prior discriminator loss: Gaussian noise is real, source latents are fake.
pub fn loss_d_delta(g: &mut Graph, d_delta: &Mlp, store: &ParamStore, noise: Var, z_sr: Var) -> Result<Var, NetworkError> {
    let real = d_delta.forward(g, store, noise)?;
    let fake = d_delta.forward(g, store, z_sr)?;
    bce(g, real, fake)
}

/// Domain discriminator loss: training latents are real, runtime latents fake.
pub fn loss_d_beta(g: &mut Graph, d_beta: &Mlp, store: &ParamStore, z_sr: Var, z_tr: Var) -> Result<Var, NetworkError> {
    let real = d_beta.forward(g, store, z_sr)?;
    let fake = d_beta.forward(g, store, z_tr)?;
    bce(g, real, fake)
}

/// Generator-side deception terms against a frozen domain discriminator:
/// `−mean log(1 − D(z_sr)) − mean log D(z_tr)`.
pub(crate) fn domain_deception(
    g: &mut Graph,
    d_beta: &Mlp,
    store: &ParamStore,
    z_sr: Var,
    z_tr: Var,
) -> Result<Var, NetworkError> {
    let p_sr = d_beta.forward_frozen(g, store, z_sr)?;
    let p_tr = d_beta.forward_frozen(g, store, z_tr)?;
    let a = mean_log_complement(g, p_sr)?;
    let b = mean_log(g, p_tr)?;
    let s = g.add(a, b)?;
    Ok(g.neg(s)?)
}
