use super::tensor::Tensor;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates mirroring the parameter list, plus the step count.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor], config: AdamConfig) -> Self {
        AdamState {
            config,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<(), NnError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NnError::dimension(
            "adam",
            format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, ((p, g), m)) in params.iter().zip(grads).zip(&state.m).enumerate() {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(NnError::dimension(
                "adam",
                format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape()),
            ));
        }
    }
    let c = state.config;
    state.t += 1;
    let bc1 = 1.0 - c.beta1.powf(state.t as f64);
    let bc2 = 1.0 - c.beta2.powf(state.t as f64);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = c.beta1 * *mv + (1.0 - c.beta1) * gv;
            *vv = c.beta2 * *vv + (1.0 - c.beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: Vec<f64>) -> Tensor {
        let n = v.len();
        Tensor::from_vec(&[n], v).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![t(vec![1.0, -2.0, 3.0])];
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &[t(vec![0.0; 3])], &mut s).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0, 3.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![t(vec![0.0, 0.0, 0.0])];
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &[t(vec![0.5, -3.0, 1e-2])], &mut s).unwrap();
        for (&v, sign) in p[0].data().iter().zip([-1.0, 1.0, -1.0]) {
            // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
            assert!((v - sign * 1e-4).abs() <= 1e-4 * 1e-5, "{v}");
        }
    }

    #[test]
    fn zero_learning_rate_still_updates_moments() {
        let mut p = vec![t(vec![1.0])];
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        let mut s = AdamState::new(&p, cfg);
        adam_step(&mut p, &[t(vec![2.0])], &mut s).unwrap();
        assert_eq!(p[0].data(), &[1.0]);
        assert!((s.m[0].data()[0] - 0.2).abs() < 1e-15);
        assert!((s.v[0].data()[0] - 0.004).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![t(vec![1.0, 2.0])];
        let mut s = AdamState::new(&p, AdamConfig::default());
        assert!(adam_step(&mut p, &[t(vec![1.0])], &mut s).is_err());
        assert!(adam_step(&mut p, &[], &mut s).is_err());
    }
}
