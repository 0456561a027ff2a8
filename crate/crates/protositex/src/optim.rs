//! AdamW restricted to a named subset of the model tensors, so each training
//! phase can hold the other phase's parameters fixed.

use std::collections::HashSet;

use crate::model::ModelParams;

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    steps: u64,
    names: HashSet<String>,
    m: ModelParams,
    v: ModelParams,
}

impl AdamW {
    pub fn new(template: &ModelParams, names: &[String], lr: f64, weight_decay: f64) -> AdamW {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            steps: 0,
            names: names.iter().cloned().collect(),
            m: template.zeros_like(),
            v: template.zeros_like(),
        }
    }

    /// Apply one update to every tensor in this optimizer's name set.
    /// Decoupled weight decay is skipped for bias vectors.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        let grad_tensors = grads.named_tensors();
        let m_tensors = self.m.named_tensors_mut();
        let v_tensors = self.v.named_tensors_mut();
        for ((((name, p), (gn, g)), (mn, m)), (vn, v)) in params
            .named_tensors_mut()
            .into_iter()
            .zip(grad_tensors)
            .zip(m_tensors)
            .zip(v_tensors)
        {
            debug_assert!(name == gn && name == mn && name == vn);
            if !self.names.contains(&name) {
                continue;
            }
            let decay = if name.contains(".b") { 0.0 } else { self.weight_decay };
            for ((pv, &gv), (mv, vv)) in p.iter_mut().zip(g.iter()).zip(m.iter_mut().zip(v.iter_mut())) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + decay * *pv);
            }
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    pub fn updates(&self, name: &str) -> bool {
        self.names.contains(name)
    }
}
