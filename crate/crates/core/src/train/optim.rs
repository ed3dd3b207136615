//! Adam with per-group learning-rate multipliers.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use super::config::AdamParams;
use crate::error::Result;
use crate::nn::ParamSet;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub lr_factor: f64,
    pub params: Vec<String>,
}

/// Splits parameters into the image backbone (names under `prefix`) and
/// everything else.
pub fn backbone_groups(params: &ParamSet, prefix: &str, backbone_factor: f64) -> Vec<ParamGroup> {
    let (backbone, head): (Vec<String>, Vec<String>) = params
        .iter()
        .map(|(n, _)| n.clone())
        .partition(|n| n.starts_with(prefix));
    vec![
        ParamGroup {
            name: "backbone".into(),
            lr_factor: backbone_factor,
            params: backbone,
        },
        ParamGroup {
            name: "head".into(),
            lr_factor: 1.0,
            params: head,
        },
    ]
}

pub struct Adam {
    pub hyper: AdamParams,
    pub groups: Vec<ParamGroup>,
    /// Completed update count.
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(hyper: AdamParams, groups: Vec<ParamGroup>) -> Self {
        Self {
            hyper,
            groups,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Effective learning rate of a named group at base rate `lr`.
    pub fn group_lr(&self, group: &str, lr: f64) -> Option<f64> {
        self.groups.iter().find(|g| g.name == group).map(|g| lr * g.lr_factor)
    }

    /// One update at base rate `lr`. Parameters without a gradient are left
    /// untouched.
    pub fn step(&mut self, params: &ParamSet, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let AdamParams { beta1, beta2, eps } = self.hyper;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        for group in &self.groups {
            let glr = lr * group.lr_factor;
            for name in &group.params {
                let Some(var) = params.get(name) else { continue };
                let Some(g) = grads.get(var.as_tensor()) else { continue };
                let g = g.detach();
                let g = &g;
                let m = match self.m.get(name) {
                    Some(m) => ((m * beta1)? + (g * (1.0 - beta1))?)?,
                    None => (g * (1.0 - beta1))?,
                };
                let v = match self.v.get(name) {
                    Some(v) => ((v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?,
                    None => (g.sqr()? * (1.0 - beta2))?,
                };
                if glr != 0.0 {
                    let update = ((&m / c1)? / ((&v / c2)?.sqrt()? + eps)?)?;
                    var.set(&(var.as_tensor().detach() - (update * glr)?)?)?;
                }
                self.m.insert(name.clone(), m.detach());
                self.v.insert(name.clone(), v.detach());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamBuilder;
    use candle_core::{DType, Device};

    fn params() -> ParamSet {
        let pb = ParamBuilder::new(3, DType::F64, &Device::Cpu);
        pb.pp("vision").uniform("w", &[3], 1.0).unwrap();
        pb.pp("head").uniform("w", &[3], 1.0).unwrap();
        pb.finish()
    }

    #[test]
    fn groups_split_on_prefix() {
        let g = backbone_groups(&params(), "vision.", 0.1);
        assert_eq!(g[0].params, vec!["vision.w".to_string()]);
        assert_eq!(g[1].params, vec!["head.w".to_string()]);
        let adam = Adam::new(AdamParams::default(), g);
        assert_eq!(adam.group_lr("backbone", 1e-4), Some(1e-4 * 0.1));
        assert_eq!(adam.group_lr("head", 1e-4), Some(1e-4));
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // With bias correction the first Adam step is lr·g/(|g|+eps).
        let ps = params();
        let loss = ps
            .iter()
            .map(|(_, v)| v.as_tensor().sqr().unwrap().sum_all().unwrap())
            .reduce(|a, b| (a + b).unwrap())
            .unwrap();
        let grads = loss.backward().unwrap();
        let before: Vec<Vec<f64>> = ps.iter().map(|(_, v)| v.as_tensor().to_vec1().unwrap()).collect();
        let mut adam = Adam::new(AdamParams::default(), backbone_groups(&ps, "vision.", 0.1));
        adam.step(&ps, &grads, 1e-2).unwrap();
        for ((name, var), old) in ps.iter().zip(before) {
            let lr = if name.starts_with("vision.") { 1e-3 } else { 1e-2 };
            let new: Vec<f64> = var.as_tensor().to_vec1().unwrap();
            for (n, o) in new.iter().zip(&old) {
                let g = 2.0 * o;
                let expect = o - lr * g / (g.abs() + 1e-8);
                assert!((n - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_rate_leaves_parameters() {
        let ps = params();
        let loss = ps.get("head.w").unwrap().as_tensor().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let before: Vec<f64> = ps.get("head.w").unwrap().as_tensor().to_vec1().unwrap();
        let mut adam = Adam::new(AdamParams::default(), backbone_groups(&ps, "vision.", 0.1));
        adam.step(&ps, &grads, 0.0).unwrap();
        assert_eq!(ps.get("head.w").unwrap().as_tensor().to_vec1::<f64>().unwrap(), before);
        assert_eq!(adam.step, 1);
    }
}
