//! Small benchmark instance (N = 6, l = 2) shared by the conditional tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use netid_core::gibbs::{OutputNoise, Priors};
use netid_core::kernel::KernelHyper;
use netid_core::network::{build_predictor_model, node_set, NodeId};
use netid_core::presets::four_node_network;
use netid_core::regression::{build_stacked_model, LatentLayout, Latents, StackedModel, TargetParam};
use netid_core::simulate::{simulate_network, white_excitation};

use super::oracle::Instance;

pub struct Tiny {
    pub stacked: StackedModel,
    pub priors: Priors,
    pub noise: OutputNoise,
    pub latents: Latents,
    pub oracle: Instance,
}

fn pseudo(seed: u64, k: usize) -> f64 {
    let x = ((seed as f64 + 1.0) * 12.9898 + k as f64 * 78.233).sin() * 43758.5453;
    2.0 * (x - x.floor()) - 1.0
}

pub fn tiny(additional: bool, n: usize, seed: u64) -> Tiny {
    let spec = four_node_network();
    let model =
        build_predictor_model(&spec, (NodeId(3), NodeId(1)), &node_set(&[1, 3, 4]), Some(NodeId(2)), additional).unwrap();
    let signals = simulate_network(&spec, &white_excitation(2, n, seed), seed + 1, n).unwrap();
    let l = 2;
    let layout = LatentLayout::new(&model, l).unwrap();
    let theta = [0.9, 0.2, 0.5, 0.3];
    let mut stacked =
        build_stacked_model(&model, &signals, &layout, TargetParam::Rational { nb: 2, na: 2 }, &theta).unwrap();
    let w_m: Vec<f64> = (0..n).map(|t| signals.w[1][t] + 0.3 * pseudo(seed, t)).collect();
    stacked.set_missing(&w_m).unwrap();

    let hypers: Vec<KernelHyper> = layout
        .blocks
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let beta = 0.5 + 0.05 * k as f64;
            if b.fixed_lambda {
                KernelHyper::fixed(beta).unwrap()
            } else {
                KernelHyper::new(0.4 + 0.2 * k as f64, beta).unwrap()
            }
        })
        .collect();
    let kernels = hypers
        .iter()
        .map(|h| DMatrix::from_fn(l, l, |x, y| h.lambda * h.beta.powi((x.max(y) + 1) as i32)))
        .collect();
    let priors = Priors::new(&layout, &hypers).unwrap();
    let tilde = if additional {
        DMatrix::from_row_slice(2, 2, &[0.3, 0.08, 0.08, 0.2])
    } else {
        DMatrix::from_element(1, 1, 0.25)
    };
    let noise = OutputNoise { sigma_j2: 0.15, tilde };

    let mut latents = Latents::zeros(&layout);
    for (gi, v) in latents.groups.iter_mut().enumerate() {
        for (k, x) in v.iter_mut().enumerate() {
            *x = 0.4 * pseudo(seed + 10 * gi as u64, k);
        }
    }
    let mut w = signals.w.clone();
    w[1] = w_m;
    let oracle = Instance {
        layout: layout.clone(),
        w,
        u: signals.u.clone(),
        g: stacked.g().to_vec(),
        sigma: noise.covariance(),
        kernels,
    };
    Tiny { stacked, priors, noise, latents, oracle }
}
