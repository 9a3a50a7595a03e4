//! Gradient-check runner: random instances from `ecc_core::gradcheck`,
//! numeric side from the extended-precision [`oracle`](crate::oracle).

use ecc_core::gradcheck::{
    compare_gradients, summarize, trial_seed, Component, ComponentSummary, Fault, GradComparison,
    LossInstance, NetworkInstance,
};

use crate::oracle::{network_gradient, LossOracle};

pub const DEFAULT_SEED: u64 = 7;
pub const DEFAULT_TRIALS: usize = 100;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub trials: usize,
    pub threads: usize,
    pub fault: Option<Fault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            trials: DEFAULT_TRIALS,
            threads: 1,
            fault: None,
        }
    }
}

/// Results of one trial seed, in [`Component::ALL`] order.
pub type TrialResult = [GradComparison; 4];

pub fn check_trial(seed: u64, fault: Option<Fault>) -> ecc_core::Result<TrialResult> {
    let inst = LossInstance::random(seed);
    let mut oracle = LossOracle::new(&inst);
    let mut out = [GradComparison::default(); 4];
    for (slot, c) in out.iter_mut().zip(Component::ALL) {
        let (mut analytic, numeric) = match c {
            Component::Mcc => (inst.analytic_gradient(c)?, oracle.mcc(c.step())),
            Component::Clg => (inst.analytic_gradient(c)?, oracle.clg(c.step())),
            Component::Ce => (inst.analytic_gradient(c)?, oracle.ce(c.step())),
            Component::Network => {
                let net = NetworkInstance::random(seed);
                (net.analytic_gradient()?, network_gradient(&net, c.step()))
            }
        };
        if let Some(f) = fault {
            f.apply(c, &mut analytic);
        }
        *slot = compare_gradients(&analytic, &numeric);
    }
    Ok(out)
}

/// Runs `trials` seeded trials, spread over `threads` workers. The result
/// does not depend on the thread count.
pub fn run_grad_check(opts: &GradCheckOptions) -> ecc_core::Result<Vec<ComponentSummary>> {
    let seeds: Vec<u64> = (0..opts.trials).map(|i| trial_seed(opts.seed, i)).collect();
    let threads = opts.threads.clamp(1, seeds.len().max(1));
    let chunk = seeds.len().div_ceil(threads).max(1);
    let results: Vec<ecc_core::Result<TrialResult>> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || part.iter().map(|&seed| check_trial(seed, opts.fault)).collect::<Vec<_>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("grad-check worker panicked"))
            .collect()
    });
    let results = results.into_iter().collect::<ecc_core::Result<Vec<_>>>()?;
    Ok(Component::ALL
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let per: Vec<(u64, GradComparison)> = seeds.iter().zip(&results).map(|(&s, r)| (s, r[i])).collect();
            summarize(c, &per)
        })
        .collect())
}
